#include "corrnet/train.hpp"

#include <chrono>
#include <fstream>
#include <numeric>

#include "corrnet/checkpoint.hpp"
#include "corrnet/ops.hpp"
#include "corrnet/optim.hpp"
#include "corrnet/rng.hpp"

namespace corrnet::train {

metrics::CorpusWer evaluate(const network::Model<float>& model, const std::vector<synth::Sample>& samples) {
  std::vector<std::pair<ctc::GlossSequence, ctc::GlossSequence>> pairs;
  pairs.reserve(samples.size());
  for (const auto& s : samples) {
    Tape<float> tape(Tape<float>::Mode::kInference);
    auto out = model.forward(tape, s.video);
    pairs.emplace_back(s.label, model.decode(out));
  }
  return metrics::corpus_wer(pairs);
}

double accumulate_sample(const network::Model<float>& model, const synth::Sample& sample, float weight) {
  Tape<float> tape;
  auto out = model.forward(tape, sample.video);
  auto terms = model.total_loss(tape, out, sample.label);
  auto scaled = ops::scale(tape, terms.total, weight);
  tape.backward(scaled);
  return double(terms.total.value().item());
}

namespace {

std::vector<std::size_t> shuffled(std::size_t n, std::uint64_t seed, std::uint64_t epoch) {
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  Rng rng(Rng::mix(seed, 0x5348554646ULL + epoch));
  for (std::size_t i = n; i > 1; --i) std::swap(order[i - 1], order[rng.below(i)]);
  return order;
}

}  // namespace

TrainResult run_training(const ExperimentConfig& cfg, const TrainOptions& opts) {
  cfg.validate();
  const auto train_set = synth::generate_split(cfg.data, cfg.train.train_count, synth::Split::kTrain);
  const auto dev_set = synth::generate_split(cfg.data, cfg.train.dev_count, synth::Split::kDev);

  network::Model<float> model(cfg.model, cfg.train.seed);
  AdamOptions ao;
  ao.lr = cfg.train.lr;
  ao.weight_decay = cfg.train.weight_decay;
  Adam<float> adam(ao);

  const bool writing = !opts.out_dir.empty();
  std::ofstream metrics_log;
  if (writing) {
    std::filesystem::create_directories(opts.out_dir);
    metrics_log.open(opts.out_dir / kMetricsFile, std::ios::binary | std::ios::trunc);
    if (!metrics_log) throw std::runtime_error("cannot write " + (opts.out_dir / kMetricsFile).string());
    save_checkpoint(opts.out_dir / kLastCheckpoint, model.params());
    save_checkpoint(opts.out_dir / kBestCheckpoint, model.params());
  }

  TrainResult result;
  const std::size_t batch = cfg.train.batch_size;
  for (std::size_t epoch = 1; epoch <= cfg.train.epochs; ++epoch) {
    const auto start = std::chrono::steady_clock::now();
    EpochRecord rec;
    rec.epoch = long(epoch);
    rec.lr = cfg.train.lr_at(epoch);
    adam.set_lr(rec.lr);

    const auto order = shuffled(train_set.size(), cfg.train.seed, epoch);
    double loss_sum = 0.0;
    std::size_t counted = 0;
    for (std::size_t b = 0; b < order.size(); b += batch) {
      const std::size_t end = std::min(order.size(), b + batch);
      model.params().zero_grad();
      const float w = 1.0f / float(end - b);
      for (std::size_t k = b; k < end; ++k) {
        loss_sum += accumulate_sample(model, train_set[order[k]], w);
        ++counted;
      }
      adam.step(model.params());
    }
    rec.train_loss = loss_sum / double(std::max<std::size_t>(counted, 1));
    rec.dev = evaluate(model, dev_set);
    rec.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();

    const bool improved = result.best_epoch == 0 || rec.dev.wer < result.best_dev_wer;
    if (improved) {
      result.best_epoch = rec.epoch;
      result.best_dev_wer = rec.dev.wer;
    }
    if (writing) {
      metrics_log << metrics::metric_record(rec.epoch, "dev", rec.dev) << '\n';
      metrics_log.flush();
      save_checkpoint(opts.out_dir / kLastCheckpoint, model.params());
      if (improved) save_checkpoint(opts.out_dir / kBestCheckpoint, model.params());
    }
    result.history.push_back(rec);
    if (opts.on_epoch) opts.on_epoch(rec);
  }
  return result;
}

}  // namespace corrnet::train
