#include <CLI11.hpp>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <nlohmann/json.hpp>
#include <optional>

#include "corrnet/checkpoint.hpp"
#include "corrnet/config.hpp"
#include "corrnet/export.hpp"
#include "corrnet/gradcheck.hpp"
#include "corrnet/train.hpp"

namespace fs = std::filesystem;
using namespace corrnet;

namespace {

constexpr const char* kConfigSnapshot = "config.ini";
constexpr const char* kManifest = "manifest.json";

struct CommonFlags {
  std::string config;
  std::vector<std::string> overrides;
};

void add_common(CLI::App* cmd, CommonFlags& f) {
  cmd->add_option("--config", f.config, "INI config file (defaults are used for missing keys)");
  cmd->add_option("--set", f.overrides, "override a config key, e.g. --set train.lr=0.001")->take_all();
}

ExperimentConfig resolve_config(const CommonFlags& f, const fs::path& fallback = {}) {
  ExperimentConfig cfg;
  if (!f.config.empty()) {
    cfg = load_config(f.config);
  } else if (!fallback.empty() && fs::exists(fallback)) {
    cfg = load_config(fallback);
  }
  for (const auto& o : f.overrides) apply_override(cfg, o);
  return cfg;
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw std::runtime_error("cannot write " + path.string());
  os << text;
}

std::size_t split_count(const ExperimentConfig& cfg, synth::Split s) {
  switch (s) {
    case synth::Split::kTrain: return cfg.train.train_count;
    case synth::Split::kDev: return cfg.train.dev_count;
    case synth::Split::kTest: return cfg.train.test_count;
  }
  return 0;
}

std::vector<synth::Sample> load_split(const ExperimentConfig& cfg, const std::string& name) {
  const auto split = synth::parse_split(name);
  const std::size_t n = split_count(cfg, split);
  if (n == 0) throw std::invalid_argument("split '" + name + "' is empty");
  return synth::generate_split(cfg.data, n, split);
}

network::Model<float> load_model(const ExperimentConfig& cfg, const fs::path& checkpoint) {
  network::Model<float> model(cfg.model, cfg.train.seed);
  load_checkpoint(checkpoint, model.params());
  return model;
}

int cmd_train(const CommonFlags& f, const std::string& out, std::optional<std::uint64_t> seed,
              std::optional<std::size_t> epochs) {
  auto cfg = resolve_config(f);
  if (seed) cfg.train.seed = *seed;
  if (epochs) cfg.train.epochs = *epochs;
  cfg.validate();

  const fs::path dir(out);
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec || !fs::is_directory(dir)) throw std::runtime_error("cannot create output directory " + out);
  const std::string snapshot = to_ini(cfg);
  write_text(dir / kConfigSnapshot, snapshot);

  nlohmann::ordered_json manifest;
  manifest["config_path"] = f.config;
  manifest["config_snapshot"] = snapshot;
  manifest["seed"] = cfg.train.seed;
  manifest["output_dir"] = dir.string();
  manifest["checkpoints"] = {{"best", (dir / train::kBestCheckpoint).string()},
                             {"last", (dir / train::kLastCheckpoint).string()}};
  manifest["metric_log"] = (dir / train::kMetricsFile).string();
  write_text(dir / kManifest, manifest.dump(2) + "\n");

  train::TrainOptions opts;
  opts.out_dir = dir;
  opts.on_epoch = [&cfg](const train::EpochRecord& r) {
    std::fprintf(stderr, "epoch %ld/%zu  lr %.3g  loss %.4f  dev wer %.4f  (%.1fs)\n", r.epoch, cfg.train.epochs, r.lr,
                 r.train_loss, r.dev.wer, r.seconds);
  };
  const auto result = train::run_training(cfg, opts);
  if (result.best_epoch > 0) {
    std::printf("best dev wer %.6f at epoch %ld\n", result.best_dev_wer, result.best_epoch);
  } else {
    std::printf("wrote initial checkpoint (no epochs run)\n");
  }
  return 0;
}

int cmd_evaluate(const CommonFlags& f, const std::string& checkpoint, const std::string& split,
                 const std::string& out) {
  const fs::path ckpt(checkpoint);
  const auto cfg = resolve_config(f, ckpt.parent_path() / kConfigSnapshot);
  cfg.validate();
  const auto samples = load_split(cfg, split);
  const auto model = load_model(cfg, ckpt);
  const auto w = train::evaluate(model, samples);

  nlohmann::ordered_json report;
  report["split"] = split;
  report["wer"] = w.wer;
  report["del_rate"] = w.del_rate;
  report["ins_rate"] = w.ins_rate;
  report["sub_rate"] = w.sub_rate;
  report["n_samples"] = w.n_samples;
  const std::string text = report.dump() + "\n";
  std::cout << text;
  const fs::path dest = out.empty() ? ckpt.parent_path() / ("eval_" + split + ".json") : fs::path(out);
  write_text(dest, text);
  return 0;
}

int cmd_gradcheck(const CommonFlags& f, std::uint64_t seed, std::size_t seeds, bool fault) {
  const auto cfg = resolve_config(f);
  auto cases = gradcheck::default_cases(cfg);
  if (fault) cases.push_back(gradcheck::corrupted_fixture());
  gradcheck::Options opts;
  opts.seed = seed;
  opts.seeds = seeds;
  const auto suite = gradcheck::run_suite(cases, opts);
  for (const auto& c : suite.checks) {
    std::printf("%-6s %-28s worst %.3e  tol %.0e  seeds %zu  (%s)\n", c.passed() ? "PASS" : "FAIL", c.name.c_str(),
                c.worst, c.tolerance, c.seeds, c.worst_leaf.c_str());
  }
  std::printf("coverage: %zu/%zu registered ops exercised\n",
              gradcheck::differentiable_ops().size() - suite.uncovered.size(), gradcheck::differentiable_ops().size());
  for (const auto& op : suite.uncovered) std::printf("FAIL   uncovered op %s\n", op.c_str());
  std::printf("%s\n", suite.passed() ? "gradcheck passed" : "gradcheck FAILED");
  return suite.passed() ? 0 : 1;
}

int cmd_export(const CommonFlags& f, const std::string& checkpoint, const std::string& split, std::size_t sample,
               std::size_t stage, const std::string& out) {
  const fs::path ckpt(checkpoint);
  const auto cfg = resolve_config(f, ckpt.parent_path() / kConfigSnapshot);
  cfg.validate();
  if (!cfg.model.inserted(stage)) {
    throw std::invalid_argument("stage " + std::to_string(stage) + " has no inserted block (insertion set: " +
                                (cfg.model.insertion.empty() ? std::string("none") : [&] {
                                  std::string s;
                                  for (auto v : cfg.model.insertion) s += (s.empty() ? "" : ",") + std::to_string(v);
                                  return s;
                                }()) +
                                ")");
  }
  const auto role = synth::parse_split(split);
  if (sample >= split_count(cfg, role)) {
    throw std::invalid_argument("sample " + std::to_string(sample) + " is outside split '" + split + "'");
  }
  const auto s = synth::generate_sample(cfg.data, synth::split_offset(role) + sample);
  const auto model = load_model(cfg, ckpt);
  const auto files = exporting::export_maps(model, s, stage, out);
  std::printf("%s\n%s\n", files.correlation.string().c_str(), files.attention.string().c_str());
  return 0;
}

int cmd_synth(const CommonFlags& f, const std::string& split, const std::string& out) {
  const auto cfg = resolve_config(f);
  cfg.data.validate();
  const auto samples = load_split(cfg, split);
  fs::create_directories(out);
  for (std::size_t i = 0; i < samples.size(); ++i) {
    char name[64];
    std::snprintf(name, sizeof name, "%s_%06zu.cns", split.c_str(), i);
    synth::save_sample(fs::path(out) / name, samples[i]);
  }
  std::printf("wrote %zu samples to %s\n", samples.size(), out.c_str());
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Correlation/identification networks for continuous sign language recognition on synthetic video"};
  app.require_subcommand(1);

  CommonFlags tf;
  std::string t_out;
  std::optional<std::uint64_t> t_seed;
  std::optional<std::size_t> t_epochs;
  auto* train = app.add_subcommand("train", "train a model; writes checkpoints and a JSON-lines metric log");
  add_common(train, tf);
  train->add_option("--out", t_out, "run directory")->required();
  train->add_option("--seed", t_seed, "initialisation and shuffling seed");
  train->add_option("--epochs", t_epochs, "number of epochs (0 writes the initial checkpoint only)");

  CommonFlags ef;
  std::string e_ckpt, e_split = "dev", e_out;
  auto* eval = app.add_subcommand("evaluate", "corpus WER of a checkpoint on one split");
  add_common(eval, ef);
  eval->add_option("--checkpoint", e_ckpt, "checkpoint file")->required();
  eval->add_option("--split", e_split, "train, dev or test");
  eval->add_option("--out", e_out, "report path (default: eval_<split>.json beside the checkpoint)");

  CommonFlags gf;
  std::uint64_t g_seed = 1;
  std::size_t g_seeds = 10;
  bool g_fault = false;
  auto* grad = app.add_subcommand("gradcheck", "finite-difference check of every differentiable op and module");
  add_common(grad, gf);
  grad->add_option("--seed", g_seed, "base seed");
  grad->add_option("--seeds", g_seeds, "random instances per check")->check(CLI::PositiveNumber);
  grad->add_flag("--with-fault-fixture", g_fault, "also run an op with a deliberately wrong adjoint");

  CommonFlags xf;
  std::string x_ckpt, x_split = "dev", x_out = ".";
  std::size_t x_sample = 0, x_stage = 2;
  auto* exp = app.add_subcommand("export-maps", "dump correlation and attention maps of one block to CSV");
  add_common(exp, xf);
  exp->add_option("--checkpoint", x_ckpt, "checkpoint file")->required();
  exp->add_option("--split", x_split, "train, dev or test");
  exp->add_option("--sample", x_sample, "sample index within the split");
  exp->add_option("--stage", x_stage, "backbone stage whose block is exported");
  exp->add_option("--out", x_out, "output directory");

  CommonFlags sf;
  std::string s_split = "train", s_out;
  auto* syn = app.add_subcommand("synth", "write a synthetic split to per-sample cache files");
  add_common(syn, sf);
  syn->add_option("--split", s_split, "train, dev or test");
  syn->add_option("--out", s_out, "output directory")->required();

  CLI11_PARSE(app, argc, argv);

  try {
    if (*train) return cmd_train(tf, t_out, t_seed, t_epochs);
    if (*eval) return cmd_evaluate(ef, e_ckpt, e_split, e_out);
    if (*grad) return cmd_gradcheck(gf, g_seed, g_seeds, g_fault);
    if (*exp) return cmd_export(xf, x_ckpt, x_split, x_sample, x_stage, x_out);
    if (*syn) return cmd_synth(sf, s_split, s_out);
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 0;
}
