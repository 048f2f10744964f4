#pragma once

#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "corrnet/config.hpp"
#include "corrnet/metrics.hpp"
#include "corrnet/network.hpp"
#include "corrnet/synth.hpp"

namespace corrnet::train {

struct EpochRecord {
  long epoch = 0;
  double lr = 0.0;
  double train_loss = 0.0;  // mean total loss over the epoch's samples
  metrics::CorpusWer dev;
  double seconds = 0.0;
};

struct TrainResult {
  std::vector<EpochRecord> history;
  long best_epoch = 0;  // 0 when no epoch ran
  double best_dev_wer = 0.0;
};

struct TrainOptions {
  /// Empty: nothing is written. Otherwise receives metrics.jsonl,
  /// best.cnk and last.cnk.
  std::filesystem::path out_dir;
  std::function<void(const EpochRecord&)> on_epoch;
};

inline constexpr const char* kMetricsFile = "metrics.jsonl";
inline constexpr const char* kBestCheckpoint = "best.cnk";
inline constexpr const char* kLastCheckpoint = "last.cnk";

/// Greedy-decodes every sample and pools the edit operations.
metrics::CorpusWer evaluate(const network::Model<float>& model, const std::vector<synth::Sample>& samples);

/// One sample's loss and gradient accumulation (gradients scaled by `weight`).
double accumulate_sample(const network::Model<float>& model, const synth::Sample& sample, float weight);

/// Trains a fresh model from cfg.train.seed. The sequence of samples,
/// updates and written files depends only on cfg.
TrainResult run_training(const ExperimentConfig& cfg, const TrainOptions& opts = {});

}  // namespace corrnet::train
