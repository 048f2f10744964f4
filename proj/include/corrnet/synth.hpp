#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "corrnet/ctc.hpp"
#include "corrnet/tensor.hpp"

// Synthetic gesture videos. One blob of fixed appearance traces a motion
// pattern per gloss, so the class of a gloss is visible only across frames.
namespace corrnet::synth {

enum class Trajectory : int {
  kLeft = 1,
  kRight = 2,
  kUp = 3,
  kDown = 4,
  kClockwiseArc = 5,
  kZigzag = 6,
};

inline constexpr std::size_t kMaxVocabulary = 6;

std::string trajectory_name(int gloss);

struct SyntheticConfig {
  std::size_t height = 16;
  std::size_t width = 16;
  std::size_t vocabulary = 6;
  std::size_t frames_per_gloss = 8;
  std::size_t min_glosses = 2;
  std::size_t max_glosses = 5;
  double blob_radius = 1.5;      // gaussian sigma in pixels
  double travel = 8.0;           // path extent per gloss in pixels
  double center_jitter = 1.5;    // per-gloss random shift of the path centre
  std::size_t distractors = 2;   // static blobs
  double noise = 0.05;           // additive uniform noise amplitude
  std::uint64_t seed = 1;

  void validate() const;
};

struct Sample {
  Tensor<float> video;  // [T, 3, H, W], values in [0, 1]
  ctc::GlossSequence label;
  std::vector<std::pair<double, double>> blob_path;  // per-frame (row, col) of the moving blob
};

enum class Split { kTrain, kDev, kTest };

Split parse_split(const std::string& name);
std::string split_name(Split s);
/// First sample index of a split; splits occupy disjoint index ranges.
std::uint64_t split_offset(Split s);

/// Fully determined by (config.seed, index).
Sample generate_sample(const SyntheticConfig& config, std::uint64_t index);

std::vector<Sample> generate_split(const SyntheticConfig& config, std::size_t count, Split role);

/// Moving-blob centre for one gloss segment, relative to the segment centre.
std::pair<double, double> trajectory_offset(int gloss, std::size_t frame, std::size_t frames, double travel);

// Cache file, little-endian: "CNS1", u32 version, u32 label length,
// i32 x length label ids, u32 x 4 video extents, f32 frame values.
void save_sample(const std::filesystem::path& path, const Sample& sample);
Sample load_sample(const std::filesystem::path& path);

}  // namespace corrnet::synth
