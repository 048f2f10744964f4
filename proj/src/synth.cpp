#include "corrnet/synth.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numbers>
#include <stdexcept>

#include "corrnet/rng.hpp"

namespace corrnet::synth {
namespace {

constexpr float kBlobColor[3] = {0.9f, 0.7f, 0.5f};
constexpr char kCacheMagic[4] = {'C', 'N', 'S', '1'};

void splat(Tensor<float>& video, std::size_t frame, double row, double col, double sigma) {
  const std::size_t H = video.shape()[2], W = video.shape()[3];
  const double inv = 1.0 / (2.0 * sigma * sigma);
  for (std::size_t i = 0; i < H; ++i) {
    for (std::size_t j = 0; j < W; ++j) {
      const double dr = double(i) - row, dc = double(j) - col;
      const float v = static_cast<float>(std::exp(-(dr * dr + dc * dc) * inv));
      for (std::size_t c = 0; c < 3; ++c) video[((frame * 3 + c) * H + i) * W + j] += kBlobColor[c] * v;
    }
  }
}

}  // namespace

std::string trajectory_name(int gloss) {
  switch (static_cast<Trajectory>(gloss)) {
    case Trajectory::kLeft: return "left";
    case Trajectory::kRight: return "right";
    case Trajectory::kUp: return "up";
    case Trajectory::kDown: return "down";
    case Trajectory::kClockwiseArc: return "clockwise-arc";
    case Trajectory::kZigzag: return "zigzag";
  }
  return "gloss" + std::to_string(gloss);
}

void SyntheticConfig::validate() const {
  if (height == 0 || width == 0 || frames_per_gloss < 2) {
    throw std::invalid_argument("synthetic config: frame extents must be positive and frames_per_gloss >= 2");
  }
  if (vocabulary == 0 || vocabulary > kMaxVocabulary) {
    throw std::invalid_argument("synthetic config: vocabulary must be in 1.." + std::to_string(kMaxVocabulary));
  }
  if (min_glosses == 0 || min_glosses > max_glosses) {
    throw std::invalid_argument("synthetic config: need 1 <= min_glosses <= max_glosses");
  }
  if (!(noise >= 0.0 && noise <= 0.5)) throw std::invalid_argument("synthetic config: noise must lie in [0, 0.5]");
  if (!(blob_radius > 0.0) || !(travel >= 0.0) || !(center_jitter >= 0.0)) {
    throw std::invalid_argument("synthetic config: blob radius must be positive, travel and jitter non-negative");
  }
}

Split parse_split(const std::string& name) {
  if (name == "train") return Split::kTrain;
  if (name == "dev") return Split::kDev;
  if (name == "test") return Split::kTest;
  throw std::invalid_argument("unknown split '" + name + "' (expected train, dev or test)");
}

std::string split_name(Split s) {
  switch (s) {
    case Split::kTrain: return "train";
    case Split::kDev: return "dev";
    case Split::kTest: return "test";
  }
  return "?";
}

std::uint64_t split_offset(Split s) {
  switch (s) {
    case Split::kTrain: return 0;
    case Split::kDev: return 1'000'000'000ULL;
    case Split::kTest: return 2'000'000'000ULL;
  }
  return 0;
}

std::pair<double, double> trajectory_offset(int gloss, std::size_t frame, std::size_t frames, double travel) {
  const double s = static_cast<double>(frame) / static_cast<double>(frames - 1);
  const double half = travel / 2.0;
  switch (static_cast<Trajectory>(gloss)) {
    case Trajectory::kLeft: return {0.0, travel * (0.5 - s)};
    case Trajectory::kRight: return {0.0, travel * (s - 0.5)};
    case Trajectory::kUp: return {travel * (0.5 - s), 0.0};
    case Trajectory::kDown: return {travel * (s - 0.5), 0.0};
    case Trajectory::kClockwiseArc: {
      // left -> top -> right; shifted down by the arc's mean height
      const double phi = std::numbers::pi * (1.0 - s);
      return {-half * std::sin(phi) + half * 2.0 / std::numbers::pi, half * std::cos(phi)};
    }
    case Trajectory::kZigzag: {
      const double amp = travel / 5.0;
      return {(frame % 2 == 0 ? -amp : amp), travel * (s - 0.5)};
    }
  }
  throw std::invalid_argument("unknown trajectory class " + std::to_string(gloss));
}

Sample generate_sample(const SyntheticConfig& config, std::uint64_t index) {
  config.validate();
  Rng rng(Rng::mix(config.seed, index));
  Sample sample;
  const std::size_t n = config.min_glosses + rng.below(config.max_glosses - config.min_glosses + 1);
  for (std::size_t k = 0; k < n; ++k) sample.label.push_back(1 + static_cast<int>(rng.below(config.vocabulary)));

  const std::size_t F = config.frames_per_gloss;
  const std::size_t T = F * n, H = config.height, W = config.width;
  sample.video = Tensor<float>({T, 3, H, W});

  const double cr = (static_cast<double>(H) - 1.0) / 2.0;
  const double cc = (static_cast<double>(W) - 1.0) / 2.0;
  std::vector<std::pair<double, double>> statics;
  for (std::size_t d = 0; d < config.distractors; ++d) {
    statics.emplace_back(rng.uniform(0.0, static_cast<double>(H) - 1.0), rng.uniform(0.0, static_cast<double>(W) - 1.0));
  }
  for (std::size_t k = 0; k < n; ++k) {
    const double jr = rng.uniform(-config.center_jitter, config.center_jitter);
    const double jc = rng.uniform(-config.center_jitter, config.center_jitter);
    for (std::size_t f = 0; f < F; ++f) {
      const auto [dr, dc] = trajectory_offset(sample.label[k], f, F, config.travel);
      sample.blob_path.emplace_back(cr + jr + dr, cc + jc + dc);
    }
  }
  for (std::size_t t = 0; t < T; ++t) {
    splat(sample.video, t, sample.blob_path[t].first, sample.blob_path[t].second, config.blob_radius);
    for (const auto& [r, c] : statics) splat(sample.video, t, r, c, config.blob_radius);
  }
  for (auto& v : sample.video.data()) {
    if (config.noise > 0.0) v += static_cast<float>(rng.uniform(-config.noise, config.noise));
    v = std::clamp(v, 0.0f, 1.0f);
  }
  return sample;
}

std::vector<Sample> generate_split(const SyntheticConfig& config, std::size_t count, Split role) {
  if (count == 0) throw std::invalid_argument("generate_split: count must be >= 1");
  std::vector<Sample> out;
  out.reserve(count);
  const std::uint64_t base = split_offset(role);
  for (std::size_t i = 0; i < count; ++i) out.push_back(generate_sample(config, base + i));
  return out;
}

void save_sample(const std::filesystem::path& path, const Sample& sample) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw std::runtime_error("cannot write sample cache: " + path.string());
  auto put32 = [&](std::uint32_t v) { os.write(reinterpret_cast<const char*>(&v), 4); };
  os.write(kCacheMagic, 4);
  put32(1);
  put32(static_cast<std::uint32_t>(sample.label.size()));
  for (int g : sample.label) {
    const std::int32_t v = g;
    os.write(reinterpret_cast<const char*>(&v), 4);
  }
  for (auto e : sample.video.shape()) put32(static_cast<std::uint32_t>(e));
  os.write(reinterpret_cast<const char*>(sample.video.ptr()),
           static_cast<std::streamsize>(sample.video.size() * sizeof(float)));
  if (!os) throw std::runtime_error("failed writing sample cache: " + path.string());
}

Sample load_sample(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot read sample cache: " + path.string());
  auto get32 = [&]() {
    std::uint32_t v = 0;
    if (!is.read(reinterpret_cast<char*>(&v), 4)) throw std::runtime_error("truncated sample cache: " + path.string());
    return v;
  };
  char magic[4];
  if (!is.read(magic, 4) || std::memcmp(magic, kCacheMagic, 4) != 0) {
    throw std::runtime_error("not a sample cache file: " + path.string());
  }
  if (get32() != 1) throw std::runtime_error("unsupported sample cache version: " + path.string());
  Sample s;
  const auto n = get32();
  for (std::uint32_t k = 0; k < n; ++k) s.label.push_back(static_cast<std::int32_t>(get32()));
  Shape shape(4);
  for (auto& e : shape) e = get32();
  std::vector<float> values(numel(shape));
  if (!is.read(reinterpret_cast<char*>(values.data()), static_cast<std::streamsize>(values.size() * sizeof(float)))) {
    throw std::runtime_error("truncated sample cache values: " + path.string());
  }
  s.video = Tensor<float>(shape, std::move(values));
  return s;
}

}  // namespace corrnet::synth
