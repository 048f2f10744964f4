#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <set>

#include "corrnet/synth.hpp"

using namespace corrnet;
using namespace corrnet::synth;

namespace {

SyntheticConfig clean_config() {
  SyntheticConfig cfg;
  cfg.noise = 0.0;
  cfg.distractors = 0;
  return cfg;
}

std::pair<double, double> centroid(const Tensor<float>& video, std::size_t t) {
  const std::size_t H = video.shape()[2], W = video.shape()[3];
  double m = 0.0, r = 0.0, c = 0.0;
  for (std::size_t i = 0; i < H; ++i)
    for (std::size_t j = 0; j < W; ++j) {
      const double v = video[((t * 3) * H + i) * W + j];
      m += v;
      r += v * double(i);
      c += v * double(j);
    }
  return {r / m, c / m};
}

// First sample containing `gloss`, with the position of that gloss.
std::pair<Sample, std::size_t> find_gloss(const SyntheticConfig& cfg, int gloss) {
  for (std::uint64_t i = 0;; ++i) {
    auto s = generate_sample(cfg, i);
    for (std::size_t k = 0; k < s.label.size(); ++k)
      if (s.label[k] == gloss) return {std::move(s), k};
  }
}

}  // namespace

TEST(Synth, Deterministic) {
  SyntheticConfig cfg;
  const auto a = generate_sample(cfg, 42), b = generate_sample(cfg, 42);
  EXPECT_EQ(a.video, b.video);
  EXPECT_EQ(a.label, b.label);
  EXPECT_NE(generate_sample(cfg, 43).video, a.video);
}

TEST(Synth, ShapeAndLabelLength) {
  SyntheticConfig cfg;
  for (std::uint64_t i = 0; i < 50; ++i) {
    const auto s = generate_sample(cfg, i);
    EXPECT_GE(s.label.size(), cfg.min_glosses);
    EXPECT_LE(s.label.size(), cfg.max_glosses);
    EXPECT_EQ(s.video.shape(), (Shape{cfg.frames_per_gloss * s.label.size(), 3, 16, 16}));
    for (int g : s.label) {
      EXPECT_GE(g, 1);
      EXPECT_LE(g, 6);
    }
  }
}

TEST(Synth, RightwardBlobMovesRight) {
  const auto cfg = clean_config();
  const auto [s, k] = find_gloss(cfg, int(Trajectory::kRight));
  const std::size_t F = cfg.frames_per_gloss;
  for (std::size_t f = 1; f < F; ++f) {
    EXPECT_GT(centroid(s.video, k * F + f).second, centroid(s.video, k * F + f - 1).second) << f;
  }
}

TEST(Synth, CentroidTracksPath) {
  const auto cfg = clean_config();
  const auto s = generate_sample(cfg, 5);
  for (std::size_t t = 0; t < s.video.shape()[0]; ++t) {
    const auto [r, c] = centroid(s.video, t);
    EXPECT_NEAR(r, s.blob_path[t].first, 0.6);
    EXPECT_NEAR(c, s.blob_path[t].second, 0.6);
  }
}

TEST(Synth, ValuesInUnitInterval) {
  for (double noise : {0.0, 0.05, 0.5}) {
    for (std::size_t distractors : {0u, 2u, 6u}) {
      for (double radius : {0.5, 1.5, 4.0}) {
        SyntheticConfig cfg;
        cfg.noise = noise;
        cfg.distractors = distractors;
        cfg.blob_radius = radius;
        const auto s = generate_sample(cfg, 3);
        for (float v : s.video.data()) {
          ASSERT_GE(v, 0.0f);
          ASSERT_LE(v, 1.0f);
        }
      }
    }
  }
}

TEST(Synth, ClassFrequenciesRoughlyUniform) {
  SyntheticConfig cfg;
  const auto split = generate_split(cfg, 100, Split::kTrain);
  std::vector<std::size_t> counts(7, 0);
  std::size_t total = 0;
  for (const auto& s : split)
    for (int g : s.label) ++counts[std::size_t(g)], ++total;
  const double expected = double(total) / 6.0;
  for (int g = 1; g <= 6; ++g) {
    EXPECT_GE(counts[std::size_t(g)], 0.5 * expected) << g;
    EXPECT_LE(counts[std::size_t(g)], 2.0 * expected) << g;
  }
}

TEST(Synth, SplitsDisjointAndReproducible) {
  SyntheticConfig cfg;
  EXPECT_LT(split_offset(Split::kTrain) + 600, split_offset(Split::kDev));
  EXPECT_LT(split_offset(Split::kDev) + 100, split_offset(Split::kTest));
  const auto train = generate_split(cfg, 30, Split::kTrain);
  const auto dev = generate_split(cfg, 30, Split::kDev);
  std::set<std::vector<float>> videos;
  for (const auto& s : train) videos.emplace(s.video.data().begin(), s.video.data().end());
  for (const auto& s : dev) EXPECT_FALSE(videos.contains({s.video.data().begin(), s.video.data().end()}));
  const auto again = generate_split(cfg, 30, Split::kDev);
  for (std::size_t i = 0; i < dev.size(); ++i) EXPECT_EQ(dev[i].label, again[i].label);
  EXPECT_THROW(generate_split(cfg, 0, Split::kDev), std::invalid_argument);
}

TEST(Synth, SplitNames) {
  EXPECT_EQ(parse_split("dev"), Split::kDev);
  EXPECT_EQ(split_name(Split::kTest), "test");
  EXPECT_THROW(parse_split("valid"), std::invalid_argument);
}

TEST(Synth, StaticFrameStatisticsDoNotRevealClass) {
  auto cfg = clean_config();
  cfg.center_jitter = 0.0;
  const std::size_t F = cfg.frames_per_gloss;
  std::vector<std::pair<double, double>> stats;
  for (int g = 1; g <= 6; ++g) {
    const auto [s, k] = find_gloss(cfg, g);
    double mean = 0.0, sq = 0.0;
    std::size_t n = 0;
    for (std::size_t t = k * F; t < (k + 1) * F; ++t)
      for (std::size_t p = 0; p < 3 * 16 * 16; ++p) {
        const double v = s.video[t * 768 + p];
        mean += v;
        sq += v * v;
        ++n;
      }
    mean /= double(n);
    stats.emplace_back(mean, sq / double(n) - mean * mean);
  }
  for (const auto& [m, v] : stats) {
    EXPECT_NEAR(m, stats[0].first, 0.05 * stats[0].first);
    EXPECT_NEAR(v, stats[0].second, 0.05 * stats[0].second);
  }
}

TEST(Synth, TrajectoriesAreDistinct) {
  for (int a = 1; a <= 6; ++a)
    for (int b = a + 1; b <= 6; ++b) {
      double diff = 0.0;
      for (std::size_t f = 0; f < 8; ++f) {
        const auto pa = trajectory_offset(a, f, 8, 8.0), pb = trajectory_offset(b, f, 8, 8.0);
        diff += std::abs(pa.first - pb.first) + std::abs(pa.second - pb.second);
      }
      EXPECT_GT(diff, 1.0) << trajectory_name(a) << " vs " << trajectory_name(b);
    }
  EXPECT_THROW(trajectory_offset(7, 0, 8, 8.0), std::invalid_argument);
}

TEST(Synth, ConfigValidation) {
  SyntheticConfig cfg;
  cfg.vocabulary = 7;
  EXPECT_THROW(cfg.validate(), std::invalid_argument);
  cfg = {};
  cfg.min_glosses = 4;
  cfg.max_glosses = 3;
  EXPECT_THROW(cfg.validate(), std::invalid_argument);
  cfg = {};
  cfg.noise = -0.1;
  EXPECT_THROW(cfg.validate(), std::invalid_argument);
}

TEST(Synth, CacheRoundTrip) {
  const auto dir = std::filesystem::temp_directory_path() / "corrnet_synth_cache";
  std::filesystem::create_directories(dir);
  const auto s = generate_sample(SyntheticConfig{}, 9);
  save_sample(dir / "s.cns", s);
  const auto back = load_sample(dir / "s.cns");
  EXPECT_EQ(back.video, s.video);
  EXPECT_EQ(back.label, s.label);
  EXPECT_EQ(std::filesystem::file_size(dir / "s.cns"), 4 + 4 + 4 + 4 * s.label.size() + 16 + 4 * s.video.size());
  {
    std::ofstream os(dir / "bad.cns", std::ios::binary);
    os << "XXXX";
  }
  EXPECT_THROW(load_sample(dir / "bad.cns"), std::runtime_error);
  std::filesystem::remove_all(dir);
}
