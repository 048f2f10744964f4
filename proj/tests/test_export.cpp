#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "corrnet/export.hpp"
#include "tiny_config.hpp"

using namespace corrnet;
namespace fs = std::filesystem;

namespace {

std::vector<std::vector<std::string>> read_csv(const fs::path& p) {
  std::ifstream is(p);
  std::vector<std::vector<std::string>> rows;
  std::string line;
  while (std::getline(is, line)) {
    std::vector<std::string> cells;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) cells.push_back(cell);
    rows.push_back(cells);
  }
  return rows;
}

}  // namespace

TEST(Export, CorrelationSchema) {
  Tensor<float> next({2, 1, 2, 1, 3}), prev({2, 1, 2, 1, 3});
  for (std::size_t n = 0; n < next.size(); ++n) {
    next[n] = 0.01f * float(n);
    prev[n] = -0.01f * float(n);
  }
  std::stringstream ss(exporting::correlation_csv(next, prev));
  std::string line;
  std::getline(ss, line);
  EXPECT_EQ(line, "t,direction,i,j,a_0,a_1,a_2");
  std::getline(ss, line);
  EXPECT_EQ(line, "0,next,0,0,0,0.00999999978,0.0199999996");
  std::size_t rows = 1;
  while (std::getline(ss, line)) ++rows;
  // frame 0 has only a next neighbour, frame 1 only a previous one
  EXPECT_EQ(rows, 4u);
}

TEST(Export, AttentionSchema) {
  Tensor<float> maps({1, 2, 1, 2});
  maps[0] = 0.25f;
  maps[1] = 0.375f;
  maps[2] = 0.125f;
  maps[3] = -0.125f;
  EXPECT_EQ(exporting::attention_csv(maps), "t,h,w,m_mean\n0,0,0,0.1875\n0,0,1,0.125\n");
}

TEST(Export, FreshZeroBiasModelHasZeroAttention) {
  auto cfg = testutil::tiny_experiment();
  cfg.model.identification.zero_init_expand = true;
  network::Model<float> model(cfg.model, 1);
  const auto sample = synth::generate_sample(cfg.data, 0);
  const auto dir = fs::temp_directory_path() / "corrnet_export";
  fs::remove_all(dir);
  const auto files = exporting::export_maps(model, sample, 2, dir);
  EXPECT_EQ(files.attention.filename(), "stage2_attention.csv");
  const auto att = read_csv(files.attention);
  ASSERT_GT(att.size(), 1u);
  EXPECT_EQ(att[0], (std::vector<std::string>{"t", "h", "w", "m_mean"}));
  for (std::size_t r = 1; r < att.size(); ++r) EXPECT_EQ(std::stod(att[r][3]), 0.0);

  const auto corr = read_csv(files.correlation);
  ASSERT_GT(corr.size(), 1u);
  const std::size_t T = sample.video.shape()[0];
  const std::size_t hw = 4 * 4;
  EXPECT_EQ(corr.size() - 1, 2 * (T - 1) * hw);
  EXPECT_EQ(corr[0].size(), 4 + hw);
  for (std::size_t r = 1; r < corr.size(); ++r) {
    ASSERT_EQ(corr[r].size(), corr[0].size());
    for (std::size_t k = 4; k < corr[r].size(); ++k) {
      const double a = std::stod(corr[r][k]);
      EXPECT_GT(a, -0.5);
      EXPECT_LT(a, 0.5);
    }
  }
  fs::remove_all(dir);
}

TEST(Export, StageWithoutBlockRejected) {
  const auto cfg = testutil::tiny_experiment();
  network::Model<float> model(cfg.model, 1);
  EXPECT_THROW(exporting::export_maps(model, synth::generate_sample(cfg.data, 0), 1, fs::temp_directory_path()),
               std::invalid_argument);
}
