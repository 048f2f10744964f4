#pragma once

#include <filesystem>
#include <string>

#include "corrnet/network.hpp"
#include "corrnet/synth.hpp"

// CSV dumps of the maps computed inside one inserted block.
//
// Correlation file, one row per (frame, direction, pixel) that has a
// neighbour frame:
//   t,direction,i,j,a_0,...,a_{N-1}
// direction is "next" (t+1) or "prev" (t-1); a_k are the gated affinities of
// pixel (i, j) over its flattened neighbour window, row-major.
//
// Attention file, one row per feature position:
//   t,h,w,m_mean
// m_mean is the channel mean of M.
namespace corrnet::exporting {

std::string correlation_csv(const Tensor<float>& gated_next, const Tensor<float>& gated_prev);
std::string attention_csv(const Tensor<float>& maps);

struct MapFiles {
  std::filesystem::path correlation;
  std::filesystem::path attention;
};

/// Runs the model on `sample` and writes stage<k>_correlation.csv and
/// stage<k>_attention.csv into out_dir. Throws if `stage` has no block.
MapFiles export_maps(const network::Model<float>& model, const synth::Sample& sample, std::size_t stage,
                     const std::filesystem::path& out_dir);

}  // namespace corrnet::exporting
