#pragma once

#include <filesystem>
#include <stdexcept>

#include "corrnet/autograd.hpp"

// Binary parameter container, all integers little-endian:
//
//   magic    4 bytes  "CNK1"
//   version  u32      1
//   dtype    u32      1 = real32, 2 = real64
//   count    u32      number of records
//   records, in parameter order:
//     name_len u32, name bytes (no terminator)
//     rank     u32, extents u64 x rank
//     values   raw IEEE-754 little-endian, product(extents) of them
namespace corrnet {

class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline constexpr std::uint32_t kCheckpointVersion = 1;

template <typename R>
void save_checkpoint(const std::filesystem::path& path, const ParameterSet<R>& params);

/// Loads values into an existing parameter set. Every parameter must be present
/// with an identical shape; a mismatch names the offending parameter.
template <typename R>
void load_checkpoint(const std::filesystem::path& path, ParameterSet<R>& params);

}  // namespace corrnet
