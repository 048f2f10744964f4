#include "corrnet/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <map>

namespace corrnet {
namespace {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

constexpr char kMagic[4] = {'C', 'N', 'K', '1'};

template <typename T>
void put(std::ostream& os, T v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T get(std::istream& is, const std::filesystem::path& path) {
  T v{};
  if (!is.read(reinterpret_cast<char*>(&v), sizeof(T))) {
    throw CheckpointError("truncated checkpoint: " + path.string());
  }
  return v;
}

template <typename S, typename R>
void read_values(std::istream& is, const std::filesystem::path& path, Tensor<R>& dst) {
  std::vector<S> buf(dst.size());
  if (!is.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(buf.size() * sizeof(S)))) {
    throw CheckpointError("truncated checkpoint values: " + path.string());
  }
  for (std::size_t i = 0; i < buf.size(); ++i) dst[i] = static_cast<R>(buf[i]);
}

}  // namespace

template <typename R>
void save_checkpoint(const std::filesystem::path& path, const ParameterSet<R>& params) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw CheckpointError("cannot write checkpoint: " + path.string());
  os.write(kMagic, 4);
  put<std::uint32_t>(os, kCheckpointVersion);
  put<std::uint32_t>(os, static_cast<std::uint32_t>(dtype_of<R>()));
  put<std::uint32_t>(os, static_cast<std::uint32_t>(params.size()));
  for (const auto& p : params.items()) {
    put<std::uint32_t>(os, static_cast<std::uint32_t>(p.name.size()));
    os.write(p.name.data(), static_cast<std::streamsize>(p.name.size()));
    const auto& v = p.var.value();
    put<std::uint32_t>(os, static_cast<std::uint32_t>(v.rank()));
    for (auto e : v.shape()) put<std::uint64_t>(os, e);
    os.write(reinterpret_cast<const char*>(v.ptr()), static_cast<std::streamsize>(v.size() * sizeof(R)));
  }
  if (!os) throw CheckpointError("failed writing checkpoint: " + path.string());
}

template <typename R>
void load_checkpoint(const std::filesystem::path& path, ParameterSet<R>& params) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw CheckpointError("cannot read checkpoint: " + path.string());
  char magic[4];
  if (!is.read(magic, 4) || std::memcmp(magic, kMagic, 4) != 0) {
    throw CheckpointError("not a checkpoint (bad magic): " + path.string());
  }
  const auto version = get<std::uint32_t>(is, path);
  if (version != kCheckpointVersion) {
    throw CheckpointError("unsupported checkpoint version " + std::to_string(version));
  }
  const auto dtype = static_cast<DType>(get<std::uint32_t>(is, path));
  if (dtype != DType::kReal32 && dtype != DType::kReal64) throw CheckpointError("unknown dtype code in checkpoint");
  const auto count = get<std::uint32_t>(is, path);

  std::map<std::string, bool> seen;
  for (std::uint32_t k = 0; k < count; ++k) {
    const auto name_len = get<std::uint32_t>(is, path);
    std::string name(name_len, '\0');
    if (!is.read(name.data(), name_len)) throw CheckpointError("truncated checkpoint name: " + path.string());
    const auto rank = get<std::uint32_t>(is, path);
    Shape shape(rank);
    for (auto& e : shape) e = static_cast<std::size_t>(get<std::uint64_t>(is, path));
    auto* p = params.find(name);
    if (!p) throw CheckpointError("checkpoint parameter not in model: " + name);
    if (p->var.value().shape() != shape) {
      throw CheckpointError("shape mismatch for parameter " + name + ": checkpoint " + shape_str(shape) +
                            ", model " + shape_str(p->var.value().shape()));
    }
    auto& dst = p->var.mutable_value();
    if (dtype == DType::kReal32) {
      read_values<float>(is, path, dst);
    } else {
      read_values<double>(is, path, dst);
    }
    seen[name] = true;
  }
  for (const auto& p : params.items()) {
    if (!seen.count(p.name)) throw CheckpointError("checkpoint is missing parameter " + p.name);
  }
}

template void save_checkpoint(const std::filesystem::path&, const ParameterSet<float>&);
template void save_checkpoint(const std::filesystem::path&, const ParameterSet<double>&);
template void load_checkpoint(const std::filesystem::path&, ParameterSet<float>&);
template void load_checkpoint(const std::filesystem::path&, ParameterSet<double>&);

}  // namespace corrnet
