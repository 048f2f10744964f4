#include "corrnet/export.hpp"

#include <cstdio>
#include <fstream>
#include <stdexcept>

namespace corrnet::exporting {

namespace {

std::string num(float v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.9g", double(v));
  return buf;
}

void append_direction(std::string& out, const Tensor<float>& g, const char* dir, int offset) {
  const auto& s = g.shape();
  const std::size_t T = s[0], H = s[1], W = s[2], N = s[3] * s[4];
  for (std::size_t t = 0; t < T; ++t) {
    const long u = long(t) + offset;
    if (u < 0 || u >= long(T)) continue;
    for (std::size_t i = 0; i < H; ++i) {
      for (std::size_t j = 0; j < W; ++j) {
        out += std::to_string(t) + "," + dir + "," + std::to_string(i) + "," + std::to_string(j);
        const float* row = g.ptr() + ((t * H + i) * W + j) * N;
        for (std::size_t k = 0; k < N; ++k) out += "," + num(row[k]);
        out += "\n";
      }
    }
  }
}

void write_file(const std::filesystem::path& path, const std::string& text) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw std::runtime_error("cannot write " + path.string());
  os << text;
  if (!os) throw std::runtime_error("failed writing " + path.string());
}

}  // namespace

std::string correlation_csv(const Tensor<float>& gated_next, const Tensor<float>& gated_prev) {
  if (gated_next.rank() != 5 || gated_next.shape() != gated_prev.shape()) {
    throw ShapeError("correlation_csv: expected two [T,H,W,Kh,Kw] maps, got " + shape_str(gated_next.shape()) +
                     " and " + shape_str(gated_prev.shape()));
  }
  const std::size_t N = gated_next.shape()[3] * gated_next.shape()[4];
  std::string out = "t,direction,i,j";
  for (std::size_t k = 0; k < N; ++k) out += ",a_" + std::to_string(k);
  out += "\n";
  append_direction(out, gated_next, "next", +1);
  append_direction(out, gated_prev, "prev", -1);
  return out;
}

std::string attention_csv(const Tensor<float>& maps) {
  if (maps.rank() != 4) throw ShapeError("attention_csv: expected [T,C,H,W], got " + shape_str(maps.shape()));
  const auto& s = maps.shape();
  const std::size_t T = s[0], C = s[1], H = s[2], W = s[3];
  std::string out = "t,h,w,m_mean\n";
  for (std::size_t t = 0; t < T; ++t) {
    for (std::size_t h = 0; h < H; ++h) {
      for (std::size_t w = 0; w < W; ++w) {
        double acc = 0.0;
        for (std::size_t c = 0; c < C; ++c) acc += maps.ptr()[((t * C + c) * H + h) * W + w];
        out += std::to_string(t) + "," + std::to_string(h) + "," + std::to_string(w) + "," +
               num(float(acc / double(C))) + "\n";
      }
    }
  }
  return out;
}

MapFiles export_maps(const network::Model<float>& model, const synth::Sample& sample, std::size_t stage,
                     const std::filesystem::path& out_dir) {
  if (!model.config().inserted(stage)) {
    throw std::invalid_argument("stage " + std::to_string(stage) + " has no correlation/identification block");
  }
  Tape<float> tape(Tape<float>::Mode::kInference);
  std::vector<network::BlockTrace<float>> trace;
  model.forward(tape, sample.video, &trace);
  for (const auto& b : trace) {
    if (b.stage != stage) continue;
    std::filesystem::create_directories(out_dir);
    const std::string prefix = "stage" + std::to_string(stage);
    MapFiles files{out_dir / (prefix + "_correlation.csv"), out_dir / (prefix + "_attention.csv")};
    write_file(files.correlation,
               correlation_csv(b.trajectory.gated_next.value(), b.trajectory.gated_prev.value()));
    write_file(files.attention, attention_csv(b.attention.value()));
    return files;
  }
  throw std::logic_error("block trace for stage " + std::to_string(stage) + " missing");
}

}  // namespace corrnet::exporting
