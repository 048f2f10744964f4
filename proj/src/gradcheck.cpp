#include "corrnet/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <memory>
#include <numeric>
#include <set>

#include "corrnet/correlation.hpp"
#include "corrnet/ctc.hpp"
#include "corrnet/identification.hpp"
#include "corrnet/network.hpp"
#include "corrnet/ops.hpp"

namespace corrnet::gradcheck {

using V = Var<double>;
using T = Tensor<double>;
using Tp = Tape<double>;

namespace {

std::uint64_t name_hash(const std::string& s) {
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  return h;
}

V leaf(Problem& p, Rng& rng, const std::string& name, Shape shape, double lo = -1.0, double hi = 1.0) {
  V v(rng.uniform_tensor<double>(std::move(shape), lo, hi), true);
  p.leaves.emplace_back(name, v);
  return v;
}

// Values at least 0.1 apart so max pooling keeps its winners under perturbation.
V distinct_leaf(Problem& p, Rng& rng, const std::string& name, Shape shape) {
  T t(std::move(shape));
  std::vector<std::size_t> order(t.size());
  std::iota(order.begin(), order.end(), 0);
  for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[rng.below(i)]);
  for (std::size_t i = 0; i < t.size(); ++i) t[i] = 0.1 * double(order[i]) - 0.05 * double(t.size());
  V v(std::move(t), true);
  p.leaves.emplace_back(name, v);
  return v;
}

// Values at least 0.05 away from zero so relu stays on one side.
V off_zero_leaf(Problem& p, Rng& rng, const std::string& name, Shape shape) {
  T t = rng.uniform_tensor<double>(std::move(shape), -1.0, 1.0);
  for (auto& x : t.data()) x += x < 0 ? -0.05 : 0.05;
  V v(std::move(t), true);
  p.leaves.emplace_back(name, v);
  return v;
}

ctc::GlossSequence random_label(Rng& rng, std::size_t vocab, std::size_t max_len, std::size_t frames) {
  for (;;) {
    ctc::GlossSequence label(1 + rng.below(max_len));
    for (auto& g : label) g = int(1 + rng.below(vocab));
    if (ctc::admissible(label, frames)) return label;
  }
}

Case primitive(std::string name, std::function<Problem(Rng&)> make) {
  Case c;
  c.name = std::move(name);
  c.make = std::move(make);
  return c;
}

correlation::CorrelationConfig window_cfg(std::size_t k) {
  correlation::CorrelationConfig c;
  c.neighborhood = k;
  return c;
}

}  // namespace

const std::vector<std::string>& differentiable_ops() {
  static const std::vector<std::string> ops{
      "add",        "sub",          "mul",          "scale",        "sub_const",       "sigmoid",
      "tanh",       "relu",         "scale_by",     "weighted_sum", "sum",             "dot_const",
      "conv3d",     "conv1x1x1",    "conv1d",       "max_pool1d",   "max_pool2d",      "spatial_mean",
      "linear",     "select_row",   "concat_rows",  "concat_cols",  "slice_cols",      "reverse_rows",
      "log_softmax_rows", "kl_rows", "affinity",    "aggregate",    "video_affinity",  "video_aggregate",
      "ctc_loss"};
  return ops;
}

bool SuiteReport::passed() const {
  return uncovered.empty() && std::all_of(checks.begin(), checks.end(), [](const auto& c) { return c.passed(); });
}

double relative_error(const T& analytic, const T& numeric) {
  require_same_shape(analytic, numeric, "relative_error");
  double diff = 0.0, na = 0.0, nn = 0.0;
  for (std::size_t i = 0; i < analytic.size(); ++i) {
    diff = std::max(diff, std::abs(analytic[i] - numeric[i]));
    na = std::max(na, std::abs(analytic[i]));
    nn = std::max(nn, std::abs(numeric[i]));
  }
  return diff / std::max({na, nn, 1e-6});
}

std::vector<Case> default_cases(const ExperimentConfig& cfg) {
  std::vector<Case> cases;

  // ---- elementwise ----
  cases.push_back(primitive("add", [](Rng& r) {
    Problem p;
    auto a = leaf(p, r, "a", {2, 3});
    auto b = leaf(p, r, "b", {2, 3});
    p.forward = [a, b](Tp& t) { return ops::add(t, a, b); };
    return p;
  }));
  cases.push_back(primitive("sub", [](Rng& r) {
    Problem p;
    auto a = leaf(p, r, "a", {2, 3});
    auto b = leaf(p, r, "b", {2, 3});
    p.forward = [a, b](Tp& t) { return ops::sub(t, a, b); };
    return p;
  }));
  cases.push_back(primitive("mul", [](Rng& r) {
    Problem p;
    auto a = leaf(p, r, "a", {2, 3});
    auto b = leaf(p, r, "b", {2, 3});
    p.forward = [a, b](Tp& t) { return ops::mul(t, a, b); };
    return p;
  }));
  cases.push_back(primitive("scale", [](Rng& r) {
    Problem p;
    auto a = leaf(p, r, "a", {2, 3});
    const double k = r.uniform(-2.0, 2.0);
    p.forward = [a, k](Tp& t) { return ops::scale(t, a, k); };
    return p;
  }));
  cases.push_back(primitive("sub_const", [](Rng& r) {
    Problem p;
    auto a = leaf(p, r, "a", {2, 3});
    const double k = r.uniform(-1.0, 1.0);
    p.forward = [a, k](Tp& t) { return ops::sub_const(t, a, k); };
    return p;
  }));
  cases.push_back(primitive("sigmoid", [](Rng& r) {
    Problem p;
    auto a = leaf(p, r, "a", {2, 4}, -4.0, 4.0);
    p.forward = [a](Tp& t) { return ops::sigmoid(t, a); };
    return p;
  }));
  cases.push_back(primitive("tanh", [](Rng& r) {
    Problem p;
    auto a = leaf(p, r, "a", {2, 4}, -3.0, 3.0);
    p.forward = [a](Tp& t) { return ops::tanh(t, a); };
    return p;
  }));
  cases.push_back(primitive("relu", [](Rng& r) {
    Problem p;
    auto a = off_zero_leaf(p, r, "a", {2, 4});
    p.forward = [a](Tp& t) { return ops::relu(t, a); };
    return p;
  }));
  cases.push_back(primitive("scale_by", [](Rng& r) {
    Problem p;
    auto s = leaf(p, r, "s", {});
    auto a = leaf(p, r, "a", {2, 3});
    p.forward = [s, a](Tp& t) { return ops::scale_by(t, s, a); };
    return p;
  }));
  cases.push_back(primitive("weighted_sum", [](Rng& r) {
    Problem p;
    std::vector<V> xs;
    for (int k = 0; k < 3; ++k) xs.push_back(leaf(p, r, "x" + std::to_string(k), {2, 3}));
    auto w = leaf(p, r, "w", {3});
    p.forward = [xs, w](Tp& t) { return ops::weighted_sum<double>(t, xs, w); };
    return p;
  }));
  cases.push_back(primitive("sum", [](Rng& r) {
    Problem p;
    auto a = leaf(p, r, "a", {3, 2});
    p.forward = [a](Tp& t) { return ops::sum(t, a); };
    return p;
  }));
  cases.push_back(primitive("mean", [](Rng& r) {
    Problem p;
    auto a = leaf(p, r, "a", {3, 2});
    p.forward = [a](Tp& t) { return ops::mean(t, a); };
    return p;
  }));
  cases.push_back(primitive("dot_const", [](Rng& r) {
    Problem p;
    auto a = leaf(p, r, "a", {2, 3});
    auto w = r.uniform_tensor<double>({2, 3}, -1.0, 1.0);
    p.forward = [a, w](Tp& t) { return ops::dot_const(t, a, w); };
    return p;
  }));

  // ---- convolution and pooling ----
  cases.push_back(primitive("conv3d", [](Rng& r) {
    Problem p;
    const bool grouped = r.below(2) == 1;
    ops::Conv3dOptions o;
    o.groups = grouped ? 2 : 1;
    o.dilation = grouped ? std::array<std::size_t, 3>{2, 1, 2} : std::array<std::size_t, 3>{1, 1, 1};
    const std::size_t kt = 3, kh = grouped ? 3 : 1, kw = 3;
    o.padding = {o.dilation[0] * (kt - 1) / 2, o.dilation[1] * (kh - 1) / 2, o.dilation[2] * (kw - 1) / 2};
    auto x = leaf(p, r, "x", {3, 4, 4, 3});
    auto w = leaf(p, r, "weight", {4, 4 / o.groups, kt, kh, kw});
    auto b = leaf(p, r, "bias", {4});
    p.forward = [x, w, b, o](Tp& t) { return ops::conv3d(t, x, w, b, o); };
    return p;
  }));
  cases.push_back(primitive("conv1x1x1", [](Rng& r) {
    Problem p;
    auto x = leaf(p, r, "x", {2, 3, 2, 3});
    auto w = leaf(p, r, "weight", {4, 3});
    auto b = leaf(p, r, "bias", {4});
    p.forward = [x, w, b](Tp& t) { return ops::conv1x1x1(t, x, w, b); };
    return p;
  }));
  cases.push_back(primitive("conv1d", [](Rng& r) {
    Problem p;
    const std::size_t pad = r.below(2);
    auto x = leaf(p, r, "x", {5, 3});
    auto w = leaf(p, r, "weight", {4, 3, 3});
    auto b = leaf(p, r, "bias", {4});
    p.forward = [x, w, b, pad](Tp& t) { return ops::conv1d(t, x, w, b, pad); };
    return p;
  }));
  cases.push_back(primitive("max_pool1d", [](Rng& r) {
    Problem p;
    auto x = distinct_leaf(p, r, "x", {6, 3});
    p.forward = [x](Tp& t) { return ops::max_pool1d(t, x, 2); };
    return p;
  }));
  cases.push_back(primitive("max_pool2d", [](Rng& r) {
    Problem p;
    auto x = distinct_leaf(p, r, "x", {2, 2, 4, 4});
    p.forward = [x](Tp& t) { return ops::max_pool2d(t, x, 2); };
    return p;
  }));
  cases.push_back(primitive("spatial_mean", [](Rng& r) {
    Problem p;
    auto x = leaf(p, r, "x", {2, 3, 3, 2});
    p.forward = [x](Tp& t) { return ops::spatial_mean(t, x); };
    return p;
  }));

  // ---- dense / sequence ----
  cases.push_back(primitive("linear", [](Rng& r) {
    Problem p;
    auto x = leaf(p, r, "x", {3, 4});
    auto w = leaf(p, r, "weight", {5, 4});
    auto b = leaf(p, r, "bias", {5});
    p.forward = [x, w, b](Tp& t) { return ops::linear(t, x, w, b); };
    return p;
  }));
  cases.push_back(primitive("select_row", [](Rng& r) {
    Problem p;
    auto x = leaf(p, r, "x", {4, 3});
    const std::size_t row = r.below(4);
    p.forward = [x, row](Tp& t) { return ops::select_row(t, x, row); };
    return p;
  }));
  cases.push_back(primitive("concat_rows", [](Rng& r) {
    Problem p;
    std::vector<V> rows;
    for (int k = 0; k < 3; ++k) rows.push_back(leaf(p, r, "row" + std::to_string(k), {1, 4}));
    p.forward = [rows](Tp& t) { return ops::concat_rows<double>(t, rows); };
    return p;
  }));
  cases.push_back(primitive("concat_cols", [](Rng& r) {
    Problem p;
    auto a = leaf(p, r, "a", {3, 2});
    auto b = leaf(p, r, "b", {3, 4});
    p.forward = [a, b](Tp& t) { return ops::concat_cols(t, a, b); };
    return p;
  }));
  cases.push_back(primitive("slice_cols", [](Rng& r) {
    Problem p;
    auto x = leaf(p, r, "x", {3, 6});
    p.forward = [x](Tp& t) { return ops::slice_cols(t, x, 1, 3); };
    return p;
  }));
  cases.push_back(primitive("reverse_rows", [](Rng& r) {
    Problem p;
    auto x = leaf(p, r, "x", {4, 3});
    p.forward = [x](Tp& t) { return ops::reverse_rows(t, x); };
    return p;
  }));
  cases.push_back(primitive("log_softmax_rows", [](Rng& r) {
    Problem p;
    auto x = leaf(p, r, "x", {3, 5}, -3.0, 3.0);
    p.forward = [x](Tp& t) { return ops::log_softmax_rows(t, x); };
    return p;
  }));
  cases.push_back(primitive("kl_rows", [](Rng& r) {
    Problem p;
    auto a = leaf(p, r, "p_logits", {3, 4}, -2.0, 2.0);
    auto b = leaf(p, r, "q_logits", {3, 4}, -2.0, 2.0);
    p.forward = [a, b](Tp& t) { return ops::kl_rows(t, a, b); };
    return p;
  }));

  // ---- correlation primitives ----
  cases.push_back(primitive("affinity", [](Rng& r) {
    Problem p;
    const auto c = r.below(2) == 1 ? window_cfg(3) : correlation::CorrelationConfig{};
    auto a = leaf(p, r, "x_t", {2, 3, 3});
    auto b = leaf(p, r, "x_u", {2, 3, 3});
    p.forward = [a, b, c](Tp& t) { return correlation::affinity(t, a, b, c); };
    return p;
  }));
  cases.push_back(primitive("aggregate", [](Rng& r) {
    Problem p;
    const auto c = r.below(2) == 1 ? window_cfg(3) : correlation::CorrelationConfig{};
    const auto [kh, kw] = c.window(3, 3);
    auto g = leaf(p, r, "gated", {3, 3, kh, kw}, -0.5, 0.5);
    auto x = leaf(p, r, "x_u", {2, 3, 3});
    p.forward = [g, x, c](Tp& t) { return correlation::aggregate(t, g, x, c); };
    return p;
  }));
  cases.push_back(primitive("video_affinity", [](Rng& r) {
    Problem p;
    const auto c = r.below(2) == 1 ? window_cfg(3) : correlation::CorrelationConfig{};
    const int offset = r.below(2) == 1 ? 1 : -1;
    auto x = leaf(p, r, "x", {3, 2, 3, 3});
    p.forward = [x, c, offset](Tp& t) { return correlation::video_affinity(t, x, offset, c); };
    return p;
  }));
  cases.push_back(primitive("video_aggregate", [](Rng& r) {
    Problem p;
    const auto c = r.below(2) == 1 ? window_cfg(3) : correlation::CorrelationConfig{};
    const int offset = r.below(2) == 1 ? 1 : -1;
    const auto [kh, kw] = c.window(3, 3);
    auto g = leaf(p, r, "gated", {3, 3, 3, kh, kw}, -0.5, 0.5);
    auto x = leaf(p, r, "x", {3, 2, 3, 3});
    p.forward = [g, x, c, offset](Tp& t) { return correlation::video_aggregate(t, g, x, offset, c); };
    return p;
  }));

  // ---- CTC ----
  cases.push_back(primitive("ctc_loss", [](Rng& r) {
    Problem p;
    const std::size_t frames = 4 + r.below(3), vocab = 3;
    auto logits = leaf(p, r, "logits", {frames, vocab + 1}, -2.0, 2.0);
    const auto label = random_label(r, vocab, 3, frames);
    p.forward = [logits, label](Tp& t) { return ctc::ctc_loss(t, ops::log_softmax_rows(t, logits), label); };
    return p;
  }));

  // ---- module forwards ----
  const auto corr_cfg = cfg.model.correlation;
  auto module = [&cases](std::string name, std::function<Problem(Rng&)> make, double tol = 1e-4,
                         double fraction = 1.0) {
    Case c;
    c.name = std::move(name);
    c.module = true;
    c.tolerance = tol;
    c.coordinate_fraction = fraction;
    c.make = std::move(make);
    cases.push_back(std::move(c));
  };

  module("correlation.bidirectional", [corr_cfg](Rng& r) {
    Problem p;
    const std::size_t T = 2 + r.below(3), C = 1 + r.below(3), H = 3 + r.below(2), W = 3 + r.below(2);
    auto c = corr_cfg;
    if (!c.full() && c.neighborhood > 2 * std::max(H, W) - 1) c = correlation::CorrelationConfig{};
    if (r.below(2) == 1) c = window_cfg(3);
    auto x = leaf(p, r, "x", {T, C, H, W});
    correlation::CorrelationParams<double> prm{leaf(p, r, "beta_next", {}), leaf(p, r, "beta_prev", {})};
    p.forward = [x, prm, c](Tp& t) { return correlation::bidirectional(t, x, prm, c).trajectory; };
    return p;
  });

  auto ident_cfg = cfg.model.identification;
  ident_cfg.reduction = 2;
  ident_cfg.groups = 0;
  ident_cfg.zero_init_expand = false;
  module("identification.block", [ident_cfg](Rng& r) {
    Problem p;
    const std::size_t C = 4;
    auto x = leaf(p, r, "x", {3, C, 4, 4});
    auto traj = leaf(p, r, "trajectory", {3, C, 4, 4});
    ParameterSet<double> ps;
    auto prm = identification::IdentificationParams<double>::create(ps, "ident", C, ident_cfg, r);
    for (auto& item : ps.items()) {
      // bias and sigma start at constants; randomise so every term is exercised
      for (auto& v : item.var.mutable_value().data()) v += r.uniform(-0.3, 0.3);
      p.leaves.emplace_back(item.name, item.var);
    }
    auto alpha = leaf(p, r, "alpha", {}, 0.5, 1.0);
    p.forward = [x, traj, prm, alpha, ident_cfg](Tp& t) {
      auto m = identification::attention_maps(t, x, prm, ident_cfg);
      return identification::fuse(t, x, traj, m, alpha);
    };
    return p;
  });

  module("recurrent.layer", [](Rng& r) {
    Problem p;
    const std::size_t h = 3, d = 4;
    auto x = leaf(p, r, "x", {3, d});
    auto dir = [&](const std::string& n) {
      return network::LstmDirection<double>{leaf(p, r, n + ".w_ih", {4 * h, d}), leaf(p, r, n + ".w_hh", {4 * h, h}),
                                            leaf(p, r, n + ".bias", {4 * h})};
    };
    auto fwd = dir("fwd");
    auto bwd = dir("bwd");
    p.forward = [x, fwd, bwd, h](Tp& t) {
      auto f = network::lstm_pass(t, x, fwd, h);
      auto b = ops::reverse_rows(t, network::lstm_pass(t, ops::reverse_rows(t, x), bwd, h));
      return ops::concat_cols(t, f, b);
    };
    return p;
  });

  const auto weights = cfg.model.loss;
  module("loss.total", [weights](Rng& r) {
    // The final logits are a fixed target of the alignment term, so only the
    // auxiliary logits are perturbed here.
    Problem p;
    const std::size_t frames = 4 + r.below(3), vocab = 3;
    V fin(r.uniform_tensor<double>({frames, vocab + 1}, -2.0, 2.0), false);
    auto aux = leaf(p, r, "aux_logits", {frames, vocab + 1}, -2.0, 2.0);
    const auto label = random_label(r, vocab, 3, frames);
    p.forward = [fin, aux, label, weights](Tp& t) { return network::combined_loss(t, fin, aux, label, weights).total; };
    return p;
  });

  network::ModelConfig tiny = cfg.model;
  tiny.input_channels = 3;
  tiny.widths = {4, 8};
  tiny.downsample = {2, 1};
  tiny.insertion = {1, 2};
  tiny.identification = ident_cfg;
  tiny.temporal_channels = 6;
  tiny.hidden = 4;
  tiny.vocabulary = 3;
  tiny.loss.va = 0.0;  // the alignment target is detached; checked through kl_rows instead
  module(
      "model.end_to_end",
      [tiny](Rng& r) {
        Problem p;
        auto model = std::make_shared<network::Model<double>>(tiny, r.next());
        for (auto& item : model->params().items()) {
          if (item.name.ends_with(".alpha")) item.var.mutable_value().fill(r.uniform(0.5, 1.0));
          p.leaves.emplace_back(item.name, item.var);
        }
        const std::size_t frames = 2 * tiny.min_frames();
        auto video = r.uniform_tensor<double>({frames, 3, 8, 8}, 0.0, 1.0);
        const auto label = random_label(r, tiny.vocabulary, 2, tiny.pooled_length(frames));
        p.forward = [model, video, label](Tp& t) {
          auto out = model->forward(t, video);
          return model->total_loss(t, out, label).total;
        };
        return p;
      },
      1e-3, 0.01);

  return cases;
}

Case corrupted_fixture() {
  return primitive("corrupted_square", [](Rng& r) {
    Problem p;
    auto x = leaf(p, r, "x", {2, 3});
    p.forward = [x](Tp& t) {
      T y(x.shape());
      for (std::size_t i = 0; i < y.size(); ++i) y[i] = x.value()[i] * x.value()[i];
      V out(std::move(y), t.wants({&x}));
      if (out.requires_grad()) {
        t.record("corrupted_square", [x, out] {
          if (!out.has_grad()) return;
          auto& g = x.grad_buffer();
          for (std::size_t i = 0; i < g.size(); ++i) g[i] += 3.0 * x.value()[i] * out.grad()[i];  // should be 2x
        });
      }
      return out;
    };
    return p;
  });
}

CheckReport run_case(const Case& c, const Options& opts) {
  CheckReport rep;
  rep.name = c.name;
  rep.module = c.module;
  rep.tolerance = c.tolerance;
  rep.seeds = opts.seeds;
  std::set<std::string> seen;
  for (std::size_t s = 0; s < opts.seeds; ++s) {
    Rng rng(Rng::mix(opts.seed, Rng::mix(name_hash(c.name), s)));
    Problem prob = c.make(rng);

    T projection;
    auto scalarize = [&](Tp& tape, const V& y) {
      if (y.value().size() == 1) return y;
      if (projection.empty()) projection = rng.uniform_tensor<double>(y.shape(), -1.0, 1.0);
      return ops::dot_const(tape, y, projection);
    };

    for (auto& [name, v] : prob.leaves) v.zero_grad();
    {
      Tp tape;
      tape.set_visitor([&seen](const std::string& op) { seen.insert(op); });
      auto loss = scalarize(tape, prob.forward(tape));
      tape.backward(loss);
    }
    auto evaluate = [&]() {
      Tp tape(Tp::Mode::kInference);
      return scalarize(tape, prob.forward(tape)).value().item();
    };

    for (auto& [name, v] : prob.leaves) {
      const std::size_t n = v.value().size();
      std::vector<std::size_t> coords(n);
      std::iota(coords.begin(), coords.end(), 0);
      if (c.coordinate_fraction < 1.0) {
        const auto keep = std::max<std::size_t>(1, std::size_t(std::ceil(c.coordinate_fraction * double(n))));
        for (std::size_t i = 0; i < keep; ++i) std::swap(coords[i], coords[i + rng.below(n - i)]);
        coords.resize(keep);
      }
      T analytic({coords.size()}), numeric({coords.size()});
      for (std::size_t k = 0; k < coords.size(); ++k) {
        const std::size_t i = coords[k];
        analytic[k] = v.has_grad() ? v.grad()[i] : 0.0;
        const double orig = v.value()[i];
        v.mutable_value()[i] = orig + opts.epsilon;
        const double up = evaluate();
        v.mutable_value()[i] = orig - opts.epsilon;
        const double down = evaluate();
        v.mutable_value()[i] = orig;
        numeric[k] = (up - down) / (2.0 * opts.epsilon);
      }
      const double err = relative_error(analytic, numeric);
      if (err > rep.worst || !std::isfinite(err)) {
        rep.worst = std::isfinite(err) ? err : INFINITY;
        rep.worst_leaf = name;
      }
    }
  }
  rep.ops.assign(seen.begin(), seen.end());
  return rep;
}

SuiteReport run_suite(const std::vector<Case>& cases, const Options& opts) {
  SuiteReport suite;
  std::set<std::string> seen;
  for (const auto& c : cases) {
    suite.checks.push_back(run_case(c, opts));
    seen.insert(suite.checks.back().ops.begin(), suite.checks.back().ops.end());
  }
  for (const auto& op : differentiable_ops()) {
    if (!seen.count(op)) suite.uncovered.push_back(op);
  }
  return suite;
}

}  // namespace corrnet::gradcheck
