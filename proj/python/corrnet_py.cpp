#include <pybind11/functional.h>
#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include "corrnet/checkpoint.hpp"
#include "corrnet/gradcheck.hpp"
#include "corrnet/train.hpp"

namespace py = pybind11;
using namespace corrnet;

namespace {

template <typename R>
using Array = py::array_t<R, py::array::c_style | py::array::forcecast>;

template <typename R>
py::array_t<R> to_numpy(const Tensor<R>& t) {
  std::vector<py::ssize_t> shape(t.shape().begin(), t.shape().end());
  py::array_t<R> out(shape);
  std::copy(t.data().begin(), t.data().end(), out.mutable_data());
  return out;
}

template <typename R>
Tensor<R> from_numpy(const Array<R>& a) {
  Shape shape(a.shape(), a.shape() + a.ndim());
  Tensor<R> t(shape);
  std::copy(a.data(), a.data() + a.size(), t.ptr());
  return t;
}

ExperimentConfig make_config(const std::string& ini, const std::vector<std::string>& overrides) {
  auto cfg = ini.empty() ? ExperimentConfig{} : parse_config(ini);
  for (const auto& o : overrides) apply_override(cfg, o);
  cfg.validate();
  return cfg;
}

py::dict corpus_dict(const metrics::CorpusWer& w) {
  py::dict d;
  d["wer"] = w.wer;
  d["del_rate"] = w.del_rate;
  d["ins_rate"] = w.ins_rate;
  d["sub_rate"] = w.sub_rate;
  d["n_samples"] = w.n_samples;
  return d;
}

class PyModel {
 public:
  PyModel(const std::string& ini, const std::vector<std::string>& overrides, std::uint64_t seed)
      : cfg_(make_config(ini, overrides)), model_(cfg_.model, seed) {}

  py::tuple forward(const Array<float>& video) const {
    Tape<float> tape(Tape<float>::Mode::kInference);
    const auto out = model_.forward(tape, from_numpy(video));
    return py::make_tuple(to_numpy(out.final_logits.value()), to_numpy(out.auxiliary_logits.value()));
  }

  ctc::GlossSequence decode(const Array<float>& video) const {
    Tape<float> tape(Tape<float>::Mode::kInference);
    return model_.decode(model_.forward(tape, from_numpy(video)));
  }

  double loss(const Array<float>& video, const ctc::GlossSequence& label) const {
    Tape<float> tape(Tape<float>::Mode::kInference);
    return model_.total_loss(tape, model_.forward(tape, from_numpy(video)), label).total.value().item();
  }

  py::dict evaluate(const std::string& split, std::size_t count) const {
    return corpus_dict(train::evaluate(model_, synth::generate_split(cfg_.data, count, synth::parse_split(split))));
  }

  void load(const std::filesystem::path& path) { load_checkpoint(path, model_.params()); }
  void save(const std::filesystem::path& path) const { save_checkpoint(path, model_.params()); }

  py::dict parameters() const {
    py::dict d;
    for (const auto& p : model_.params().items()) d[py::str(p.name)] = to_numpy(p.var.value());
    return d;
  }

  std::size_t parameter_count() const { return model_.params().scalar_count(); }

 private:
  ExperimentConfig cfg_;
  network::Model<float> model_;
};

}  // namespace

PYBIND11_MODULE(_corrnet, m) {
  m.doc() = "corrnet: correlation/identification networks for sign language recognition";

  m.def("default_config", [] { return to_ini(ExperimentConfig{}); }, "Default configuration as INI text.");
  m.def("config_keys", [] {
    std::vector<std::string> keys;
    for (const auto& k : config_keys()) keys.push_back(k.path());
    return keys;
  });

  m.def(
      "generate_sample",
      [](std::uint64_t index, const std::string& split, const std::vector<std::string>& overrides) {
        const auto cfg = make_config("", overrides);
        const auto s = synth::generate_sample(cfg.data, synth::split_offset(synth::parse_split(split)) + index);
        return py::make_tuple(to_numpy(s.video), s.label);
      },
      py::arg("index"), py::arg("split") = "train", py::arg("overrides") = std::vector<std::string>{},
      "Synthetic (video [T,3,H,W], label) pair.");

  m.def(
      "ctc_loss",
      [](const Array<double>& log_probs, const ctc::GlossSequence& label) {
        return ctc::ctc_loss_value(from_numpy(log_probs), label);
      },
      py::arg("log_probs"), py::arg("label"));
  m.def(
      "brute_force_ctc",
      [](const Array<double>& log_probs, const ctc::GlossSequence& label) {
        return ctc::brute_force_ctc(from_numpy(log_probs), label);
      },
      py::arg("log_probs"), py::arg("label"));
  m.def(
      "greedy_decode", [](const Array<double>& lp) { return ctc::greedy_decode(from_numpy(lp)); },
      py::arg("log_probs"));
  m.def(
      "beam_decode",
      [](const Array<double>& lp, std::size_t width) { return ctc::beam_decode(from_numpy(lp), width); },
      py::arg("log_probs"), py::arg("width"));

  m.def(
      "edit_ops",
      [](const ctc::GlossSequence& ref, const ctc::GlossSequence& hyp) {
        const auto e = metrics::edit_ops(ref, hyp);
        return py::make_tuple(e.substitutions, e.insertions, e.deletions);
      },
      py::arg("reference"), py::arg("hypothesis"), "(substitutions, insertions, deletions)");
  m.def(
      "wer",
      [](const ctc::GlossSequence& ref, const ctc::GlossSequence& hyp) {
        return metrics::wer(metrics::edit_ops(ref, hyp));
      },
      py::arg("reference"), py::arg("hypothesis"));
  m.def(
      "corpus_wer",
      [](const std::vector<std::pair<ctc::GlossSequence, ctc::GlossSequence>>& pairs) {
        return corpus_dict(metrics::corpus_wer(pairs));
      },
      py::arg("pairs"));

  m.def(
      "correlation",
      [](const Array<double>& x, double beta_next, double beta_prev, std::size_t neighborhood) {
        correlation::CorrelationParams<double> p{ops::constant(Tensor<double>::scalar(beta_next)),
                                                 ops::constant(Tensor<double>::scalar(beta_prev))};
        correlation::CorrelationConfig cfg;
        cfg.neighborhood = neighborhood;
        Tape<double> tape(Tape<double>::Mode::kInference);
        const auto r = correlation::bidirectional(tape, ops::constant(from_numpy(x)), p, cfg);
        py::dict d;
        d["trajectory"] = to_numpy(r.trajectory.value());
        d["gated_next"] = to_numpy(r.gated_next.value());
        d["gated_prev"] = to_numpy(r.gated_prev.value());
        return d;
      },
      py::arg("x"), py::arg("beta_next") = 0.5, py::arg("beta_prev") = 0.5, py::arg("neighborhood") = 0,
      "Bidirectional trajectory aggregation of x [T,C,H,W]; neighborhood 0 means the full frame.");

  m.def(
      "identification_attention",
      [](const Array<double>& x, std::uint64_t seed, const std::vector<std::string>& overrides) {
        const auto cfg = make_config("", overrides).model.identification;
        ParameterSet<double> ps;
        Rng rng(seed);
        const auto p = identification::IdentificationParams<double>::create(
            ps, "identification", static_cast<std::size_t>(x.shape(1)), cfg, rng);
        Tape<double> tape(Tape<double>::Mode::kInference);
        return to_numpy(identification::attention_maps(tape, ops::constant(from_numpy(x)), p, cfg).value());
      },
      py::arg("x"), py::arg("seed") = 1, py::arg("overrides") = std::vector<std::string>{},
      "Attention maps M in (-0.5, 0.5) of a freshly initialised identification module.");

  py::class_<PyModel>(m, "Model")
      .def(py::init<const std::string&, const std::vector<std::string>&, std::uint64_t>(), py::arg("config") = "",
           py::arg("overrides") = std::vector<std::string>{}, py::arg("seed") = 1)
      .def("forward", &PyModel::forward, py::arg("video"), "(final_logits, auxiliary_logits)")
      .def("decode", &PyModel::decode, py::arg("video"))
      .def("loss", &PyModel::loss, py::arg("video"), py::arg("label"))
      .def("evaluate", &PyModel::evaluate, py::arg("split") = "dev", py::arg("count") = 100)
      .def("load", &PyModel::load, py::arg("path"))
      .def("save", &PyModel::save, py::arg("path"))
      .def("parameters", &PyModel::parameters)
      .def_property_readonly("parameter_count", &PyModel::parameter_count);

  m.def(
      "train",
      [](const std::string& ini, const std::vector<std::string>& overrides, const std::string& out_dir,
         const std::function<void(py::dict)>& on_epoch) {
        const auto cfg = make_config(ini, overrides);
        train::TrainOptions opts;
        opts.out_dir = out_dir;
        std::vector<py::dict> history;
        opts.on_epoch = [&](const train::EpochRecord& r) {
          py::dict d = corpus_dict(r.dev);
          d["epoch"] = r.epoch;
          d["lr"] = r.lr;
          d["train_loss"] = r.train_loss;
          history.push_back(d);
          if (on_epoch) on_epoch(d);
        };
        const auto result = train::run_training(cfg, opts);
        py::dict d;
        d["history"] = history;
        d["best_epoch"] = result.best_epoch;
        d["best_dev_wer"] = result.best_dev_wer;
        return d;
      },
      py::arg("config") = "", py::arg("overrides") = std::vector<std::string>{}, py::arg("out_dir") = "",
      py::arg("on_epoch") = nullptr);

  m.def(
      "gradcheck",
      [](std::size_t seeds, std::uint64_t seed) {
        gradcheck::Options opts;
        opts.seeds = seeds;
        opts.seed = seed;
        const auto suite = gradcheck::run_suite(gradcheck::default_cases(ExperimentConfig{}), opts);
        std::vector<py::dict> rows;
        for (const auto& c : suite.checks) {
          py::dict d;
          d["name"] = c.name;
          d["worst"] = c.worst;
          d["tolerance"] = c.tolerance;
          d["passed"] = c.passed();
          rows.push_back(d);
        }
        return py::make_tuple(suite.passed(), rows, suite.uncovered);
      },
      py::arg("seeds") = 10, py::arg("seed") = 1, "(passed, per-check rows, uncovered ops)");
}
