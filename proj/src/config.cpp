#include "corrnet/config.hpp"

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

namespace corrnet {

std::vector<std::size_t> TrainConfig::resolved_milestones() const {
  if (!milestones.empty()) return milestones;
  return {static_cast<std::size_t>(std::lround(0.5 * double(epochs))),
          static_cast<std::size_t>(std::lround(0.75 * double(epochs)))};
}

double TrainConfig::lr_at(std::size_t epoch) const {
  double lr_now = lr;
  for (auto m : resolved_milestones()) {
    if (m > 0 && epoch > m) lr_now /= lr_decay;
  }
  return lr_now;
}

void ExperimentConfig::validate() const {
  data.validate();
  if (model.vocabulary != data.vocabulary) {
    throw ConfigError("model vocabulary " + std::to_string(model.vocabulary) + " differs from data vocabulary " +
                      std::to_string(data.vocabulary));
  }
  model.validate();
  if (train.batch_size == 0) throw ConfigError("train.batch_size must be >= 1");
  if (!(train.lr > 0.0) || !(train.lr_decay > 0.0) || train.weight_decay < 0.0) {
    throw ConfigError("train.lr and train.lr_decay must be positive, train.weight_decay non-negative");
  }
  if (data.frames_per_gloss * data.min_glosses < model.min_frames()) {
    throw ConfigError("shortest synthetic clip is shorter than the temporal head minimum of " +
                      std::to_string(model.min_frames()) + " frames");
  }
}

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

std::size_t to_size(const std::string& key, const std::string& v) {
  std::size_t out = 0;
  const auto t = trim(v);
  auto [p, ec] = std::from_chars(t.data(), t.data() + t.size(), out);
  if (ec != std::errc() || p != t.data() + t.size()) throw ConfigError(key + ": expected a non-negative integer, got '" + v + "'");
  return out;
}

std::uint64_t to_u64(const std::string& key, const std::string& v) {
  std::uint64_t out = 0;
  const auto t = trim(v);
  auto [p, ec] = std::from_chars(t.data(), t.data() + t.size(), out);
  if (ec != std::errc() || p != t.data() + t.size()) throw ConfigError(key + ": expected an unsigned integer, got '" + v + "'");
  return out;
}

double to_double(const std::string& key, const std::string& v) {
  const auto t = trim(v);
  char* end = nullptr;
  const double out = std::strtod(t.c_str(), &end);
  if (t.empty() || end != t.c_str() + t.size() || !std::isfinite(out)) {
    throw ConfigError(key + ": expected a real number, got '" + v + "'");
  }
  return out;
}

bool to_bool(const std::string& key, const std::string& v) {
  const auto t = trim(v);
  if (t == "true" || t == "1" || t == "yes") return true;
  if (t == "false" || t == "0" || t == "no") return false;
  throw ConfigError(key + ": expected true or false, got '" + v + "'");
}

std::vector<std::size_t> to_list(const std::string& key, const std::string& v) {
  std::vector<std::size_t> out;
  const auto t = trim(v);
  if (t.empty() || t == "none" || t == "auto") return out;
  std::stringstream ss(t);
  std::string item;
  while (std::getline(ss, item, ',')) out.push_back(to_size(key, item));
  return out;
}

std::string fmt_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  // prefer the shortest text that round-trips
  for (int prec = 1; prec <= 17; ++prec) {
    char s[64];
    std::snprintf(s, sizeof s, "%.*g", prec, v);
    if (std::strtod(s, nullptr) == v) return s;
  }
  return buf;
}

std::string fmt_list(const std::vector<std::size_t>& v, const char* empty) {
  if (v.empty()) return empty;
  std::string s;
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (i) s += ",";
    s += std::to_string(v[i]);
  }
  return s;
}

template <typename F>
ConfigKey key(std::string section, std::string name, std::string doc,
              std::function<void(ExperimentConfig&, const std::string&, const std::string&)> set, F get) {
  ConfigKey k;
  k.section = std::move(section);
  k.name = std::move(name);
  k.doc = std::move(doc);
  const std::string path = k.path();
  k.set = [set, path](ExperimentConfig& c, const std::string& v) { set(c, path, v); };
  k.get = get;
  return k;
}

#define SIZE_KEY(sec, nm, field, doc)                                                                      \
  key(sec, nm, doc, [](ExperimentConfig& c, const std::string& k, const std::string& v) { field = to_size(k, v); }, \
      [](const ExperimentConfig& c) { return std::to_string(field); })
#define REAL_KEY(sec, nm, field, doc)                                                                       \
  key(sec, nm, doc, [](ExperimentConfig& c, const std::string& k, const std::string& v) { field = to_double(k, v); }, \
      [](const ExperimentConfig& c) { return fmt_double(field); })
#define LIST_KEY(sec, nm, field, empty, doc)                                                                \
  key(sec, nm, doc, [](ExperimentConfig& c, const std::string& k, const std::string& v) { field = to_list(k, v); }, \
      [](const ExperimentConfig& c) { return fmt_list(field, empty); })

std::vector<ConfigKey> build_keys() {
  std::vector<ConfigKey> keys;
  // [model]
  keys.push_back(SIZE_KEY("model", "input_channels", c.model.input_channels, "colour channels of the input video"));
  keys.push_back(LIST_KEY("model", "widths", c.model.widths, "none", "output channels of each backbone stage"));
  keys.push_back(LIST_KEY("model", "downsample", c.model.downsample, "none",
                          "spatial max-pool factor after each stage (1 = none)"));
  keys.push_back(LIST_KEY("model", "insertion", c.model.insertion, "none",
                          "1-based stages followed by a correlation/identification block; 'none' for the baseline"));
  keys.push_back(SIZE_KEY("model", "temporal_channels", c.model.temporal_channels, "channels of the 1D temporal head"));
  keys.push_back(SIZE_KEY("model", "temporal_kernel", c.model.temporal_kernel, "kernel of both temporal convolutions"));
  keys.push_back(SIZE_KEY("model", "temporal_pool", c.model.temporal_pool, "kernel/stride of both temporal max pools"));
  keys.push_back(SIZE_KEY("model", "hidden", c.model.hidden, "hidden size of each LSTM direction"));
  keys.push_back(SIZE_KEY("model", "recurrent_layers", c.model.recurrent_layers, "stacked bidirectional LSTM layers"));
  // [correlation]
  keys.push_back(key(
      "correlation", "neighborhood", "'full' or an odd window K",
      [](ExperimentConfig& c, const std::string& k, const std::string& v) {
        c.model.correlation.neighborhood = trim(v) == "full" ? 0 : to_size(k, v);
        if (!c.model.correlation.full() && c.model.correlation.neighborhood % 2 == 0) {
          throw ConfigError(k + ": window must be odd, got " + trim(v));
        }
      },
      [](const ExperimentConfig& c) {
        return c.model.correlation.full() ? std::string("full") : std::to_string(c.model.correlation.neighborhood);
      }));
  // [identification]
  keys.push_back(SIZE_KEY("identification", "reduction", c.model.identification.reduction, "channel reduction factor r"));
  keys.push_back(SIZE_KEY("identification", "spatial_scales", c.model.identification.spatial_scales,
                          "spatial dilation count Ns"));
  keys.push_back(SIZE_KEY("identification", "temporal_scales", c.model.identification.temporal_scales,
                          "temporal dilation count Nt"));
  keys.push_back(SIZE_KEY("identification", "kernel_t", c.model.identification.kernel_t, "base kernel, temporal extent"));
  keys.push_back(SIZE_KEY("identification", "kernel_s", c.model.identification.kernel_s, "base kernel, spatial extent"));
  keys.push_back(key(
      "identification", "groups", "'depthwise' or a group count for the branch convolutions",
      [](ExperimentConfig& c, const std::string& k, const std::string& v) {
        c.model.identification.groups = trim(v) == "depthwise" ? 0 : to_size(k, v);
      },
      [](const ExperimentConfig& c) {
        return c.model.identification.groups == 0 ? std::string("depthwise")
                                                  : std::to_string(c.model.identification.groups);
      }));
  keys.push_back(key(
      "identification", "zero_init_expand", "start the attention projection at zero (M == 0)",
      [](ExperimentConfig& c, const std::string& k, const std::string& v) {
        c.model.identification.zero_init_expand = to_bool(k, v);
      },
      [](const ExperimentConfig& c) { return std::string(c.model.identification.zero_init_expand ? "true" : "false"); }));
  // [loss]
  keys.push_back(REAL_KEY("loss", "ctc", c.model.loss.ctc, "weight of the final-classifier CTC loss"));
  keys.push_back(REAL_KEY("loss", "ve", c.model.loss.ve, "weight of the auxiliary-classifier CTC loss"));
  keys.push_back(REAL_KEY("loss", "va", c.model.loss.va, "weight of the final/auxiliary KL alignment loss"));
  // [data]
  keys.push_back(SIZE_KEY("data", "height", c.data.height, "frame height in pixels"));
  keys.push_back(SIZE_KEY("data", "width", c.data.width, "frame width in pixels"));
  keys.push_back(key(
      "data", "vocabulary", "number of trajectory classes (1..6)",
      [](ExperimentConfig& c, const std::string& k, const std::string& v) {
        c.data.vocabulary = to_size(k, v);
        c.model.vocabulary = c.data.vocabulary;
      },
      [](const ExperimentConfig& c) { return std::to_string(c.data.vocabulary); }));
  keys.push_back(SIZE_KEY("data", "frames_per_gloss", c.data.frames_per_gloss, "frames rendered per gloss"));
  keys.push_back(SIZE_KEY("data", "min_glosses", c.data.min_glosses, "shortest sentence"));
  keys.push_back(SIZE_KEY("data", "max_glosses", c.data.max_glosses, "longest sentence"));
  keys.push_back(REAL_KEY("data", "blob_radius", c.data.blob_radius, "gaussian sigma of every blob, pixels"));
  keys.push_back(REAL_KEY("data", "travel", c.data.travel, "trajectory extent per gloss, pixels"));
  keys.push_back(REAL_KEY("data", "center_jitter", c.data.center_jitter, "random shift of each trajectory centre, pixels"));
  keys.push_back(SIZE_KEY("data", "distractors", c.data.distractors, "static blobs per video"));
  keys.push_back(REAL_KEY("data", "noise", c.data.noise, "additive uniform noise amplitude in [0, 0.5]"));
  keys.push_back(key(
      "data", "seed", "seed of the synthetic corpus",
      [](ExperimentConfig& c, const std::string& k, const std::string& v) { c.data.seed = to_u64(k, v); },
      [](const ExperimentConfig& c) { return std::to_string(c.data.seed); }));
  keys.push_back(SIZE_KEY("data", "train_count", c.train.train_count, "training sentences"));
  keys.push_back(SIZE_KEY("data", "dev_count", c.train.dev_count, "development sentences"));
  keys.push_back(SIZE_KEY("data", "test_count", c.train.test_count, "test sentences"));
  // [train]
  keys.push_back(SIZE_KEY("train", "epochs", c.train.epochs, "training epochs"));
  keys.push_back(REAL_KEY("train", "lr", c.train.lr, "initial Adam learning rate"));
  keys.push_back(REAL_KEY("train", "weight_decay", c.train.weight_decay, "L2 weight decay added to gradients"));
  keys.push_back(SIZE_KEY("train", "batch_size", c.train.batch_size, "sentences per optimizer step"));
  keys.push_back(REAL_KEY("train", "lr_decay", c.train.lr_decay, "learning-rate divisor at each milestone"));
  keys.push_back(LIST_KEY("train", "milestones", c.train.milestones, "auto",
                          "epochs after which the rate is divided; 'auto' = 50% and 75% of epochs"));
  keys.push_back(key(
      "train", "seed", "seed for initialisation and shuffling (overridden by --seed)",
      [](ExperimentConfig& c, const std::string& k, const std::string& v) { c.train.seed = to_u64(k, v); },
      [](const ExperimentConfig& c) { return std::to_string(c.train.seed); }));
  return keys;
}

#undef SIZE_KEY
#undef REAL_KEY
#undef LIST_KEY

const ConfigKey* find_key(const std::string& section, const std::string& name) {
  for (const auto& k : config_keys()) {
    if (k.section == section && k.name == name) return &k;
  }
  return nullptr;
}

}  // namespace

const std::vector<ConfigKey>& config_keys() {
  static const std::vector<ConfigKey> keys = build_keys();
  return keys;
}

ExperimentConfig parse_config(const std::string& text) {
  namespace pt = boost::property_tree;
  pt::ptree tree;
  std::istringstream is(text);
  try {
    pt::read_ini(is, tree);
  } catch (const pt::ini_parser_error& e) {
    throw ConfigError(std::string("config syntax error: ") + e.what());
  }
  ExperimentConfig cfg;
  for (const auto& [section, body] : tree) {
    if (body.empty() && !body.data().empty()) {
      throw ConfigError("config key '" + section + "' must appear inside a [section]");
    }
    for (const auto& [name, value] : body) {
      const ConfigKey* k = find_key(section, name);
      if (!k) throw ConfigError("unknown config key: " + section + "." + name);
      k->set(cfg, value.data());
    }
  }
  return cfg;
}

ExperimentConfig load_config(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw ConfigError("cannot read config file: " + path.string());
  std::stringstream ss;
  ss << is.rdbuf();
  return parse_config(ss.str());
}

void apply_override(ExperimentConfig& cfg, const std::string& assignment) {
  const auto eq = assignment.find('=');
  const auto dot = assignment.find('.');
  if (eq == std::string::npos || dot == std::string::npos || dot > eq) {
    throw ConfigError("override must look like section.key=value, got '" + assignment + "'");
  }
  const std::string section = trim(assignment.substr(0, dot));
  const std::string name = trim(assignment.substr(dot + 1, eq - dot - 1));
  const ConfigKey* k = find_key(section, name);
  if (!k) throw ConfigError("unknown config key: " + section + "." + name);
  k->set(cfg, assignment.substr(eq + 1));
}

std::string to_ini(const ExperimentConfig& cfg) {
  std::ostringstream os;
  std::string current;
  for (const auto& k : config_keys()) {
    if (k.section != current) {
      if (!current.empty()) os << '\n';
      os << '[' << k.section << "]\n";
      current = k.section;
    }
    os << "; " << k.doc << '\n' << k.name << " = " << k.get(cfg) << '\n';
  }
  return os.str();
}

}  // namespace corrnet
