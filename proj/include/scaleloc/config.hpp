#pragma once

#include <charconv>
#include <cstdint>
#include <fstream>
#include <functional>
#include <map>
#include <ostream>
#include <sstream>
#include <string>
#include <system_error>
#include <vector>

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>

#include "scaleloc/anchors.hpp"
#include "scaleloc/env.hpp"
#include "scaleloc/error.hpp"
#include "scaleloc/eval.hpp"
#include "scaleloc/featpyr.hpp"
#include "scaleloc/policy.hpp"
#include "scaleloc/proposal.hpp"
#include "scaleloc/reinforce.hpp"
#include "scaleloc/scenegen.hpp"

namespace scaleloc {

struct PolicyModelConfig {
  int obs_dim = 1024;
  int state_dim = 64;
  RecurrenceMode mode = RecurrenceMode::Gated;
};

struct RunConfig {
  GenConfig scenegen;
  PyramidConfig pyramid;
  AnchorConfig anchors;
  LossConfig loss;
  ProposalTrainConfig proposal_train;
  PolicyModelConfig policy;
  EnvConfig env;
  PolicyTrainConfig policy_train;
  EvalConfig eval;
  bool greedy_eval = false;
  std::uint64_t seed = 1;

  PolicyDims policy_dims() const {
    return PolicyDims::from_pyramid(pyramid, policy.obs_dim, policy.state_dim, policy.mode);
  }

  // Checks every section and the cross-section consistency.
  void validate() const {
    scenegen.validate();
    pyramid.validate();
    anchors.validate(pyramid);
    loss.validate();
    for (const auto& l : pyramid.layers) (void)loss.index_of(l.id);
    proposal_train.validate();
    policy_dims().validate();
    env.validate();
    for (int id : env.layer_cycle)
      if (!pyramid.has_layer(id)) throw ConfigError("env.layer_cycle names unknown layer " + std::to_string(id));
    policy_train.validate();
    if (eval.fppi_points < 1 || !(eval.fppi_min > 0.0 && eval.fppi_min < eval.fppi_max))
      throw ConfigError("eval FPPI range invalid");
  }
};

namespace detail {

inline std::string fmt_double(double v) {
  char buf[64];
  const auto r = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, r.ptr);
}

template <class T>
T parse_number(const std::string& key, const std::string& text) {
  T v{};
  const char* b = text.data();
  const char* e = b + text.size();
  while (b < e && *b == ' ') ++b;
  while (e > b && e[-1] == ' ') --e;
  const auto r = std::from_chars(b, e, v);
  if (r.ec != std::errc() || r.ptr != e) throw ConfigError("invalid value for " + key + ": '" + text + "'");
  return v;
}

template <class T>
std::vector<T> parse_list(const std::string& key, const std::string& text) {
  std::vector<T> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) out.push_back(parse_number<T>(key, item));
  if (out.empty()) throw ConfigError("empty list for " + key);
  return out;
}

template <class T>
std::string join(const std::vector<T>& v) {
  std::string out;
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (i) out += ",";
    if constexpr (std::is_floating_point_v<T>) {
      out += fmt_double(v[i]);
    } else {
      out += std::to_string(v[i]);
    }
  }
  return out;
}

inline bool parse_bool(const std::string& key, const std::string& text) {
  if (text == "true" || text == "1") return true;
  if (text == "false" || text == "0") return false;
  throw ConfigError("invalid boolean for " + key + ": '" + text + "'");
}

struct Field {
  std::string section;
  std::string key;
  std::function<std::string()> get;
  std::function<void(const std::string&)> set;
};

template <class T>
Field num(std::string section, std::string key, T& ref) {
  const std::string full = section + "." + key;
  Field f{std::move(section), std::move(key), nullptr, nullptr};
  f.get = [&ref] {
    if constexpr (std::is_floating_point_v<T>) {
      return fmt_double(ref);
    } else {
      return std::to_string(ref);
    }
  };
  f.set = [&ref, full](const std::string& s) { ref = parse_number<T>(full, s); };
  return f;
}

template <class T>
Field list(std::string section, std::string key, std::vector<T>& ref) {
  const std::string full = section + "." + key;
  Field f{std::move(section), std::move(key), nullptr, nullptr};
  f.get = [&ref] { return join(ref); };
  f.set = [&ref, full](const std::string& s) { ref = parse_list<T>(full, s); };
  return f;
}

inline Field flag(std::string section, std::string key, bool& ref) {
  const std::string full = section + "." + key;
  Field f{std::move(section), std::move(key), nullptr, nullptr};
  f.get = [&ref] { return std::string(ref ? "true" : "false"); };
  f.set = [&ref, full](const std::string& s) { ref = parse_bool(full, s); };
  return f;
}

// Pyramid and anchor layers are edited as parallel lists and rebuilt on set.
struct LayerLists {
  std::vector<int> ids, strides, channels;
  std::vector<double> heights;
};

}  // namespace detail

// Reads and writes RunConfig as a sectioned key = value text file. Every
// field has a default; unknown sections or keys are rejected.
class ConfigBinder {
 public:
  explicit ConfigBinder(RunConfig& cfg) : cfg_(cfg) {
    for (const auto& l : cfg.pyramid.layers) {
      lists_.ids.push_back(l.id);
      lists_.strides.push_back(l.stride);
      lists_.channels.push_back(l.channels);
      lists_.heights.push_back(cfg.anchors.base_heights.count(l.id) ? cfg.anchors.base_heights.at(l.id) : 0.0);
    }
    regression_ = std::string(to_string(cfg.loss.mode));
    recurrence_ = std::string(to_string(cfg.policy.mode));
    build();
  }

  void dump(std::ostream& os) const {
    std::string section;
    for (const auto& f : fields_) {
      if (f.section != section) {
        if (!section.empty()) os << '\n';
        section = f.section;
        os << '[' << section << "]\n";
      }
      os << f.key << " = " << f.get() << '\n';
    }
  }

  void load(std::istream& is) {
    boost::property_tree::ptree tree;
    try {
      boost::property_tree::ini_parser::read_ini(is, tree);
    } catch (const boost::property_tree::ini_parser_error& e) {
      throw ConfigError(std::string("config syntax: ") + e.what());
    }
    for (const auto& [section, body] : tree) {
      if (body.empty() && !body.data().empty()) throw ConfigError("key outside any section: " + section);
      for (const auto& [key, value] : body) {
        const detail::Field* f = find(section, key);
        if (!f) throw ConfigError("unknown config key " + section + "." + key);
        f->set(value.data());
      }
    }
    finish();
  }

  void load_file(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw IoError("cannot open config: " + path);
    load(is);
  }

 private:
  const detail::Field* find(const std::string& section, const std::string& key) const {
    for (const auto& f : fields_)
      if (f.section == section && f.key == key) return &f;
    return nullptr;
  }

  void finish() {
    const std::size_t n = lists_.ids.size();
    if (lists_.strides.size() != n || lists_.channels.size() != n || lists_.heights.size() != n)
      throw ConfigError("pyramid.layer_ids, strides, channels and anchors.base_heights must have equal length");
    cfg_.pyramid.layers.clear();
    cfg_.anchors.base_heights.clear();
    cfg_.loss.layer_ids = lists_.ids;
    for (std::size_t i = 0; i < n; ++i) {
      cfg_.pyramid.layers.push_back({lists_.ids[i], lists_.strides[i], lists_.channels[i]});
      cfg_.anchors.base_heights[lists_.ids[i]] = lists_.heights[i];
    }
    if (regression_ == "raw") {
      cfg_.loss.mode = RegressionMode::Raw;
    } else if (regression_ == "normalized") {
      cfg_.loss.mode = RegressionMode::Normalized;
    } else {
      throw ConfigError("loss.regression must be raw or normalized");
    }
    if (recurrence_ == "tanh") {
      cfg_.policy.mode = RecurrenceMode::Tanh;
    } else if (recurrence_ == "gated") {
      cfg_.policy.mode = RecurrenceMode::Gated;
    } else {
      throw ConfigError("policy.recurrence must be tanh or gated");
    }
    cfg_.anchors.gamma = cfg_.loss.gamma;
    cfg_.validate();
  }

  void build() {
    using detail::flag;
    using detail::list;
    using detail::num;
    auto& c = cfg_;
    auto text = [](std::string section, std::string key, std::string& ref) {
      detail::Field f{std::move(section), std::move(key), nullptr, nullptr};
      f.get = [&ref] { return ref; };
      f.set = [&ref](const std::string& s) { ref = s; };
      return f;
    };
    fields_ = {
        num("run", "seed", c.seed),

        num("scenegen", "scenes", c.scenegen.scenes),
        num("scenegen", "width", c.scenegen.extent.width),
        num("scenegen", "height", c.scenegen.extent.height),
        num("scenegen", "objects_min", c.scenegen.objects_min),
        num("scenegen", "objects_max", c.scenegen.objects_max),
        num("scenegen", "height_median", c.scenegen.height_median),
        num("scenegen", "height_sigma_log", c.scenegen.height_sigma_log),
        num("scenegen", "height_min", c.scenegen.height_min),
        num("scenegen", "height_max", c.scenegen.height_max),
        num("scenegen", "aspect", c.scenegen.aspect),
        num("scenegen", "aspect_jitter", c.scenegen.aspect_jitter),
        num("scenegen", "background_level", c.scenegen.background_level),
        num("scenegen", "contrast", c.scenegen.contrast),
        num("scenegen", "texture_amp", c.scenegen.texture_amp),
        num("scenegen", "noise_amp", c.scenegen.noise_amp),
        num("scenegen", "smooth_amp", c.scenegen.smooth_amp),
        num("scenegen", "smooth_cell", c.scenegen.smooth_cell),
        num("scenegen", "clutter_min", c.scenegen.clutter_min),
        num("scenegen", "clutter_max", c.scenegen.clutter_max),
        num("scenegen", "clutter_range", c.scenegen.clutter_range),

        list("pyramid", "layer_ids", lists_.ids),
        list("pyramid", "strides", lists_.strides),
        list("pyramid", "channels", lists_.channels),
        num("pyramid", "roi_size", c.pyramid.roi_size),

        list("anchors", "base_heights", lists_.heights),
        num("anchors", "aspect", c.anchors.aspect),
        num("anchors", "positive_iou", c.anchors.positive_iou),
        num("anchors", "negative_iou", c.anchors.negative_iou),
        num("anchors", "pos_count", c.anchors.pos_count),

        list("loss", "mean_heights", c.loss.mean_heights),
        list("loss", "scale_factors", c.loss.scale_factors),
        num("loss", "lambda", c.loss.lambda),
        num("loss", "gamma", c.loss.gamma),
        num("loss", "eps", c.loss.eps),
        text("loss", "regression", regression_),

        num("proposal_train", "steps", c.proposal_train.steps),
        num("proposal_train", "lr", c.proposal_train.lr),
        num("proposal_train", "momentum", c.proposal_train.momentum),
        num("proposal_train", "weight_decay", c.proposal_train.weight_decay),
        num("proposal_train", "hidden", c.proposal_train.hidden),
        num("proposal_train", "top_k", c.proposal_train.top_k),
        num("proposal_train", "nms_iou", c.proposal_train.nms_iou),
        num("proposal_train", "stats_scenes", c.proposal_train.stats_scenes),
        num("proposal_train", "input_norm", c.proposal_train.input_norm),

        num("policy", "obs_dim", c.policy.obs_dim),
        num("policy", "state_dim", c.policy.state_dim),
        text("policy", "recurrence", recurrence_),

        num("env", "t_max", c.env.t_max),
        num("env", "move_ratio", c.env.step.move_ratio),
        num("env", "scale_factor", c.env.step.scale_factor),
        num("env", "aspect_ratio_step", c.env.step.aspect_ratio_step),
        num("env", "min_side", c.env.step.min_side),
        num("env", "reward_hi", c.env.reward_hi),
        num("env", "reward_lo", c.env.reward_lo),
        num("env", "discount", c.env.discount),
        list("env", "layer_cycle", c.env.layer_cycle),

        num("policy_train", "lr0", c.policy_train.lr0),
        num("policy_train", "total_steps", c.policy_train.total_steps),
        num("policy_train", "episodes_per_update", c.policy_train.episodes_per_update),
        num("policy_train", "baseline_decay", c.policy_train.baseline_decay),
        flag("policy_train", "use_baseline", c.policy_train.use_baseline),
        num("policy_train", "min_iou", c.policy_train.min_iou),
        num("policy_train", "max_iou", c.policy_train.max_iou),
        num("policy_train", "norm_scenes", c.policy_train.norm_scenes),

        num("eval", "nms_iou", c.eval.nms_iou),
        num("eval", "match_iou", c.eval.match_iou),
        num("eval", "near_boundary", c.eval.near_boundary),
        num("eval", "fppi_min", c.eval.fppi_min),
        num("eval", "fppi_max", c.eval.fppi_max),
        num("eval", "fppi_points", c.eval.fppi_points),
        flag("eval", "greedy_policy", c.greedy_eval),
    };
  }

  RunConfig& cfg_;
  detail::LayerLists lists_;
  std::string regression_;
  std::string recurrence_;
  std::vector<detail::Field> fields_;
};

inline RunConfig load_config(const std::string& path) {
  RunConfig cfg;
  ConfigBinder(cfg).load_file(path);
  return cfg;
}

inline RunConfig parse_config(const std::string& text) {
  RunConfig cfg;
  std::istringstream is(text);
  ConfigBinder(cfg).load(is);
  return cfg;
}

inline std::string dump_config(const RunConfig& cfg) {
  RunConfig copy = cfg;
  std::ostringstream os;
  ConfigBinder(copy).dump(os);
  return os.str();
}

}  // namespace scaleloc
