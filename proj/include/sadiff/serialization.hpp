#pragma once

#include <cstdint>
#include <fstream>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "json.hpp"

#include "sadiff/common.hpp"
#include "sadiff/datasets.hpp"
#include "sadiff/predictor.hpp"
#include "sadiff/schedule.hpp"
#include "sadiff/training.hpp"

namespace sadiff {

using Json = nlohmann::json;

namespace detail {

/// Rejects keys outside `allowed`, naming the first offender with its section.
inline void check_keys(const Json& j, const std::set<std::string>& allowed, const std::string& section) {
  if (!j.is_object()) throw ConfigError(section + ": expected a JSON object");
  for (const auto& [key, _] : j.items()) {
    if (!allowed.contains(key)) throw ConfigError(section + ": unknown key '" + key + "'");
  }
}

template <class T>
void read_opt(const Json& j, const char* key, T& out, const std::string& section) {
  if (!j.contains(key)) return;
  try {
    out = j.at(key).get<T>();
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(section + "." + key + ": " + e.what());
  }
}

}  // namespace detail

inline Json to_json(const ScheduleSpec& s) {
  return {{"kind", to_string(s.kind)}, {"T", s.T}, {"beta_start", s.beta_start}, {"beta_end", s.beta_end}, {"s", s.s}};
}

inline ScheduleSpec schedule_spec_from_json(const Json& j) {
  detail::check_keys(j, {"kind", "T", "beta_start", "beta_end", "s"}, "schedule");
  ScheduleSpec s;
  std::string kind = to_string(s.kind);
  detail::read_opt(j, "kind", kind, "schedule");
  s.kind = parse_schedule_kind(kind);
  detail::read_opt(j, "T", s.T, "schedule");
  detail::read_opt(j, "beta_start", s.beta_start, "schedule");
  detail::read_opt(j, "beta_end", s.beta_end, "schedule");
  detail::read_opt(j, "s", s.s, "schedule");
  return s;
}

inline Json to_json(const MlpConfig& c) {
  return {{"data_dim", c.data_dim},
          {"hidden", c.hidden},
          {"time_embed_dim", c.time_embed_dim},
          {"T", c.T},
          {"activation", to_string(c.activation)}};
}

/// T defaults to the schedule's when absent.
inline MlpConfig mlp_config_from_json(const Json& j, int default_T) {
  detail::check_keys(j, {"data_dim", "hidden", "time_embed_dim", "T", "activation"}, "model");
  MlpConfig c;
  c.T = default_T;
  detail::read_opt(j, "data_dim", c.data_dim, "model");
  detail::read_opt(j, "hidden", c.hidden, "model");
  detail::read_opt(j, "time_embed_dim", c.time_embed_dim, "model");
  detail::read_opt(j, "T", c.T, "model");
  std::string act = to_string(c.activation);
  detail::read_opt(j, "activation", act, "model");
  c.activation = parse_activation(act);
  c.validate();
  return c;
}

inline const std::set<std::string>& train_config_keys() {
  static const std::set<std::string> keys{"loss_kind",  "K",        "lambda", "use_tau_weights", "learning_rate",
                                          "batch_size", "steps",    "ema_decay", "seed"};
  return keys;
}

inline Json to_json(const TrainConfig& c) {
  return {{"loss_kind", to_string(c.loss_kind)},
          {"K", c.K},
          {"lambda", c.lambda},
          {"use_tau_weights", c.use_tau_weights},
          {"learning_rate", c.learning_rate},
          {"batch_size", c.batch_size},
          {"steps", c.steps},
          {"ema_decay", c.ema_decay},
          {"seed", c.seed}};
}

/// Applies the TrainConfig keys present in j on top of `base`; other keys are ignored here.
inline TrainConfig apply_train_overrides(TrainConfig base, const Json& j, const std::string& section) {
  std::string kind = to_string(base.loss_kind);
  detail::read_opt(j, "loss_kind", kind, section);
  base.loss_kind = parse_loss_kind(kind);
  detail::read_opt(j, "K", base.K, section);
  detail::read_opt(j, "lambda", base.lambda, section);
  detail::read_opt(j, "use_tau_weights", base.use_tau_weights, section);
  detail::read_opt(j, "learning_rate", base.learning_rate, section);
  detail::read_opt(j, "batch_size", base.batch_size, section);
  detail::read_opt(j, "steps", base.steps, section);
  detail::read_opt(j, "ema_decay", base.ema_decay, section);
  detail::read_opt(j, "seed", base.seed, section);
  return base;
}

inline TrainConfig train_config_from_json(const Json& j) {
  detail::check_keys(j, train_config_keys(), "train");
  auto c = apply_train_overrides(TrainConfig{}, j, "train");
  c.validate();
  return c;
}

inline Json to_json(const DatasetSpec& d) {
  Json j{{"kind", to_string(d.kind)}, {"n_points", d.n_points}, {"dim", d.dim}, {"normalize", d.normalize}};
  if (!d.point.empty()) j["point"] = d.point;
  return j;
}

inline DatasetSpec dataset_spec_from_json(const Json& j, const std::set<std::string>& extra_keys = {}) {
  std::set<std::string> keys{"kind", "n_points", "dim", "normalize", "point"};
  keys.insert(extra_keys.begin(), extra_keys.end());
  detail::check_keys(j, keys, "dataset");
  DatasetSpec d;
  std::string kind = to_string(d.kind);
  detail::read_opt(j, "kind", kind, "dataset");
  d.kind = parse_dataset_kind(kind);
  detail::read_opt(j, "n_points", d.n_points, "dataset");
  detail::read_opt(j, "dim", d.dim, "dataset");
  detail::read_opt(j, "normalize", d.normalize, "dataset");
  detail::read_opt(j, "point", d.point, "dataset");
  d.validate();
  return d;
}

inline Json to_json(const DenseLayer& l) {
  return {{"rows", l.weight.rows()},
          {"cols", l.weight.cols()},
          {"weight", std::vector<double>(l.weight.data(), l.weight.data() + l.weight.size())},
          {"bias", std::vector<double>(l.bias.data(), l.bias.data() + l.bias.size())}};
}

inline DenseLayer dense_layer_from_json(const Json& j) {
  const auto rows = j.at("rows").get<Eigen::Index>();
  const auto cols = j.at("cols").get<Eigen::Index>();
  const auto w = j.at("weight").get<std::vector<double>>();
  const auto b = j.at("bias").get<std::vector<double>>();
  if (static_cast<Eigen::Index>(w.size()) != rows * cols || static_cast<Eigen::Index>(b.size()) != rows) {
    throw std::runtime_error("checkpoint: layer size does not match its declared shape");
  }
  DenseLayer l{Batch(rows, cols), Vector(rows)};
  std::copy(w.begin(), w.end(), l.weight.data());
  std::copy(b.begin(), b.end(), l.bias.data());
  return l;
}

template <LayerStack S>
Json layers_to_json(const S& s) {
  Json arr = Json::array();
  for (const auto& l : s.layers) arr.push_back(to_json(l));
  return arr;
}

inline MlpParams params_from_json(const Json& j) {
  MlpParams p;
  for (const auto& l : j) p.layers.push_back(dense_layer_from_json(l));
  return p;
}

inline Json read_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error(path + ": cannot open for reading");
  try {
    return Json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(path + ": invalid JSON: " + e.what());
  }
}

inline void write_text_file(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error(path + ": cannot open for writing");
  out << text;
  if (!out) throw std::runtime_error(path + ": write failed");
}

}  // namespace sadiff
