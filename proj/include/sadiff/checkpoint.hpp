#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

#include "sadiff/datasets.hpp"
#include "sadiff/predictor.hpp"
#include "sadiff/schedule.hpp"
#include "sadiff/serialization.hpp"
#include "sadiff/training.hpp"

namespace sadiff {

inline constexpr const char* kCheckpointFormat = "sa-diffusion-checkpoint";
inline constexpr int kCheckpointVersion = 1;

/// Everything needed to resume training or to sample: hyperparameters, raw and EMA weights,
/// Adam moments and the step counter. Stored as JSON; doubles are written in shortest
/// round-trip form, so a save/load cycle reproduces every parameter bit for bit.
struct Checkpoint {
  ScheduleSpec schedule;
  MlpConfig model;
  TrainConfig train;
  DatasetSpec dataset;
  MlpParams params;
  EmaParams ema;
  AdamState adam;

  long step() const { return adam.step; }

  static Checkpoint from_state(const TrainState& st, const ScheduleSpec& sched, const TrainConfig& cfg,
                               const DatasetSpec& data) {
    return {sched, st.model.config(), cfg, data, st.model.params(), st.ema, st.adam};
  }

  TrainState to_state() const { return {Mlp(model, params), ema, adam}; }
  Mlp ema_model() const { return Mlp(model, ema.shadow); }
};

inline Json to_json(const Checkpoint& c) {
  return {{"format", kCheckpointFormat},
          {"version", kCheckpointVersion},
          {"schedule", to_json(c.schedule)},
          {"model", to_json(c.model)},
          {"train", to_json(c.train)},
          {"dataset", to_json(c.dataset)},
          {"step", c.adam.step},
          {"params", layers_to_json(c.params)},
          {"ema", {{"decay", c.ema.decay}, {"shadow", layers_to_json(c.ema.shadow)}}},
          {"adam",
           {{"beta1", c.adam.beta1},
            {"beta2", c.adam.beta2},
            {"epsilon", c.adam.epsilon},
            {"m", layers_to_json(c.adam.m)},
            {"v", layers_to_json(c.adam.v)}}}};
}

inline Checkpoint checkpoint_from_json(const Json& j) {
  if (j.value("format", std::string{}) != kCheckpointFormat) {
    throw std::runtime_error("checkpoint: missing or wrong 'format' field");
  }
  const int version = j.value("version", 0);
  if (version != kCheckpointVersion) {
    throw std::runtime_error("checkpoint: unsupported version " + std::to_string(version));
  }
  Checkpoint c;
  c.schedule = schedule_spec_from_json(j.at("schedule"));
  c.model = mlp_config_from_json(j.at("model"), c.schedule.T);
  c.train = train_config_from_json(j.at("train"));
  c.dataset = dataset_spec_from_json(j.at("dataset"));
  c.params = params_from_json(j.at("params"));
  c.ema.decay = j.at("ema").at("decay").get<double>();
  c.ema.shadow = params_from_json(j.at("ema").at("shadow"));
  const auto& a = j.at("adam");
  c.adam.beta1 = a.at("beta1").get<double>();
  c.adam.beta2 = a.at("beta2").get<double>();
  c.adam.epsilon = a.at("epsilon").get<double>();
  c.adam.m = params_from_json(a.at("m"));
  c.adam.v = params_from_json(a.at("v"));
  c.adam.step = j.at("step").get<long>();
  // Mlp's constructor validates the layer shapes against the config.
  (void)Mlp(c.model, c.params);
  if (!same_shapes(c.params, c.ema.shadow) || !same_shapes(c.params, c.adam.m) || !same_shapes(c.params, c.adam.v)) {
    throw std::runtime_error("checkpoint: EMA or optimizer state shape differs from params");
  }
  return c;
}

inline void save_checkpoint(const std::string& path, const Checkpoint& c) {
  write_text_file(path, to_json(c).dump() + "\n");
}

inline Checkpoint load_checkpoint(const std::string& path) {
  const Json j = read_json_file(path);
  try {
    return checkpoint_from_json(j);
  } catch (const nlohmann::json::exception& e) {
    throw std::runtime_error(path + ": malformed checkpoint: " + e.what());
  } catch (const std::exception& e) {
    throw std::runtime_error(path + ": " + e.what());
  }
}

}  // namespace sadiff
