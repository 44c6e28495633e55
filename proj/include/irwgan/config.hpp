#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "irwgan/error.hpp"

namespace irwgan {

// Resolved experiment configuration. Defaults reproduce the training setup
// the method was introduced with; desk_config() switches to the reduced
// 16x16 networks used by the fast synthetic experiments.
struct ExperimentConfig {
  double lambda_cyc = 10.0;
  double lambda_idt = 10.0;
  double lambda_ess = 1.0;
  double learning_rate = 1e-4;
  int batch_size = 20;
  int micro_batch = 0;  // 0 -> equal to batch_size
  int epochs = 100;
  int decay_start_epoch = 50;
  std::uint64_t seed = 1;
  bool learn_beta_x = true;
  bool learn_beta_y = true;
  int iters_per_epoch = 0;  // 0 -> floor(max(|X|,|Y|) / batch_size)
  std::string precision = "f64";
  std::string sampling = "cycle";  // "cycle" (per-epoch permutation) or "iid"
  bool joint_beta_update = false;  // update beta nets in the same backward as G/F
  int resolution = 256;

  // network sizing
  int gen_base_width = 64;
  int gen_downsample = 2;
  int gen_resblocks = 9;
  int disc_base_width = 64;
  std::vector<int> disc_layers = {3, 5};
  int imp_base_width = 64;
  int imp_conv_layers = 4;
  int imp_downsample_to = 64;

  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;

  int checkpoint_every = 10;  // epochs; 0 -> final checkpoint only
  int sample_every = 10;      // epochs between translation grids; 0 -> none

  std::string data_x, data_y;      // PNG directories (unused when synthetic)
  std::string labels_x, labels_y;  // optional label CSVs

  int effective_micro_batch() const { return micro_batch == 0 ? batch_size : micro_batch; }

  void validate() const {
    require(lambda_cyc >= 0 && lambda_idt >= 0 && lambda_ess >= 0, "lambda weights must be non-negative");
    require(learning_rate > 0, "learning_rate must be positive");
    require(batch_size >= 2, "batch_size must be >= 2");
    require(epochs >= 1, "epochs must be positive");
    require(decay_start_epoch >= 1 && decay_start_epoch <= epochs, "decay_start_epoch must be in [1, epochs]");
    const int mb = effective_micro_batch();
    require(mb >= 1 && batch_size % mb == 0, "micro_batch must divide batch_size");
    require(precision == "f64" || precision == "f32", "precision must be f64 or f32");
    require(sampling == "cycle" || sampling == "iid", "sampling must be cycle or iid");
    require(!disc_layers.empty(), "disc_layers must name at least one discriminator");
    require(resolution >= 4, "resolution must be >= 4");
  }
};

// Reduced networks for 16x16 synthetic experiments.
inline ExperimentConfig desk_config() {
  ExperimentConfig c;
  c.resolution = 16;
  c.gen_base_width = 8;
  c.gen_downsample = 1;
  c.gen_resblocks = 2;
  c.disc_base_width = 8;
  c.disc_layers = {2, 3};
  c.imp_base_width = 8;
  c.imp_conv_layers = 4;
  c.imp_downsample_to = 16;
  return c;
}

namespace detail {

template <class T>
void get_key(const nlohmann::json& j, const char* key, T& out) {
  if (j.contains(key)) out = j.at(key).get<T>();
}

}  // namespace detail

inline nlohmann::json to_json(const ExperimentConfig& c) {
  nlohmann::json j;
  j["lambda_cyc"] = c.lambda_cyc;
  j["lambda_idt"] = c.lambda_idt;
  j["lambda_ess"] = c.lambda_ess;
  j["learning_rate"] = c.learning_rate;
  j["batch_size"] = c.batch_size;
  j["micro_batch"] = c.micro_batch;
  j["epochs"] = c.epochs;
  j["decay_start_epoch"] = c.decay_start_epoch;
  j["seed"] = c.seed;
  j["learn_beta_x"] = c.learn_beta_x;
  j["learn_beta_y"] = c.learn_beta_y;
  j["iters_per_epoch"] = c.iters_per_epoch;
  j["precision"] = c.precision;
  j["sampling"] = c.sampling;
  j["joint_beta_update"] = c.joint_beta_update;
  j["resolution"] = c.resolution;
  j["gen_base_width"] = c.gen_base_width;
  j["gen_downsample"] = c.gen_downsample;
  j["gen_resblocks"] = c.gen_resblocks;
  j["disc_base_width"] = c.disc_base_width;
  j["disc_layers"] = c.disc_layers;
  j["imp_base_width"] = c.imp_base_width;
  j["imp_conv_layers"] = c.imp_conv_layers;
  j["imp_downsample_to"] = c.imp_downsample_to;
  j["adam_beta1"] = c.adam_beta1;
  j["adam_beta2"] = c.adam_beta2;
  j["adam_eps"] = c.adam_eps;
  j["checkpoint_every"] = c.checkpoint_every;
  j["sample_every"] = c.sample_every;
  j["data_x"] = c.data_x;
  j["data_y"] = c.data_y;
  j["labels_x"] = c.labels_x;
  j["labels_y"] = c.labels_y;
  return j;
}

// Strict parse: unknown keys are rejected so typos do not silently fall
// back to defaults.
inline ExperimentConfig config_from_json(const nlohmann::json& j) {
  const nlohmann::json known = to_json(ExperimentConfig{});
  for (auto it = j.begin(); it != j.end(); ++it)
    if (!known.contains(it.key())) throw Error("unknown config key: " + it.key());

  ExperimentConfig c;
  detail::get_key(j, "lambda_cyc", c.lambda_cyc);
  detail::get_key(j, "lambda_idt", c.lambda_idt);
  detail::get_key(j, "lambda_ess", c.lambda_ess);
  detail::get_key(j, "learning_rate", c.learning_rate);
  detail::get_key(j, "batch_size", c.batch_size);
  detail::get_key(j, "micro_batch", c.micro_batch);
  detail::get_key(j, "epochs", c.epochs);
  detail::get_key(j, "decay_start_epoch", c.decay_start_epoch);
  detail::get_key(j, "seed", c.seed);
  detail::get_key(j, "learn_beta_x", c.learn_beta_x);
  detail::get_key(j, "learn_beta_y", c.learn_beta_y);
  detail::get_key(j, "iters_per_epoch", c.iters_per_epoch);
  detail::get_key(j, "precision", c.precision);
  detail::get_key(j, "sampling", c.sampling);
  detail::get_key(j, "joint_beta_update", c.joint_beta_update);
  detail::get_key(j, "resolution", c.resolution);
  detail::get_key(j, "gen_base_width", c.gen_base_width);
  detail::get_key(j, "gen_downsample", c.gen_downsample);
  detail::get_key(j, "gen_resblocks", c.gen_resblocks);
  detail::get_key(j, "disc_base_width", c.disc_base_width);
  detail::get_key(j, "disc_layers", c.disc_layers);
  detail::get_key(j, "imp_base_width", c.imp_base_width);
  detail::get_key(j, "imp_conv_layers", c.imp_conv_layers);
  detail::get_key(j, "imp_downsample_to", c.imp_downsample_to);
  detail::get_key(j, "adam_beta1", c.adam_beta1);
  detail::get_key(j, "adam_beta2", c.adam_beta2);
  detail::get_key(j, "adam_eps", c.adam_eps);
  detail::get_key(j, "checkpoint_every", c.checkpoint_every);
  detail::get_key(j, "sample_every", c.sample_every);
  detail::get_key(j, "data_x", c.data_x);
  detail::get_key(j, "data_y", c.data_y);
  detail::get_key(j, "labels_x", c.labels_x);
  detail::get_key(j, "labels_y", c.labels_y);
  return c;
}

// Applies a "key=value" override; the value is parsed as JSON when it is
// valid JSON, otherwise taken as a string. Throws on unknown keys.
inline void apply_override(nlohmann::json& j, const std::string& kv) {
  auto eq = kv.find('=');
  require(eq != std::string::npos && eq > 0, "override must look like key=value: " + kv);
  const std::string key = kv.substr(0, eq);
  const std::string value = kv.substr(eq + 1);
  const nlohmann::json known = to_json(ExperimentConfig{});
  if (!known.contains(key)) throw Error("unknown config key: " + key);
  nlohmann::json parsed = nlohmann::json::parse(value, nullptr, false);
  if (parsed.is_discarded()) parsed = value;
  j[key] = parsed;
}

}  // namespace irwgan
