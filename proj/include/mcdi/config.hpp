#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "mcdi/diffusion.hpp"
#include "mcdi/meta.hpp"
#include "mcdi/tasks.hpp"
#include "mcdi/weightprep.hpp"

namespace mcdi {

/// Every knob of an experiment. Serialized as flat `section.field=value` lines.
struct ExperimentConfig {
  // schedule
  int T = 21;
  int k = 3;
  double alpha_min = 0.5;
  double alpha_max = 0.95;

  // downstream tasks and network
  TaskFamily family = TaskFamily::Blobs;
  int n_way = 2;
  int k_shot = 5;
  int query_size = 20;
  std::vector<int> hidden{8};
  Activation activation = Activation::Tanh;

  // weight preparation; prep.k is kept equal to k
  PrepConfig prep;
  bool shared_init = true;

  // denoiser
  int t_embed_dim = 16;
  std::vector<int> denoiser_hidden{64, 64};
  double denoiser_init_std = 0.1;

  // meta-training
  MetaConfig meta;

  // experiment
  std::uint64_t base_seed = 1;
  int n_train_tasks = 16;
  int n_eval_tasks = 8;
  InferenceMode inference = InferenceMode::Posterior;
  int chains_per_task = 1;
  int finetune_steps = 0;
  double finetune_lr = 0.05;

  // baseline and ablation
  ReptileConfig reptile;
  int ablation_seeds = 10;
  std::vector<int> sweep_k{1, 2, 3, 4, 5};

  // verification
  int verify_instances = 100;
  int verify_grad_instances = 20;
};

/// Checks every invariant, including k | T and the per-module rules.
void validate(const ExperimentConfig& cfg);

/// Assigns one `key=value` pair; throws SpecError for unknown keys or bad values.
void set_key(ExperimentConfig& cfg, const std::string& key, const std::string& value);

/// Parses key=value text over the defaults; `#` starts a comment.
ExperimentConfig parse_config(const std::string& text);
ExperimentConfig load_config(const std::filesystem::path& path);

/// Every key, one per line, in a form `parse_config` reads back exactly.
std::string format_config(const ExperimentConfig& cfg);
void save_config(const ExperimentConfig& cfg, const std::filesystem::path& path);

std::string to_string(TaskFamily family);
std::string to_string(InferenceMode mode);

}  // namespace mcdi
