#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace dialprobe {

// Flat key=value run configuration. Every field has a documented default;
// unknown keys are rejected. The resolved config is echoed as JSON into the
// run directory, and the config hash (which excludes the execution-only
// fields out_dir and jobs) names the run.
struct RunConfig {
  // data
  std::string data_format = "synthetic";  // synthetic | multiwoz | personachat | ndf
  std::string train_path;
  std::string valid_path;
  std::string annotations_path;
  std::string out_dir = "runs";

  // models & training
  std::vector<std::string> models = {"lstm", "lstm_attn"};
  std::vector<std::uint64_t> seeds = {1, 2, 3};
  int epochs = 5;
  double learning_rate = 4e-3;
  int batch_size = 32;
  int context_window = 100;
  int vocab_cap = 2000;
  int embedding_dim = 32;
  int hidden_dim = 64;
  int num_layers = 2;
  int num_heads = 2;
  int ffn_dim = 0;
  double grad_clip = 0.0;
  int max_decode_len = 30;
  int snapshot_every = 1;
  bool transformer_pool_last = false;

  // probing
  std::vector<std::string> tasks;  // empty = every applicable task
  std::vector<std::string> classifiers = {"logreg"};
  std::vector<std::string> probe_stages = {"untrained", "bestbleu", "lastepoch"};
  bool probe_epoch_series = false;
  double logreg_c = 1.0;
  int probe_max_iter = 250;
  double probe_tol = 1e-4;
  int mlp_hidden = 100;
  double mlp_learning_rate = 1e-3;
  int mlp_batch_size = 64;

  // label derivation
  int utterance_loc_buckets = 5;
  bool utterance_loc_equal_mass = false;
  int count_cap = 10;
  int value_space_cap = 200;
  bool repeat_lookback_all = true;
  bool wordcont_from_target = false;
  std::int64_t wordcont_freq_lo = 1000;
  std::int64_t wordcont_freq_hi = 3000;
  bool wordcont_auto_scale = true;
  std::int64_t wordcont_ref_tokens = 1800000;
  int wordcont_max_words = 500;

  // analysis
  std::string bucket_stage = "bestbleu";
  int pca_sample = 2000;
  std::string pca_color_task = "RecentTopic";
  int bootstrap_sets = 50000;
  int bootstrap_set_size = 200;
  std::uint64_t bootstrap_seed = 2020;
  bool bootstrap_with_replacement = false;
  bool bootstrap_majority_vote = false;

  // synthetic corpus
  int synth_topics = 3;
  int synth_slots_per_topic = 4;
  int synth_values_per_slot = 5;
  int synth_dialogues = 500;
  int synth_min_turns = 6;
  int synth_max_turns = 10;
  double synth_repeat_prob = 0.15;
  double synth_valid_fraction = 0.125;
  std::uint64_t synth_seed = 7;
  int synth_annotations = 2000;
  double synth_tie_prob = 0.35;

  // execution
  int jobs = 1;
};

// Parses a key=value file ('#' comments, blank lines allowed). Unknown keys
// raise ConfigError naming the key.
RunConfig parse_config_file(const std::filesystem::path& path);
// Applies "key=value" override strings on top of a config.
void apply_overrides(RunConfig& cfg, const std::vector<std::string>& overrides);

// Fully resolved config as JSON (all fields).
std::string config_to_json(const RunConfig& cfg);
// FNV-1a hash of the semantic config, excluding out_dir and jobs so the run
// identity does not depend on where or how parallel it executes.
std::string config_hash(const RunConfig& cfg);

// Every known key with its default, for documentation output.
std::vector<std::pair<std::string, std::string>> config_defaults();

}  // namespace dialprobe
