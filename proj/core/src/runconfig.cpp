#include "dialprobe/runconfig.hpp"

#include <algorithm>
#include <functional>
#include <sstream>

#include <json.hpp>

#include "dialprobe/errors.hpp"
#include "dialprobe/io.hpp"

namespace dialprobe {

using nlohmann::json;

namespace {

struct Field {
  std::string name;
  std::function<void(RunConfig&, const std::string&)> set;
  std::function<json(const RunConfig&)> get;
};

bool parse_bool(const std::string& name, const std::string& value) {
  if (value == "true" || value == "1" || value == "yes") return true;
  if (value == "false" || value == "0" || value == "no") return false;
  throw ConfigError("config key " + name + " expects a boolean, got \"" + value + "\"");
}

std::vector<std::string> split_list(const std::string& value) {
  std::vector<std::string> out;
  std::string item;
  std::istringstream ss(value);
  while (std::getline(ss, item, ','))
    if (!item.empty()) out.push_back(item);
  return out;
}

Field str_field(const std::string& name, std::string RunConfig::* member) {
  return {name, [member](RunConfig& c, const std::string& v) { c.*member = v; },
          [member](const RunConfig& c) { return json(c.*member); }};
}

Field int_field(const std::string& name, int RunConfig::* member) {
  return {name,
          [name, member](RunConfig& c, const std::string& v) {
            try {
              c.*member = std::stoi(v);
            } catch (...) {
              throw ConfigError("config key " + name + " expects an integer, got \"" + v + "\"");
            }
          },
          [member](const RunConfig& c) { return json(c.*member); }};
}

Field i64_field(const std::string& name, std::int64_t RunConfig::* member) {
  return {name,
          [name, member](RunConfig& c, const std::string& v) {
            try {
              c.*member = std::stoll(v);
            } catch (...) {
              throw ConfigError("config key " + name + " expects an integer, got \"" + v + "\"");
            }
          },
          [member](const RunConfig& c) { return json(c.*member); }};
}

Field u64_field(const std::string& name, std::uint64_t RunConfig::* member) {
  return {name,
          [name, member](RunConfig& c, const std::string& v) {
            try {
              c.*member = std::stoull(v);
            } catch (...) {
              throw ConfigError("config key " + name + " expects an integer, got \"" + v + "\"");
            }
          },
          [member](const RunConfig& c) { return json(c.*member); }};
}

Field dbl_field(const std::string& name, double RunConfig::* member) {
  return {name,
          [name, member](RunConfig& c, const std::string& v) {
            try {
              c.*member = std::stod(v);
            } catch (...) {
              throw ConfigError("config key " + name + " expects a number, got \"" + v + "\"");
            }
          },
          [member](const RunConfig& c) { return json(c.*member); }};
}

Field bool_field(const std::string& name, bool RunConfig::* member) {
  return {name,
          [name, member](RunConfig& c, const std::string& v) { c.*member = parse_bool(name, v); },
          [member](const RunConfig& c) { return json(c.*member); }};
}

Field strlist_field(const std::string& name, std::vector<std::string> RunConfig::* member) {
  return {name, [member](RunConfig& c, const std::string& v) { c.*member = split_list(v); },
          [member](const RunConfig& c) { return json(c.*member); }};
}

Field u64list_field(const std::string& name, std::vector<std::uint64_t> RunConfig::* member) {
  return {name,
          [name, member](RunConfig& c, const std::string& v) {
            std::vector<std::uint64_t> out;
            for (const auto& item : split_list(v)) {
              try {
                out.push_back(std::stoull(item));
              } catch (...) {
                throw ConfigError("config key " + name + " expects integers, got \"" + item +
                                  "\"");
              }
            }
            c.*member = std::move(out);
          },
          [member](const RunConfig& c) { return json(c.*member); }};
}

const std::vector<Field>& fields() {
  static const std::vector<Field> all = {
      str_field("data_format", &RunConfig::data_format),
      str_field("train_path", &RunConfig::train_path),
      str_field("valid_path", &RunConfig::valid_path),
      str_field("annotations_path", &RunConfig::annotations_path),
      str_field("out_dir", &RunConfig::out_dir),
      strlist_field("models", &RunConfig::models),
      u64list_field("seeds", &RunConfig::seeds),
      int_field("epochs", &RunConfig::epochs),
      dbl_field("learning_rate", &RunConfig::learning_rate),
      int_field("batch_size", &RunConfig::batch_size),
      int_field("context_window", &RunConfig::context_window),
      int_field("vocab_cap", &RunConfig::vocab_cap),
      int_field("embedding_dim", &RunConfig::embedding_dim),
      int_field("hidden_dim", &RunConfig::hidden_dim),
      int_field("num_layers", &RunConfig::num_layers),
      int_field("num_heads", &RunConfig::num_heads),
      int_field("ffn_dim", &RunConfig::ffn_dim),
      dbl_field("grad_clip", &RunConfig::grad_clip),
      int_field("max_decode_len", &RunConfig::max_decode_len),
      int_field("snapshot_every", &RunConfig::snapshot_every),
      bool_field("transformer_pool_last", &RunConfig::transformer_pool_last),
      strlist_field("tasks", &RunConfig::tasks),
      strlist_field("classifiers", &RunConfig::classifiers),
      strlist_field("probe_stages", &RunConfig::probe_stages),
      bool_field("probe_epoch_series", &RunConfig::probe_epoch_series),
      dbl_field("logreg_c", &RunConfig::logreg_c),
      int_field("probe_max_iter", &RunConfig::probe_max_iter),
      dbl_field("probe_tol", &RunConfig::probe_tol),
      int_field("mlp_hidden", &RunConfig::mlp_hidden),
      dbl_field("mlp_learning_rate", &RunConfig::mlp_learning_rate),
      int_field("mlp_batch_size", &RunConfig::mlp_batch_size),
      int_field("utterance_loc_buckets", &RunConfig::utterance_loc_buckets),
      bool_field("utterance_loc_equal_mass", &RunConfig::utterance_loc_equal_mass),
      int_field("count_cap", &RunConfig::count_cap),
      int_field("value_space_cap", &RunConfig::value_space_cap),
      bool_field("repeat_lookback_all", &RunConfig::repeat_lookback_all),
      bool_field("wordcont_from_target", &RunConfig::wordcont_from_target),
      i64_field("wordcont_freq_lo", &RunConfig::wordcont_freq_lo),
      i64_field("wordcont_freq_hi", &RunConfig::wordcont_freq_hi),
      bool_field("wordcont_auto_scale", &RunConfig::wordcont_auto_scale),
      i64_field("wordcont_ref_tokens", &RunConfig::wordcont_ref_tokens),
      int_field("wordcont_max_words", &RunConfig::wordcont_max_words),
      str_field("bucket_stage", &RunConfig::bucket_stage),
      int_field("pca_sample", &RunConfig::pca_sample),
      str_field("pca_color_task", &RunConfig::pca_color_task),
      int_field("bootstrap_sets", &RunConfig::bootstrap_sets),
      int_field("bootstrap_set_size", &RunConfig::bootstrap_set_size),
      u64_field("bootstrap_seed", &RunConfig::bootstrap_seed),
      bool_field("bootstrap_with_replacement", &RunConfig::bootstrap_with_replacement),
      bool_field("bootstrap_majority_vote", &RunConfig::bootstrap_majority_vote),
      int_field("synth_topics", &RunConfig::synth_topics),
      int_field("synth_slots_per_topic", &RunConfig::synth_slots_per_topic),
      int_field("synth_values_per_slot", &RunConfig::synth_values_per_slot),
      int_field("synth_dialogues", &RunConfig::synth_dialogues),
      int_field("synth_min_turns", &RunConfig::synth_min_turns),
      int_field("synth_max_turns", &RunConfig::synth_max_turns),
      dbl_field("synth_repeat_prob", &RunConfig::synth_repeat_prob),
      dbl_field("synth_valid_fraction", &RunConfig::synth_valid_fraction),
      u64_field("synth_seed", &RunConfig::synth_seed),
      int_field("synth_annotations", &RunConfig::synth_annotations),
      dbl_field("synth_tie_prob", &RunConfig::synth_tie_prob),
      int_field("jobs", &RunConfig::jobs),
  };
  return all;
}

void set_key(RunConfig& cfg, const std::string& key, const std::string& value) {
  for (const auto& field : fields())
    if (field.name == key) {
      field.set(cfg, value);
      return;
    }
  throw ConfigError("unknown config key \"" + key + "\"");
}

std::string trim(const std::string& s) {
  std::size_t b = s.find_first_not_of(" \t\r");
  std::size_t e = s.find_last_not_of(" \t\r");
  return b == std::string::npos ? "" : s.substr(b, e - b + 1);
}

}  // namespace

RunConfig parse_config_file(const std::filesystem::path& path) {
  RunConfig cfg;
  auto lines = io::read_lines(path);
  std::size_t lineno = 0;
  for (const auto& raw : lines) {
    ++lineno;
    std::string line = trim(raw);
    if (line.empty() || line[0] == '#') continue;
    std::size_t eq = line.find('=');
    if (eq == std::string::npos)
      throw ConfigError(path.string() + ":" + std::to_string(lineno) +
                        ": expected key=value, got \"" + line + "\"");
    set_key(cfg, trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
  }
  return cfg;
}

void apply_overrides(RunConfig& cfg, const std::vector<std::string>& overrides) {
  for (const auto& item : overrides) {
    std::size_t eq = item.find('=');
    if (eq == std::string::npos)
      throw ConfigError("override must be key=value, got \"" + item + "\"");
    set_key(cfg, trim(item.substr(0, eq)), trim(item.substr(eq + 1)));
  }
}

std::string config_to_json(const RunConfig& cfg) {
  json j;
  for (const auto& field : fields()) j[field.name] = field.get(cfg);
  return j.dump(2) + "\n";
}

std::string config_hash(const RunConfig& cfg) {
  json j;
  for (const auto& field : fields()) {
    if (field.name == "out_dir" || field.name == "jobs") continue;
    j[field.name] = field.get(cfg);
  }
  return io::hex64(io::fnv1a64(j.dump()));
}

std::vector<std::pair<std::string, std::string>> config_defaults() {
  RunConfig defaults;
  std::vector<std::pair<std::string, std::string>> out;
  for (const auto& field : fields()) out.emplace_back(field.name, field.get(defaults).dump());
  return out;
}

}  // namespace dialprobe
