#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "dialprobe/corpus.hpp"
#include "dialprobe/vocab.hpp"

namespace dialprobe {

// The 18 probe tasks, in canonical order.
enum class ProbeTask {
  UtteranceLoc,
  WordCont,
  PersonalInfo,
  IsMultiTopic,
  NumAllTopics,
  RepeatInfo,
  NumRepeatInfo,
  AllTopics,
  RecentSlots,
  NumRecentInfo,
  RecentValues,
  AllSlots,
  AllValues,
  RecentTopic,
  NumAllInfo,
  ActionSelect,
  EntitySlots,
  EntityValues,
};
inline constexpr int kNumProbeTasks = 18;

enum class TaskKind { Categorical, Count, LabelSet };
enum class TaskScope { ChitChat, GoalOriented, Both };
enum class CorpusFlavor { ChitChat, GoalOriented };

TaskKind task_kind(ProbeTask task);
TaskScope task_scope(ProbeTask task);
const char* task_name(ProbeTask task);
std::optional<ProbeTask> task_from_name(const std::string& name);
bool task_applies(ProbeTask task, CorpusFlavor flavor);
std::vector<ProbeTask> tasks_for(CorpusFlavor flavor);
std::vector<ProbeTask> all_tasks();

// Reserved label names. Corpus-derived labels are lowercase, so the
// uppercase reserved names cannot collide.
inline const std::string kNoneLabel = "NONE";
inline const std::string kOtherLabel = "OTHER";

// One label; shape depends on the task kind. Set labels are kept sorted and
// unique; an empty set is represented as {NONE}.
struct LabelValue {
  TaskKind kind = TaskKind::Categorical;
  std::string categorical;
  int count = 0;
  std::vector<std::string> labels;

  static LabelValue make_categorical(std::string name);
  static LabelValue make_count(int value);
  static LabelValue make_set(std::vector<std::string> names);  // sorts, dedups, NONE if empty

  bool operator==(const LabelValue&) const = default;
};

struct ProbeLabelRecord {
  std::string dialogue_id;
  int turn_index = 0;
  ProbeTask task = ProbeTask::UtteranceLoc;
  LabelValue label;

  bool operator==(const ProbeLabelRecord&) const = default;
};

// The fixed list of 127 English function words shipped with the toolkit
// (documented verbatim in the README). Sorted ascending.
const std::vector<std::string>& builtin_stopwords();

struct DeriveConfig {
  int utterance_loc_buckets = 5;
  bool utterance_loc_equal_mass = false;
  int count_cap = 10;
  bool repeat_lookback_all = true;  // false: only the immediately previous user turn
  bool wordcont_from_target = false;
  std::vector<std::string> mid_freq_words;             // built once per corpus
  const std::vector<std::string>* stopwords = nullptr;  // nullptr -> builtin list
};

// Statistics derived from the training split before any labels are emitted.
struct TrainStats {
  int max_context_turn_index = 0;
  std::vector<int> utterance_loc_cuts;  // equal-mass cut points, size buckets-1
};

TrainStats compute_train_stats(const std::vector<NormalizedDialogue>& train,
                               const DeriveConfig& cfg);

// Mid-frequency word inventory: training-frequency in [lo, hi], descending
// frequency (ties lexicographic), truncated to max_words.
std::vector<std::string> build_mid_freq_words(const Vocabulary& vocab, std::int64_t lo,
                                              std::int64_t hi, int max_words);

// --- single-task derivations ------------------------------------------------

int derive_utterance_loc(int turn_index, const TrainStats& stats, const DeriveConfig& cfg);

LabelValue derive_word_cont(const std::vector<std::string>& tokens, const DeriveConfig& cfg);

// nullopt when the responding speaker has no persona (record skipped).
std::optional<LabelValue> derive_personal_info(const std::vector<std::string>& persona,
                                               const std::vector<std::string>& stopwords);

// The 12 information-specific tasks for the context ending at turn_index.
std::map<ProbeTask, LabelValue> derive_goal_info(const NormalizedDialogue& dialogue,
                                                 int turn_index, const DeriveConfig& cfg);

// ActionSelect / EntitySlots / EntityValues; nullopt when the turn after
// turn_index is not a system turn carrying acts (records skipped).
std::optional<std::map<ProbeTask, LabelValue>> derive_downstream(
    const NormalizedDialogue& dialogue, int turn_index);

// All applicable task records for every context of the dialogue, ordered by
// (turn_index, task).
std::vector<ProbeLabelRecord> derive_records(const NormalizedDialogue& dialogue,
                                             CorpusFlavor flavor, const TrainStats& stats,
                                             const DeriveConfig& cfg, int window);

// --- label spaces -------------------------------------------------------

// Per-task ordered label names (class <-> index bijection), built from the
// training split only. Open-vocabulary spaces carry a trailing OTHER class;
// unseen validation labels map to OTHER (categorical) or are dropped from the
// set (label-set) when no OTHER exists.
class LabelSpace {
 public:
  LabelSpace() = default;
  explicit LabelSpace(std::vector<std::string> names);

  int size() const { return static_cast<int>(names_.size()); }
  const std::vector<std::string>& names() const { return names_; }
  std::optional<int> index_of(const std::string& name) const;
  bool has_other() const { return other_index_ >= 0; }
  int other_index() const { return other_index_; }

  // Categorical: index, or OTHER. nullopt only for closed spaces missing the
  // name (callers treat that as a skip).
  std::optional<int> map_categorical(const std::string& name) const;
  // Label-set: mapped indices, sorted unique; unseen -> OTHER or dropped.
  // `dropped` counts labels discarded for lack of an OTHER class.
  std::vector<int> map_set(const std::vector<std::string>& names, int* mapped_to_other,
                           int* dropped) const;

 private:
  std::vector<std::string> names_;
  std::map<std::string, int> index_;
  int other_index_ = -1;
};

struct LabelSpaceConfig {
  int value_space_cap = 200;  // most frequent training values kept; rest -> OTHER
};

std::map<ProbeTask, LabelSpace> build_label_spaces(const std::vector<ProbeLabelRecord>& train,
                                                   const DeriveConfig& derive_cfg,
                                                   const LabelSpaceConfig& cfg);

void write_label_spaces(const std::filesystem::path& path,
                        const std::map<ProbeTask, LabelSpace>& spaces);
std::map<ProbeTask, LabelSpace> read_label_spaces(const std::filesystem::path& path);

// --- label files ----------------------------------------------------------

// JSON-lines, one record per line:
//   {"dialogue_id": ..., "turn_index": ..., "task": ..., "label": ...}   or
//   {"dialogue_id": ..., "turn_index": ..., "task": ..., "labels": [...]}
void write_label_records(const std::filesystem::path& path,
                         const std::vector<ProbeLabelRecord>& records);
std::vector<ProbeLabelRecord> read_label_records(const std::filesystem::path& path);

// --- distribution audit -----------------------------------------------------

struct TaskAudit {
  std::string task;
  std::int64_t records = 0;
  std::vector<std::pair<std::string, std::int64_t>> label_counts;  // count desc, name asc
  double entropy_bits = 0.0;
  double majority_share = 0.0;
};

std::vector<TaskAudit> audit_distribution(const std::vector<ProbeLabelRecord>& records);

// CSV rows (task, label, count, share).
std::string audit_to_csv(const std::vector<TaskAudit>& audits);

}  // namespace dialprobe
