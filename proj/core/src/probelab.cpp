#include "dialprobe/probelab.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>
#include <unordered_set>

#include <json.hpp>

#include "dialprobe/errors.hpp"
#include "dialprobe/io.hpp"

namespace dialprobe {

using nlohmann::json;

namespace {

struct TaskMeta {
  ProbeTask task;
  const char* name;
  TaskKind kind;
  TaskScope scope;
};

constexpr TaskMeta kTasks[kNumProbeTasks] = {
    {ProbeTask::UtteranceLoc, "UtteranceLoc", TaskKind::Categorical, TaskScope::Both},
    {ProbeTask::WordCont, "WordCont", TaskKind::LabelSet, TaskScope::ChitChat},
    {ProbeTask::PersonalInfo, "PersonalInfo", TaskKind::LabelSet, TaskScope::ChitChat},
    {ProbeTask::IsMultiTopic, "IsMultiTopic", TaskKind::Categorical, TaskScope::GoalOriented},
    {ProbeTask::NumAllTopics, "NumAllTopics", TaskKind::Count, TaskScope::GoalOriented},
    {ProbeTask::RepeatInfo, "RepeatInfo", TaskKind::LabelSet, TaskScope::GoalOriented},
    {ProbeTask::NumRepeatInfo, "NumRepeatInfo", TaskKind::Count, TaskScope::GoalOriented},
    {ProbeTask::AllTopics, "AllTopics", TaskKind::LabelSet, TaskScope::GoalOriented},
    {ProbeTask::RecentSlots, "RecentSlots", TaskKind::LabelSet, TaskScope::GoalOriented},
    {ProbeTask::NumRecentInfo, "NumRecentInfo", TaskKind::Count, TaskScope::GoalOriented},
    {ProbeTask::RecentValues, "RecentValues", TaskKind::LabelSet, TaskScope::GoalOriented},
    {ProbeTask::AllSlots, "AllSlots", TaskKind::LabelSet, TaskScope::GoalOriented},
    {ProbeTask::AllValues, "AllValues", TaskKind::LabelSet, TaskScope::GoalOriented},
    {ProbeTask::RecentTopic, "RecentTopic", TaskKind::Categorical, TaskScope::GoalOriented},
    {ProbeTask::NumAllInfo, "NumAllInfo", TaskKind::Count, TaskScope::GoalOriented},
    {ProbeTask::ActionSelect, "ActionSelect", TaskKind::Categorical, TaskScope::GoalOriented},
    {ProbeTask::EntitySlots, "EntitySlots", TaskKind::LabelSet, TaskScope::GoalOriented},
    {ProbeTask::EntityValues, "EntityValues", TaskKind::LabelSet, TaskScope::GoalOriented},
};

const TaskMeta& meta(ProbeTask task) { return kTasks[static_cast<int>(task)]; }

}  // namespace

TaskKind task_kind(ProbeTask task) { return meta(task).kind; }
TaskScope task_scope(ProbeTask task) { return meta(task).scope; }
const char* task_name(ProbeTask task) { return meta(task).name; }

std::optional<ProbeTask> task_from_name(const std::string& name) {
  for (const auto& m : kTasks)
    if (name == m.name) return m.task;
  return std::nullopt;
}

bool task_applies(ProbeTask task, CorpusFlavor flavor) {
  TaskScope scope = task_scope(task);
  if (scope == TaskScope::Both) return true;
  return (scope == TaskScope::ChitChat) == (flavor == CorpusFlavor::ChitChat);
}

std::vector<ProbeTask> tasks_for(CorpusFlavor flavor) {
  std::vector<ProbeTask> tasks;
  for (const auto& m : kTasks)
    if (task_applies(m.task, flavor)) tasks.push_back(m.task);
  return tasks;
}

std::vector<ProbeTask> all_tasks() {
  std::vector<ProbeTask> tasks;
  for (const auto& m : kTasks) tasks.push_back(m.task);
  return tasks;
}

LabelValue LabelValue::make_categorical(std::string name) {
  LabelValue v;
  v.kind = TaskKind::Categorical;
  v.categorical = std::move(name);
  return v;
}

LabelValue LabelValue::make_count(int value) {
  LabelValue v;
  v.kind = TaskKind::Count;
  v.count = value;
  return v;
}

LabelValue LabelValue::make_set(std::vector<std::string> names) {
  LabelValue v;
  v.kind = TaskKind::LabelSet;
  std::sort(names.begin(), names.end());
  names.erase(std::unique(names.begin(), names.end()), names.end());
  if (names.empty()) names.push_back(kNoneLabel);
  v.labels = std::move(names);
  return v;
}

TrainStats compute_train_stats(const std::vector<NormalizedDialogue>& train,
                               const DeriveConfig& cfg) {
  if (cfg.utterance_loc_buckets < 2) throw ConfigError("utterance_loc_buckets must be >= 2");
  TrainStats stats;
  std::vector<int> indices;
  for (const auto& d : train) {
    if (d.turns.size() < 2) continue;
    for (std::size_t t = 0; t + 1 < d.turns.size(); ++t)
      indices.push_back(static_cast<int>(t));
  }
  if (!indices.empty())
    stats.max_context_turn_index = *std::max_element(indices.begin(), indices.end());
  if (cfg.utterance_loc_equal_mass && !indices.empty()) {
    std::sort(indices.begin(), indices.end());
    int buckets = cfg.utterance_loc_buckets;
    for (int k = 1; k < buckets; ++k) {
      std::size_t pos = static_cast<std::size_t>(k) * indices.size() / static_cast<std::size_t>(buckets);
      stats.utterance_loc_cuts.push_back(indices[std::min(pos, indices.size() - 1)]);
    }
  }
  return stats;
}

std::vector<std::string> build_mid_freq_words(const Vocabulary& vocab, std::int64_t lo,
                                              std::int64_t hi, int max_words) {
  std::vector<std::pair<std::string, std::int64_t>> band;
  for (const auto& [token, freq] : vocab.frequencies())
    if (freq >= lo && freq <= hi) band.emplace_back(token, freq);
  std::sort(band.begin(), band.end(), [](const auto& a, const auto& b) {
    if (a.second != b.second) return a.second > b.second;
    return a.first < b.first;
  });
  std::vector<std::string> words;
  for (const auto& [token, freq] : band) {
    if (static_cast<int>(words.size()) >= max_words) break;
    words.push_back(token);
  }
  return words;
}

int derive_utterance_loc(int turn_index, const TrainStats& stats, const DeriveConfig& cfg) {
  int buckets = cfg.utterance_loc_buckets;
  if (buckets < 2) throw ConfigError("utterance_loc_buckets must be >= 2");
  if (cfg.utterance_loc_equal_mass && !stats.utterance_loc_cuts.empty()) {
    int bucket = 0;
    for (int cut : stats.utterance_loc_cuts)
      if (turn_index >= cut) ++bucket;
    return std::min(bucket, buckets - 1);
  }
  int width = (stats.max_context_turn_index + buckets - 1) / buckets;  // ceil
  if (width < 1) width = 1;
  return std::min(turn_index / width, buckets - 1);
}

LabelValue derive_word_cont(const std::vector<std::string>& tokens, const DeriveConfig& cfg) {
  if (cfg.mid_freq_words.empty())
    throw ConfigError("WordCont requires a non-empty mid-frequency word set");
  std::unordered_set<std::string> present(tokens.begin(), tokens.end());
  std::vector<std::string> hits;
  for (const auto& w : cfg.mid_freq_words)
    if (present.count(w)) hits.push_back(w);
  return LabelValue::make_set(std::move(hits));
}

std::optional<LabelValue> derive_personal_info(const std::vector<std::string>& persona,
                                               const std::vector<std::string>& stopwords) {
  if (persona.empty()) return std::nullopt;
  std::unordered_set<std::string> stop(stopwords.begin(), stopwords.end());
  std::vector<std::string> words;
  for (const auto& line : persona)
    for (const auto& tok : tokenize(line))
      if (!stop.count(tok)) words.push_back(tok);
  return LabelValue::make_set(std::move(words));
}

std::map<ProbeTask, LabelValue> derive_goal_info(const NormalizedDialogue& dialogue,
                                                 int turn_index, const DeriveConfig& cfg) {
  if (turn_index < 0 || turn_index >= static_cast<int>(dialogue.turns.size()))
    throw IndexError("turn index out of range in dialogue " + dialogue.id);

  // Most recent user turn at or before the context end, plus everything
  // before it, split by turn.
  int recent_user_turn = -1;
  std::vector<int> earlier_user_turns;
  for (int t = 0; t <= turn_index; ++t) {
    if (dialogue.turns[static_cast<std::size_t>(t)].speaker != Speaker::User) continue;
    if (recent_user_turn >= 0) earlier_user_turns.push_back(recent_user_turn);
    recent_user_turn = t;
  }

  std::vector<InfoEvent> recent;
  if (recent_user_turn >= 0)
    recent = dialogue.turns[static_cast<std::size_t>(recent_user_turn)].events;

  std::set<std::pair<std::string, std::string>> earlier_pairs;
  std::set<InfoEvent> all_set;
  for (int t : earlier_user_turns) {
    const auto& ev = dialogue.turns[static_cast<std::size_t>(t)].events;
    all_set.insert(ev.begin(), ev.end());
    if (cfg.repeat_lookback_all)
      for (const auto& e : ev) earlier_pairs.insert({e.slot, e.value});
  }
  if (!cfg.repeat_lookback_all && !earlier_user_turns.empty()) {
    for (const auto& e :
         dialogue.turns[static_cast<std::size_t>(earlier_user_turns.back())].events)
      earlier_pairs.insert({e.slot, e.value});
  }
  all_set.insert(recent.begin(), recent.end());
  // E_all is a union: identical triples across turns count once.
  std::vector<InfoEvent> all_events(all_set.begin(), all_set.end());

  auto collect = [](const std::vector<InfoEvent>& events, auto field) {
    std::vector<std::string> out;
    for (const auto& e : events) out.push_back(field(e));
    return out;
  };
  auto topic_of = [](const InfoEvent& e) { return e.topic; };
  auto slot_of = [](const InfoEvent& e) { return e.slot; };
  auto value_of = [](const InfoEvent& e) { return e.value; };

  // Majority topic of the recent events; ties break lexicographically.
  std::string recent_topic = kNoneLabel;
  if (!recent.empty()) {
    std::map<std::string, int> votes;
    for (const auto& e : recent) ++votes[e.topic];
    int best = 0;
    for (const auto& [topic, n] : votes)
      if (n > best) {
        best = n;
        recent_topic = topic;
      }
  }

  std::vector<std::string> repeated_slots;
  for (const auto& e : recent)
    if (earlier_pairs.count({e.slot, e.value})) repeated_slots.push_back(e.slot);
  std::sort(repeated_slots.begin(), repeated_slots.end());
  repeated_slots.erase(std::unique(repeated_slots.begin(), repeated_slots.end()),
                       repeated_slots.end());
  int num_repeats = static_cast<int>(repeated_slots.size());

  std::set<std::string> all_topics_set;
  for (const auto& e : all_events) all_topics_set.insert(e.topic);
  int num_all_topics = static_cast<int>(all_topics_set.size());

  auto cap = [&](int n) { return std::min(n, cfg.count_cap); };

  std::map<ProbeTask, LabelValue> labels;
  labels[ProbeTask::RecentTopic] = LabelValue::make_categorical(recent_topic);
  labels[ProbeTask::RecentSlots] = LabelValue::make_set(collect(recent, slot_of));
  labels[ProbeTask::RecentValues] = LabelValue::make_set(collect(recent, value_of));
  labels[ProbeTask::NumRecentInfo] = LabelValue::make_count(cap(static_cast<int>(recent.size())));
  labels[ProbeTask::AllSlots] = LabelValue::make_set(collect(all_events, slot_of));
  labels[ProbeTask::AllValues] = LabelValue::make_set(collect(all_events, value_of));
  labels[ProbeTask::AllTopics] = LabelValue::make_set(collect(all_events, topic_of));
  labels[ProbeTask::NumAllTopics] = LabelValue::make_count(cap(num_all_topics));
  labels[ProbeTask::IsMultiTopic] =
      LabelValue::make_categorical(num_all_topics > 1 ? "true" : "false");
  labels[ProbeTask::NumAllInfo] = LabelValue::make_count(cap(static_cast<int>(all_events.size())));
  labels[ProbeTask::RepeatInfo] = LabelValue::make_set(std::move(repeated_slots));
  labels[ProbeTask::NumRepeatInfo] = LabelValue::make_count(cap(num_repeats));
  return labels;
}

std::optional<std::map<ProbeTask, LabelValue>> derive_downstream(
    const NormalizedDialogue& dialogue, int turn_index) {
  std::size_t next = static_cast<std::size_t>(turn_index) + 1;
  if (next >= dialogue.turns.size()) return std::nullopt;
  const Turn& turn = dialogue.turns[next];
  if (turn.speaker != Speaker::System || turn.acts.empty()) return std::nullopt;

  std::vector<std::string> names;
  std::vector<std::string> slots;
  std::vector<std::string> values;
  for (const auto& act : turn.acts) {
    names.push_back(act.act_name);
    for (const auto& [slot, value] : act.slot_values) {
      if (slot != "none" && !slot.empty()) slots.push_back(slot);
      if (value != "none" && value != "?" && !value.empty()) values.push_back(value);
    }
  }
  std::sort(names.begin(), names.end());
  names.erase(std::unique(names.begin(), names.end()), names.end());
  std::string action;
  for (std::size_t i = 0; i < names.size(); ++i) {
    if (i) action.push_back('+');
    action += names[i];
  }

  std::map<ProbeTask, LabelValue> labels;
  labels[ProbeTask::ActionSelect] = LabelValue::make_categorical(action);
  labels[ProbeTask::EntitySlots] = LabelValue::make_set(std::move(slots));
  labels[ProbeTask::EntityValues] = LabelValue::make_set(std::move(values));
  return labels;
}

std::vector<ProbeLabelRecord> derive_records(const NormalizedDialogue& dialogue,
                                             CorpusFlavor flavor, const TrainStats& stats,
                                             const DeriveConfig& cfg, int window) {
  std::vector<ProbeLabelRecord> records;
  auto contexts = make_contexts(dialogue, window);
  const std::vector<std::string>& stopwords =
      cfg.stopwords ? *cfg.stopwords : builtin_stopwords();

  for (const auto& ct : contexts) {
    int t = ct.context.turn_index;
    auto emit = [&](ProbeTask task, LabelValue label) {
      records.push_back({dialogue.id, t, task, std::move(label)});
    };

    std::map<ProbeTask, LabelValue> goal_labels;
    std::optional<std::map<ProbeTask, LabelValue>> downstream;
    if (flavor == CorpusFlavor::GoalOriented) {
      goal_labels = derive_goal_info(dialogue, t, cfg);
      downstream = derive_downstream(dialogue, t);
    }

    for (ProbeTask task : tasks_for(flavor)) {
      switch (task) {
        case ProbeTask::UtteranceLoc:
          emit(task, LabelValue::make_categorical(
                         std::to_string(derive_utterance_loc(t, stats, cfg))));
          break;
        case ProbeTask::WordCont: {
          const std::vector<std::string>& words =
              cfg.wordcont_from_target ? ct.target : ct.context.tokens;
          emit(task, derive_word_cont(words, cfg));
          break;
        }
        case ProbeTask::PersonalInfo: {
          const Turn& responder = dialogue.turns[static_cast<std::size_t>(t) + 1];
          if (auto label = derive_personal_info(responder.persona, stopwords))
            emit(task, std::move(*label));
          break;
        }
        case ProbeTask::ActionSelect:
        case ProbeTask::EntitySlots:
        case ProbeTask::EntityValues:
          if (downstream) emit(task, downstream->at(task));
          break;
        default:
          emit(task, goal_labels.at(task));
          break;
      }
    }
  }
  return records;
}

// --- label spaces -----------------------------------------------------------

LabelSpace::LabelSpace(std::vector<std::string> names) : names_(std::move(names)) {
  for (std::size_t i = 0; i < names_.size(); ++i) {
    index_[names_[i]] = static_cast<int>(i);
    if (names_[i] == kOtherLabel) other_index_ = static_cast<int>(i);
  }
}

std::optional<int> LabelSpace::index_of(const std::string& name) const {
  auto it = index_.find(name);
  if (it == index_.end()) return std::nullopt;
  return it->second;
}

std::optional<int> LabelSpace::map_categorical(const std::string& name) const {
  if (auto idx = index_of(name)) return idx;
  if (other_index_ >= 0) return other_index_;
  return std::nullopt;
}

std::vector<int> LabelSpace::map_set(const std::vector<std::string>& names, int* mapped_to_other,
                                     int* dropped) const {
  std::set<int> out;
  for (const auto& name : names) {
    if (auto idx = index_of(name)) {
      out.insert(*idx);
    } else if (other_index_ >= 0) {
      out.insert(other_index_);
      if (mapped_to_other) ++*mapped_to_other;
    } else if (dropped) {
      ++*dropped;
    }
  }
  if (out.empty()) {
    // a fully dropped set degrades to the explicit empty-set label
    if (auto idx = index_of(kNoneLabel)) out.insert(*idx);
  }
  return {out.begin(), out.end()};
}

namespace {

bool value_task(ProbeTask task) {
  return task == ProbeTask::AllValues || task == ProbeTask::RecentValues ||
         task == ProbeTask::EntityValues;
}

}  // namespace

std::map<ProbeTask, LabelSpace> build_label_spaces(const std::vector<ProbeLabelRecord>& train,
                                                   const DeriveConfig& derive_cfg,
                                                   const LabelSpaceConfig& cfg) {
  std::map<ProbeTask, std::map<std::string, std::int64_t>> counts;
  std::set<ProbeTask> seen;
  for (const auto& rec : train) {
    seen.insert(rec.task);
    switch (rec.label.kind) {
      case TaskKind::Categorical:
        ++counts[rec.task][rec.label.categorical];
        break;
      case TaskKind::Count:
        break;  // closed space
      case TaskKind::LabelSet:
        for (const auto& name : rec.label.labels) ++counts[rec.task][name];
        break;
    }
  }

  std::map<ProbeTask, LabelSpace> spaces;
  for (ProbeTask task : seen) {
    std::vector<std::string> names;
    switch (task_kind(task)) {
      case TaskKind::Count:
        for (int i = 0; i <= derive_cfg.count_cap; ++i) names.push_back(std::to_string(i));
        break;
      case TaskKind::Categorical:
        if (task == ProbeTask::UtteranceLoc) {
          for (int i = 0; i < derive_cfg.utterance_loc_buckets; ++i)
            names.push_back(std::to_string(i));
        } else if (task == ProbeTask::IsMultiTopic) {
          names = {"false", "true"};
        } else {
          names.push_back(kNoneLabel);
          std::vector<std::pair<std::string, std::int64_t>> ranked;
          for (const auto& [name, n] : counts[task])
            if (name != kNoneLabel) ranked.emplace_back(name, n);
          std::sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& b) {
            if (a.second != b.second) return a.second > b.second;
            return a.first < b.first;
          });
          for (const auto& [name, n] : ranked) names.push_back(name);
          names.push_back(kOtherLabel);
        }
        break;
      case TaskKind::LabelSet: {
        names.push_back(kNoneLabel);
        std::vector<std::pair<std::string, std::int64_t>> ranked;
        for (const auto& [name, n] : counts[task])
          if (name != kNoneLabel) ranked.emplace_back(name, n);
        std::sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& b) {
          if (a.second != b.second) return a.second > b.second;
          return a.first < b.first;
        });
        bool capped = value_task(task);
        for (const auto& [name, n] : ranked) {
          if (capped && static_cast<int>(names.size()) - 1 >= cfg.value_space_cap) break;
          names.push_back(name);
        }
        if (capped) names.push_back(kOtherLabel);
        break;
      }
    }
    spaces.emplace(task, LabelSpace(std::move(names)));
  }
  return spaces;
}

void write_label_spaces(const std::filesystem::path& path,
                        const std::map<ProbeTask, LabelSpace>& spaces) {
  json j = json::object();
  for (const auto& [task, space] : spaces) j[task_name(task)] = space.names();
  io::atomic_write(path, j.dump(2) + "\n");
}

std::map<ProbeTask, LabelSpace> read_label_spaces(const std::filesystem::path& path) {
  json j = json::parse(io::read_file(path));
  std::map<ProbeTask, LabelSpace> spaces;
  for (const auto& [name, names] : j.items()) {
    auto task = task_from_name(name);
    if (!task) throw ParseError("unknown task \"" + name + "\" in " + path.string());
    spaces.emplace(*task, LabelSpace(names.get<std::vector<std::string>>()));
  }
  return spaces;
}

// --- label files --------------------------------------------------------

void write_label_records(const std::filesystem::path& path,
                         const std::vector<ProbeLabelRecord>& records) {
  io::atomic_write(path, [&](std::ostream& out) {
    for (const auto& rec : records) {
      json j;
      j["dialogue_id"] = rec.dialogue_id;
      j["turn_index"] = rec.turn_index;
      j["task"] = task_name(rec.task);
      switch (rec.label.kind) {
        case TaskKind::Categorical:
          j["label"] = rec.label.categorical;
          break;
        case TaskKind::Count:
          j["label"] = rec.label.count;
          break;
        case TaskKind::LabelSet:
          j["labels"] = rec.label.labels;
          break;
      }
      out << j.dump() << '\n';
    }
  });
}

std::vector<ProbeLabelRecord> read_label_records(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ParseError("cannot open " + path.string());
  std::vector<ProbeLabelRecord> records;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    json j;
    try {
      j = json::parse(line);
    } catch (const json::exception& e) {
      throw ParseError("bad label record at line " + std::to_string(lineno) + ": " + e.what());
    }
    ProbeLabelRecord rec;
    rec.dialogue_id = j.at("dialogue_id").get<std::string>();
    rec.turn_index = j.at("turn_index").get<int>();
    auto task = task_from_name(j.at("task").get<std::string>());
    if (!task) throw ParseError("unknown task at line " + std::to_string(lineno));
    rec.task = *task;
    switch (task_kind(rec.task)) {
      case TaskKind::Categorical:
        rec.label = LabelValue::make_categorical(j.at("label").get<std::string>());
        break;
      case TaskKind::Count:
        rec.label = LabelValue::make_count(j.at("label").get<int>());
        break;
      case TaskKind::LabelSet:
        rec.label = LabelValue::make_set(j.at("labels").get<std::vector<std::string>>());
        break;
    }
    records.push_back(std::move(rec));
  }
  return records;
}

// --- distribution audit -------------------------------------------------

std::vector<TaskAudit> audit_distribution(const std::vector<ProbeLabelRecord>& records) {
  std::map<ProbeTask, std::map<std::string, std::int64_t>> counts;
  std::map<ProbeTask, std::int64_t> totals;
  for (const auto& rec : records) {
    ++totals[rec.task];
    switch (rec.label.kind) {
      case TaskKind::Categorical:
        ++counts[rec.task][rec.label.categorical];
        break;
      case TaskKind::Count:
        ++counts[rec.task][std::to_string(rec.label.count)];
        break;
      case TaskKind::LabelSet:
        for (const auto& name : rec.label.labels) ++counts[rec.task][name];
        break;
    }
  }

  std::vector<TaskAudit> audits;
  for (const auto& [task, label_counts] : counts) {
    TaskAudit audit;
    audit.task = task_name(task);
    audit.records = totals[task];
    std::int64_t mass = 0;
    for (const auto& [name, n] : label_counts) mass += n;
    for (const auto& [name, n] : label_counts) audit.label_counts.emplace_back(name, n);
    std::sort(audit.label_counts.begin(), audit.label_counts.end(),
              [](const auto& a, const auto& b) {
                if (a.second != b.second) return a.second > b.second;
                return a.first < b.first;
              });
    double entropy = 0.0;
    for (const auto& [name, n] : audit.label_counts) {
      double p = static_cast<double>(n) / static_cast<double>(mass);
      entropy -= p * std::log2(p);
    }
    audit.entropy_bits = entropy;
    audit.majority_share = audit.label_counts.empty()
                               ? 0.0
                               : static_cast<double>(audit.label_counts.front().second) /
                                     static_cast<double>(mass);
    audits.push_back(std::move(audit));
  }
  return audits;
}

std::string audit_to_csv(const std::vector<TaskAudit>& audits) {
  std::string out = "task,label,count,share\n";
  for (const auto& audit : audits) {
    std::int64_t mass = 0;
    for (const auto& [name, n] : audit.label_counts) mass += n;
    for (const auto& [name, n] : audit.label_counts) {
      out += audit.task;
      out += ',';
      out += name;
      out += ',';
      out += std::to_string(n);
      out += ',';
      out += io::fmt_double(static_cast<double>(n) / static_cast<double>(mass), 6);
      out += '\n';
    }
  }
  return out;
}

}  // namespace dialprobe
