#include "dialprobe/synthetic.hpp"

#include <algorithm>
#include <map>
#include <set>

#include "dialprobe/errors.hpp"
#include "dialprobe/io.hpp"
#include "dialprobe/rng.hpp"

namespace dialprobe {

namespace {

const std::vector<std::string>& topic_pool() {
  static const std::vector<std::string> pool = {"hotel",      "restaurant", "train",
                                                "attraction", "taxi",       "museum",
                                                "flight",     "cinema"};
  return pool;
}

const std::vector<std::string>& slot_pool() {
  static const std::vector<std::string> pool = {"area", "price", "stars",  "food",
                                                "day",  "time",  "people", "type"};
  return pool;
}

const std::vector<std::string>& value_pool(const std::string& slot) {
  static const std::map<std::string, std::vector<std::string>> pools = {
      {"area", {"north", "south", "east", "west", "centre", "riverside", "airport", "downtown"}},
      {"price", {"cheap", "moderate", "expensive", "budget", "premium", "luxury", "deluxe", "fair"}},
      {"stars", {"one", "two", "three", "four", "five", "six", "seven", "eight"}},
      {"food", {"italian", "chinese", "indian", "thai", "french", "mexican", "korean", "greek"}},
      {"day", {"monday", "tuesday", "wednesday", "thursday", "friday", "saturday", "sunday", "weekend"}},
      {"time", {"morning", "noon", "afternoon", "evening", "night", "midnight", "dawn", "dusk"}},
      {"people", {"single", "couple", "family", "group", "party", "crowd", "duo", "trio"}},
      {"type", {"standard", "classic", "modern", "vintage", "grand", "cozy", "royal", "urban"}},
  };
  return pools.at(slot);
}

// Per-topic response vocabularies. System responses draw venue nouns and
// remark adjectives from the current topic's family, so modeling the reply
// distribution requires topic state while no single surface token pins it.
const std::vector<std::string>& venue_family(int topic) {
  static const std::vector<std::vector<std::string>> families = {
      {"guesthouse", "inn", "lodge", "hostel", "suite", "resort", "motel", "villa", "manor",
       "bungalow"},
      {"bistro", "diner", "eatery", "grill", "cafe", "brasserie", "tavern", "canteen",
       "trattoria", "buffet"},
      {"express", "railcar", "liner", "shuttle", "commuter", "sleeper", "intercity", "tram",
       "locomotive", "carriage"},
      {"gallery", "museum-hall", "exhibit", "pavilion", "theatre", "arena", "fairground",
       "planetarium", "aquarium", "gardens"},
      {"cab", "minicab", "sedan", "rideshare", "limo", "coach", "vanpool", "hatchback",
       "rickshaw", "towncar"},
  };
  if (topic < static_cast<int>(families.size()))
    return families[static_cast<std::size_t>(topic)];
  static std::map<int, std::vector<std::string>> extra;
  auto it = extra.find(topic);
  if (it == extra.end()) {
    std::vector<std::string> made;
    for (int k = 0; k < 10; ++k)
      made.push_back("venue" + std::to_string(topic) + "x" + std::to_string(k));
    it = extra.emplace(topic, std::move(made)).first;
  }
  return it->second;
}

const std::vector<std::string>& remark_family(int topic) {
  static const std::vector<std::vector<std::string>> families = {
      {"comfy", "quiet", "spacious", "charming", "tidy", "restful", "homely", "snug", "stately",
       "serene"},
      {"tasty", "savory", "fresh", "spicy", "zesty", "hearty", "crisp", "sweet", "rich",
       "delicate"},
      {"punctual", "swift", "direct", "smooth", "rapid", "timely", "reliable", "quick", "easy",
       "steady"},
      {"scenic", "lively", "grandiose", "curious", "festive", "playful", "artsy", "dreamy",
       "vivid", "breezy"},
      {"prompt", "courteous", "careful", "spotless", "roomy", "discreet", "flexible", "safe",
       "affordable", "friendly"},
  };
  if (topic < static_cast<int>(families.size()))
    return families[static_cast<std::size_t>(topic)];
  static std::map<int, std::vector<std::string>> extra;
  auto it = extra.find(topic);
  if (it == extra.end()) {
    std::vector<std::string> made;
    for (int k = 0; k < 10; ++k)
      made.push_back("remark" + std::to_string(topic) + "x" + std::to_string(k));
    it = extra.emplace(topic, std::move(made)).first;
  }
  return it->second;
}

std::string topic_name(int i) {
  const auto& pool = topic_pool();
  if (i < static_cast<int>(pool.size())) return pool[static_cast<std::size_t>(i)];
  return "topic" + std::to_string(i);
}

std::string slot_name(int i) {
  const auto& pool = slot_pool();
  if (i < static_cast<int>(pool.size())) return pool[static_cast<std::size_t>(i)];
  return "slot" + std::to_string(i);
}

std::string value_name(const std::string& slot, int i) {
  if (slot_pool().end() != std::find(slot_pool().begin(), slot_pool().end(), slot)) {
    const auto& pool = value_pool(slot);
    if (i < static_cast<int>(pool.size())) return pool[static_cast<std::size_t>(i)];
  }
  return slot + "v" + std::to_string(i);
}

struct GeneratorState {
  // events of each user turn, by turn index (empty vectors for system turns)
  std::vector<std::vector<InfoEvent>> user_events;
  std::vector<std::pair<std::string, std::string>> pairs_so_far;  // (slot, value) of past turns
  std::set<std::pair<std::string, std::string>> pair_set;
};

// The generator's own label derivation over its bookkeeping; intentionally a
// separate implementation of the labeling rules from probelab.
void emit_labels(const NormalizedDialogue& dialogue,
                 const std::vector<std::vector<InfoEvent>>& user_events,
                 const SyntheticSpec& spec, std::vector<ProbeLabelRecord>& out) {
  int total = static_cast<int>(dialogue.turns.size());
  auto cap = [&](int n) { return std::min(n, spec.count_cap); };
  for (int t = 0; t + 1 < total; ++t) {
    int last_user = -1;
    std::vector<int> earlier_users;
    for (int u = 0; u <= t; ++u) {
      if (dialogue.turns[static_cast<std::size_t>(u)].speaker != Speaker::User) continue;
      if (last_user >= 0) earlier_users.push_back(last_user);
      last_user = u;
    }
    const std::vector<InfoEvent> empty;
    const std::vector<InfoEvent>& recent =
        last_user >= 0 ? user_events[static_cast<std::size_t>(last_user)] : empty;

    std::set<InfoEvent> all_set;
    std::set<std::pair<std::string, std::string>> earlier_pairs;
    for (int u : earlier_users) {
      for (const auto& e : user_events[static_cast<std::size_t>(u)]) {
        all_set.insert(e);
        if (spec.repeat_lookback_all) earlier_pairs.insert({e.slot, e.value});
      }
    }
    if (!spec.repeat_lookback_all && !earlier_users.empty())
      for (const auto& e : user_events[static_cast<std::size_t>(earlier_users.back())])
        earlier_pairs.insert({e.slot, e.value});
    for (const auto& e : recent) all_set.insert(e);

    std::set<std::string> topics, slots, values, all_slots, all_values, all_topics;
    for (const auto& e : recent) {
      topics.insert(e.topic);
      slots.insert(e.slot);
      values.insert(e.value);
    }
    for (const auto& e : all_set) {
      all_topics.insert(e.topic);
      all_slots.insert(e.slot);
      all_values.insert(e.value);
    }

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

    std::set<std::string> repeats;
    for (const auto& e : recent)
      if (earlier_pairs.count({e.slot, e.value})) repeats.insert(e.slot);

    auto emit = [&](ProbeTask task, LabelValue label) {
      out.push_back({dialogue.id, t, task, std::move(label)});
    };
    auto as_set = [](const std::set<std::string>& s) {
      return LabelValue::make_set({s.begin(), s.end()});
    };

    emit(ProbeTask::IsMultiTopic,
         LabelValue::make_categorical(all_topics.size() > 1 ? "true" : "false"));
    emit(ProbeTask::NumAllTopics, LabelValue::make_count(cap(static_cast<int>(all_topics.size()))));
    emit(ProbeTask::RepeatInfo, as_set(repeats));
    emit(ProbeTask::NumRepeatInfo, LabelValue::make_count(cap(static_cast<int>(repeats.size()))));
    emit(ProbeTask::AllTopics, as_set(all_topics));
    emit(ProbeTask::RecentSlots, as_set(slots));
    emit(ProbeTask::NumRecentInfo, LabelValue::make_count(cap(static_cast<int>(recent.size()))));
    emit(ProbeTask::RecentValues, as_set(values));
    emit(ProbeTask::AllSlots, as_set(all_slots));
    emit(ProbeTask::AllValues, as_set(all_values));
    emit(ProbeTask::RecentTopic, LabelValue::make_categorical(recent_topic));
    emit(ProbeTask::NumAllInfo, LabelValue::make_count(cap(static_cast<int>(all_set.size()))));

    const Turn& next = dialogue.turns[static_cast<std::size_t>(t) + 1];
    if (next.speaker == Speaker::System && !next.acts.empty()) {
      std::set<std::string> names;
      std::set<std::string> act_slots, act_values;
      for (const auto& act : next.acts) {
        names.insert(act.act_name);
        for (const auto& [slot, value] : act.slot_values) {
          if (slot != "none" && !slot.empty()) act_slots.insert(slot);
          if (value != "none" && value != "?" && !value.empty()) act_values.insert(value);
        }
      }
      std::string action;
      for (const auto& n : names) {
        if (!action.empty()) action.push_back('+');
        action += n;
      }
      emit(ProbeTask::ActionSelect, LabelValue::make_categorical(action));
      emit(ProbeTask::EntitySlots, as_set(act_slots));
      emit(ProbeTask::EntityValues, as_set(act_values));
    }
  }
}

}  // namespace

SyntheticCorpus generate_synthetic(const SyntheticSpec& spec) {
  if (spec.topics <= 0) throw ConfigError("synthetic corpus needs at least one topic");
  if (spec.slots_per_topic <= 0 || spec.values_per_slot <= 0)
    throw ConfigError("synthetic corpus needs positive slot and value counts");
  if (spec.min_turns < 2 || spec.max_turns < spec.min_turns)
    throw ConfigError("synthetic turn range is invalid");

  std::vector<std::string> slots;
  for (int s = 0; s < spec.slots_per_topic; ++s) slots.push_back(slot_name(s));

  SyntheticCorpus corpus;
  Rng rng(spec.seed);

  for (int d = 0; d < spec.dialogues; ++d) {
    NormalizedDialogue dialogue;
    char idbuf[32];
    std::snprintf(idbuf, sizeof(idbuf), "synth-%05d", d);
    dialogue.id = idbuf;

    int min_pairs = std::max(1, spec.min_turns / 2);
    int max_pairs = std::max(min_pairs, spec.max_turns / 2);
    int pairs = static_cast<int>(rng.uniform_int(min_pairs, max_pairs));

    GeneratorState state;
    std::set<std::string> used_topics;
    int topic = static_cast<int>(rng.uniform_int(0, spec.topics - 1));

    auto pick_value = [&](const std::string& slot) {
      return value_name(slot, static_cast<int>(rng.uniform_int(0, spec.values_per_slot - 1)));
    };
    auto fresh_event = [&](const std::string& for_topic) -> std::optional<InfoEvent> {
      // avoid accidental (slot, value) repeats so repeat labels stay a pure
      // function of the configured repeat probability
      for (int attempt = 0; attempt < 40; ++attempt) {
        std::string slot = slots[static_cast<std::size_t>(rng.uniform_int(0, spec.slots_per_topic - 1))];
        std::string value = pick_value(slot);
        if (!state.pair_set.count({slot, value})) return InfoEvent{for_topic, slot, value};
      }
      return std::nullopt;
    };

    for (int p = 0; p < pairs; ++p) {
      // --- user turn
      Turn user;
      user.speaker = Speaker::User;
      std::vector<InfoEvent> events;
      std::string text;
      bool opening = p == 0;
      bool switching = !opening && spec.topics > 1 && rng.bernoulli(spec.switch_prob);
      if (switching) {
        int next_topic = topic;
        while (next_topic == topic)
          next_topic = static_cast<int>(rng.uniform_int(0, spec.topics - 1));
        topic = next_topic;
      }
      std::string topic_str = topic_name(topic);
      used_topics.insert(topic_str);

      if (opening || switching) {
        if (auto e = fresh_event(topic_str)) events.push_back(*e);
        if (rng.bernoulli(0.5)) {
          if (auto e = fresh_event(topic_str)) {
            if (events.empty() || e->slot != events.front().slot) events.push_back(*e);
          }
        }
        text = opening ? "hello . i am looking for a " + topic_str + " ."
                       : "now i also need a " + topic_str + " .";
        for (const auto& e : events) text += " i want " + e.value + " " + e.slot + " .";
        if (events.empty()) text += " what do you suggest ?";
      } else if (!state.pairs_so_far.empty() && rng.bernoulli(spec.repeat_prob)) {
        const auto& [slot, value] = state.pairs_so_far[static_cast<std::size_t>(
            rng.uniform_int(0, static_cast<std::int64_t>(state.pairs_so_far.size()) - 1))];
        events.push_back(InfoEvent{topic_str, slot, value});
        text = "as i said i want " + value + " " + slot + " .";
      } else if (auto e = fresh_event(topic_str)) {
        events.push_back(*e);
        switch (rng.uniform_int(0, 2)) {
          case 0: text = "i would like " + e->value + " " + e->slot + " ."; break;
          case 1: text = "i prefer " + e->value + " " + e->slot + " please ."; break;
          default: text = "make it " + e->value + " " + e->slot + " ."; break;
        }
      } else {
        text = "what would you suggest ?";
      }
      user.text = text;
      user.tokens = tokenize(text);
      user.events = events;
      dialogue.turns.push_back(user);

      state.user_events.push_back(events);
      state.user_events.resize(dialogue.turns.size());  // placeholder slot for the system turn
      for (const auto& e : events)
        if (state.pair_set.insert({e.slot, e.value}).second)
          state.pairs_so_far.emplace_back(e.slot, e.value);

      // --- system turn
      Turn system;
      system.speaker = Speaker::System;
      bool final_pair = p == pairs - 1;
      auto venue = [&]() {
        const auto& fam = venue_family(topic);
        return fam[static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(fam.size()) - 1))];
      };
      auto remark = [&]() {
        const auto& fam = remark_family(topic);
        return fam[static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(fam.size()) - 1))];
      };
      if (final_pair) {
        system.acts.push_back(DialogueAct{"general-bye", {}});
        system.text = "enjoy your " + remark() + " " + venue() + " . goodbye .";
      } else if (!events.empty()) {
        DialogueAct inform{topic_str + "-inform", {}};
        for (const auto& e : events) inform.slot_values.emplace_back(e.slot, e.value);
        system.acts.push_back(inform);
        const auto& e = events.front();
        system.text = "the " + topic_str + " with " + e.value + " " + e.slot +
                      " is available . anything else ?";
        if (rng.bernoulli(0.25)) {
          std::string ask = slots[static_cast<std::size_t>(
              rng.uniform_int(0, spec.slots_per_topic - 1))];
          system.acts.push_back(DialogueAct{topic_str + "-request", {{ask, "?"}}});
          system.text += " what " + ask + " do you prefer ?";
        }
        std::sort(system.acts.begin(), system.acts.end(),
                  [](const DialogueAct& a, const DialogueAct& b) { return a.act_name < b.act_name; });
      } else {
        system.acts.push_back(DialogueAct{topic_str + "-recommend", {{"none", "none"}}});
        system.text = "perhaps a " + remark() + " " + venue() + " suits you .";
      }
      system.tokens = tokenize(system.text);
      dialogue.turns.push_back(system);
      state.user_events.resize(dialogue.turns.size());
    }

    dialogue.domain_goals.assign(used_topics.begin(), used_topics.end());
    emit_labels(dialogue, state.user_events, spec, corpus.labels);
    corpus.dialogues.push_back(std::move(dialogue));
  }
  return corpus;
}

void write_tie_annotations(const std::filesystem::path& path, int count, int annotations_each,
                           double tie_prob, std::uint64_t seed) {
  Rng rng(seed);
  std::string out = "response_id,choice\n";
  for (int r = 0; r < count; ++r) {
    char idbuf[16];
    std::snprintf(idbuf, sizeof(idbuf), "r%05d", r);
    for (int a = 0; a < annotations_each; ++a) {
      const char* choice = rng.bernoulli(tie_prob) ? "Tie" : (rng.bernoulli(0.5) ? "A" : "B");
      out += idbuf;
      out += ',';
      out += choice;
      out += '\n';
    }
  }
  io::atomic_write(path, out);
}

}  // namespace dialprobe
