#include "dialprobe/multiwoz.hpp"

#include <algorithm>
#include <cctype>
#include <map>
#include <set>

#include <json.hpp>

#include "dialprobe/errors.hpp"

namespace dialprobe {

using nlohmann::json;

namespace {

std::string lowered(std::string s) {
  std::transform(s.begin(), s.end(), s.begin(),
                 [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  return s;
}

bool placeholder_value(const std::string& v) {
  return v.empty() || v == "not mentioned" || v == "none";
}

using BeliefState = std::map<std::pair<std::string, std::string>, std::string>;

// Flattens one turn's metadata object into (topic, slot) -> value. The source
// nests slots under "semi" and "book"; the "booked" array is a system-side
// booking result, not user information.
BeliefState belief_from_metadata(const json& metadata) {
  BeliefState belief;
  if (!metadata.is_object()) return belief;
  for (const auto& [domain, content] : metadata.items()) {
    if (!content.is_object()) continue;
    std::string topic = lowered(domain);
    for (const char* section : {"semi", "book"}) {
      if (!content.contains(section)) continue;
      const json& slots = content.at(section);
      if (!slots.is_object()) continue;
      for (const auto& [slot, value] : slots.items()) {
        if (slot == "booked") continue;
        if (!value.is_string()) continue;
        std::string v = lowered(value.get<std::string>());
        if (placeholder_value(v)) continue;
        belief[{topic, lowered(slot)}] = v;
      }
    }
  }
  return belief;
}

std::vector<InfoEvent> belief_delta(const BeliefState& prev, const BeliefState& cur) {
  std::vector<InfoEvent> events;
  for (const auto& [key, value] : cur) {
    auto it = prev.find(key);
    if (it == prev.end() || it->second != value)
      events.push_back({key.first, key.second, value});
  }
  return events;
}

std::vector<DialogueAct> acts_from_json(const json& acts_json) {
  std::vector<DialogueAct> acts;
  if (!acts_json.is_object()) return acts;
  for (const auto& [name, args] : acts_json.items()) {
    DialogueAct act;
    act.act_name = lowered(name);
    if (args.is_array()) {
      for (const auto& pair : args) {
        if (!pair.is_array() || pair.size() < 2) continue;
        std::string slot = pair[0].is_string() ? lowered(pair[0].get<std::string>()) : "none";
        std::string value = pair[1].is_string() ? lowered(pair[1].get<std::string>())
                                                : pair[1].dump();
        if (slot.empty()) slot = "none";
        act.slot_values.emplace_back(std::move(slot), std::move(value));
      }
    }
    acts.push_back(std::move(act));
  }
  std::sort(acts.begin(), acts.end(),
            [](const DialogueAct& a, const DialogueAct& b) { return a.act_name < b.act_name; });
  return acts;
}

std::vector<std::string> goals_from_json(const json& goal) {
  std::set<std::string> topics;
  if (goal.is_object()) {
    for (const auto& [key, value] : goal.items()) {
      if (key == "message" || key == "topic") continue;
      if (value.is_object() && !value.empty()) topics.insert(lowered(key));
    }
  }
  return {topics.begin(), topics.end()};
}

bool alternates(const std::vector<Turn>& turns) {
  for (std::size_t i = 1; i < turns.size(); ++i)
    if (turns[i].speaker == turns[i - 1].speaker) return false;
  return turns.empty() || turns.front().speaker == Speaker::User;
}

}  // namespace

ParseResult parse_multiwoz(std::string_view raw) {
  json root;
  try {
    root = json::parse(raw);
  } catch (const json::parse_error& e) {
    throw ParseError("malformed MultiWoZ container at byte " + std::to_string(e.byte) + ": " +
                     e.what());
  }
  if (!root.is_object()) throw ParseError("MultiWoZ root must be an object of dialogues");

  ParseResult result;
  // json objects iterate in sorted key order, so output order is stable.
  for (const auto& [dialogue_id, body] : root.items()) {
    if (!body.is_object() || !body.contains("log") || !body.at("log").is_array())
      throw ParseError("dialogue " + dialogue_id + ": missing turn log");

    NormalizedDialogue dialogue;
    dialogue.id = dialogue_id;
    if (body.contains("goal")) dialogue.domain_goals = goals_from_json(body.at("goal"));

    const json& log = body.at("log");
    BeliefState prev_belief;
    for (std::size_t i = 0; i < log.size(); ++i) {
      const json& entry = log[i];
      bool is_user = i % 2 == 0;
      if (!entry.is_object() || !entry.contains("text") || !entry.at("text").is_string()) {
        result.warnings.push_back("dialogue " + dialogue_id + ": turn " + std::to_string(i) +
                                  " has no text; skipped");
        continue;
      }
      Turn turn;
      turn.speaker = is_user ? Speaker::User : Speaker::System;
      turn.text = entry.at("text").get<std::string>();
      turn.tokens = tokenize(turn.text);
      if (is_user) {
        // The published corpus records the belief state reached after a user
        // turn on that turn or, more commonly, on the system reply; take the
        // first non-empty of the two.
        BeliefState belief = belief_from_metadata(entry.value("metadata", json::object()));
        if (belief.empty() && i + 1 < log.size() && log[i + 1].is_object())
          belief = belief_from_metadata(log[i + 1].value("metadata", json::object()));
        turn.events = belief_delta(prev_belief, belief);
        prev_belief = std::move(belief);
      } else if (entry.contains("dialogue_act")) {
        turn.acts = acts_from_json(entry.at("dialogue_act"));
      }
      dialogue.turns.push_back(std::move(turn));
    }

    if (dialogue.turns.empty()) {
      result.warnings.push_back("dialogue " + dialogue_id + ": no usable turns; dropped");
      continue;
    }
    if (!alternates(dialogue.turns)) {
      result.warnings.push_back("dialogue " + dialogue_id +
                                ": speaker alternation broken after skips; dropped");
      continue;
    }
    result.dialogues.push_back(std::move(dialogue));
  }
  return result;
}

}  // namespace dialprobe
