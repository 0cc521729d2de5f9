#include "dialprobe/corpus.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "dialprobe/errors.hpp"
#include "dialprobe/io.hpp"

namespace dialprobe {

using nlohmann::json;

const char* speaker_name(Speaker s) { return s == Speaker::User ? "user" : "system"; }

Speaker speaker_from_name(const std::string& name) {
  if (name == "user") return Speaker::User;
  if (name == "system") return Speaker::System;
  throw ParseError("unknown speaker \"" + name + "\"");
}

namespace {

bool is_breaking_punct(char c) {
  return c == '.' || c == ',' || c == '!' || c == '?' || c == ';' || c == '"';
}

}  // namespace

std::vector<std::string> tokenize(const std::string& text) {
  std::vector<std::string> tokens;
  std::string cur;
  auto flush = [&] {
    if (!cur.empty()) {
      tokens.push_back(cur);
      cur.clear();
    }
  };
  for (char raw : text) {
    char c = static_cast<char>(std::tolower(static_cast<unsigned char>(raw)));
    if (std::isspace(static_cast<unsigned char>(c))) {
      flush();
    } else if (is_breaking_punct(c)) {
      flush();
      tokens.push_back(std::string(1, c));
    } else if (c == '\'') {
      // apostrophe opens a new token and stays glued to what follows
      flush();
      cur.push_back(c);
    } else {
      cur.push_back(c);
    }
  }
  flush();
  return tokens;
}

std::string join_tokens(const std::vector<std::string>& tokens) {
  std::string out;
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    if (i) out.push_back(' ');
    out += tokens[i];
  }
  return out;
}

std::vector<ContextTarget> make_contexts(const NormalizedDialogue& dialogue, int window) {
  if (window < 0) throw ConfigError("context window must be >= 0");
  std::vector<ContextTarget> out;
  if (dialogue.turns.size() < 2) return out;

  // Running flat history with per-turn start offsets; each context is a
  // suffix window of it.
  std::vector<std::string> history;
  std::vector<int> turn_starts;
  for (std::size_t t = 0; t + 1 < dialogue.turns.size(); ++t) {
    turn_starts.push_back(static_cast<int>(history.size()));
    const auto& toks = dialogue.turns[t].tokens;
    history.insert(history.end(), toks.begin(), toks.end());

    ContextTarget ct;
    ct.context.dialogue_id = dialogue.id;
    ct.context.turn_index = static_cast<int>(t);
    int total = static_cast<int>(history.size());
    int start = std::max(0, total - window);
    ct.context.tokens.assign(history.begin() + start, history.end());
    for (std::size_t u = 0; u < turn_starts.size(); ++u) {
      int turn_end = (u + 1 < turn_starts.size()) ? turn_starts[u + 1] : total;
      if (turn_end <= start) continue;  // turn fell out of the window entirely
      ct.context.utterance_offsets.push_back(std::max(0, turn_starts[u] - start));
    }
    ct.target = dialogue.turns[t + 1].tokens;
    out.push_back(std::move(ct));
  }
  return out;
}

std::map<std::pair<std::string, std::string>, std::string> replay_events(
    const NormalizedDialogue& dialogue) {
  std::map<std::pair<std::string, std::string>, std::string> belief;
  for (const auto& turn : dialogue.turns)
    for (const auto& e : turn.events) belief[{e.topic, e.slot}] = e.value;
  return belief;
}

namespace {

json turn_to_json(const Turn& turn) {
  json j;
  j["speaker"] = speaker_name(turn.speaker);
  j["text"] = turn.text;
  j["tokens"] = turn.tokens;
  json events = json::array();
  for (const auto& e : turn.events)
    events.push_back({{"topic", e.topic}, {"slot", e.slot}, {"value", e.value}});
  j["events"] = std::move(events);
  json acts = json::array();
  for (const auto& a : turn.acts) {
    json sv = json::array();
    for (const auto& [slot, value] : a.slot_values) sv.push_back({slot, value});
    acts.push_back({{"act_name", a.act_name}, {"slot_values", std::move(sv)}});
  }
  j["acts"] = std::move(acts);
  if (!turn.persona.empty()) j["persona"] = turn.persona;
  return j;
}

Turn turn_from_json(const json& j) {
  Turn turn;
  turn.speaker = speaker_from_name(j.at("speaker").get<std::string>());
  turn.text = j.at("text").get<std::string>();
  turn.tokens = j.at("tokens").get<std::vector<std::string>>();
  for (const auto& e : j.at("events"))
    turn.events.push_back({e.at("topic").get<std::string>(), e.at("slot").get<std::string>(),
                           e.at("value").get<std::string>()});
  for (const auto& a : j.at("acts")) {
    DialogueAct act;
    act.act_name = a.at("act_name").get<std::string>();
    for (const auto& sv : a.at("slot_values"))
      act.slot_values.emplace_back(sv.at(0).get<std::string>(), sv.at(1).get<std::string>());
    turn.acts.push_back(std::move(act));
  }
  if (j.contains("persona")) turn.persona = j.at("persona").get<std::vector<std::string>>();
  return turn;
}

}  // namespace

void write_ndf(std::ostream& out, const std::vector<NormalizedDialogue>& dialogues) {
  for (const auto& d : dialogues) {
    json j;
    j["id"] = d.id;
    j["domain_goals"] = d.domain_goals;
    json turns = json::array();
    for (const auto& t : d.turns) turns.push_back(turn_to_json(t));
    j["turns"] = std::move(turns);
    out << j.dump() << '\n';
  }
}

void write_ndf_file(const std::filesystem::path& path,
                    const std::vector<NormalizedDialogue>& dialogues) {
  io::atomic_write(path, [&](std::ostream& out) { write_ndf(out, dialogues); });
}

std::vector<NormalizedDialogue> read_ndf(std::istream& in) {
  std::vector<NormalizedDialogue> dialogues;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    json j;
    try {
      j = json::parse(line);
    } catch (const json::exception& e) {
      throw ParseError("bad NDF record at line " + std::to_string(lineno) + ": " + e.what());
    }
    NormalizedDialogue d;
    d.id = j.at("id").get<std::string>();
    d.domain_goals = j.at("domain_goals").get<std::vector<std::string>>();
    for (const auto& t : j.at("turns")) d.turns.push_back(turn_from_json(t));
    dialogues.push_back(std::move(d));
  }
  return dialogues;
}

std::vector<NormalizedDialogue> read_ndf_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ParseError("cannot open " + path.string());
  return read_ndf(in);
}

}  // namespace dialprobe
