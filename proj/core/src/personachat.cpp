#include "dialprobe/personachat.hpp"

#include <cctype>
#include <string>
#include <vector>

#include "dialprobe/errors.hpp"

namespace dialprobe {

namespace {

struct Exchange {
  std::string user_text;
  std::string system_text;
};

struct RawDialogue {
  std::vector<std::string> system_persona;  // "your persona"
  std::vector<std::string> user_persona;    // "partner's persona"
  std::vector<Exchange> exchanges;
};

NormalizedDialogue normalize(const RawDialogue& raw, std::size_t ordinal) {
  NormalizedDialogue d;
  d.id = "personachat-" + std::to_string(ordinal);
  for (const auto& ex : raw.exchanges) {
    Turn user;
    user.speaker = Speaker::User;
    user.text = ex.user_text;
    user.tokens = tokenize(user.text);
    user.persona = raw.user_persona;
    d.turns.push_back(std::move(user));

    Turn system;
    system.speaker = Speaker::System;
    system.text = ex.system_text;
    system.tokens = tokenize(system.text);
    system.persona = raw.system_persona;
    d.turns.push_back(std::move(system));
  }
  return d;
}

}  // namespace

ParseResult parse_personachat(std::string_view raw) {
  ParseResult result;
  RawDialogue current;
  bool have_dialogue = false;
  std::size_t ordinal = 0;
  std::size_t lineno = 0;
  int prev_number = 0;

  auto finish = [&] {
    if (!have_dialogue) return;
    ++ordinal;
    if (current.exchanges.empty()) {
      result.warnings.push_back("dialogue " + std::to_string(ordinal) +
                                " has persona lines but no exchanges; dropped");
    } else {
      result.dialogues.push_back(normalize(current, ordinal));
    }
    current = RawDialogue{};
    have_dialogue = false;
  };

  std::size_t pos = 0;
  while (pos <= raw.size()) {
    std::size_t end = raw.find('\n', pos);
    if (end == std::string_view::npos) end = raw.size();
    std::string line(raw.substr(pos, end - pos));
    pos = end + 1;
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) {
      if (pos > raw.size()) break;
      continue;
    }

    std::size_t digits = 0;
    while (digits < line.size() && std::isdigit(static_cast<unsigned char>(line[digits])))
      ++digits;
    if (digits == 0 || digits >= line.size() || line[digits] != ' ')
      throw FormatError("expected a numbered persona or exchange line", lineno);
    int number = std::stoi(line.substr(0, digits));
    std::string rest = line.substr(digits + 1);

    if (number <= prev_number) finish();  // numbering restarted: new dialogue
    prev_number = number;
    have_dialogue = true;

    static const std::string kYour = "your persona: ";
    static const std::string kPartner = "partner's persona: ";
    if (rest.rfind(kYour, 0) == 0) {
      current.system_persona.push_back(rest.substr(kYour.size()));
    } else if (rest.rfind(kPartner, 0) == 0) {
      current.user_persona.push_back(rest.substr(kPartner.size()));
    } else {
      std::size_t tab = rest.find('\t');
      if (tab == std::string::npos)
        throw FormatError("line is neither a persona line nor a tab-separated exchange", lineno);
      std::size_t tab2 = rest.find('\t', tab + 1);
      Exchange ex;
      ex.user_text = rest.substr(0, tab);
      ex.system_text = tab2 == std::string::npos ? rest.substr(tab + 1)
                                                 : rest.substr(tab + 1, tab2 - tab - 1);
      current.exchanges.push_back(std::move(ex));
    }
  }
  finish();
  return result;
}

}  // namespace dialprobe
