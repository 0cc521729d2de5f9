#include <doctest.h>

#include <sstream>

#include "dialprobe/corpus.hpp"
#include "dialprobe/errors.hpp"
#include "dialprobe/multiwoz.hpp"
#include "dialprobe/personachat.hpp"
#include "dialprobe/rng.hpp"
#include "dialprobe/synthetic.hpp"
#include "dialprobe/vocab.hpp"

using namespace dialprobe;

TEST_CASE("tokenize basics") {
  CHECK(tokenize("") == std::vector<std::string>{});
  CHECK(tokenize("Hello, World") == std::vector<std::string>{"hello", ",", "world"});
  CHECK(tokenize("I'm at 18:15.") == std::vector<std::string>{"i", "'m", "at", "18:15", "."});
  CHECK(tokenize("ref-1234 ok!") == std::vector<std::string>{"ref-1234", "ok", "!"});
  CHECK(tokenize("\"yes\"; no?") == std::vector<std::string>{"\"", "yes", "\"", ";", "no", "?"});
}

TEST_CASE("tokenize idempotence on random text") {
  const std::string alphabet = "abc XY.,!?;'\"-: 09";
  Rng rng(11);
  for (int trial = 0; trial < 200; ++trial) {
    std::string s;
    int len = static_cast<int>(rng.uniform_int(0, 40));
    for (int i = 0; i < len; ++i)
      s.push_back(alphabet[static_cast<std::size_t>(
          rng.uniform_int(0, static_cast<std::int64_t>(alphabet.size()) - 1))]);
    auto once = tokenize(s);
    CHECK(tokenize(join_tokens(once)) == once);
  }
}

namespace {

NormalizedDialogue dialogue_with_turn_tokens(const std::vector<int>& tokens_per_turn) {
  NormalizedDialogue d;
  d.id = "fixture";
  int counter = 0;
  for (std::size_t t = 0; t < tokens_per_turn.size(); ++t) {
    Turn turn;
    turn.speaker = t % 2 == 0 ? Speaker::User : Speaker::System;
    std::vector<std::string> toks;
    for (int i = 0; i < tokens_per_turn[t]; ++i) toks.push_back("w" + std::to_string(counter++));
    turn.tokens = toks;
    turn.text = join_tokens(toks);
    d.turns.push_back(std::move(turn));
  }
  return d;
}

}  // namespace

TEST_CASE("make_contexts windows and targets") {
  auto two = dialogue_with_turn_tokens({3, 4});
  auto pairs = make_contexts(two, 100);
  REQUIRE(pairs.size() == 1);
  CHECK(pairs[0].context.turn_index == 0);
  CHECK(pairs[0].context.tokens.size() == 3);
  CHECK(pairs[0].target == two.turns[1].tokens);

  // 6 turns of 30 tokens: the context at turn index 4 covers 150 history
  // tokens, truncated to the most recent 100
  auto six = dialogue_with_turn_tokens({30, 30, 30, 30, 30, 30});
  auto cts = make_contexts(six, 100);
  REQUIRE(cts.size() == 5);
  const auto& ct = cts[4];
  CHECK(ct.context.turn_index == 4);
  CHECK(ct.context.tokens.size() == 100);
  CHECK(ct.context.tokens.front() == "w50");  // tokens 50..149 of the history
  CHECK(ct.context.tokens.back() == "w149");

  auto empty_window = make_contexts(six, 0);
  for (const auto& c : empty_window) CHECK(c.context.tokens.empty());

  CHECK(make_contexts(dialogue_with_turn_tokens({5}), 100).empty());
}

TEST_CASE("context is a suffix window of the next context's history") {
  auto d = dialogue_with_turn_tokens({7, 5, 9, 4, 6, 8});
  auto cts = make_contexts(d, 10);
  for (std::size_t i = 0; i + 1 < cts.size(); ++i) {
    // untruncated history at t+1 = history at t plus turn t+1's tokens;
    // the window at t must appear as a contiguous block inside it
    std::vector<std::string> next_history;
    for (std::size_t t = 0; t <= static_cast<std::size_t>(cts[i + 1].context.turn_index); ++t)
      next_history.insert(next_history.end(), d.turns[t].tokens.begin(), d.turns[t].tokens.end());
    auto it = std::search(next_history.begin(), next_history.end(),
                          cts[i].context.tokens.begin(), cts[i].context.tokens.end());
    CHECK(it != next_history.end());
  }
}

TEST_CASE("vocabulary construction and encoding") {
  CHECK_THROWS_AS(build_vocabulary({}, 3), ConfigError);

  auto vocab_of = [](const std::vector<std::string>& tokens, int cap) {
    NormalizedDialogue d;
    d.id = "v";
    Turn t;
    t.tokens = tokens;
    d.turns.push_back(t);
    return build_vocabulary({d}, cap);
  };

  auto empty = vocab_of({}, 10);
  CHECK(empty.size() == 4);

  auto v1 = vocab_of({"a", "a", "b"}, 5);
  CHECK(v1.size() == 5);
  CHECK(v1.contains("a"));
  CHECK(v1.id_of("b") == Vocabulary::kUnk);

  // tie broken lexicographically
  auto v2 = vocab_of({"a", "a", "b", "b"}, 5);
  CHECK(v2.contains("a"));
  CHECK_FALSE(v2.contains("b"));

  CHECK(v1.decode(v1.encode({"a", "zzz"})) == std::vector<std::string>{"a", "<unk>"});
}

TEST_CASE("NDF round trip") {
  SyntheticSpec spec;
  spec.dialogues = 25;
  spec.seed = 3;
  auto corpus = generate_synthetic(spec).dialogues;
  // attach persona to exercise the optional field
  corpus[0].turns[1].persona = {"i like trains", "i own a dog"};

  std::stringstream ss;
  write_ndf(ss, corpus);
  auto back = read_ndf(ss);
  REQUIRE(back.size() == corpus.size());
  for (std::size_t i = 0; i < corpus.size(); ++i) CHECK(back[i] == corpus[i]);

  // byte determinism of the writer
  std::stringstream ss2;
  write_ndf(ss2, corpus);
  CHECK(ss2.str() == ss.str());
}

namespace {

// Minimal MultiWoZ-style container: one dialogue, two user/system pairs, the
// user's second turn changing hotel-price from cheap to moderate.
const char* kMultiwozFixture = R"JSON({
  "MUL0001.json": {
    "goal": {"hotel": {"info": {"price": "cheap"}}, "restaurant": {}},
    "log": [
      {"text": "i need a cheap hotel", "metadata": {}},
      {"text": "sure , what area ?",
       "metadata": {"hotel": {"book": {}, "semi": {"price": "cheap"}}},
       "dialogue_act": {"Hotel-Request": [["Area", "?"]]}},
      {"text": "actually make it moderate", "metadata": {}},
      {"text": "done !",
       "metadata": {"hotel": {"book": {}, "semi": {"price": "moderate"}}},
       "dialogue_act": {"Hotel-Inform": [["Price", "moderate"]], "general-bye": []}}
    ]
  }
})JSON";

}  // namespace

TEST_CASE("parse_multiwoz fixture") {
  CHECK(parse_multiwoz("{}").dialogues.empty());
  CHECK_THROWS_AS(parse_multiwoz("{nope"), ParseError);

  auto result = parse_multiwoz(kMultiwozFixture);
  REQUIRE(result.dialogues.size() == 1);
  const auto& d = result.dialogues[0];
  CHECK(d.id == "MUL0001.json");
  CHECK(d.domain_goals == std::vector<std::string>{"hotel"});
  REQUIRE(d.turns.size() == 4);

  CHECK(d.turns[0].speaker == Speaker::User);
  REQUIRE(d.turns[0].events.size() == 1);
  CHECK(d.turns[0].events[0] == InfoEvent{"hotel", "price", "cheap"});

  // the second user turn carries exactly the changed triple
  REQUIRE(d.turns[2].events.size() == 1);
  CHECK(d.turns[2].events[0] == InfoEvent{"hotel", "price", "moderate"});

  REQUIRE(d.turns[1].acts.size() == 1);
  CHECK(d.turns[1].acts[0].act_name == "hotel-request");
  CHECK(d.turns[1].acts[0].slot_values ==
        std::vector<std::pair<std::string, std::string>>{{"area", "?"}});
  REQUIRE(d.turns[3].acts.size() == 2);
  CHECK(d.turns[3].acts[0].act_name == "general-bye");
  CHECK(d.turns[3].acts[1].act_name == "hotel-inform");

  // replaying all events reconstructs the final recorded belief state
  auto belief = replay_events(d);
  REQUIRE(belief.size() == 1);
  CHECK(belief.at({"hotel", "price"}) == "moderate");
}

TEST_CASE("parse_multiwoz skips turns without text") {
  const char* fixture = R"JSON({
    "BAD0001.json": {
      "log": [
        {"text": "hello", "metadata": {}},
        {"metadata": {}},
        {"text": "unpaired user turn", "metadata": {}}
      ]
    }
  })JSON";
  auto result = parse_multiwoz(fixture);
  // the skipped system turn breaks alternation, so the dialogue is dropped
  CHECK(result.dialogues.empty());
  REQUIRE(result.warnings.size() == 2);
  CHECK(result.warnings[0].find("turn 1") != std::string::npos);
}

TEST_CASE("parse_personachat fixture") {
  std::string fixture =
      "1 your persona: i have a dog\n"
      "2 your persona: i love music\n"
      "3 hi there\thello , how are you ?\n"
      "4 i am fine\tglad to hear it\n";
  auto result = parse_personachat(fixture);
  REQUIRE(result.dialogues.size() == 1);
  const auto& d = result.dialogues[0];
  REQUIRE(d.turns.size() == 4);
  CHECK(d.turns[0].speaker == Speaker::User);
  CHECK(d.turns[0].persona.empty());
  CHECK(d.turns[1].persona == std::vector<std::string>{"i have a dog", "i love music"});
  CHECK(d.turns[3].persona.size() == 2);
  CHECK(d.turns[2].tokens == std::vector<std::string>{"i", "am", "fine"});
  for (const auto& turn : d.turns) {
    CHECK(turn.events.empty());
    CHECK(turn.acts.empty());
  }

  // persona lines only -> dropped with a warning
  auto only_persona = parse_personachat("1 your persona: i am alone\n");
  CHECK(only_persona.dialogues.empty());
  REQUIRE(only_persona.warnings.size() == 1);

  // numbering restart separates dialogues
  auto two = parse_personachat(fixture + fixture);
  CHECK(two.dialogues.size() == 2);

  CHECK_THROWS_AS(parse_personachat("1 stray line without tab\n"), FormatError);
  CHECK_THROWS_AS(parse_personachat("no number here\n"), FormatError);
  try {
    parse_personachat("1 a\tb\nbroken\n");
  } catch (const FormatError& e) {
    CHECK(e.line() == 2);
  }
}
