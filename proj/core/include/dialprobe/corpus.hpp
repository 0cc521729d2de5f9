#pragma once

#include <filesystem>
#include <iosfwd>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace dialprobe {

enum class Speaker { User, System };

const char* speaker_name(Speaker s);
Speaker speaker_from_name(const std::string& name);

// One (topic, slot, value) triple newly established by a user turn.
struct InfoEvent {
  std::string topic;
  std::string slot;
  std::string value;

  auto operator<=>(const InfoEvent&) const = default;
};

// Annotated system-side action, e.g. hotel-recommend{price: cheap}.
struct DialogueAct {
  std::string act_name;
  std::vector<std::pair<std::string, std::string>> slot_values;

  bool operator==(const DialogueAct&) const = default;
};

struct Turn {
  Speaker speaker = Speaker::User;
  std::string text;
  std::vector<std::string> tokens;       // deterministic tokenization of text
  std::vector<InfoEvent> events;         // user turns only
  std::vector<DialogueAct> acts;         // system turns only
  std::vector<std::string> persona;      // chit-chat persona lines for this speaker

  bool operator==(const Turn&) const = default;
};

struct NormalizedDialogue {
  std::string id;
  std::vector<std::string> domain_goals;  // sorted, unique topic names
  std::vector<Turn> turns;

  bool operator==(const NormalizedDialogue&) const = default;
};

// Truncated conversation history ending at turn_index; the turn after
// turn_index is the prediction target.
struct Context {
  std::string dialogue_id;
  int turn_index = 0;
  std::vector<std::string> tokens;
  // Start offset in `tokens` of each (possibly truncated) utterance the
  // window covers, in turn order; used by the hierarchical encoder.
  std::vector<int> utterance_offsets;
};

struct ContextTarget {
  Context context;
  std::vector<std::string> target;  // tokens of the following turn
};

// Lowercases and splits on whitespace plus the punctuation class
// {. , ! ? ; ' "}. An apostrophe starts a new token and stays attached to the
// letters after it ("i'm" -> "i", "'m"); the other class members become
// single-character tokens. ':' and '-' stay inside tokens so times and
// reference numbers survive as single tokens.
std::vector<std::string> tokenize(const std::string& text);

std::string join_tokens(const std::vector<std::string>& tokens);

// One (context, target) pair per non-final turn; context tokens truncated
// from the left to the most recent `window` tokens. A dialogue with fewer
// than two turns yields no pairs.
std::vector<ContextTarget> make_contexts(const NormalizedDialogue& dialogue, int window);

// Replays a dialogue's events in turn order into an accumulated belief state
// ((topic, slot) -> value). Used to validate delta extraction.
std::map<std::pair<std::string, std::string>, std::string> replay_events(
    const NormalizedDialogue& dialogue);

// Normalized dialogue format: one dialogue per line as a JSON object, UTF-8,
// LF line endings.
void write_ndf(std::ostream& out, const std::vector<NormalizedDialogue>& dialogues);
void write_ndf_file(const std::filesystem::path& path,
                    const std::vector<NormalizedDialogue>& dialogues);
std::vector<NormalizedDialogue> read_ndf(std::istream& in);
std::vector<NormalizedDialogue> read_ndf_file(const std::filesystem::path& path);

// Parser output: dialogues plus non-fatal issues found along the way.
struct ParseResult {
  std::vector<NormalizedDialogue> dialogues;
  std::vector<std::string> warnings;
};

}  // namespace dialprobe
