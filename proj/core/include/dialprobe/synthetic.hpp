#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include "dialprobe/corpus.hpp"
#include "dialprobe/probelab.hpp"

namespace dialprobe {

struct SyntheticSpec {
  int topics = 3;
  int slots_per_topic = 4;
  int values_per_slot = 5;
  int dialogues = 500;
  int min_turns = 6;  // total turns per dialogue (rounded to user/system pairs)
  int max_turns = 10;
  double repeat_prob = 0.15;   // chance a follow-up user turn repeats earlier information
  double switch_prob = 0.3;    // chance a user turn opens a new topic
  std::uint64_t seed = 7;
  // must match the derivation config the labels will be checked against
  int count_cap = 10;
  bool repeat_lookback_all = true;
};

struct SyntheticCorpus {
  std::vector<NormalizedDialogue> dialogues;
  // Ground-truth labels for the goal-oriented tasks, computed from the
  // generator's own event bookkeeping (an independent code path from the
  // probelab derivation, which must agree with it exactly).
  std::vector<ProbeLabelRecord> labels;
};

// Template-based goal-oriented dialogues over a topic/slot/value grammar.
// User turns introduce events (new, changed or repeated information); system
// turns answer with acts referencing the latest events. Deterministic in the
// spec.
SyntheticCorpus generate_synthetic(const SyntheticSpec& spec);

// Synthetic paired-comparison annotations: `count` responses with
// `annotations_each` judgments apiece, each Tie independently with
// probability tie_prob, A/B split evenly otherwise.
void write_tie_annotations(const std::filesystem::path& path, int count, int annotations_each,
                           double tie_prob, std::uint64_t seed);

}  // namespace dialprobe
