#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace dialprobe {

using TokenSeq = std::vector<std::string>;

struct BleuReport {
  double score = 0.0;            // [0, 100]
  double precision1 = 0.0;       // modified n-gram precisions
  double precision2 = 0.0;
  double brevity_penalty = 1.0;
  std::int64_t candidate_length = 0;
  std::int64_t reference_length = 0;
};

// Corpus-level BLEU-2: clipped n-gram counts are pooled over all pairs before
// division; the geometric mean of the two precisions is scaled by the brevity
// penalty min(1, exp(1 - r/c)). Any zero pooled precision gives score 0.
// Inputs are token sequences (the corpus tokenizer already lowercases).
BleuReport bleu2(const std::vector<TokenSeq>& candidates,
                 const std::vector<TokenSeq>& references);

// Diagnostic per-sentence variant: BLEU-2 per pair with zero counts smoothed
// by epsilon, averaged over pairs.
double bleu2_sentence_mean(const std::vector<TokenSeq>& candidates,
                           const std::vector<TokenSeq>& references, double epsilon = 1e-9);

// Mean over pairs of unigram-overlap F1.
double rouge1_f1(const std::vector<TokenSeq>& candidates,
                 const std::vector<TokenSeq>& references);

struct F1Report {
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
  std::int64_t tp = 0;
  std::int64_t fp = 0;
  std::int64_t fn = 0;
};

// Single-label micro-F1; equals accuracy by construction.
F1Report micro_f1_single(const std::vector<int>& predictions, const std::vector<int>& golds);

// Label-set micro-F1 over pooled per-label decisions; the explicit empty-set
// label participates like any other, so callers pass it inside the sets.
F1Report micro_f1_sets(const std::vector<std::vector<int>>& predictions,
                       const std::vector<std::vector<int>>& golds);

}  // namespace dialprobe
