#include "dialprobe/textmetrics.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <set>

#include "dialprobe/errors.hpp"

namespace dialprobe {

namespace {

// n-gram multiset of one sequence; grams keyed by joined tokens with an
// unlikely separator.
std::map<std::string, std::int64_t> ngram_counts(const TokenSeq& tokens, int n) {
  std::map<std::string, std::int64_t> counts;
  if (static_cast<int>(tokens.size()) < n) return counts;
  for (std::size_t i = 0; i + n <= tokens.size(); ++i) {
    std::string key = tokens[i];
    for (int k = 1; k < n; ++k) {
      key.push_back('\x1f');
      key += tokens[i + static_cast<std::size_t>(k)];
    }
    ++counts[key];
  }
  return counts;
}

struct PairCounts {
  std::int64_t clipped = 0;
  std::int64_t total = 0;
};

PairCounts clipped_counts(const TokenSeq& candidate, const TokenSeq& reference, int n) {
  PairCounts out;
  auto cand = ngram_counts(candidate, n);
  auto ref = ngram_counts(reference, n);
  for (const auto& [gram, count] : cand) {
    out.total += count;
    auto it = ref.find(gram);
    if (it != ref.end()) out.clipped += std::min(count, it->second);
  }
  return out;
}

void check_pairs(const std::vector<TokenSeq>& candidates,
                 const std::vector<TokenSeq>& references) {
  if (candidates.empty()) throw StateError("metric requires a non-empty candidate list");
  if (candidates.size() != references.size())
    throw StateError("candidate/reference list length mismatch: " +
                     std::to_string(candidates.size()) + " vs " +
                     std::to_string(references.size()));
}

}  // namespace

BleuReport bleu2(const std::vector<TokenSeq>& candidates,
                 const std::vector<TokenSeq>& references) {
  check_pairs(candidates, references);
  std::int64_t clipped[2] = {0, 0};
  std::int64_t total[2] = {0, 0};
  BleuReport report;
  for (std::size_t i = 0; i < candidates.size(); ++i) {
    for (int n = 1; n <= 2; ++n) {
      PairCounts pc = clipped_counts(candidates[i], references[i], n);
      clipped[n - 1] += pc.clipped;
      total[n - 1] += pc.total;
    }
    report.candidate_length += static_cast<std::int64_t>(candidates[i].size());
    report.reference_length += static_cast<std::int64_t>(references[i].size());
  }
  report.precision1 = total[0] > 0 ? static_cast<double>(clipped[0]) / total[0] : 0.0;
  report.precision2 = total[1] > 0 ? static_cast<double>(clipped[1]) / total[1] : 0.0;
  if (report.candidate_length > 0)
    report.brevity_penalty = std::min(
        1.0, std::exp(1.0 - static_cast<double>(report.reference_length) /
                                static_cast<double>(report.candidate_length)));
  else
    report.brevity_penalty = 0.0;
  // An order with no candidate n-grams at all (single-token corpora) drops
  // out of the geometric mean; a present-but-unmatched order zeroes the score.
  double log_sum = 0.0;
  int orders = 0;
  bool zero = false;
  for (int n = 0; n < 2; ++n) {
    if (total[n] == 0) continue;
    ++orders;
    if (clipped[n] == 0)
      zero = true;
    else
      log_sum += std::log(static_cast<double>(clipped[n]) / total[n]);
  }
  if (!zero && orders > 0)
    report.score = 100.0 * report.brevity_penalty * std::exp(log_sum / orders);
  return report;
}

double bleu2_sentence_mean(const std::vector<TokenSeq>& candidates,
                           const std::vector<TokenSeq>& references, double epsilon) {
  check_pairs(candidates, references);
  double sum = 0.0;
  for (std::size_t i = 0; i < candidates.size(); ++i) {
    double p[2];
    for (int n = 1; n <= 2; ++n) {
      PairCounts pc = clipped_counts(candidates[i], references[i], n);
      p[n - 1] = pc.total > 0 ? std::max(static_cast<double>(pc.clipped), epsilon) / pc.total
                              : epsilon;
    }
    double bp = candidates[i].empty()
                    ? 0.0
                    : std::min(1.0, std::exp(1.0 - static_cast<double>(references[i].size()) /
                                                       static_cast<double>(candidates[i].size())));
    sum += 100.0 * bp * std::exp(0.5 * (std::log(p[0]) + std::log(p[1])));
  }
  return sum / static_cast<double>(candidates.size());
}

double rouge1_f1(const std::vector<TokenSeq>& candidates,
                 const std::vector<TokenSeq>& references) {
  check_pairs(candidates, references);
  double sum = 0.0;
  for (std::size_t i = 0; i < candidates.size(); ++i) {
    PairCounts pc = clipped_counts(candidates[i], references[i], 1);
    double overlap = static_cast<double>(pc.clipped);
    double p = candidates[i].empty() ? 0.0 : overlap / static_cast<double>(candidates[i].size());
    double r = references[i].empty() ? 0.0 : overlap / static_cast<double>(references[i].size());
    sum += (p + r) > 0.0 ? 2.0 * p * r / (p + r) : 0.0;
  }
  return sum / static_cast<double>(candidates.size());
}

F1Report micro_f1_single(const std::vector<int>& predictions, const std::vector<int>& golds) {
  if (predictions.size() != golds.size())
    throw StateError("micro_f1: prediction/gold length mismatch");
  F1Report report;
  for (std::size_t i = 0; i < predictions.size(); ++i) {
    if (predictions[i] == golds[i]) {
      ++report.tp;
    } else {
      ++report.fp;
      ++report.fn;
    }
  }
  // FP == FN here, so precision == recall == F1 == accuracy, exactly.
  double n = static_cast<double>(predictions.size());
  double accuracy = n > 0 ? static_cast<double>(report.tp) / n : 0.0;
  report.precision = accuracy;
  report.recall = accuracy;
  report.f1 = accuracy;
  return report;
}

F1Report micro_f1_sets(const std::vector<std::vector<int>>& predictions,
                       const std::vector<std::vector<int>>& golds) {
  if (predictions.size() != golds.size())
    throw StateError("micro_f1: prediction/gold length mismatch");
  F1Report report;
  for (std::size_t i = 0; i < predictions.size(); ++i) {
    std::set<int> pred(predictions[i].begin(), predictions[i].end());
    std::set<int> gold(golds[i].begin(), golds[i].end());
    for (int label : pred) {
      if (gold.count(label))
        ++report.tp;
      else
        ++report.fp;
    }
    for (int label : gold)
      if (!pred.count(label)) ++report.fn;
  }
  double p_den = static_cast<double>(report.tp + report.fp);
  double r_den = static_cast<double>(report.tp + report.fn);
  report.precision = p_den > 0 ? report.tp / p_den : 0.0;
  report.recall = r_den > 0 ? report.tp / r_den : 0.0;
  report.f1 = (report.precision + report.recall) > 0
                  ? 2.0 * report.precision * report.recall / (report.precision + report.recall)
                  : 0.0;
  return report;
}

}  // namespace dialprobe
