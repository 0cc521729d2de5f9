#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <unordered_map>
#include <vector>

#include "dialprobe/corpus.hpp"

namespace dialprobe {

// Token <-> index mapping with reserved specials at fixed indices. Built from
// the cap-4 most frequent training tokens; ties break lexicographically.
class Vocabulary {
 public:
  static constexpr int kPad = 0;
  static constexpr int kUnk = 1;
  static constexpr int kBos = 2;
  static constexpr int kEos = 3;
  static constexpr int kNumSpecials = 4;

  Vocabulary();

  int size() const { return static_cast<int>(index_to_token_.size()); }
  int id_of(const std::string& token) const;  // kUnk for out-of-vocabulary
  const std::string& token_of(int id) const;
  bool contains(const std::string& token) const;
  std::int64_t frequency(const std::string& token) const;

  std::vector<int> encode(const std::vector<std::string>& tokens) const;
  std::vector<std::string> decode(const std::vector<int>& ids) const;

  const std::map<std::string, std::int64_t>& frequencies() const { return frequencies_; }
  std::int64_t total_token_count() const { return total_tokens_; }

  friend Vocabulary build_vocabulary(const std::vector<NormalizedDialogue>& corpus, int cap);

 private:
  void add(const std::string& token);

  std::unordered_map<std::string, int> token_to_index_;
  std::vector<std::string> index_to_token_;
  std::map<std::string, std::int64_t> frequencies_;  // full counts, not just kept tokens
  std::int64_t total_tokens_ = 0;
};

Vocabulary build_vocabulary(const std::vector<NormalizedDialogue>& corpus, int cap);

}  // namespace dialprobe
