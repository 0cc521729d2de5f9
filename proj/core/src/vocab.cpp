#include "dialprobe/vocab.hpp"

#include <algorithm>

#include "dialprobe/errors.hpp"

namespace dialprobe {

Vocabulary::Vocabulary() {
  add("<pad>");
  add("<unk>");
  add("<bos>");
  add("<eos>");
}

void Vocabulary::add(const std::string& token) {
  token_to_index_[token] = static_cast<int>(index_to_token_.size());
  index_to_token_.push_back(token);
}

int Vocabulary::id_of(const std::string& token) const {
  auto it = token_to_index_.find(token);
  return it == token_to_index_.end() ? kUnk : it->second;
}

const std::string& Vocabulary::token_of(int id) const {
  if (id < 0 || id >= size()) throw IndexError("token id " + std::to_string(id) + " out of range");
  return index_to_token_[static_cast<std::size_t>(id)];
}

bool Vocabulary::contains(const std::string& token) const {
  return token_to_index_.count(token) > 0;
}

std::int64_t Vocabulary::frequency(const std::string& token) const {
  auto it = frequencies_.find(token);
  return it == frequencies_.end() ? 0 : it->second;
}

std::vector<int> Vocabulary::encode(const std::vector<std::string>& tokens) const {
  std::vector<int> ids;
  ids.reserve(tokens.size());
  for (const auto& t : tokens) ids.push_back(id_of(t));
  return ids;
}

std::vector<std::string> Vocabulary::decode(const std::vector<int>& ids) const {
  std::vector<std::string> tokens;
  tokens.reserve(ids.size());
  for (int id : ids) tokens.push_back(token_of(id));
  return tokens;
}

Vocabulary build_vocabulary(const std::vector<NormalizedDialogue>& corpus, int cap) {
  if (cap < Vocabulary::kNumSpecials)
    throw ConfigError("vocabulary cap must be >= " + std::to_string(Vocabulary::kNumSpecials));

  Vocabulary vocab;
  for (const auto& d : corpus)
    for (const auto& turn : d.turns)
      for (const auto& tok : turn.tokens) {
        ++vocab.frequencies_[tok];
        ++vocab.total_tokens_;
      }

  std::vector<std::pair<std::string, std::int64_t>> ranked(vocab.frequencies_.begin(),
                                                           vocab.frequencies_.end());
  std::sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& b) {
    if (a.second != b.second) return a.second > b.second;
    return a.first < b.first;
  });
  for (const auto& [token, freq] : ranked) {
    if (vocab.size() >= cap) break;
    if (!vocab.contains(token)) vocab.add(token);  // corpus text may collide with a special
  }
  return vocab;
}

}  // namespace dialprobe
