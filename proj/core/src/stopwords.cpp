#include "dialprobe/probelab.hpp"

namespace dialprobe {

// 127 entries, sorted; includes the clitic tokens the tokenizer produces
// ("i'm" -> "i", "'m").
const std::vector<std::string>& builtin_stopwords() {
  static const std::vector<std::string> words = {
      "'d",    "'ll",   "'m",     "'re",     "'s",       "'t",    "'ve",   "a",
      "about", "after", "again",  "against", "all",      "am",    "an",    "and",
      "any",   "are",   "as",     "at",      "be",       "because", "been", "before",
      "being", "below", "between", "both",   "but",      "by",    "can",   "could",
      "did",   "do",    "does",   "doing",   "down",     "during", "each", "few",
      "for",   "from",  "had",    "has",     "have",     "having", "he",   "her",
      "here",  "hers",  "herself", "him",    "himself",  "his",   "how",   "i",
      "if",    "in",    "into",   "is",      "it",       "its",   "itself", "just",
      "me",    "more",  "most",   "my",      "myself",   "no",    "not",   "now",
      "of",    "off",   "on",     "only",    "or",       "other", "our",   "ours",
      "ourselves", "out", "over", "she",     "should",   "so",    "some",  "such",
      "than",  "that",  "the",    "their",   "theirs",   "them",  "themselves", "then",
      "there", "these", "they",   "this",    "those",    "through", "to",  "too",
      "under", "until", "up",     "very",    "was",      "we",    "were",  "what",
      "when",  "where", "which",  "while",   "who",      "whom",  "why",   "will",
      "with",  "would", "you",    "your",    "yours",    "yourself", "yourselves",
  };
  return words;
}

}  // namespace dialprobe
