#pragma once

#include <string_view>

#include "dialprobe/corpus.hpp"

namespace dialprobe {

// Parses the PersonaChat line format: numbered "your persona:" /
// "partner's persona:" lines followed by numbered tab-separated exchange
// lines (user utterance \t system utterance [\t extras]). Line numbering
// restarts at 1 for each dialogue. "your persona" describes the responding
// (system) speaker; "partner's persona" the user.
ParseResult parse_personachat(std::string_view raw);

}  // namespace dialprobe
