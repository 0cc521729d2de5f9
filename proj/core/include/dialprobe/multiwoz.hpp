#pragma once

#include <string_view>

#include "dialprobe/corpus.hpp"

namespace dialprobe {

// Parses a MultiWoZ 2.0 style corpus: a top-level JSON object mapping
// dialogue id -> {goal, log: [{text, metadata, dialogue_act?}, ...]} where the
// log alternates user/system turns starting with the user. User-turn events
// are the belief-state delta relative to the previous user turn; system-turn
// dialogue acts are copied and lowercased.
ParseResult parse_multiwoz(std::string_view raw);

}  // namespace dialprobe
