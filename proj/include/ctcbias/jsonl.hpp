#pragma once

#include <string>
#include <vector>

#include "ctcbias/types.hpp"

namespace ctcbias {

// One utterance per line: {"id": ..., "nbest": [{"words": [...],
// "ctc_score": ..., "token_frames": [[first, last], ...], ...}]}. Optional
// hypothesis fields (piece_ids, rescore, word_boundaries,
// leading_partial_word) are written only when present so decoder output
// stays minimal and the rescorer's additions survive a round trip.
std::string nbest_to_json_line(const NBestList& nbest);
NBestList nbest_from_json_line(const std::string& line);

std::string nbest_to_jsonl(const std::vector<NBestList>& lists);
std::vector<NBestList> nbest_from_jsonl(const std::string& text);

std::vector<NBestList> load_jsonl_file(const std::string& path);
void save_jsonl_file(const std::string& path, const std::vector<NBestList>& lists);

}  // namespace ctcbias
