#pragma once

#include <string>
#include <vector>

#include "ctcbias/types.hpp"

namespace ctcbias {

struct Segmentation {
    std::string word;
    std::vector<int> piece_ids;
};

struct Detokenized {
    std::vector<std::string> words;
    // true when the sequence did not begin with a word-start piece; the
    // leading pieces still form the first word.
    bool leading_partial = false;
};

// Left-to-right maximal munch over the marker-prefixed word. Throws
// InvalidArgument when no piece matches at some position.
Segmentation segment_greedy(const std::string& word, const SubwordVocab& vocab);

// All segmentations ordered by (piece count, lexicographic piece ids),
// truncated to max_variants. The greedy segmentation is always in the
// result, displacing the last entry if the ordering alone would cut it.
std::vector<Segmentation> enumerate_segmentations(const std::string& word,
                                                  const SubwordVocab& vocab,
                                                  std::size_t max_variants);

// Space-separated multi-token phrases: the per-word variant lists are
// combined and ordered by total piece count, then lexicographic ids.
std::vector<Segmentation> enumerate_phrase_segmentations(const std::string& phrase,
                                                         const SubwordVocab& vocab,
                                                         std::size_t max_variants);
Segmentation segment_phrase_greedy(const std::string& phrase, const SubwordVocab& vocab);

Detokenized detokenize(const std::vector<int>& piece_ids, const SubwordVocab& vocab);

}  // namespace ctcbias
