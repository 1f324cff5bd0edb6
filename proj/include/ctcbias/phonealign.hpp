#pragma once

#include <utility>
#include <vector>

#include "ctcbias/types.hpp"

namespace ctcbias {

// Phone sequence of one hypothesis with a single silence between words.
// Words whose pronunciation came out empty contribute no positions (and no
// extra silence); they keep their slot in the per-word vectors.
struct PhoneSequenceWithWords {
    std::vector<int> phones;
    std::vector<int> word_of;  // hypothesis word index per position, -1 on silence
    std::vector<bool> used_fallback;  // per hypothesis word: letter-mapped, not lexicon
};

// Monotone alignment of full-rate posterior frames to a phone sequence.
struct AlignmentResult {
    double cost = 0.0;
    // (frame, label) pairs, 0-based, from (0,0) to (T_full-1, L-1); each
    // step advances frame, label, or both by one
    std::vector<std::pair<int, int>> path;
    // per hypothesis word: first/last frame aligned to its non-silence
    // labels, inclusive; (-1,-1) for words without phones
    std::vector<std::pair<int, int>> word_boundaries;
};

// First-listed lexicon pronunciation per word, silence-separated. Words
// absent from the lexicon fall back to naive letter-to-phone mapping
// (letters without a same-named phone are dropped) and are flagged.
// Throws InvalidArgument when no word yields any phones.
PhoneSequenceWithWords hyp_to_phones(const std::vector<std::string>& words,
                                     const Lexicon& lexicon, const PhoneSet& phones);

// Dynamic-time-warping alignment. Local cost is the Euclidean distance
// between a posterior row and the one-hot vector of the phone label; cost
// ties prefer the diagonal predecessor, then the frame step, then the
// label step.
AlignmentResult dtw_align(const PhonePosteriorMatrix& posteriors,
                          const PhoneSequenceWithWords& seq);

struct RescoreConfig {
    double dtw_scale = 0.1;
    // subtracting alignment cost (default) prefers hypotheses whose
    // phones match the frames; adding it is kept for comparison runs
    bool add_cost = false;
};

// Attaches rescore = exact CTC label score +/- dtw_scale * alignment cost
// and full-rate word boundaries to every hypothesis, then reorders by
// rescore descending (stable for ties). Hypotheses without any mappable
// phones keep their CTC label score and carry no boundaries.
NBestList rescore_nbest(const NBestList& nbest, const PhonePosteriorMatrix& posteriors,
                        const EmissionMatrix& emissions, const Lexicon& lexicon,
                        const PhoneSet& phones, const RescoreConfig& config = {});

// Per-frame argmax phone over an inclusive frame span; ties to lower id.
std::vector<int> frame_phone_predictions(const PhonePosteriorMatrix& posteriors,
                                         std::pair<int, int> span);

// Centered majority vote, window truncated at the edges; a tied vote
// keeps the original value. Window must be odd and >= 1.
std::vector<int> smooth(const std::vector<int>& seq, int window = 3);

// Run-length collapse of consecutive repeats.
std::vector<int> collapse(const std::vector<int>& seq);

// Re-derives each word's pronunciation from the posterior frames inside
// its boundaries; a word whose derived pronunciation exactly matches a
// catalog entity's lexicon pronunciation (and is not that entity, nor a
// homophone of itself) is replaced by the entity. First match in catalog
// order wins.
Hypothesis lexicon_lookup_replace(const Hypothesis& one_best,
                                  const PhonePosteriorMatrix& posteriors,
                                  const EntityCatalog& catalog, const Lexicon& lexicon,
                                  const PhoneSet& phones, int window = 3);

}  // namespace ctcbias
