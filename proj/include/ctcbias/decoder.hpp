#pragma once

#include <limits>
#include <optional>
#include <vector>

#include "ctcbias/biastrie.hpp"
#include "ctcbias/lm.hpp"
#include "ctcbias/types.hpp"

namespace ctcbias {

enum class BoostMode { Off, Adaptive };

// Sign convention of the adaptive subword boost. Standard treats the
// log-probability gap below the frame's top-1 as a bonus (h >= 0, scale
// decaying with the gap); Inverted evaluates the same formulas at the
// negated gap, yielding a penalty. Inverted exists for comparison runs and
// is exposed on the CLI; Standard is the default everywhere.
enum class BoostSign { Standard, Inverted };

struct DecodeConfig {
    int beam_size = 50;
    int top_k = 10;             // per-frame candidates eligible to extend a prefix
    double lm_weight = 0.6;     // weight on the fused word-level LM score
    double word_penalty = 0.0;  // added per completed word
    // beams scoring more than this below the frame best are dropped before
    // histogram pruning; infinity disables the threshold
    double beam_threshold = std::numeric_limits<double>::infinity();
    BoostMode boost_mode = BoostMode::Off;
    BoostSign boost_sign = BoostSign::Standard;
    // optional V x V row-major score g[prev][next] added per alignment
    // transition (blank included); absent means all zero
    std::optional<std::vector<double>> transition_scores;
    int nbest = 1;
};

// Boosting scale for a candidate at 1-based rank k whose log-probability
// trails the frame top-1 by gap >= 0. Midpoint at gap = 0.5k, slope set by
// 0.1k; always in (0,1) and strictly decreasing in gap under Standard.
double boosting_scale(int rank, double gap, BoostSign sign = BoostSign::Standard);

// Boost h for a candidate that advances a trie cursor: scale times gap
// (Standard, >= 0) or scale times -gap (Inverted, <= 0).
double boost_score(int rank, double gap, BoostSign sign = BoostSign::Standard);

// Frame-synchronous CTC prefix beam search with word-level LM shallow
// fusion and trie-guided adaptive subword boosting. lm and trie may be
// null. T=0 yields a single empty hypothesis with score 0.
NBestList decode(const EmissionMatrix& emissions, const SubwordVocab& vocab,
                 const NGramModel* lm, const BiasTrie* trie, const DecodeConfig& config);

// Exact CTC log-probability of the fixed label sequence under the
// emissions: forward algorithm over the blank-interleaved lattice.
// Returns -inf when T cannot fit the labels.
double ctc_label_score(const EmissionMatrix& emissions, const std::vector<int>& piece_ids);

}  // namespace ctcbias
