#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "ctcbias/types.hpp"

namespace ctcbias {

// Training-corpus word counts plus the cutoff that separates rare from
// common at evaluation time.
struct RarityTable {
    std::map<std::string, long long> counts;
    int rare_threshold = 50;
};

// Lines of "word count"; words are lowercased, blank lines skipped.
// Repeated words accumulate.
RarityTable load_rarity_table(const std::string& text);
RarityTable load_rarity_table_file(const std::string& path);

enum class Rarity { Common, Rare, Oov };

// Counted below the threshold -> rare; never counted -> OOV.
Rarity classify_rarity(const std::string& word, const RarityTable& table);

// Unit-cost Levenshtein alignment between a reference and a hypothesis
// word sequence. Matched pairs are monotone and one-to-one; a matched pair
// with different words is a substitution.
struct WordAlignment {
    std::vector<int> ref_to_hyp;  // per reference word: hypothesis index, -1 = deletion
    std::vector<int> hyp_to_ref;  // per hypothesis word: reference index, -1 = insertion
    int substitutions = 0;
    int deletions = 0;
    int insertions = 0;

    int errors() const { return substitutions + deletions + insertions; }
};

// Among minimum-cost alignments the one keeping the most words paired is
// chosen (a substitution over a delete-insert pair), which makes the S/D/I
// split symmetric in the two arguments; remaining ties take deletions first.
WordAlignment align_words(const std::vector<std::string>& ref,
                          const std::vector<std::string>& hyp);

// (S + D + I) / |ref|. An empty reference scores 0 against an empty
// hypothesis and +infinity otherwise.
double wer(const std::vector<std::string>& ref, const std::vector<std::string>& hyp);

// Occurrence-level scores for one rarity category. A reference occurrence
// is a hit iff the alignment pairs it with an identical hypothesis word;
// precision divides the same hits by the hypothesis-side occurrences. A
// score with no occurrences on its side of the fraction stays absent.
struct CategoryScore {
    long long ref_occurrences = 0;
    long long hyp_occurrences = 0;
    long long hits = 0;
    std::optional<double> precision;
    std::optional<double> recall;
    std::optional<double> f1;  // 2PR/(P+R), zero when P+R = 0, absent when either is
};

// Paired utterances: refs[i] and hyps[i] describe the same audio. Counting
// through the word alignment keeps repeated entities from matching a single
// hypothesis occurrence twice. Throws InvalidArgument on a length mismatch.
CategoryScore entity_prf(const std::vector<std::vector<std::string>>& refs,
                         const std::vector<std::vector<std::string>>& hyps,
                         const RarityTable& table, Rarity category);

struct EvalReport {
    double wer = 0.0;  // corpus level: summed errors over summed reference words
    long long ref_words = 0;
    long long errors = 0;
    CategoryScore rare;
    CategoryScore oov;
};

// One pass over the paired utterances: corpus WER plus rare and OOV scores.
EvalReport evaluate(const std::vector<std::vector<std::string>>& refs,
                    const std::vector<std::vector<std::string>>& hyps,
                    const RarityTable& table);

// Relative error-rate reduction in percent: (base - system) / base * 100.
double werr_percent(double wer_base, double wer_system);

// Pretty JSON rendering for the evaluation CLI; absent scores are omitted.
std::string report_to_json(const EvalReport& report);

}  // namespace ctcbias
