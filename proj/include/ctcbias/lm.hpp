#pragma once

#include <string>
#include <unordered_map>
#include <vector>

#include "ctcbias/biastrie.hpp"

namespace ctcbias {

// LM context: up to order-1 most recent word ids, trimmed to the longest
// suffix the model actually knows.
using LmState = std::vector<int>;

// Backoff n-gram model read from ARPA text. All scores are natural log
// (converted from the file's log10 at load). The unigram-boost overlay is
// kept beside the base tables so one loaded model serves both biased and
// unbiased decodes.
class NGramModel {
  public:
    static NGramModel load_arpa(const std::string& text);
    static NGramModel load_arpa_file(const std::string& path);

    int order() const { return order_; }
    // -1 when unknown
    int word_id(const std::string& word) const;
    int unk_id() const { return unk_id_; }
    const std::string& word(int id) const { return words_[static_cast<std::size_t>(id)]; }

    // [<s>] when the model has a sentence-begin token, else empty.
    LmState begin_state() const;

    // Katz backoff score of `word` in `state`; returns the natural-log
    // probability and the advanced (canonicalized) state.
    std::pair<double, LmState> score_word(const LmState& state, const std::string& word) const;
    std::pair<double, LmState> score_word_id(const LmState& state, int id) const;

    double score_sequence(const std::vector<std::string>& words) const;

    // Overlay boosted unigrams: for each listed word the effective unigram
    // becomes max(existing, ln(10^boost_log10)); unknown words gain a new
    // unigram. Base tables are untouched.
    NGramModel with_unigram_boost(const std::vector<std::string>& words,
                                  double boost_log10 = -0.2) const;

    // Effective (overlay-aware) unigram score; unknown words score as unk.
    double unigram_score(const std::string& word) const;

    bool has_boost_overlay() const { return !boost_overlay_.empty(); }

  private:
    struct Entry {
        double logp = 0.0;
        double backoff = 0.0;
    };

    struct KeyHash {
        std::size_t operator()(const std::vector<int>& key) const {
            std::size_t h = 1469598103934665603ull;
            for (int v : key) {
                h ^= static_cast<std::size_t>(v) + 0x9e3779b97f4a7c15ull;
                h *= 1099511628211ull;
            }
            return h;
        }
    };
    using Table = std::unordered_map<std::vector<int>, Entry, KeyHash>;

    const Entry* find(const std::vector<int>& key) const;
    int intern(const std::string& word);
    LmState canonicalize(LmState state) const;

    int order_ = 0;
    std::vector<std::string> words_;
    std::unordered_map<std::string, int> word_ids_;
    std::vector<Table> tables_;  // tables_[n-1] holds the n-grams
    int unk_id_ = -1;
    std::unordered_map<int, double> boost_overlay_;
};

// Fill every trie node's smear score with the best (boost-overlaid) unigram
// over the complete entity words below it.
void smear(BiasTrie& trie, const NGramModel& model);

}  // namespace ctcbias
