#include "ctcbias/phonealign.hpp"

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "ctcbias/decoder.hpp"
#include "ctcbias/errors.hpp"
#include "ctcbias/kernels.hpp"

namespace ctcbias {
namespace {

// pronunciation of one word: lexicon first, letter fallback second
std::pair<std::vector<int>, bool> word_pron(const std::string& word, const Lexicon& lexicon,
                                            const PhoneSet& phones) {
    if (const auto* prons = lexicon.prons(word)) return {prons->front(), false};
    std::vector<int> mapped;
    for (char ch : word) {
        int id = phones.id_of(std::string(1, ch));
        if (id >= 0) mapped.push_back(id);
    }
    return {std::move(mapped), true};
}

}  // namespace

PhoneSequenceWithWords hyp_to_phones(const std::vector<std::string>& words,
                                     const Lexicon& lexicon, const PhoneSet& phones) {
    PhoneSequenceWithWords seq;
    seq.used_fallback.resize(words.size(), false);
    bool any = false;
    for (std::size_t w = 0; w < words.size(); ++w) {
        auto [pron, fallback] = word_pron(words[w], lexicon, phones);
        seq.used_fallback[w] = fallback;
        if (pron.empty()) continue;
        if (any) {
            seq.phones.push_back(phones.silence_id);
            seq.word_of.push_back(-1);
        }
        for (int p : pron) {
            seq.phones.push_back(p);
            seq.word_of.push_back(static_cast<int>(w));
        }
        any = true;
    }
    if (!any)
        throw InvalidArgument("no word in the hypothesis maps to any phone");
    return seq;
}

AlignmentResult dtw_align(const PhonePosteriorMatrix& posteriors,
                          const PhoneSequenceWithWords& seq) {
    const int t_full = static_cast<int>(posteriors.t_full);
    const int len = static_cast<int>(seq.phones.size());
    if (t_full < 1 || len < 1)
        throw InvalidArgument("alignment needs at least one frame and one phone");

    // d(i,j) = ||x_i - onehot(y_j)|| = sqrt(sumsq(x_i) - 2 x_i[y_j] + 1)
    std::vector<double> row_sumsq(static_cast<std::size_t>(t_full));
    for (int i = 0; i < t_full; ++i) {
        auto row = posteriors.row(static_cast<std::uint32_t>(i));
        row_sumsq[static_cast<std::size_t>(i)] = kernels::sumsq(row.data(), row.size());
    }
    auto dist = [&](int i, int j) {
        double x = posteriors.at(static_cast<std::uint32_t>(i),
                                 static_cast<std::uint32_t>(seq.phones[static_cast<std::size_t>(j)]));
        double sq = row_sumsq[static_cast<std::size_t>(i)] - 2.0 * x + 1.0;
        return std::sqrt(std::max(sq, 0.0));
    };

    // full cost table plus predecessor choice; 0 diagonal, 1 up (frame
    // step), 2 left (label step) in tie-break preference order
    std::vector<double> cost(static_cast<std::size_t>(t_full) * static_cast<std::size_t>(len));
    std::vector<unsigned char> from(cost.size(), 0);
    auto at = [&](int i, int j) -> double& {
        return cost[static_cast<std::size_t>(i) * static_cast<std::size_t>(len) +
                    static_cast<std::size_t>(j)];
    };
    for (int i = 0; i < t_full; ++i) {
        for (int j = 0; j < len; ++j) {
            double d = dist(i, j);
            std::size_t idx = static_cast<std::size_t>(i) * static_cast<std::size_t>(len) +
                              static_cast<std::size_t>(j);
            if (i == 0 && j == 0) {
                at(i, j) = d;
            } else if (i == 0) {
                at(i, j) = d + at(0, j - 1);
                from[idx] = 2;
            } else if (j == 0) {
                at(i, j) = d + at(i - 1, 0);
                from[idx] = 1;
            } else {
                double diag = at(i - 1, j - 1);
                double up = at(i - 1, j);
                double left = at(i, j - 1);
                double best = diag;
                unsigned char pick = 0;
                if (up < best) {
                    best = up;
                    pick = 1;
                }
                if (left < best) {
                    best = left;
                    pick = 2;
                }
                at(i, j) = d + best;
                from[idx] = pick;
            }
        }
    }

    AlignmentResult result;
    result.cost = at(t_full - 1, len - 1);
    for (int i = t_full - 1, j = len - 1;;) {
        result.path.emplace_back(i, j);
        if (i == 0 && j == 0) break;
        switch (from[static_cast<std::size_t>(i) * static_cast<std::size_t>(len) +
                     static_cast<std::size_t>(j)]) {
            case 0: --i; --j; break;
            case 1: --i; break;
            default: --j; break;
        }
    }
    std::reverse(result.path.begin(), result.path.end());

    // used_fallback carries the hypothesis word count; sequences built by
    // hand in tests may leave it empty, so fall back to the labels
    int words = static_cast<int>(seq.used_fallback.size());
    if (words == 0)
        for (int w : seq.word_of) words = std::max(words, w + 1);
    result.word_boundaries.assign(static_cast<std::size_t>(words), {-1, -1});
    for (auto [frame, label] : result.path) {
        int w = seq.word_of[static_cast<std::size_t>(label)];
        if (w < 0) continue;  // silence frames belong to neither word
        auto& [first, last] = result.word_boundaries[static_cast<std::size_t>(w)];
        if (first < 0) first = frame;
        last = frame;
    }
    return result;
}

NBestList rescore_nbest(const NBestList& nbest, const PhonePosteriorMatrix& posteriors,
                        const EmissionMatrix& emissions, const Lexicon& lexicon,
                        const PhoneSet& phones, const RescoreConfig& config) {
    NBestList out = nbest;
    for (Hypothesis& hyp : out.hyps) {
        double label_score = ctc_label_score(emissions, hyp.piece_ids);
        double cost = 0.0;
        hyp.word_boundaries.clear();
        if (!hyp.words.empty()) {
            PhoneSequenceWithWords seq;
            bool mapped = true;
            try {
                seq = hyp_to_phones(hyp.words, lexicon, phones);
            } catch (const InvalidArgument&) {
                mapped = false;  // keep the hypothesis, skip alignment
            }
            if (mapped) {
                AlignmentResult align = dtw_align(posteriors, seq);
                cost = align.cost;
                hyp.word_boundaries = std::move(align.word_boundaries);
            }
        }
        hyp.rescore = label_score + (config.add_cost ? 1.0 : -1.0) * config.dtw_scale * cost;
    }
    std::stable_sort(out.hyps.begin(), out.hyps.end(), [](const Hypothesis& a, const Hypothesis& b) {
        return a.rescore.value() > b.rescore.value();
    });
    return out;
}

std::vector<int> frame_phone_predictions(const PhonePosteriorMatrix& posteriors,
                                         std::pair<int, int> span) {
    auto [first, last] = span;
    if (first < 0 || last < first || last >= static_cast<int>(posteriors.t_full))
        throw InvalidArgument("frame span outside the posterior matrix");
    std::vector<int> out;
    out.reserve(static_cast<std::size_t>(last - first + 1));
    for (int i = first; i <= last; ++i) {
        auto row = posteriors.row(static_cast<std::uint32_t>(i));
        out.push_back(static_cast<int>(kernels::argmax(row.data(), row.size())));
    }
    return out;
}

std::vector<int> smooth(const std::vector<int>& seq, int window) {
    if (window < 1 || window % 2 == 0)
        throw InvalidArgument("smoothing window must be odd and positive");
    if (window == 1 || seq.empty()) return seq;
    const int n = static_cast<int>(seq.size());
    const int half = window / 2;
    std::vector<int> out(seq.size());
    for (int i = 0; i < n; ++i) {
        int lo = std::max(0, i - half);
        int hi = std::min(n - 1, i + half);
        std::map<int, int> votes;
        for (int j = lo; j <= hi; ++j) ++votes[seq[static_cast<std::size_t>(j)]];
        int best_count = 0;
        int winner = seq[static_cast<std::size_t>(i)];
        bool tied = false;
        for (auto [value, count] : votes) {
            if (count > best_count) {
                best_count = count;
                winner = value;
                tied = false;
            } else if (count == best_count) {
                tied = true;
            }
        }
        out[static_cast<std::size_t>(i)] = tied ? seq[static_cast<std::size_t>(i)] : winner;
    }
    return out;
}

std::vector<int> collapse(const std::vector<int>& seq) {
    std::vector<int> out;
    for (int v : seq)
        if (out.empty() || out.back() != v) out.push_back(v);
    return out;
}

Hypothesis lexicon_lookup_replace(const Hypothesis& one_best,
                                  const PhonePosteriorMatrix& posteriors,
                                  const EntityCatalog& catalog, const Lexicon& lexicon,
                                  const PhoneSet& phones, int window) {
    Hypothesis out = one_best;
    for (std::size_t w = 0; w < out.words.size() && w < out.word_boundaries.size(); ++w) {
        auto span = out.word_boundaries[w];
        if (span.first < 0 || span.second < span.first) continue;
        std::vector<int> derived =
            collapse(smooth(frame_phone_predictions(posteriors, span), window));
        while (!derived.empty() && derived.front() == phones.silence_id)
            derived.erase(derived.begin());
        while (!derived.empty() && derived.back() == phones.silence_id) derived.pop_back();
        if (derived.empty()) continue;

        // a word that already sounds like itself is never rewritten, even
        // when an entity happens to share the pronunciation
        bool own = false;
        if (const auto* prons = lexicon.prons(out.words[w])) {
            for (const auto& pron : *prons)
                if (pron == derived) {
                    own = true;
                    break;
                }
        }
        if (own) continue;

        for (const std::string& entity : catalog.entities) {
            if (entity == out.words[w]) continue;
            const auto* prons = lexicon.prons(entity);
            if (!prons) continue;
            bool hit = false;
            for (const auto& pron : *prons)
                if (pron == derived) {
                    hit = true;
                    break;
                }
            if (hit) {
                out.words[w] = entity;
                break;
            }
        }
    }
    return out;
}

}  // namespace ctcbias
