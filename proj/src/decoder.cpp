#include "ctcbias/decoder.hpp"

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <map>
#include <numeric>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "ctcbias/errors.hpp"
#include "ctcbias/tokenizer.hpp"

namespace ctcbias {
namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

double lse(double a, double b) {
    if (a == kNegInf) return b;
    if (b == kNegInf) return a;
    double hi = std::max(a, b);
    double lo = std::min(a, b);
    return hi + std::log1p(std::exp(lo - hi));
}

// One boost addition, shared by every cursor that advanced on the same
// candidate in the same expansion. The value stays in the ranking score
// while at least one supporter is alive and becomes permanent once any
// supporter reaches a terminal; it is taken back out when the last
// supporter retires unfinished.
struct BoostEvent {
    double h = 0.0;
    int supporters = 0;
    bool committed = false;
};

// Partial entity match: a trie position plus the boost events collected
// since the last terminal on this path.
struct TrieCursor {
    int node = BiasTrie::kRoot;
    int start_piece = 0;  // index into the prefix where the match began
    int span_index = -1;  // entry in spans once a terminal fired
    std::vector<int> events;
};

// Completed entity match. Substituted at detokenization when its right
// edge also lands on a word boundary.
struct EntitySpan {
    int first_piece = 0;
    int last_piece = 0;
    std::string label;
};

// Everything additive on top of the raw CTC masses. Kept apart so the
// boost of an abandoned partial match can be removed exactly, leaving
// hypotheses without entities bit-identical to an unboosted run.
struct FusedState {
    double lm_fusion = 0.0;        // lm_weight * LM + word_penalty, completed words
    double boost_active = 0.0;     // committed plus still-pending boosts (ranking)
    double boost_committed = 0.0;  // boosts whose entity completed (final score)
    LmState lm_state;
    std::string cur_word;  // surface characters of the word in progress
    int word_count = 0;
    std::vector<BoostEvent> events;
    std::vector<TrieCursor> cursors;
    std::vector<EntitySpan> spans;
};

struct Beam {
    std::vector<int> prefix;
    // CTC path masses split by whether the paths end in blank
    double p_b = kNegInf;
    double p_nb = kNegInf;
    // best single-path scores and their per-token frame spans, kept per
    // ending class so a repeat can stretch the last token's span
    double v_b = kNegInf;
    double v_nb = kNegInf;
    std::vector<std::pair<int, int>> frames_b;
    std::vector<std::pair<int, int>> frames_nb;

    FusedState fused;
    // best route score that installed `fused` during this frame's merge
    double route_score = kNegInf;

    double mass() const { return lse(p_b, p_nb); }
    double ranking_score() const { return mass() + fused.lm_fusion + fused.boost_active; }
    double final_score() const { return mass() + fused.lm_fusion + fused.boost_committed; }
};

void retire_cursor(FusedState& f, const TrieCursor& cur) {
    for (int e : cur.events) {
        BoostEvent& ev = f.events[static_cast<std::size_t>(e)];
        --ev.supporters;
        if (!ev.committed && ev.supporters == 0) f.boost_active -= ev.h;
    }
}

// Commits the cursor's pending boosts and records/extends its entity span
// when `label` marks a terminal, then keeps the cursor unless the trie
// ends there.
void land_cursor(FusedState& f, TrieCursor cur, const std::string& label, int piece_index,
                 const BiasTrie& trie, std::vector<TrieCursor>& kept) {
    if (!label.empty()) {
        for (int e : cur.events) {
            BoostEvent& ev = f.events[static_cast<std::size_t>(e)];
            if (!ev.committed) {
                ev.committed = true;
                f.boost_committed += ev.h;
            }
        }
        cur.events.clear();
        if (cur.span_index >= 0) {
            EntitySpan& span = f.spans[static_cast<std::size_t>(cur.span_index)];
            span.last_piece = piece_index;
            span.label = label;
        } else {
            cur.span_index = static_cast<int>(f.spans.size());
            f.spans.push_back({cur.start_piece, piece_index, label});
        }
        if (trie.children(cur.node).empty()) return;  // nothing longer to match
    }
    kept.push_back(std::move(cur));
}

// Fused-state transition for extending a prefix with piece c: word-boundary
// LM scoring, cursor spawn/advance/retire, and the shared boost event.
FusedState extend_fused(const FusedState& src, int c, int piece_index, const SubwordVocab& vocab,
                        const NGramModel* lm, const BiasTrie* trie, const DecodeConfig& cfg,
                        int rank, double gap) {
    static const std::size_t kMarkerLen = std::string(kWordStartMarker).size();
    FusedState f = src;
    const std::string& piece = vocab.piece(c);
    const bool word_start = SubwordVocab::is_word_start(piece);
    if (word_start) {
        if (!f.cur_word.empty()) {
            if (lm) {
                auto [score, state] = lm->score_word(f.lm_state, f.cur_word);
                f.lm_fusion += cfg.lm_weight * score;
                f.lm_state = std::move(state);
            }
            f.lm_fusion += cfg.word_penalty;
            ++f.word_count;
        }
        f.cur_word = piece.substr(kMarkerLen);
    } else {
        f.cur_word += piece;
    }
    if (trie == nullptr || trie->empty()) return f;

    // resolve every advance before mutating so the shared boost event
    // knows its supporter count up front
    std::vector<std::optional<BiasTrie::Advance>> moves(f.cursors.size());
    int advancing = 0;
    for (std::size_t i = 0; i < f.cursors.size(); ++i) {
        moves[i] = trie->advance(f.cursors[i].node, c);
        if (moves[i]) ++advancing;
    }
    std::optional<BiasTrie::Advance> spawn;
    if (word_start) {
        spawn = trie->advance(BiasTrie::kRoot, c);
        if (spawn) ++advancing;
    }

    int event_id = -1;
    if (advancing > 0 && cfg.boost_mode == BoostMode::Adaptive) {
        double h = boost_score(rank, gap, cfg.boost_sign);
        if (h != 0.0) {
            event_id = static_cast<int>(f.events.size());
            f.events.push_back({h, advancing, false});
            f.boost_active += h;
        }
    }

    std::vector<TrieCursor> kept;
    kept.reserve(f.cursors.size() + 1);
    for (std::size_t i = 0; i < f.cursors.size(); ++i) {
        if (!moves[i]) {
            retire_cursor(f, f.cursors[i]);
            continue;
        }
        TrieCursor cur = std::move(f.cursors[i]);
        cur.node = moves[i]->node;
        if (event_id >= 0) cur.events.push_back(event_id);
        land_cursor(f, std::move(cur), moves[i]->label, piece_index, *trie, kept);
    }
    if (spawn) {
        TrieCursor cur;
        cur.node = spawn->node;
        cur.start_piece = piece_index;
        if (event_id >= 0) cur.events.push_back(event_id);
        land_cursor(f, std::move(cur), spawn->label, piece_index, *trie, kept);
    }
    f.cursors = std::move(kept);
    return f;
}

std::vector<std::string> split_words(const std::string& text) {
    std::istringstream in(text);
    std::vector<std::string> out;
    std::string w;
    while (in >> w) out.push_back(w);
    return out;
}

// Surface words after entity substitution. A span is applied only when it
// covers whole words: its start is a word-start piece by construction and
// its end must be followed by a word-start piece or the end of the prefix.
std::vector<std::string> substituted_words(const Beam& beam, const Detokenized& det,
                                           const SubwordVocab& vocab) {
    const std::vector<int>& ids = beam.prefix;
    const int n = static_cast<int>(ids.size());

    std::vector<int> word_first;  // piece index opening each word
    for (int i = 0; i < n; ++i) {
        if (i == 0 || SubwordVocab::is_word_start(vocab.piece(ids[static_cast<std::size_t>(i)])))
            word_first.push_back(i);
    }
    auto word_last = [&](std::size_t w) {
        return w + 1 < word_first.size() ? word_first[w + 1] - 1 : n - 1;
    };

    std::vector<EntitySpan> eligible;
    for (const EntitySpan& s : beam.fused.spans) {
        bool right_aligned =
            s.last_piece == n - 1 ||
            SubwordVocab::is_word_start(vocab.piece(ids[static_cast<std::size_t>(s.last_piece + 1)]));
        if (right_aligned) eligible.push_back(s);
    }
    std::sort(eligible.begin(), eligible.end(), [](const EntitySpan& a, const EntitySpan& b) {
        if (a.first_piece != b.first_piece) return a.first_piece < b.first_piece;
        return a.last_piece > b.last_piece;  // longest match first
    });

    std::vector<std::string> out;
    std::size_t span_idx = 0;
    for (std::size_t w = 0; w < word_first.size();) {
        while (span_idx < eligible.size() && eligible[span_idx].first_piece < word_first[w])
            ++span_idx;
        if (span_idx < eligible.size() && eligible[span_idx].first_piece == word_first[w]) {
            const EntitySpan& s = eligible[span_idx];
            for (std::string& lw : split_words(s.label)) out.push_back(std::move(lw));
            while (w < word_first.size() && word_last(w) < s.last_piece) ++w;
            ++w;  // w now sits on the word closing the span
            ++span_idx;
            continue;
        }
        out.push_back(det.words[w]);
        ++w;
    }
    return out;
}

Hypothesis make_hypothesis(const Beam& beam, const SubwordVocab& vocab) {
    Hypothesis hyp;
    hyp.piece_ids = beam.prefix;
    hyp.ctc_score = beam.final_score();
    hyp.token_frames = beam.v_b >= beam.v_nb ? beam.frames_b : beam.frames_nb;
    if (!beam.prefix.empty()) {
        Detokenized det = detokenize(beam.prefix, vocab);
        hyp.leading_partial_word = det.leading_partial;
        hyp.words = beam.fused.spans.empty() ? std::move(det.words)
                                             : substituted_words(beam, det, vocab);
    }
    return hyp;
}

void validate(const EmissionMatrix& emissions, const SubwordVocab& vocab,
              const DecodeConfig& cfg) {
    if (static_cast<int>(emissions.v) != vocab.size())
        throw InvalidArgument("emission width " + std::to_string(emissions.v) +
                              " does not match vocabulary size " + std::to_string(vocab.size()));
    if (cfg.beam_size < 1) throw InvalidArgument("beam_size must be at least 1");
    if (cfg.top_k < 1) throw InvalidArgument("top_k must be at least 1");
    if (cfg.nbest < 1) throw InvalidArgument("nbest must be at least 1");
    if (cfg.transition_scores) {
        std::size_t want = static_cast<std::size_t>(emissions.v) * emissions.v;
        if (cfg.transition_scores->size() != want)
            throw InvalidArgument("transition_scores must hold V*V entries");
    }
}

}  // namespace

double boosting_scale(int rank, double gap, BoostSign sign) {
    if (rank < 1) throw InvalidArgument("candidate rank is 1-based");
    const double k = static_cast<double>(rank);
    const double x = sign == BoostSign::Standard ? gap : -gap;
    return 1.0 / (1.0 + std::exp((x - 0.5 * k) / (0.1 * k)));
}

double boost_score(int rank, double gap, BoostSign sign) {
    const double scale = boosting_scale(rank, gap, sign);
    return sign == BoostSign::Standard ? scale * gap : scale * -gap;
}

NBestList decode(const EmissionMatrix& emissions, const SubwordVocab& vocab,
                 const NGramModel* lm, const BiasTrie* trie, const DecodeConfig& cfg) {
    validate(emissions, vocab, cfg);
    NBestList out;
    if (emissions.t == 0) {
        Hypothesis empty;
        empty.ctc_score = 0.0;
        out.hyps.push_back(std::move(empty));
        return out;
    }

    const int V = static_cast<int>(emissions.v);
    const int blank = vocab.blank_id;
    const int top_k = std::min(cfg.top_k, V);

    Beam init;
    init.p_b = 0.0;
    init.v_b = 0.0;
    if (lm) init.fused.lm_state = lm->begin_state();
    std::vector<Beam> beams{std::move(init)};

    std::vector<double> row(static_cast<std::size_t>(V));
    std::vector<int> ranked(static_cast<std::size_t>(V));
    std::vector<int> rank_of(static_cast<std::size_t>(V));
    std::vector<double> gap_of(static_cast<std::size_t>(V));

    for (std::uint32_t t = 0; t < emissions.t; ++t) {
        auto src_row = emissions.row(t);
        for (int i = 0; i < V; ++i) row[static_cast<std::size_t>(i)] = src_row[static_cast<std::size_t>(i)];
        std::iota(ranked.begin(), ranked.end(), 0);
        std::sort(ranked.begin(), ranked.end(), [&](int a, int b) {
            double pa = row[static_cast<std::size_t>(a)];
            double pb = row[static_cast<std::size_t>(b)];
            if (pa != pb) return pa > pb;
            return a < b;
        });
        const double top_logp = row[static_cast<std::size_t>(ranked[0])];
        for (int i = 0; i < V; ++i) {
            rank_of[static_cast<std::size_t>(ranked[static_cast<std::size_t>(i)])] = i + 1;
            gap_of[static_cast<std::size_t>(ranked[static_cast<std::size_t>(i)])] =
                top_logp - row[static_cast<std::size_t>(ranked[static_cast<std::size_t>(i)])];
        }

        // transition score into symbol `to`; the path's previous symbol is
        // blank for p_b routes and the last piece for p_nb routes. Frame 0
        // extends the empty path, which has no predecessor symbol.
        auto g = [&](int from, int to) -> double {
            if (!cfg.transition_scores || t == 0) return 0.0;
            return (*cfg.transition_scores)[static_cast<std::size_t>(from) * V + to];
        };

        std::map<std::vector<int>, Beam> next;
        auto ensure = [&next](const std::vector<int>& key) -> Beam& {
            auto [it, inserted] = next.try_emplace(key);
            if (inserted) it->second.prefix = key;
            return it->second;
        };

        for (const Beam& b : beams) {
            const int last = b.prefix.empty() ? -1 : b.prefix.back();
            const double fused_part = b.fused.lm_fusion + b.fused.boost_active;

            // stay transitions: blank, and the collapsed repeat of the
            // last piece. Neither changes the prefix, so they keep the
            // fused state and are never limited by top_k.
            {
                Beam& tgt = ensure(b.prefix);
                double from_b = b.p_b + row[static_cast<std::size_t>(blank)] + g(blank, blank);
                double from_nb = last >= 0
                                     ? b.p_nb + row[static_cast<std::size_t>(blank)] + g(last, blank)
                                     : kNegInf;
                double stay_mass = lse(from_b, from_nb);
                tgt.p_b = lse(tgt.p_b, stay_mass);
                double vb_side = b.v_b + row[static_cast<std::size_t>(blank)] + g(blank, blank);
                double vnb_side = last >= 0
                                      ? b.v_nb + row[static_cast<std::size_t>(blank)] + g(last, blank)
                                      : kNegInf;
                double v_cand = std::max(vb_side, vnb_side);
                if (v_cand > tgt.v_b) {
                    tgt.v_b = v_cand;
                    tgt.frames_b = vb_side >= vnb_side ? b.frames_b : b.frames_nb;
                }
                if (last >= 0) {
                    double rep = b.p_nb + row[static_cast<std::size_t>(last)] + g(last, last);
                    stay_mass = lse(stay_mass, rep);
                    tgt.p_nb = lse(tgt.p_nb, rep);
                    double v_rep = b.v_nb + row[static_cast<std::size_t>(last)] + g(last, last);
                    if (v_rep > tgt.v_nb) {
                        tgt.v_nb = v_rep;
                        tgt.frames_nb = b.frames_nb;
                        tgt.frames_nb.back().second = static_cast<int>(t);
                    }
                }
                double route = stay_mass + fused_part;
                if (route > tgt.route_score) {
                    tgt.route_score = route;
                    tgt.fused = b.fused;
                }
            }

            // prefix extensions, restricted to the frame's top_k candidates
            for (int idx = 0; idx < top_k; ++idx) {
                const int c = ranked[static_cast<std::size_t>(idx)];
                if (c == blank) continue;
                double from_b = b.p_b + row[static_cast<std::size_t>(c)] + g(blank, c);
                double from_nb = (last >= 0 && c != last)
                                     ? b.p_nb + row[static_cast<std::size_t>(c)] + g(last, c)
                                     : kNegInf;
                double mass = lse(from_b, from_nb);
                if (mass == kNegInf) continue;

                std::vector<int> key = b.prefix;
                key.push_back(c);
                Beam& tgt = ensure(key);
                tgt.p_nb = lse(tgt.p_nb, mass);
                double vb_side = b.v_b + row[static_cast<std::size_t>(c)] + g(blank, c);
                double vnb_side = (last >= 0 && c != last)
                                      ? b.v_nb + row[static_cast<std::size_t>(c)] + g(last, c)
                                      : kNegInf;
                double v_cand = std::max(vb_side, vnb_side);
                if (v_cand > tgt.v_nb) {
                    tgt.v_nb = v_cand;
                    tgt.frames_nb = vb_side >= vnb_side ? b.frames_b : b.frames_nb;
                    tgt.frames_nb.emplace_back(static_cast<int>(t), static_cast<int>(t));
                }
                FusedState nf =
                    extend_fused(b.fused, c, static_cast<int>(b.prefix.size()), vocab, lm, trie,
                                 cfg, rank_of[static_cast<std::size_t>(c)],
                                 gap_of[static_cast<std::size_t>(c)]);
                double route = mass + nf.lm_fusion + nf.boost_active;
                if (route > tgt.route_score) {
                    tgt.route_score = route;
                    tgt.fused = std::move(nf);
                }
            }
        }

        std::vector<Beam> merged;
        merged.reserve(next.size());
        for (auto& [key, beam] : next) merged.push_back(std::move(beam));

        double best = kNegInf;
        for (const Beam& b : merged) best = std::max(best, b.ranking_score());
        if (cfg.beam_threshold != std::numeric_limits<double>::infinity()) {
            std::erase_if(merged, [&](const Beam& b) {
                return b.ranking_score() < best - cfg.beam_threshold;
            });
        }
        std::sort(merged.begin(), merged.end(), [](const Beam& a, const Beam& b) {
            double sa = a.ranking_score();
            double sb = b.ranking_score();
            if (sa != sb) return sa > sb;
            if (a.prefix.size() != b.prefix.size()) return a.prefix.size() < b.prefix.size();
            return a.prefix < b.prefix;
        });
        if (merged.size() > static_cast<std::size_t>(cfg.beam_size))
            merged.resize(static_cast<std::size_t>(cfg.beam_size));
        beams = std::move(merged);
    }

    // close the trailing word: it completes at the end of the utterance
    for (Beam& b : beams) {
        if (b.fused.cur_word.empty()) continue;
        if (lm) {
            auto [score, state] = lm->score_word(b.fused.lm_state, b.fused.cur_word);
            b.fused.lm_fusion += cfg.lm_weight * score;
            b.fused.lm_state = std::move(state);
        }
        b.fused.lm_fusion += cfg.word_penalty;
        ++b.fused.word_count;
    }
    std::sort(beams.begin(), beams.end(), [](const Beam& a, const Beam& b) {
        double sa = a.final_score();
        double sb = b.final_score();
        if (sa != sb) return sa > sb;
        if (a.prefix.size() != b.prefix.size()) return a.prefix.size() < b.prefix.size();
        return a.prefix < b.prefix;
    });
    if (beams.size() > static_cast<std::size_t>(cfg.nbest))
        beams.resize(static_cast<std::size_t>(cfg.nbest));
    out.hyps.reserve(beams.size());
    for (const Beam& b : beams) out.hyps.push_back(make_hypothesis(b, vocab));
    return out;
}

double ctc_label_score(const EmissionMatrix& emissions, const std::vector<int>& piece_ids) {
    const int V = static_cast<int>(emissions.v);
    const int blank = V - 1;
    for (int id : piece_ids) {
        if (id < 0 || id >= V)
            throw InvalidArgument("label id " + std::to_string(id) + " outside vocabulary of " +
                                  std::to_string(V));
        if (id == blank) throw InvalidArgument("labels may not contain the blank symbol");
    }
    const std::size_t L = piece_ids.size();
    if (emissions.t == 0) return L == 0 ? 0.0 : kNegInf;

    // forward pass over the blank-interleaved lattice b l1 b l2 ... b
    const std::size_t S = 2 * L + 1;
    auto sym = [&](std::size_t s) {
        return s % 2 == 0 ? blank : piece_ids[s / 2];
    };
    std::vector<double> alpha(S, kNegInf);
    std::vector<double> next(S, kNegInf);
    alpha[0] = emissions.at(0, static_cast<std::uint32_t>(blank));
    if (L > 0) alpha[1] = emissions.at(0, static_cast<std::uint32_t>(piece_ids[0]));
    for (std::uint32_t t = 1; t < emissions.t; ++t) {
        for (std::size_t s = 0; s < S; ++s) {
            double acc = alpha[s];
            if (s >= 1) acc = lse(acc, alpha[s - 1]);
            if (s >= 2 && sym(s) != blank && sym(s) != sym(s - 2)) acc = lse(acc, alpha[s - 2]);
            next[s] = acc == kNegInf
                          ? kNegInf
                          : acc + emissions.at(t, static_cast<std::uint32_t>(sym(s)));
        }
        std::swap(alpha, next);
    }
    double total = alpha[S - 1];
    if (L > 0) total = lse(total, alpha[S - 2]);
    return total;
}

}  // namespace ctcbias
