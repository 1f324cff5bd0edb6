#include "ctcbias/decoder.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <map>
#include <random>
#include <string>
#include <vector>

#include <doctest.h>

#include "ctcbias/biastrie.hpp"
#include "ctcbias/errors.hpp"
#include "ctcbias/lm.hpp"
#include "ctcbias/types.hpp"

using namespace ctcbias;

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

double lse_d(double a, double b) {
    if (a == -kInf) return b;
    if (b == -kInf) return a;
    double hi = std::max(a, b);
    return hi + std::log1p(std::exp(std::min(a, b) - hi));
}

SubwordVocab make_vocab(std::vector<std::string> pieces) {
    SubwordVocab v;
    v.pieces = std::move(pieces);
    v.blank_id = static_cast<int>(v.pieces.size()) - 1;
    for (int i = 0; i < v.size(); ++i) v.piece_to_id[v.pieces[static_cast<std::size_t>(i)]] = i;
    return v;
}

// rows are linear probabilities; stored as natural-log f32 like the loaders do
EmissionMatrix make_emissions(const std::vector<std::vector<double>>& rows) {
    EmissionMatrix em;
    em.t = static_cast<std::uint32_t>(rows.size());
    em.v = rows.empty() ? 0 : static_cast<std::uint32_t>(rows[0].size());
    for (const auto& row : rows)
        for (double p : row) em.values.push_back(static_cast<float>(std::log(p)));
    return em;
}

std::vector<std::vector<double>> random_rows(std::mt19937& rng, int t, int v) {
    std::normal_distribution<double> gauss(0.0, 1.0);
    std::vector<std::vector<double>> rows(static_cast<std::size_t>(t),
                                          std::vector<double>(static_cast<std::size_t>(v)));
    for (auto& row : rows) {
        double sum = 0.0;
        for (double& p : row) {
            p = std::exp(gauss(rng));
            sum += p;
        }
        for (double& p : row) p /= sum;
    }
    return rows;
}

// Every alignment in V^T, scored from the stored (float) emissions plus
// optional transition scores, collapsed by removing repeats then blanks.
std::map<std::vector<int>, double> enumerate_prefix_masses(const EmissionMatrix& em, int blank,
                                                           const std::vector<double>* trans) {
    const int t_len = static_cast<int>(em.t);
    const int v = static_cast<int>(em.v);
    std::map<std::vector<int>, double> acc;
    std::vector<int> align(static_cast<std::size_t>(t_len), 0);
    while (true) {
        double score = 0.0;
        std::vector<int> prefix;
        int prev = -1;
        for (int t = 0; t < t_len; ++t) {
            int sym = align[static_cast<std::size_t>(t)];
            score += em.at(static_cast<std::uint32_t>(t), static_cast<std::uint32_t>(sym));
            if (t > 0 && trans)
                score += (*trans)[static_cast<std::size_t>(align[static_cast<std::size_t>(t - 1)]) *
                                      static_cast<std::size_t>(v) +
                                  static_cast<std::size_t>(sym)];
            if (sym != prev) {
                prev = sym;
                if (sym != blank) prefix.push_back(sym);
            }
        }
        auto [it, inserted] = acc.try_emplace(prefix, score);
        if (!inserted) it->second = lse_d(it->second, score);

        int i = 0;
        while (i < t_len && ++align[static_cast<std::size_t>(i)] == v) {
            align[static_cast<std::size_t>(i)] = 0;
            ++i;
        }
        if (i == t_len) break;
    }
    return acc;
}

// keep every reachable prefix: no histogram/threshold pruning, no top_k cut
DecodeConfig exhaustive_config(int v) {
    DecodeConfig cfg;
    cfg.beam_size = 1000000;
    cfg.top_k = v;
    cfg.nbest = 1000000;
    return cfg;
}

std::map<std::vector<int>, double> decoded_scores(const NBestList& nbest) {
    std::map<std::vector<int>, double> out;
    for (const Hypothesis& h : nbest.hyps) out[h.piece_ids] = h.ctc_score;
    return out;
}

// Test-side re-walk of the trie over an emitted piece sequence: true when
// some word-start-anchored path reaches a terminal.
bool contains_complete_entity(const std::vector<int>& pieces, const BiasTrie& trie,
                              const SubwordVocab& vocab) {
    std::vector<int> cursors;
    for (int c : pieces) {
        std::vector<int> next;
        for (int node : cursors) {
            if (auto adv = trie.advance(node, c)) {
                if (!adv->label.empty()) return true;
                next.push_back(adv->node);
            }
        }
        if (SubwordVocab::is_word_start(vocab.piece(c))) {
            if (auto adv = trie.advance(BiasTrie::kRoot, c)) {
                if (!adv->label.empty()) return true;
                next.push_back(adv->node);
            }
        }
        cursors = std::move(next);
    }
    return false;
}

std::string log10_str(double p) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.17g", std::log10(p));
    return buf;
}

}  // namespace

TEST_CASE("decode matches exhaustive alignment enumeration") {
    std::mt19937 rng(20240811);
    std::uniform_int_distribution<int> t_dist(1, 4);
    std::uniform_int_distribution<int> v_dist(2, 4);
    for (int rep = 0; rep < 20; ++rep) {
        const int t_len = t_dist(rng);
        const int v = v_dist(rng);
        SubwordVocab vocab;
        std::vector<std::string> pieces;
        for (int i = 0; i + 1 < v; ++i) pieces.push_back("\xe2\x96\x81" "w" + std::to_string(i));
        pieces.emplace_back("<blank>");
        vocab = make_vocab(std::move(pieces));
        EmissionMatrix em = make_emissions(random_rows(rng, t_len, v));

        NBestList nbest = decode(em, vocab, nullptr, nullptr, exhaustive_config(v));
        auto got = decoded_scores(nbest);
        auto want = enumerate_prefix_masses(em, vocab.blank_id, nullptr);

        REQUIRE(got.size() == want.size());
        for (const auto& [prefix, score] : want) {
            REQUIRE(got.count(prefix) == 1);
            CHECK(got[prefix] == doctest::Approx(score).epsilon(1e-9));
        }
        // the decoder's 1-best is the enumeration's best-scoring prefix
        const auto best = std::max_element(
            want.begin(), want.end(), [](const auto& a, const auto& b) {
                if (a.second != b.second) return a.second < b.second;
                if (a.first.size() != b.first.size()) return a.first.size() > b.first.size();
                return a.first > b.first;
            });
        CHECK(nbest.hyps.front().piece_ids == best->first);
        CHECK(nbest.hyps.front().ctc_score == doctest::Approx(best->second).epsilon(1e-9));
    }
}

TEST_CASE("decode matches enumeration with transition scores") {
    std::mt19937 rng(771);
    std::uniform_real_distribution<double> t_score(-0.5, 0.5);
    for (int rep = 0; rep < 10; ++rep) {
        const int t_len = 3;
        const int v = 3;
        SubwordVocab vocab = make_vocab({"\xe2\x96\x81" "a", "\xe2\x96\x81" "b", "<blank>"});
        EmissionMatrix em = make_emissions(random_rows(rng, t_len, v));
        std::vector<double> trans(static_cast<std::size_t>(v) * v);
        for (double& g : trans) g = t_score(rng);

        DecodeConfig cfg = exhaustive_config(v);
        cfg.transition_scores = trans;
        auto got = decoded_scores(decode(em, vocab, nullptr, nullptr, cfg));
        auto want = enumerate_prefix_masses(em, vocab.blank_id, &trans);
        REQUIRE(got.size() == want.size());
        for (const auto& [prefix, score] : want)
            CHECK(got.at(prefix) == doctest::Approx(score).epsilon(1e-9));
    }
}

TEST_CASE("retained prefix masses sum to one") {
    std::mt19937 rng(5150);
    for (int rep = 0; rep < 8; ++rep) {
        const int t_len = 1 + rep % 5;
        const int v = 2 + rep % 3;
        std::vector<std::string> pieces;
        for (int i = 0; i + 1 < v; ++i) pieces.push_back("\xe2\x96\x81" "p" + std::to_string(i));
        pieces.emplace_back("<blank>");
        SubwordVocab vocab = make_vocab(std::move(pieces));
        EmissionMatrix em = make_emissions(random_rows(rng, t_len, v));
        NBestList nbest = decode(em, vocab, nullptr, nullptr, exhaustive_config(v));
        double total = 0.0;
        for (const Hypothesis& h : nbest.hyps) total += std::exp(h.ctc_score);
        CHECK(total == doctest::Approx(1.0).epsilon(1e-6));
    }
}

TEST_CASE("label score: hand-worked examples and errors") {
    SUBCASE("single frame picks the label's probability") {
        EmissionMatrix em = make_emissions({{0.6, 0.3, 0.1}});
        CHECK(ctc_label_score(em, {0}) ==
              doctest::Approx(static_cast<double>(em.at(0, 0))).epsilon(1e-12));
        CHECK(ctc_label_score(em, {0}) == doctest::Approx(std::log(0.6)).epsilon(1e-6));
    }
    SUBCASE("two uniform frames: three alignments of one label") {
        EmissionMatrix em = make_emissions({{1.0 / 3, 1.0 / 3, 1.0 / 3}, {1.0 / 3, 1.0 / 3, 1.0 / 3}});
        // alignments (l,l), (l,blank), (blank,l) over the stored values
        double want = lse_d(lse_d(static_cast<double>(em.at(0, 0)) + em.at(1, 0),
                                  static_cast<double>(em.at(0, 0)) + em.at(1, 2)),
                            static_cast<double>(em.at(0, 2)) + em.at(1, 0));
        CHECK(ctc_label_score(em, {0}) == doctest::Approx(want).epsilon(1e-12));
        CHECK(ctc_label_score(em, {0}) == doctest::Approx(std::log(1.0 / 3)).epsilon(1e-6));
    }
    SUBCASE("repeated label needs a separating blank") {
        EmissionMatrix em = make_emissions({{0.5, 0.3, 0.2}, {0.5, 0.3, 0.2}});
        CHECK(ctc_label_score(em, {0, 0}) == -kInf);
    }
    SUBCASE("empty labels score the all-blank mass") {
        EmissionMatrix em = make_emissions({{0.6, 0.3, 0.1}, {0.2, 0.2, 0.6}});
        CHECK(ctc_label_score(em, {}) ==
              doctest::Approx(static_cast<double>(em.at(0, 2)) + em.at(1, 2)).epsilon(1e-12));
    }
    SUBCASE("no frames") {
        EmissionMatrix em;
        em.v = 3;
        CHECK(ctc_label_score(em, {}) == 0.0);
        CHECK(ctc_label_score(em, {0}) == -kInf);
    }
    SUBCASE("ids outside the vocabulary or equal to blank are rejected") {
        EmissionMatrix em = make_emissions({{0.6, 0.3, 0.1}});
        CHECK_THROWS_AS((void)ctc_label_score(em, {3}), InvalidArgument);
        CHECK_THROWS_AS((void)ctc_label_score(em, {-1}), InvalidArgument);
        CHECK_THROWS_AS((void)ctc_label_score(em, {2}), InvalidArgument);
    }
}

TEST_CASE("label score agrees with enumeration per prefix") {
    std::mt19937 rng(88);
    for (int rep = 0; rep < 10; ++rep) {
        const int t_len = 1 + rep % 4;
        EmissionMatrix em = make_emissions(random_rows(rng, t_len, 4));
        auto want = enumerate_prefix_masses(em, 3, nullptr);
        for (const auto& [prefix, score] : want)
            CHECK(ctc_label_score(em, prefix) == doctest::Approx(score).epsilon(1e-9));
    }
}

TEST_CASE("boost scale and score: frozen values and shape properties") {
    SUBCASE("frozen check values") {
        CHECK(boosting_scale(5, 2.5) == doctest::Approx(0.5).epsilon(1e-12));
        CHECK(boosting_scale(1, 0.0) == doctest::Approx(0.9933071490757153).epsilon(1e-12));
        CHECK(boosting_scale(2, 10.0) == doctest::Approx(2.8625185805493937e-20).epsilon(1e-6));
        // rank 3 trailing the top by 1.5: midpoint of the sigmoid
        CHECK(boosting_scale(3, 1.5) == doctest::Approx(0.5).epsilon(1e-12));
        CHECK(boost_score(3, 1.5) == doctest::Approx(0.75).epsilon(1e-12));
    }
    SUBCASE("standard form: bounded, decreasing in the gap, non-negative boost") {
        for (int rank : {1, 2, 5, 10}) {
            double prev = 1.0;
            for (double gap = 0.0; gap <= 8.0; gap += 0.25) {
                double s = boosting_scale(rank, gap);
                CHECK(s > 0.0);
                CHECK(s < 1.0);
                CHECK(s < prev);
                prev = s;
                CHECK(boost_score(rank, gap) >= 0.0);
            }
        }
        CHECK(boost_score(1, 0.0) == 0.0);
    }
    SUBCASE("inverted form never rewards") {
        for (int rank : {1, 2, 5}) {
            for (double gap = 0.0; gap <= 8.0; gap += 0.5) {
                CHECK(boost_score(rank, gap, BoostSign::Inverted) <= 0.0);
                double s = boosting_scale(rank, gap, BoostSign::Inverted);
                CHECK(s > 0.0);
                // the sigmoid saturates and rounds to exactly 1 at large gaps
                CHECK(s <= 1.0);
            }
        }
    }
    SUBCASE("rank is 1-based") {
        CHECK_THROWS_AS((void)boosting_scale(0, 1.0), InvalidArgument);
    }
}

TEST_CASE("top_k limits extensions but stay transitions always run") {
    SubwordVocab vocab = make_vocab({"\xe2\x96\x81" "a", "\xe2\x96\x81" "b", "<blank>"});
    EmissionMatrix em = make_emissions({{0.7, 0.2, 0.1}, {0.1, 0.1, 0.8}});
    DecodeConfig cfg = exhaustive_config(3);
    cfg.top_k = 1;
    NBestList narrow = decode(em, vocab, nullptr, nullptr, cfg);
    std::map<std::vector<int>, double> got = decoded_scores(narrow);
    // frame 0's sole candidate is ...a; frame 1's is blank, so nothing extends
    REQUIRE(got.size() == 2);
    CHECK(got.count({}) == 1);
    CHECK(got.count({0}) == 1);

    cfg.top_k = 3;
    NBestList wide = decode(em, vocab, nullptr, nullptr, cfg);
    CHECK(wide.hyps.size() == 5);  // {}, a, b, ab, ba
}

TEST_CASE("blank-dominant frames decode to the empty hypothesis") {
    SubwordVocab vocab = make_vocab({"\xe2\x96\x81" "a", "\xe2\x96\x81" "b", "<blank>"});
    EmissionMatrix em =
        make_emissions({{0.05, 0.05, 0.9}, {0.05, 0.05, 0.9}, {0.05, 0.05, 0.9}});
    DecodeConfig cfg;
    cfg.nbest = 3;
    NBestList nbest = decode(em, vocab, nullptr, nullptr, cfg);
    REQUIRE(!nbest.hyps.empty());
    CHECK(nbest.hyps.front().piece_ids.empty());
    CHECK(nbest.hyps.front().words.empty());
    CHECK(nbest.hyps.front().token_frames.empty());
}

TEST_CASE("lm fusion and word penalty accounting") {
    SubwordVocab vocab = make_vocab({"\xe2\x96\x81" "a", "\xe2\x96\x81" "b", "<blank>"});
    EmissionMatrix em = make_emissions({{0.8, 0.1, 0.1}, {0.05, 0.9, 0.05}});
    std::string arpa = "\\data\\\nngram 1=3\n\n\\1-grams:\n" + log10_str(0.6) + " a\n" +
                       log10_str(0.3) + " b\n-99 <unk>\n\n\\end\\\n";
    NGramModel lm = NGramModel::load_arpa(arpa);

    DecodeConfig plain_cfg = exhaustive_config(3);
    plain_cfg.lm_weight = 0.0;
    NBestList plain = decode(em, vocab, nullptr, nullptr, plain_cfg);
    REQUIRE(plain.hyps.front().piece_ids == std::vector<int>{0, 1});
    const double mass = plain.hyps.front().ctc_score;

    DecodeConfig cfg = exhaustive_config(3);
    cfg.lm_weight = 0.6;
    cfg.word_penalty = 0.25;
    NBestList fused = decode(em, vocab, &lm, nullptr, cfg);
    REQUIRE(fused.hyps.front().piece_ids == std::vector<int>{0, 1});
    // word "a" scores at the boundary, the trailing "b" at the end of input
    double want = mass + 0.6 * (std::log(0.6) + std::log(0.3)) + 2 * 0.25;
    CHECK(fused.hyps.front().ctc_score == doctest::Approx(want).epsilon(1e-12));
    CHECK(fused.hyps.front().words == std::vector<std::string>{"a", "b"});
}

TEST_CASE("rank-two entity: boosting flips the one-best") {
    // Entity "xy" spans all four frames at rank 2: piece ...x trails in
    // frames 0-1 and piece y in frames 2-3, each at 0.36 against the 0.45
    // rank-1 piece of the single distractor word "zabc". The distractor
    // wins on raw mass by ~0.27 in the log; the two committed boosts
    // (~0.22 each) flip the ranking.
    SubwordVocab vocab = make_vocab({"\xe2\x96\x81" "z", "a", "b", "c", "\xe2\x96\x81" "x", "y",
                                     "<blank>"});
    const double rank2 = 0.36;
    const double rest = (1.0 - 0.45 - rank2 - 0.05) / 4.0;
    std::vector<std::vector<double>> rows(4, std::vector<double>(7, rest));
    for (int t = 0; t < 4; ++t) {
        rows[static_cast<std::size_t>(t)][static_cast<std::size_t>(t)] = 0.45;
        rows[static_cast<std::size_t>(t)][t < 2 ? 4 : 5] = rank2;
        rows[static_cast<std::size_t>(t)][6] = 0.05;
    }
    EmissionMatrix em = make_emissions(rows);

    EntityCatalog catalog{{"xy"}};
    BiasTrie trie = build_trie(catalog, vocab, PhoneSimilarityTable{});

    DecodeConfig cfg = exhaustive_config(7);
    NBestList off = decode(em, vocab, nullptr, &trie, cfg);
    REQUIRE(off.hyps.front().words == std::vector<std::string>{"zabc"});

    cfg.boost_mode = BoostMode::Adaptive;
    NBestList boosted = decode(em, vocab, nullptr, &trie, cfg);
    CHECK(boosted.hyps.front().words == std::vector<std::string>{"xy"});
    CHECK(boosted.hyps.front().piece_ids == std::vector<int>{4, 5});

    // the flip is score-level: two boost events, committed at the terminal.
    // The gap is measured on the stored f32 log probabilities.
    double gap = static_cast<double>(static_cast<float>(std::log(0.45))) -
                 static_cast<double>(static_cast<float>(std::log(rank2)));
    double h = boost_score(2, gap);
    auto off_scores = decoded_scores(off);
    auto on_scores = decoded_scores(boosted);
    std::vector<int> entity_prefix{4, 5};
    CHECK(on_scores.at(entity_prefix) ==
          doctest::Approx(off_scores.at(entity_prefix) + 2 * h).epsilon(1e-12));
}

TEST_CASE("boost monotonicity and non-entity invariance") {
    std::mt19937 rng(90210);
    SubwordVocab vocab = make_vocab({"\xe2\x96\x81" "a", "\xe2\x96\x81" "b", "\xe2\x96\x81" "c",
                                     "a", "b", "c", "<blank>"});
    const std::vector<std::string> letters{"a", "b", "c"};
    std::uniform_int_distribution<int> len_dist(2, 3);
    std::uniform_int_distribution<int> letter_dist(0, 2);
    std::uniform_int_distribution<int> t_dist(4, 7);

    for (int rep = 0; rep < 10; ++rep) {
        std::string entity;
        int len = len_dist(rng);
        for (int i = 0; i < len; ++i) entity += letters[static_cast<std::size_t>(letter_dist(rng))];
        EntityCatalog catalog{{entity}};
        BiasTrie trie = build_trie(catalog, vocab, PhoneSimilarityTable{});

        EmissionMatrix em = make_emissions(random_rows(rng, t_dist(rng), vocab.size()));
        DecodeConfig cfg = exhaustive_config(vocab.size());
        NBestList off = decode(em, vocab, nullptr, &trie, cfg);
        cfg.boost_mode = BoostMode::Adaptive;
        NBestList boosted = decode(em, vocab, nullptr, &trie, cfg);

        std::map<std::vector<int>, const Hypothesis*> off_by_prefix;
        for (const Hypothesis& h : off.hyps) off_by_prefix[h.piece_ids] = &h;
        REQUIRE(boosted.hyps.size() == off.hyps.size());
        for (const Hypothesis& h : boosted.hyps) {
            auto it = off_by_prefix.find(h.piece_ids);
            REQUIRE(it != off_by_prefix.end());
            const Hypothesis& base = *it->second;
            if (contains_complete_entity(h.piece_ids, trie, vocab)) {
                CHECK(h.ctc_score >= base.ctc_score);
            } else {
                // bit-identical: the boost machinery must not touch these
                CHECK(h.ctc_score == base.ctc_score);
                CHECK(h.words == base.words);
            }
            CHECK(h.token_frames == base.token_frames);
        }
    }
}

TEST_CASE("entity variant substitution at word boundaries") {
    SubwordVocab vocab = make_vocab({"\xe2\x96\x81" "a", "d", "t", "s", "<blank>"});
    PhoneSimilarityTable sim = PhoneSimilarityTable::parse("t d\n");
    EntityCatalog catalog{{"ad"}};
    TrieBuildConfig tb;
    tb.g2g_variants = 4;
    BiasTrie trie = build_trie(catalog, vocab, sim, tb);

    SUBCASE("variant path surfaces the canonical spelling") {
        EmissionMatrix em = make_emissions({{0.9, 0.02, 0.03, 0.02, 0.03},
                                            {0.02, 0.03, 0.9, 0.02, 0.03}});
        NBestList nbest = decode(em, vocab, nullptr, &trie, exhaustive_config(5));
        REQUIRE(nbest.hyps.front().piece_ids == std::vector<int>{0, 2});
        CHECK(nbest.hyps.front().words == std::vector<std::string>{"ad"});
    }
    SUBCASE("no substitution when the word keeps going") {
        EmissionMatrix em = make_emissions({{0.9, 0.02, 0.03, 0.02, 0.03},
                                            {0.02, 0.03, 0.9, 0.02, 0.03},
                                            {0.02, 0.03, 0.02, 0.9, 0.03}});
        NBestList nbest = decode(em, vocab, nullptr, &trie, exhaustive_config(5));
        REQUIRE(nbest.hyps.front().piece_ids == std::vector<int>{0, 2, 3});
        CHECK(nbest.hyps.front().words == std::vector<std::string>{"ats"});
    }
}

TEST_CASE("decode is deterministic") {
    std::mt19937 rng(31337);
    SubwordVocab vocab = make_vocab({"\xe2\x96\x81" "a", "\xe2\x96\x81" "b", "a", "b", "<blank>"});
    EmissionMatrix em = make_emissions(random_rows(rng, 8, vocab.size()));
    EntityCatalog catalog{{"ab", "ba"}};
    BiasTrie trie = build_trie(catalog, vocab, PhoneSimilarityTable{});
    std::string arpa = "\\data\\\nngram 1=3\n\n\\1-grams:\n" + log10_str(0.5) + " ab\n" +
                       log10_str(0.3) + " ba\n-99 <unk>\n\n\\end\\\n";
    NGramModel lm = NGramModel::load_arpa(arpa);

    DecodeConfig cfg;
    cfg.beam_size = 6;
    cfg.top_k = 3;
    cfg.nbest = 6;
    cfg.boost_mode = BoostMode::Adaptive;
    NBestList first = decode(em, vocab, &lm, &trie, cfg);
    NBestList second = decode(em, vocab, &lm, &trie, cfg);
    REQUIRE(first.hyps.size() == second.hyps.size());
    for (std::size_t i = 0; i < first.hyps.size(); ++i) {
        CHECK(first.hyps[i].piece_ids == second.hyps[i].piece_ids);
        CHECK(first.hyps[i].ctc_score == second.hyps[i].ctc_score);
        CHECK(first.hyps[i].words == second.hyps[i].words);
        CHECK(first.hyps[i].token_frames == second.hyps[i].token_frames);
    }
}

TEST_CASE("wider beams never lower the one-best score") {
    std::mt19937 rng(271828);
    SubwordVocab vocab =
        make_vocab({"\xe2\x96\x81" "a", "\xe2\x96\x81" "b", "\xe2\x96\x81" "c", "<blank>"});
    for (int rep = 0; rep < 10; ++rep) {
        EmissionMatrix em = make_emissions(random_rows(rng, 6, vocab.size()));
        double prev = -kInf;
        for (int beam : {1, 2, 4, 8, 32}) {
            DecodeConfig cfg;
            cfg.beam_size = beam;
            cfg.top_k = vocab.size();
            NBestList nbest = decode(em, vocab, nullptr, nullptr, cfg);
            CHECK(nbest.hyps.front().ctc_score >= prev - 1e-12);
            prev = nbest.hyps.front().ctc_score;
        }
    }
}

TEST_CASE("token frames follow the best alignment") {
    SubwordVocab vocab = make_vocab({"\xe2\x96\x81" "a", "\xe2\x96\x81" "b", "<blank>"});
    EmissionMatrix em = make_emissions({{0.98, 0.01, 0.01},
                                        {0.98, 0.01, 0.01},
                                        {0.01, 0.01, 0.98},
                                        {0.01, 0.98, 0.01},
                                        {0.01, 0.98, 0.01}});
    NBestList nbest = decode(em, vocab, nullptr, nullptr, exhaustive_config(3));
    REQUIRE(nbest.hyps.front().piece_ids == std::vector<int>{0, 1});
    std::vector<std::pair<int, int>> want{{0, 1}, {3, 4}};
    CHECK(nbest.hyps.front().token_frames == want);

    // general shape: one span per emitted token, ordered and disjoint
    std::mt19937 rng(11);
    EmissionMatrix rnd = make_emissions(random_rows(rng, 6, 3));
    NBestList all = decode(rnd, vocab, nullptr, nullptr, exhaustive_config(3));
    for (const Hypothesis& h : all.hyps) {
        REQUIRE(h.token_frames.size() == h.piece_ids.size());
        int prev_end = -1;
        for (auto [a, b] : h.token_frames) {
            CHECK(a > prev_end);
            CHECK(a <= b);
            CHECK(b < 6);
            prev_end = b;
        }
    }
}

TEST_CASE("decode config validation") {
    SubwordVocab vocab = make_vocab({"\xe2\x96\x81" "a", "<blank>"});
    EmissionMatrix em = make_emissions({{0.5, 0.5}});
    DecodeConfig cfg;
    SUBCASE("beam size") {
        cfg.beam_size = 0;
        CHECK_THROWS_AS((void)decode(em, vocab, nullptr, nullptr, cfg), InvalidArgument);
    }
    SUBCASE("top_k") {
        cfg.top_k = 0;
        CHECK_THROWS_AS((void)decode(em, vocab, nullptr, nullptr, cfg), InvalidArgument);
    }
    SUBCASE("nbest") {
        cfg.nbest = 0;
        CHECK_THROWS_AS((void)decode(em, vocab, nullptr, nullptr, cfg), InvalidArgument);
    }
    SUBCASE("transition score shape") {
        cfg.transition_scores = std::vector<double>(3, 0.0);
        CHECK_THROWS_AS((void)decode(em, vocab, nullptr, nullptr, cfg), InvalidArgument);
    }
    SUBCASE("vocabulary width") {
        EmissionMatrix wrong = make_emissions({{0.5, 0.3, 0.2}});
        CHECK_THROWS_AS((void)decode(wrong, vocab, nullptr, nullptr, cfg), InvalidArgument);
    }
}

TEST_CASE("empty input yields the empty hypothesis") {
    SubwordVocab vocab = make_vocab({"\xe2\x96\x81" "a", "<blank>"});
    EmissionMatrix em;
    em.t = 0;
    em.v = 2;
    NBestList nbest = decode(em, vocab, nullptr, nullptr, DecodeConfig{});
    REQUIRE(nbest.hyps.size() == 1);
    CHECK(nbest.hyps.front().words.empty());
    CHECK(nbest.hyps.front().ctc_score == 0.0);
}
