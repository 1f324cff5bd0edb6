#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <map>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "ctcbias/biastrie.hpp"
#include "ctcbias/errors.hpp"
#include "ctcbias/lm.hpp"

using namespace ctcbias;

namespace {

constexpr double kLn10 = 2.302585092994045684;

std::string log10_str(double linear) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.17g", std::log10(linear));
    return buf;
}

// Bigram model built from explicitly normalized linear probabilities.
//   unigrams: a .7, b .2, </s> .1                 (sum 1)
//   context a: b .5 explicit; bow(a) = (1-.5)/(1-.2) = .625
//   context <s>: a .6 explicit; bow(<s>) = (1-.6)/(1-.7) = 4/3
//   context b: no entries, implicit bow 1
std::string normalized_bigram_arpa() {
    std::string t;
    t += "\\data\\\n";
    t += "ngram 1=4\n";
    t += "ngram 2=2\n";
    t += "\n\\1-grams:\n";
    t += "-99\t<s>\t" + log10_str(4.0 / 3.0) + "\n";
    t += log10_str(0.7) + "\ta\t" + log10_str(0.625) + "\n";
    t += log10_str(0.2) + "\tb\n";
    t += log10_str(0.1) + "\t</s>\n";
    t += "\n\\2-grams:\n";
    t += log10_str(0.6) + "\t<s> a\n";
    t += log10_str(0.5) + "\ta b\n";
    t += "\n\\end\\\n";
    return t;
}

std::string tiny_trigram_arpa() {
    return "\\data\\\n"
           "ngram 1=4\n"
           "ngram 2=2\n"
           "ngram 3=1\n"
           "\n"
           "\\1-grams:\n"
           "-0.7\ta\t-0.3\n"
           "-0.8\tb\t-0.2\n"
           "-0.9\tc\n"
           "-1.0\td\n"
           "\n"
           "\\2-grams:\n"
           "-0.15\ta b\t-0.1\n"
           "-0.25\tb c\t-0.05\n"
           "\n"
           "\\3-grams:\n"
           "-0.05\ta b c\n"
           "\n"
           "\\end\\\n";
}

}  // namespace

TEST_CASE("conditional probabilities sum to one in every context") {
    NGramModel model = NGramModel::load_arpa(normalized_bigram_arpa());
    std::vector<std::string> predicted = {"a", "b", "</s>"};
    for (const std::string ctx_word : {"<s>", "a", "b"}) {
        LmState ctx = {model.word_id(ctx_word)};
        double sum = 0.0;
        for (const auto& w : predicted) sum += std::exp(model.score_word(ctx, w).first);
        CHECK(sum == doctest::Approx(1.0).epsilon(1e-3));
    }
    // empty context: the unigram distribution itself (<s> carries -99)
    double sum = 0.0;
    for (const auto& w : predicted) sum += std::exp(model.score_word({}, w).first);
    CHECK(sum == doctest::Approx(1.0).epsilon(1e-3));
}

TEST_CASE("backoff chains produce hand-computed scores") {
    NGramModel model = NGramModel::load_arpa(normalized_bigram_arpa());
    LmState a = {model.word_id("a")};

    // explicit bigram
    CHECK(model.score_word(a, "b").first == doctest::Approx(std::log(0.5)).epsilon(1e-9));
    // backoff: bow(a) * P(a) = .625 * .7
    CHECK(model.score_word(a, "a").first == doctest::Approx(std::log(0.4375)).epsilon(1e-9));
    // backoff to </s>: .625 * .1
    CHECK(model.score_word(a, "</s>").first == doctest::Approx(std::log(0.0625)).epsilon(1e-9));
    // context without entries: implicit bow 1
    LmState b = {model.word_id("b")};
    CHECK(model.score_word(b, "a").first == doctest::Approx(std::log(0.7)).epsilon(1e-9));

    // begin state applies the <s> context
    CHECK(model.score_word(model.begin_state(), "a").first ==
          doctest::Approx(std::log(0.6)).epsilon(1e-9));
    CHECK(model.score_word(model.begin_state(), "b").first ==
          doctest::Approx(std::log(4.0 / 3.0 * 0.2)).epsilon(1e-9));

    // sequence score accumulates: <s> a b = .6 * .5
    CHECK(model.score_sequence({"a", "b"}) ==
          doctest::Approx(std::log(0.6 * 0.5)).epsilon(1e-9));
}

TEST_CASE("trigram states trim to the longest known suffix") {
    NGramModel model = NGramModel::load_arpa(tiny_trigram_arpa());
    CHECK(model.order() == 3);
    int a = model.word_id("a"), b = model.word_id("b"), c = model.word_id("c"),
        d = model.word_id("d");

    auto [s1, st1] = model.score_word_id({a, b}, c);
    CHECK(s1 == doctest::Approx(-0.05 * kLn10).epsilon(1e-9));
    CHECK(st1 == LmState{b, c});

    // [b c] d: bow(b c) + bow(c) [absent -> 0] + uni(d)
    auto [s2, st2] = model.score_word_id(st1, d);
    CHECK(s2 == doctest::Approx((-0.05 - 1.0) * kLn10).epsilon(1e-9));
    CHECK(st2 == LmState{d});  // [c d] unknown, falls back to [d]

    // [a] b hits the bigram
    auto [s3, st3] = model.score_word_id({a}, b);
    CHECK(s3 == doctest::Approx(-0.15 * kLn10).epsilon(1e-9));
    CHECK(st3 == LmState{a, b});

    // no <s> entry: begin state is empty
    CHECK(model.begin_state().empty());
}

TEST_CASE("unknown words score as unk") {
    NGramModel model = NGramModel::load_arpa(tiny_trigram_arpa());
    CHECK(model.word_id("zzz") == -1);
    CHECK(model.unk_id() >= 0);
    // synthesized <unk> carries the conventional -99 log10
    CHECK(model.score_word({}, "zzz").first == doctest::Approx(-99.0 * kLn10).epsilon(1e-9));
    // the synthesized unigram makes [unk] a valid context
    auto [s, st] = model.score_word({model.word_id("a")}, "zzz");
    (void)s;
    CHECK(st == LmState{model.unk_id()});
}

TEST_CASE("unigram boost overlay raises entity unigrams") {
    NGramModel base = NGramModel::load_arpa(normalized_bigram_arpa());
    NGramModel boosted = base.with_unigram_boost({"b", "newword"});
    CHECK(!base.has_boost_overlay());
    CHECK(boosted.has_boost_overlay());

    // boost value is exactly ln(10^-0.2); ln(0.2) sits below it
    double boost_ln = -0.2 * kLn10;
    CHECK(std::fabs(boosted.unigram_score("b") - boost_ln) <= 1e-12);
    CHECK(std::fabs(boosted.unigram_score("newword") - boost_ln) <= 1e-12);
    // ln(0.7) is above the boost: a boosted frequent word keeps its own mass
    NGramModel boosted_a = base.with_unigram_boost({"a"});
    CHECK(boosted_a.unigram_score("a") == doctest::Approx(std::log(0.7)).epsilon(1e-12));
    // unboosted words are untouched
    CHECK(boosted.unigram_score("a") == doctest::Approx(std::log(0.7)).epsilon(1e-12));
    CHECK(base.unigram_score("b") == doctest::Approx(std::log(0.2)).epsilon(1e-12));

    // scoring through a backoff chain picks up the overlaid unigram
    LmState b = {boosted.word_id("b")};
    CHECK(boosted.score_word(b, "b").first == doctest::Approx(boost_ln).epsilon(1e-9));
    CHECK(boosted.score_word(b, "newword").first == doctest::Approx(boost_ln).epsilon(1e-9));
    // the base tables are untouched: explicit bigram a->b still wins
    LmState a = {boosted.word_id("a")};
    CHECK(boosted.score_word(a, "b").first == doctest::Approx(std::log(0.5)).epsilon(1e-9));

    CHECK_THROWS_AS(base.with_unigram_boost({"a"}, 0.1), InvalidArgument);
}

TEST_CASE("declared-but-empty higher-order sections are valid") {
    NGramModel model = NGramModel::load_arpa(
        "\\data\\\nngram 1=2\nngram 2=0\n\n\\1-grams:\n-0.5\ta\n-0.9\tb\n\n"
        "\\2-grams:\n\n\\end\\\n");
    CHECK(model.order() == 2);
    // behaves like a pure unigram model: implicit bow 1 everywhere
    LmState a = {model.word_id("a")};
    CHECK(model.score_word(a, "b").first == doctest::Approx(-0.9 * kLn10).epsilon(1e-9));
}

TEST_CASE("empty boost list leaves the model unchanged") {
    NGramModel base = NGramModel::load_arpa(normalized_bigram_arpa());
    NGramModel same = base.with_unigram_boost({});
    CHECK(!same.has_boost_overlay());
    CHECK(same.unigram_score("a") == base.unigram_score("a"));
    CHECK(same.score_sequence({"a", "b"}) == base.score_sequence({"a", "b"}));
}

TEST_CASE("scoring matches an independent backoff evaluator on random sentences") {
    NGramModel model = NGramModel::load_arpa(normalized_bigram_arpa());

    // reference evaluator over the same linear probabilities, written against
    // plain maps rather than the model's tables
    std::map<std::string, double> uni = {
        {"<s>", 1e-99}, {"a", 0.7}, {"b", 0.2}, {"</s>", 0.1}};
    std::map<std::string, double> bow = {{"<s>", 4.0 / 3.0}, {"a", 0.625}};
    std::map<std::pair<std::string, std::string>, double> bi = {
        {{"<s>", "a"}, 0.6}, {{"a", "b"}, 0.5}};
    auto ref_score = [&](const std::string& prev, const std::string& w) {
        auto hit = bi.find({prev, w});
        if (hit != bi.end()) return std::log(hit->second);
        double weight = bow.count(prev) ? bow.at(prev) : 1.0;
        return std::log(weight) + std::log(uni.at(w));
    };

    std::mt19937 rng(55);
    std::vector<std::string> lexicon = {"a", "b", "</s>"};
    for (int rep = 0; rep < 20; ++rep) {
        std::uniform_int_distribution<std::size_t> len(1, 8), pick(0, lexicon.size() - 1);
        std::vector<std::string> sent(len(rng));
        for (auto& w : sent) w = lexicon[pick(rng)];

        double expect = 0.0;
        std::string prev = "<s>";
        for (const auto& w : sent) {
            expect += ref_score(prev, w);
            prev = w;
        }
        CHECK(model.score_sequence(sent) == doctest::Approx(expect).epsilon(1e-9));
    }
}

TEST_CASE("arpa parser rejects malformed files") {
    auto expect_line = [](const std::string& text, std::size_t line) {
        try {
            NGramModel::load_arpa(text);
            FAIL_CHECK("expected ParseError");
        } catch (const ParseError& e) {
            if (line) CHECK(e.line() == line);
        }
    };

    expect_line("no header here\n", 0);  // missing \data\ section
    // count mismatch: declares 2 unigrams, provides 1
    expect_line("\\data\\\nngram 1=2\n\n\\1-grams:\n-0.5\ta\n\n\\end\\\n", 6);
    // bigram with unseen context word
    expect_line(
        "\\data\\\nngram 1=1\nngram 2=1\n\n\\1-grams:\n-0.5\ta\n\n"
        "\\2-grams:\n-0.2\tq a\n\n\\end\\\n",
        9);
    // duplicate entry
    expect_line("\\data\\\nngram 1=2\n\n\\1-grams:\n-0.5\ta\n-0.6\ta\n\n\\end\\\n", 6);
    // malformed number
    expect_line("\\data\\\nngram 1=1\n\n\\1-grams:\nxx\ta\n\n\\end\\\n", 5);
    // missing end marker
    expect_line("\\data\\\nngram 1=1\n\n\\1-grams:\n-0.5\ta\n\n", 0);
}

TEST_CASE("smearing fills nodes with the best boosted unigram below") {
    NGramModel model =
        NGramModel::load_arpa(normalized_bigram_arpa()).with_unigram_boost({"b", "zig"});

    BiasTrie trie;
    trie.insert({1, 2}, "a");  // unigram ln(.7), above the boost
    trie.insert({1, 3}, "b");  // boosted to -0.2*ln10
    trie.insert({4, 5, 6}, "zig");
    smear(trie, model);

    double boost_ln = -0.2 * kLn10;
    // node after 1 covers entities a and b: max(ln .7, boost) = ln .7
    auto n1 = trie.advance(BiasTrie::kRoot, 1);
    REQUIRE(n1.has_value());
    CHECK(trie.smear_at(n1->node) == doctest::Approx(std::log(0.7)).epsilon(1e-12));
    auto leaf_b = trie.advance(n1->node, 3);
    REQUIRE(leaf_b.has_value());
    CHECK(trie.smear_at(leaf_b->node) == doctest::Approx(boost_ln).epsilon(1e-12));
    // the zig chain carries the boost value all the way down
    auto n4 = trie.advance(BiasTrie::kRoot, 4);
    REQUIRE(n4.has_value());
    CHECK(trie.smear_at(n4->node) == doctest::Approx(boost_ln).epsilon(1e-12));
    // root covers everything
    CHECK(trie.smear_at(BiasTrie::kRoot) == doctest::Approx(std::log(0.7)).epsilon(1e-12));

    // parent smear dominates child smear everywhere
    for (std::size_t node = 0; node < trie.node_count(); ++node) {
        for (const auto& [piece, child] : trie.children(static_cast<int>(node))) {
            (void)piece;
            CHECK(trie.smear_at(static_cast<int>(node)) >= trie.smear_at(child));
        }
    }

    BiasTrie empty;
    smear(empty, model);  // no-op, must not crash
    CHECK(empty.empty());
}
