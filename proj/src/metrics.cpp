#include "ctcbias/metrics.hpp"

#include <algorithm>
#include <limits>
#include <stdexcept>

#include <json.hpp>

#include "ctcbias/errors.hpp"
#include "ctcbias/io.hpp"

#include "textutil.hpp"

namespace ctcbias {

using textutil::lowercase;
using textutil::split_lines;
using textutil::split_ws;

RarityTable load_rarity_table(const std::string& text) {
    RarityTable table;
    std::size_t n = 0;
    for (const auto& line : split_lines(text)) {
        ++n;
        auto toks = split_ws(line);
        if (toks.empty()) continue;
        if (toks.size() != 2) throw ParseError("expected \"word count\"", n);
        long long count = 0;
        try {
            std::size_t used = 0;
            count = std::stoll(toks[1], &used);
            if (used != toks[1].size()) throw std::invalid_argument(toks[1]);
        } catch (const std::exception&) {
            throw ParseError("bad count \"" + toks[1] + "\"", n);
        }
        if (count < 0) throw ParseError("negative count", n);
        table.counts[lowercase(toks[0])] += count;
    }
    return table;
}

RarityTable load_rarity_table_file(const std::string& path) {
    return load_rarity_table(read_file_text(path));
}

Rarity classify_rarity(const std::string& word, const RarityTable& table) {
    auto it = table.counts.find(word);
    if (it == table.counts.end()) return Rarity::Oov;
    return it->second < table.rare_threshold ? Rarity::Rare : Rarity::Common;
}

WordAlignment align_words(const std::vector<std::string>& ref,
                          const std::vector<std::string>& hyp) {
    const std::size_t r = ref.size();
    const std::size_t c = hyp.size();
    // cost[i][j] = edit distance between ref[0..i) and hyp[0..j);
    // pairs[i][j] = most aligned word pairs any minimum-cost alignment keeps.
    // With errors T and diag paired positions, S = T - |ref| - |hyp| + 2*diag,
    // so maximizing pairs fixes the S/D/I split symmetrically in the two
    // arguments; a greedy traceback alone would not.
    std::vector<std::vector<int>> cost(r + 1, std::vector<int>(c + 1, 0));
    std::vector<std::vector<int>> pairs(r + 1, std::vector<int>(c + 1, 0));
    for (std::size_t i = 1; i <= r; ++i) cost[i][0] = static_cast<int>(i);
    for (std::size_t j = 1; j <= c; ++j) cost[0][j] = static_cast<int>(j);
    for (std::size_t i = 1; i <= r; ++i)
        for (std::size_t j = 1; j <= c; ++j) {
            int diag = cost[i - 1][j - 1] + (ref[i - 1] == hyp[j - 1] ? 0 : 1);
            int best = std::min({diag, cost[i - 1][j] + 1, cost[i][j - 1] + 1});
            cost[i][j] = best;
            int kept = -1;
            if (best == diag) kept = pairs[i - 1][j - 1] + 1;
            if (best == cost[i - 1][j] + 1) kept = std::max(kept, pairs[i - 1][j]);
            if (best == cost[i][j - 1] + 1) kept = std::max(kept, pairs[i][j - 1]);
            pairs[i][j] = kept;
        }

    WordAlignment out;
    out.ref_to_hyp.assign(r, -1);
    out.hyp_to_ref.assign(c, -1);
    // traceback along the pair-maximal path; residual ties take deletions first
    std::size_t i = r;
    std::size_t j = c;
    while (i > 0 || j > 0) {
        if (i > 0 && j > 0) {
            int diag = cost[i - 1][j - 1] + (ref[i - 1] == hyp[j - 1] ? 0 : 1);
            if (cost[i][j] == diag && pairs[i][j] == pairs[i - 1][j - 1] + 1) {
                out.ref_to_hyp[i - 1] = static_cast<int>(j - 1);
                out.hyp_to_ref[j - 1] = static_cast<int>(i - 1);
                if (ref[i - 1] != hyp[j - 1]) ++out.substitutions;
                --i;
                --j;
                continue;
            }
        }
        if (i > 0 && cost[i][j] == cost[i - 1][j] + 1 && pairs[i][j] == pairs[i - 1][j]) {
            ++out.deletions;
            --i;
            continue;
        }
        ++out.insertions;
        --j;
    }
    return out;
}

double wer(const std::vector<std::string>& ref, const std::vector<std::string>& hyp) {
    if (ref.empty()) return hyp.empty() ? 0.0 : std::numeric_limits<double>::infinity();
    WordAlignment a = align_words(ref, hyp);
    return static_cast<double>(a.errors()) / static_cast<double>(ref.size());
}

namespace {

void finish_score(CategoryScore& score) {
    if (score.hyp_occurrences > 0)
        score.precision = static_cast<double>(score.hits) /
                          static_cast<double>(score.hyp_occurrences);
    if (score.ref_occurrences > 0)
        score.recall = static_cast<double>(score.hits) /
                       static_cast<double>(score.ref_occurrences);
    if (score.precision && score.recall) {
        double p = *score.precision;
        double rc = *score.recall;
        score.f1 = p + rc > 0.0 ? 2.0 * p * rc / (p + rc) : 0.0;
    }
}

void accumulate_category(CategoryScore& score, const std::vector<std::string>& ref,
                         const std::vector<std::string>& hyp, const WordAlignment& alignment,
                         const RarityTable& table, Rarity category) {
    for (std::size_t i = 0; i < ref.size(); ++i) {
        if (classify_rarity(ref[i], table) != category) continue;
        ++score.ref_occurrences;
        int j = alignment.ref_to_hyp[i];
        if (j >= 0 && hyp[static_cast<std::size_t>(j)] == ref[i]) ++score.hits;
    }
    for (const std::string& w : hyp)
        if (classify_rarity(w, table) == category) ++score.hyp_occurrences;
}

void check_paired(std::size_t refs, std::size_t hyps) {
    if (refs != hyps)
        throw InvalidArgument("got " + std::to_string(refs) + " references but " +
                              std::to_string(hyps) + " hypotheses");
}

}  // namespace

CategoryScore entity_prf(const std::vector<std::vector<std::string>>& refs,
                         const std::vector<std::vector<std::string>>& hyps,
                         const RarityTable& table, Rarity category) {
    check_paired(refs.size(), hyps.size());
    CategoryScore score;
    for (std::size_t u = 0; u < refs.size(); ++u) {
        WordAlignment alignment = align_words(refs[u], hyps[u]);
        accumulate_category(score, refs[u], hyps[u], alignment, table, category);
    }
    finish_score(score);
    return score;
}

EvalReport evaluate(const std::vector<std::vector<std::string>>& refs,
                    const std::vector<std::vector<std::string>>& hyps,
                    const RarityTable& table) {
    check_paired(refs.size(), hyps.size());
    EvalReport report;
    for (std::size_t u = 0; u < refs.size(); ++u) {
        WordAlignment alignment = align_words(refs[u], hyps[u]);
        report.ref_words += static_cast<long long>(refs[u].size());
        report.errors += alignment.errors();
        accumulate_category(report.rare, refs[u], hyps[u], alignment, table, Rarity::Rare);
        accumulate_category(report.oov, refs[u], hyps[u], alignment, table, Rarity::Oov);
    }
    finish_score(report.rare);
    finish_score(report.oov);
    if (report.ref_words > 0)
        report.wer = static_cast<double>(report.errors) / static_cast<double>(report.ref_words);
    else
        report.wer = report.errors > 0 ? std::numeric_limits<double>::infinity() : 0.0;
    return report;
}

double werr_percent(double wer_base, double wer_system) {
    if (wer_base <= 0.0) throw InvalidArgument("baseline error rate must be positive");
    return (wer_base - wer_system) / wer_base * 100.0;
}

namespace {

nlohmann::ordered_json score_to_json(const CategoryScore& score) {
    nlohmann::ordered_json j;
    j["reference_occurrences"] = score.ref_occurrences;
    j["hypothesis_occurrences"] = score.hyp_occurrences;
    j["hits"] = score.hits;
    if (score.precision) j["precision"] = *score.precision;
    if (score.recall) j["recall"] = *score.recall;
    if (score.f1) j["f1"] = *score.f1;
    return j;
}

}  // namespace

std::string report_to_json(const EvalReport& report) {
    nlohmann::ordered_json j;
    j["wer"] = report.wer;
    j["reference_words"] = report.ref_words;
    j["errors"] = report.errors;
    j["rare"] = score_to_json(report.rare);
    j["oov"] = score_to_json(report.oov);
    return j.dump(2) + "\n";
}

}  // namespace ctcbias
