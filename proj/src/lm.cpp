#include "ctcbias/lm.hpp"

#include <cmath>
#include <functional>
#include <limits>
#include <sstream>

#include "ctcbias/errors.hpp"
#include "ctcbias/io.hpp"

namespace ctcbias {

namespace {

constexpr double kLn10 = 2.302585092994045684;
// SRILM writes -99 for "word has no probability of its own"
constexpr double kNoProbLog10 = -99.0;

bool parse_double(const std::string& tok, double* out) {
    try {
        std::size_t used = 0;
        *out = std::stod(tok, &used);
        return used == tok.size();
    } catch (...) {
        return false;
    }
}

}  // namespace

int NGramModel::word_id(const std::string& word) const {
    auto it = word_ids_.find(word);
    return it == word_ids_.end() ? -1 : it->second;
}

int NGramModel::intern(const std::string& word) {
    auto it = word_ids_.find(word);
    if (it != word_ids_.end()) return it->second;
    int id = static_cast<int>(words_.size());
    words_.push_back(word);
    word_ids_[word] = id;
    return id;
}

const NGramModel::Entry* NGramModel::find(const std::vector<int>& key) const {
    if (key.empty() || key.size() > static_cast<std::size_t>(order_)) return nullptr;
    const Table& table = tables_[key.size() - 1];
    auto it = table.find(key);
    return it == table.end() ? nullptr : &it->second;
}

NGramModel NGramModel::load_arpa(const std::string& text) {
    NGramModel model;
    std::istringstream is(text);
    std::string line;
    std::size_t lineno = 0;

    auto next_line = [&](std::string* out) {
        if (std::getline(is, line)) {
            ++lineno;
            if (!line.empty() && line.back() == '\r') line.pop_back();
            *out = line;
            return true;
        }
        return false;
    };

    std::string cur;
    bool found_data = false;
    while (next_line(&cur)) {
        if (cur == "\\data\\") {
            found_data = true;
            break;
        }
    }
    if (!found_data) throw ParseError("missing \\data\\ section");

    std::vector<std::size_t> declared_counts;
    while (next_line(&cur)) {
        if (cur.empty()) break;
        // "ngram N=count"
        std::istringstream ls(cur);
        std::string tag, spec;
        if (!(ls >> tag >> spec) || tag != "ngram")
            throw ParseError("expected \"ngram N=count\"", lineno);
        auto eq = spec.find('=');
        if (eq == std::string::npos) throw ParseError("expected \"ngram N=count\"", lineno);
        std::size_t n = 0, count = 0;
        try {
            n = std::stoul(spec.substr(0, eq));
            count = std::stoul(spec.substr(eq + 1));
        } catch (...) {
            throw ParseError("expected \"ngram N=count\"", lineno);
        }
        if (n != declared_counts.size() + 1)
            throw ParseError("non-consecutive ngram order " + std::to_string(n), lineno);
        declared_counts.push_back(count);
    }
    if (declared_counts.empty()) throw ParseError("\\data\\ declares no ngram orders");

    model.order_ = static_cast<int>(declared_counts.size());
    model.tables_.resize(declared_counts.size());

    // Section bodies may end either at a blank line or directly at the next
    // "\..." header; `pending` carries a header we already consumed.
    std::string pending;
    for (std::size_t n = 1; n <= declared_counts.size(); ++n) {
        std::string header = "\\" + std::to_string(n) + "-grams:";
        bool found = false;
        if (!pending.empty()) {
            if (pending != header)
                throw ParseError("expected \"" + header + "\", got \"" + pending + "\"", lineno);
            pending.clear();
            found = true;
        }
        while (!found && next_line(&cur)) {
            if (cur.empty()) continue;
            if (cur == header) {
                found = true;
                break;
            }
            throw ParseError("expected \"" + header + "\", got \"" + cur + "\"", lineno);
        }
        if (!found) throw ParseError("missing section \"" + header + "\"");

        Table& table = model.tables_[n - 1];
        std::size_t read = 0;
        while (next_line(&cur)) {
            if (cur.empty()) break;
            if (cur[0] == '\\') {
                pending = cur;
                break;
            }
            std::istringstream ls(cur);
            std::vector<std::string> toks;
            std::string t;
            while (ls >> t) toks.push_back(t);
            // logp w1..wn [backoff]
            if (toks.size() != n + 1 && toks.size() != n + 2)
                throw ParseError("malformed " + std::to_string(n) + "-gram entry", lineno);
            double logp10 = 0.0, bow10 = 0.0;
            if (!parse_double(toks[0], &logp10))
                throw ParseError("bad log-probability \"" + toks[0] + "\"", lineno);
            if (toks.size() == n + 2 && !parse_double(toks.back(), &bow10))
                throw ParseError("bad backoff weight \"" + toks.back() + "\"", lineno);
            Entry entry{logp10 * kLn10, bow10 * kLn10};
            std::vector<int> key;
            key.reserve(n);
            for (std::size_t i = 1; i <= n; ++i) key.push_back(model.intern(toks[i]));
            if (n > 1) {
                std::vector<int> context(key.begin(), key.end() - 1);
                if (!model.find(context))
                    throw ParseError("n-gram context lacks an (n-1)-gram entry", lineno);
            }
            if (!table.emplace(std::move(key), entry).second)
                throw ParseError("duplicate n-gram", lineno);
            ++read;
        }
        if (read != declared_counts[n - 1])
            throw ParseError("\\data\\ declares " + std::to_string(declared_counts[n - 1]) + " " +
                                 std::to_string(n) + "-grams, section has " + std::to_string(read),
                             lineno);
    }

    bool found_end = false;
    if (pending == "\\end\\") {
        found_end = true;
    } else if (!pending.empty()) {
        throw ParseError("unexpected section \"" + pending + "\"", lineno);
    }
    while (!found_end && next_line(&cur)) {
        if (cur.empty()) continue;
        if (cur == "\\end\\") {
            found_end = true;
            break;
        }
        throw ParseError("expected \\end\\, got \"" + cur + "\"", lineno);
    }
    if (!found_end) throw ParseError("missing \\end\\");

    model.unk_id_ = model.word_id("<unk>");
    if (model.unk_id_ < 0) {
        model.unk_id_ = model.intern("<unk>");
        model.tables_[0][{model.unk_id_}] = Entry{kNoProbLog10 * kLn10, 0.0};
    }
    return model;
}

NGramModel NGramModel::load_arpa_file(const std::string& path) {
    return load_arpa(read_file_text(path));
}

LmState NGramModel::begin_state() const {
    int bos = word_id("<s>");
    if (bos < 0) return {};
    return canonicalize({bos});
}

LmState NGramModel::canonicalize(LmState state) const {
    std::size_t max_len = static_cast<std::size_t>(order_) - 1;
    if (state.size() > max_len)
        state.erase(state.begin(), state.end() - static_cast<std::ptrdiff_t>(max_len));
    // longest suffix that the model actually knows
    while (!state.empty()) {
        if (find(state)) break;
        state.erase(state.begin());
    }
    return state;
}

std::pair<double, LmState> NGramModel::score_word(const LmState& state,
                                                  const std::string& word) const {
    int id = word_id(word);
    if (id < 0) id = unk_id_;
    return score_word_id(state, id);
}

std::pair<double, LmState> NGramModel::score_word_id(const LmState& state, int id) const {
    // Katz backoff: longest matching n-gram wins, each skipped context
    // contributes its backoff weight.
    double backoff_sum = 0.0;
    std::vector<int> context = state;
    double score = 0.0;
    for (;;) {
        std::vector<int> key = context;
        key.push_back(id);
        if (key.size() <= static_cast<std::size_t>(order_)) {
            if (const Entry* e = find(key)) {
                score = backoff_sum + e->logp;
                if (context.empty()) {
                    auto it = boost_overlay_.find(id);
                    if (it != boost_overlay_.end() && it->second > e->logp)
                        score = backoff_sum + it->second;
                }
                break;
            }
        }
        if (context.empty()) {
            // no unigram for this id: overlay-only word, else score as unk
            auto it = boost_overlay_.find(id);
            if (it != boost_overlay_.end()) {
                score = backoff_sum + it->second;
            } else {
                const Entry* unk = find({unk_id_});
                score = backoff_sum + (unk ? unk->logp : kNoProbLog10 * kLn10);
            }
            break;
        }
        if (const Entry* c = find(context)) backoff_sum += c->backoff;
        context.erase(context.begin());
    }

    LmState next = state;
    next.push_back(id);
    return {score, canonicalize(std::move(next))};
}

double NGramModel::score_sequence(const std::vector<std::string>& words) const {
    LmState state = begin_state();
    double total = 0.0;
    for (const auto& w : words) {
        auto [s, next] = score_word(state, w);
        total += s;
        state = std::move(next);
    }
    return total;
}

NGramModel NGramModel::with_unigram_boost(const std::vector<std::string>& words,
                                          double boost_log10) const {
    if (boost_log10 >= 0.0) throw InvalidArgument("unigram boost must be negative (log10)");
    NGramModel boosted = *this;
    double boost_ln = boost_log10 * kLn10;
    for (const auto& w : words) {
        int id = boosted.intern(w);
        double floor = boost_ln;
        auto it = boosted.boost_overlay_.find(id);
        if (it != boosted.boost_overlay_.end()) floor = std::max(floor, it->second);
        boosted.boost_overlay_[id] = floor;
    }
    return boosted;
}

double NGramModel::unigram_score(const std::string& word) const {
    int id = word_id(word);
    double base = -std::numeric_limits<double>::infinity();
    if (id >= 0) {
        if (const Entry* e = find({id})) base = e->logp;
        auto it = boost_overlay_.find(id);
        if (it != boost_overlay_.end()) base = std::max(base, it->second);
    }
    if (!std::isfinite(base)) {
        const Entry* unk = find({unk_id_});
        base = unk ? unk->logp : kNoProbLog10 * kLn10;
    }
    return base;
}

void smear(BiasTrie& trie, const NGramModel& model) {
    if (trie.empty()) return;
    // post-order: a node's smear is the max boosted unigram score over the
    // entity labels reachable at or below it
    std::function<double(int)> visit = [&](int node) -> double {
        double best = -std::numeric_limits<double>::infinity();
        if (!trie.label_at(node).empty()) best = model.unigram_score(trie.label_at(node));
        for (const auto& [piece, child] : trie.children(node)) {
            (void)piece;
            best = std::max(best, visit(child));
        }
        trie.set_smear(node, best);
        return best;
    };
    visit(BiasTrie::kRoot);
}

}  // namespace ctcbias
