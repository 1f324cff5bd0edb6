#include "ctcbias/tokenizer.hpp"

#include <algorithm>
#include <queue>
#include <set>

#include "ctcbias/errors.hpp"

namespace ctcbias {

namespace {

std::string marked_form(const std::string& word) { return std::string(kWordStartMarker) + word; }

std::size_t max_piece_len(const SubwordVocab& vocab) {
    std::size_t m = 0;
    for (const auto& p : vocab.pieces) m = std::max(m, p.size());
    return m;
}

// (piece id, byte length) of every non-blank vocab piece matching at `pos`,
// ascending by id so DFS emission order is lexicographic.
std::vector<std::pair<int, std::size_t>> matches_at(const std::string& marked, std::size_t pos,
                                                    const SubwordVocab& vocab,
                                                    std::size_t maxlen) {
    std::vector<std::pair<int, std::size_t>> out;
    std::size_t limit = std::min(maxlen, marked.size() - pos);
    for (std::size_t len = 1; len <= limit; ++len) {
        int id = vocab.id_of(marked.substr(pos, len));
        if (id >= 0 && id != vocab.blank_id) out.emplace_back(id, len);
    }
    std::sort(out.begin(), out.end());
    return out;
}

std::vector<std::string> split_words(const std::string& phrase) {
    std::vector<std::string> words;
    std::string cur;
    for (char ch : phrase) {
        if (ch == ' ') {
            if (!cur.empty()) words.push_back(cur);
            cur.clear();
        } else {
            cur.push_back(ch);
        }
    }
    if (!cur.empty()) words.push_back(cur);
    return words;
}

}  // namespace

Segmentation segment_greedy(const std::string& word, const SubwordVocab& vocab) {
    if (word.empty()) throw InvalidArgument("cannot segment empty word");
    std::string marked = marked_form(word);
    std::size_t maxlen = max_piece_len(vocab);
    Segmentation seg;
    seg.word = word;
    std::size_t pos = 0;
    while (pos < marked.size()) {
        std::size_t limit = std::min(maxlen, marked.size() - pos);
        int best_id = -1;
        std::size_t best_len = 0;
        for (std::size_t len = limit; len >= 1; --len) {
            int id = vocab.id_of(marked.substr(pos, len));
            if (id >= 0 && id != vocab.blank_id) {
                best_id = id;
                best_len = len;
                break;
            }
        }
        if (best_id < 0)
            throw InvalidArgument("unsegmentable word \"" + word + "\" at byte " +
                                  std::to_string(pos));
        seg.piece_ids.push_back(best_id);
        pos += best_len;
    }
    return seg;
}

std::vector<Segmentation> enumerate_segmentations(const std::string& word,
                                                  const SubwordVocab& vocab,
                                                  std::size_t max_variants) {
    if (max_variants == 0) throw InvalidArgument("max_variants must be >= 1");
    if (word.empty()) throw InvalidArgument("cannot segment empty word");
    std::string marked = marked_form(word);
    std::size_t n = marked.size();
    std::size_t maxlen = max_piece_len(vocab);

    std::vector<std::vector<std::pair<int, std::size_t>>> match(n);
    for (std::size_t pos = 0; pos < n; ++pos) match[pos] = matches_at(marked, pos, vocab, maxlen);

    // feasible[pos][c]: the suffix from pos splits into exactly c pieces.
    std::vector<std::vector<char>> feasible(n + 1, std::vector<char>(n + 1, 0));
    feasible[n][0] = 1;
    for (std::size_t pos = n; pos-- > 0;) {
        for (std::size_t c = 1; c <= n - pos; ++c) {
            for (const auto& [id, len] : match[pos]) {
                if (feasible[pos + len][c - 1]) {
                    feasible[pos][c] = 1;
                    break;
                }
            }
        }
    }

    bool any = false;
    for (std::size_t c = 1; c <= n; ++c) any = any || feasible[0][c];
    if (!any) throw InvalidArgument("unsegmentable word \"" + word + "\"");

    // Emit in (piece count, lexicographic id) order: per count class, DFS in
    // ascending id order pruned by the feasibility table.
    std::vector<Segmentation> out;
    std::vector<int> path;
    auto dfs = [&](auto&& self, std::size_t pos, std::size_t remaining) -> void {
        if (out.size() >= max_variants) return;
        if (remaining == 0) {
            if (pos == n) out.push_back(Segmentation{word, path});
            return;
        }
        for (const auto& [id, len] : match[pos]) {
            if (!feasible[pos + len][remaining - 1]) continue;
            path.push_back(id);
            self(self, pos + len, remaining - 1);
            path.pop_back();
            if (out.size() >= max_variants) return;
        }
    };
    for (std::size_t c = 1; c <= n && out.size() < max_variants; ++c) {
        if (feasible[0][c]) dfs(dfs, 0, c);
    }

    Segmentation greedy = segment_greedy(word, vocab);
    bool has_greedy = std::any_of(out.begin(), out.end(), [&](const Segmentation& s) {
        return s.piece_ids == greedy.piece_ids;
    });
    if (!has_greedy) out.back() = greedy;
    return out;
}

Segmentation segment_phrase_greedy(const std::string& phrase, const SubwordVocab& vocab) {
    auto words = split_words(phrase);
    if (words.empty()) throw InvalidArgument("cannot segment empty phrase");
    Segmentation seg;
    seg.word = phrase;
    for (const auto& w : words) {
        Segmentation s = segment_greedy(w, vocab);
        seg.piece_ids.insert(seg.piece_ids.end(), s.piece_ids.begin(), s.piece_ids.end());
    }
    return seg;
}

std::vector<Segmentation> enumerate_phrase_segmentations(const std::string& phrase,
                                                         const SubwordVocab& vocab,
                                                         std::size_t max_variants) {
    auto words = split_words(phrase);
    if (words.empty()) throw InvalidArgument("cannot segment empty phrase");
    if (words.size() == 1) return enumerate_segmentations(words[0], vocab, max_variants);

    std::vector<std::vector<Segmentation>> per_word;
    per_word.reserve(words.size());
    for (const auto& w : words) per_word.push_back(enumerate_segmentations(w, vocab, max_variants));

    // k-best product of the per-word lists, ordered by total piece count
    // then lexicographic concatenated ids.
    struct Item {
        std::size_t count;
        std::vector<int> ids;
        std::vector<std::size_t> choice;
        bool operator>(const Item& other) const {
            if (count != other.count) return count > other.count;
            return ids > other.ids;
        }
    };
    auto make_item = [&](const std::vector<std::size_t>& choice) {
        Item it;
        it.choice = choice;
        it.count = 0;
        for (std::size_t w = 0; w < choice.size(); ++w) {
            const auto& ids = per_word[w][choice[w]].piece_ids;
            it.count += ids.size();
            it.ids.insert(it.ids.end(), ids.begin(), ids.end());
        }
        return it;
    };

    std::priority_queue<Item, std::vector<Item>, std::greater<>> queue;
    std::set<std::vector<std::size_t>> seen;
    std::vector<std::size_t> first(words.size(), 0);
    queue.push(make_item(first));
    seen.insert(first);

    std::vector<Segmentation> out;
    while (!queue.empty() && out.size() < max_variants) {
        Item it = queue.top();
        queue.pop();
        out.push_back(Segmentation{phrase, it.ids});
        for (std::size_t w = 0; w < words.size(); ++w) {
            auto next = it.choice;
            next[w]++;
            if (next[w] >= per_word[w].size() || seen.count(next)) continue;
            seen.insert(next);
            queue.push(make_item(next));
        }
    }

    Segmentation greedy = segment_phrase_greedy(phrase, vocab);
    bool has_greedy = std::any_of(out.begin(), out.end(), [&](const Segmentation& s) {
        return s.piece_ids == greedy.piece_ids;
    });
    if (!has_greedy) out.back() = greedy;
    return out;
}

Detokenized detokenize(const std::vector<int>& piece_ids, const SubwordVocab& vocab) {
    Detokenized result;
    std::string cur;
    bool in_word = false;
    for (std::size_t i = 0; i < piece_ids.size(); ++i) {
        int id = piece_ids[i];
        if (id == vocab.blank_id) throw InvalidArgument("blank id in detokenize input");
        const std::string& piece = vocab.piece(id);
        if (SubwordVocab::is_word_start(piece)) {
            if (in_word) result.words.push_back(cur);
            cur = piece.substr(std::string(kWordStartMarker).size());
            in_word = true;
        } else {
            if (!in_word) {
                result.leading_partial = true;
                in_word = true;
            }
            cur += piece;
        }
    }
    if (in_word) result.words.push_back(cur);
    return result;
}

}  // namespace ctcbias
