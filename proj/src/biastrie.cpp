#include "ctcbias/biastrie.hpp"

#include <deque>
#include <set>
#include <sstream>

#include "ctcbias/errors.hpp"

namespace ctcbias {

PhoneSimilarityTable PhoneSimilarityTable::parse(const std::string& text) {
    PhoneSimilarityTable table;
    std::istringstream is(text);
    std::string line;
    std::size_t n = 0;
    std::set<std::pair<std::string, std::string>> seen;
    while (std::getline(is, line)) {
        ++n;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        std::istringstream ls(line);
        std::string a, b, extra;
        if (!(ls >> a)) continue;
        if (!(ls >> b) || (ls >> extra))
            throw ParseError("similarity rule needs exactly two units", n);
        if (a == b) throw ParseError("identity rule \"" + a + "\"", n);
        // symmetric: store both directions once
        for (auto& dir : {std::make_pair(a, b), std::make_pair(b, a)}) {
            if (seen.insert(dir).second) table.rules.push_back(dir);
        }
    }
    return table;
}

std::optional<BiasTrie::Advance> BiasTrie::advance(int node, int subword_id) const {
    const auto& children = nodes_[static_cast<std::size_t>(node)].children;
    auto it = children.find(subword_id);
    if (it == children.end()) return std::nullopt;
    return Advance{it->second, nodes_[static_cast<std::size_t>(it->second)].label};
}

int BiasTrie::insert(const std::vector<int>& piece_ids, const std::string& label) {
    int node = kRoot;
    for (int id : piece_ids) {
        auto it = nodes_[static_cast<std::size_t>(node)].children.find(id);
        if (it == nodes_[static_cast<std::size_t>(node)].children.end()) {
            int next = static_cast<int>(nodes_.size());
            nodes_.emplace_back();  // may reallocate; index into nodes_ afterwards
            nodes_[static_cast<std::size_t>(node)].children[id] = next;
            node = next;
        } else {
            node = it->second;
        }
    }
    if (nodes_[static_cast<std::size_t>(node)].label.empty())
        nodes_[static_cast<std::size_t>(node)].label = label;
    return node;
}

std::vector<std::string> g2g_expand(const std::string& word, const PhoneSimilarityTable& table,
                                    std::size_t max_variants) {
    std::vector<std::string> out{word};
    if (max_variants == 0 || table.rules.empty()) return out;

    std::set<std::string> seen{word};
    // queue items: (spelling, next position eligible for substitution);
    // positions advance left to right so each position substitutes at most
    // once and BFS order equals the substitution count.
    std::deque<std::pair<std::string, std::size_t>> queue;
    queue.emplace_back(word, 0);
    while (!queue.empty() && out.size() < max_variants + 1) {
        auto [cur, from] = queue.front();
        queue.pop_front();
        for (std::size_t pos = from; pos < cur.size(); ++pos) {
            for (const auto& [lhs, rhs] : table.rules) {
                if (cur.compare(pos, lhs.size(), lhs) != 0) continue;
                std::string variant = cur.substr(0, pos) + rhs + cur.substr(pos + lhs.size());
                if (!seen.insert(variant).second) continue;
                out.push_back(variant);
                if (out.size() >= max_variants + 1) return out;
                queue.emplace_back(variant, pos + rhs.size());
            }
        }
    }
    return out;
}

BiasTrie build_trie(const EntityCatalog& catalog, const SubwordVocab& vocab,
                    const PhoneSimilarityTable& table, const TrieBuildConfig& config) {
    BiasTrie trie;
    std::set<std::vector<int>> inserted;

    // Canonical spellings first so a variant path colliding with another
    // entity's canonical path never steals its label.
    std::vector<std::vector<std::vector<int>>> variant_paths(catalog.entities.size());
    for (std::size_t e = 0; e < catalog.entities.size(); ++e) {
        const std::string& entity = catalog.entities[e];
        std::vector<std::string> spellings;
        try {
            spellings = g2g_expand(entity, table, config.g2g_variants);
        } catch (const InvalidArgument&) {
            throw InvalidArgument("cannot expand entity \"" + entity + "\"");
        }
        for (std::size_t s = 0; s < spellings.size(); ++s) {
            std::vector<Segmentation> segs;
            try {
                segs = enumerate_phrase_segmentations(spellings[s], vocab, config.seg_variants);
            } catch (const InvalidArgument&) {
                if (s == 0)
                    throw InvalidArgument("unsegmentable entity \"" + entity + "\"");
                continue;  // a G2G spelling may fall outside the vocab
            }
            for (const auto& seg : segs) {
                if (s == 0 && inserted.insert(seg.piece_ids).second)
                    trie.insert(seg.piece_ids, entity);
                else if (s != 0)
                    variant_paths[e].push_back(seg.piece_ids);
            }
        }
    }
    for (std::size_t e = 0; e < catalog.entities.size(); ++e) {
        for (const auto& path : variant_paths[e]) {
            if (inserted.insert(path).second) trie.insert(path, catalog.entities[e]);
        }
    }
    return trie;
}

}  // namespace ctcbias
