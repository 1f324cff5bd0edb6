#pragma once

#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "ctcbias/tokenizer.hpp"
#include "ctcbias/types.hpp"

namespace ctcbias {

// Symmetric substitution rules over graphemic units, e.g. "t" <-> "tt".
struct PhoneSimilarityTable {
    // stored once per direction; loaders insert both
    std::vector<std::pair<std::string, std::string>> rules;

    static PhoneSimilarityTable parse(const std::string& text);
};

// Prefix tree over the subword-id sequences of all entity variants. A
// terminal node carries the canonical entity so alternative spellings
// surface as the true word.
class BiasTrie {
  public:
    static constexpr int kRoot = 0;

    BiasTrie() { nodes_.emplace_back(); }

    // child node if the edge exists; label is non-empty when that child
    // completes a variant.
    struct Advance {
        int node;
        std::string label;
    };
    std::optional<Advance> advance(int node, int subword_id) const;

    int insert(const std::vector<int>& piece_ids, const std::string& label);
    bool empty() const { return nodes_.size() == 1; }
    std::size_t node_count() const { return nodes_.size(); }

    const std::string& label_at(int node) const { return nodes_[node].label; }
    double smear_at(int node) const { return nodes_[node].smear; }
    void set_smear(int node, double value) { nodes_[node].smear = value; }
    const std::map<int, int>& children(int node) const { return nodes_[node].children; }

  private:
    struct Node {
        std::map<int, int> children;  // ordered: traversal is deterministic
        std::string label;            // empty = non-terminal
        double smear = 0.0;
    };
    std::vector<Node> nodes_;
};

// Alternative spellings of `word` by applying at most one substitution per
// position, breadth-first over the number of substitutions. Canonical
// spelling first, then up to max_variants distinct variants.
std::vector<std::string> g2g_expand(const std::string& word, const PhoneSimilarityTable& table,
                                    std::size_t max_variants);

struct TrieBuildConfig {
    std::size_t seg_variants = 10;
    std::size_t g2g_variants = 0;
};

BiasTrie build_trie(const EntityCatalog& catalog, const SubwordVocab& vocab,
                    const PhoneSimilarityTable& table, const TrieBuildConfig& config = {});

}  // namespace ctcbias
