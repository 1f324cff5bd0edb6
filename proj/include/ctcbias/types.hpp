#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

namespace ctcbias {

// U+2581 LOWER ONE EIGHTH BLOCK, the word-start marker on subword pieces.
inline constexpr const char* kWordStartMarker = "\xe2\x96\x81";
inline constexpr const char* kBlankPiece = "<blank>";

// Fixed subword inventory of the acoustic model. Blank is the last entry.
struct SubwordVocab {
    std::vector<std::string> pieces;
    int blank_id = -1;
    std::unordered_map<std::string, int> piece_to_id;

    int size() const { return static_cast<int>(pieces.size()); }
    const std::string& piece(int id) const { return pieces[static_cast<std::size_t>(id)]; }
    // -1 when the piece is not in the vocabulary.
    int id_of(const std::string& piece) const {
        auto it = piece_to_id.find(piece);
        return it == piece_to_id.end() ? -1 : it->second;
    }
    static bool is_word_start(const std::string& piece) {
        return piece.rfind(kWordStartMarker, 0) == 0;
    }
};

// T x V natural-log subword probabilities, one row per low-frame-rate frame.
struct EmissionMatrix {
    std::uint32_t t = 0;
    std::uint32_t v = 0;
    std::vector<float> values;  // row-major T*V

    float at(std::uint32_t frame, std::uint32_t sym) const { return values[frame * v + sym]; }
    std::span<const float> row(std::uint32_t frame) const {
        return {values.data() + static_cast<std::size_t>(frame) * v, v};
    }
};

// T_full x P linear phone posteriors at full frame rate.
struct PhonePosteriorMatrix {
    std::uint32_t t_full = 0;
    std::uint32_t p = 0;
    std::uint32_t upsample_factor = 1;
    std::vector<float> values;

    float at(std::uint32_t frame, std::uint32_t phone) const { return values[frame * p + phone]; }
    std::span<const float> row(std::uint32_t frame) const {
        return {values.data() + static_cast<std::size_t>(frame) * p, p};
    }
};

struct PhoneSet {
    std::vector<std::string> phones;
    int silence_id = -1;
    std::unordered_map<std::string, int> phone_to_id;

    int size() const { return static_cast<int>(phones.size()); }
    int id_of(const std::string& phone) const {
        auto it = phone_to_id.find(phone);
        return it == phone_to_id.end() ? -1 : it->second;
    }
};

// word -> one or more phone-id pronunciations, in file order.
struct Lexicon {
    std::map<std::string, std::vector<std::vector<int>>> entries;

    const std::vector<std::vector<int>>* prons(const std::string& word) const {
        auto it = entries.find(word);
        return it == entries.end() ? nullptr : &it->second;
    }
};

struct EntityCatalog {
    std::vector<std::string> entities;
};

// One decoded hypothesis. words is the surface output after any trie-label
// substitution; piece_ids is the subword sequence the beam actually emitted.
struct Hypothesis {
    std::vector<std::string> words;
    std::vector<int> piece_ids;
    double ctc_score = 0.0;
    // per-token (first,last) emitting frame, inclusive, low frame rate
    std::vector<std::pair<int, int>> token_frames;
    std::optional<double> rescore;
    // per-word (start,end) frames at full frame rate, -1/-1 when unknown
    std::vector<std::pair<int, int>> word_boundaries;
    bool leading_partial_word = false;  // first piece lacked the word-start marker
};

struct NBestList {
    std::string utterance_id;
    std::vector<Hypothesis> hyps;
};

}  // namespace ctcbias
