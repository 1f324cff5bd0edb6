#include "ctcbias/io.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>

#include "ctcbias/errors.hpp"

#include "textutil.hpp"

namespace ctcbias {

using textutil::lowercase;
using textutil::split_lines;
using textutil::split_ws;

namespace {

constexpr double kRowSumTolerance = 1e-4;

std::uint32_t read_u32le(const std::uint8_t* p) {
    return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
           (static_cast<std::uint32_t>(p[2]) << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
}

void append_u32le(std::vector<std::uint8_t>& out, std::uint32_t v) {
    out.push_back(static_cast<std::uint8_t>(v & 0xff));
    out.push_back(static_cast<std::uint8_t>((v >> 8) & 0xff));
    out.push_back(static_cast<std::uint8_t>((v >> 16) & 0xff));
    out.push_back(static_cast<std::uint8_t>((v >> 24) & 0xff));
}

float read_f32le(const std::uint8_t* p) {
    std::uint32_t bits = read_u32le(p);
    float f;
    std::memcpy(&f, &bits, sizeof(f));
    return f;
}

void append_f32le(std::vector<std::uint8_t>& out, float f) {
    std::uint32_t bits;
    std::memcpy(&bits, &f, sizeof(bits));
    append_u32le(out, bits);
}

struct Header {
    std::uint32_t a = 0, b = 0, c = 0;
    std::size_t payload_off = 0;
};

// Shared CTCE/CTCP header walk: magic, version, then `extra_fields` u32s.
Header parse_header(const std::vector<std::uint8_t>& bytes, const char* magic, int extra_fields) {
    if (bytes.size() < 4 || std::memcmp(bytes.data(), magic, 4) != 0)
        throw LoadError(LoadError::Code::BadMagic,
                        std::string("expected magic \"") + magic + "\"");
    std::size_t need = 4 + 4 * (1 + static_cast<std::size_t>(extra_fields));
    if (bytes.size() < need)
        throw LoadError(LoadError::Code::Truncated, "header truncated");
    std::uint32_t version = read_u32le(bytes.data() + 4);
    if (version != 1)
        throw LoadError(LoadError::Code::BadVersion,
                        "unsupported version " + std::to_string(version));
    Header h;
    h.a = read_u32le(bytes.data() + 8);
    h.b = read_u32le(bytes.data() + 12);
    if (extra_fields >= 3) h.c = read_u32le(bytes.data() + 16);
    h.payload_off = need;
    return h;
}

std::vector<float> parse_payload(const std::vector<std::uint8_t>& bytes, std::size_t off,
                                 std::uint64_t count) {
    std::uint64_t have = (bytes.size() - off) / 4;
    if (bytes.size() < off + count * 4)
        throw LoadError(LoadError::Code::Truncated,
                        "payload holds " + std::to_string(have) + " floats, header declares " +
                            std::to_string(count));
    if (bytes.size() != off + count * 4)
        throw LoadError(LoadError::Code::SizeMismatch,
                        "payload holds " + std::to_string(have) + " floats plus trailing bytes, "
                            "header declares " + std::to_string(count));
    std::vector<float> values(count);
    for (std::uint64_t i = 0; i < count; ++i) {
        float f = read_f32le(bytes.data() + off + i * 4);
        if (!std::isfinite(f))
            throw LoadError(LoadError::Code::BadValue,
                            "non-finite value at index " + std::to_string(i));
        values[i] = f;
    }
    return values;
}

}  // namespace

EmissionMatrix load_emissions(const std::vector<std::uint8_t>& bytes) {
    Header h = parse_header(bytes, "CTCE", 2);
    EmissionMatrix m;
    m.t = h.a;
    m.v = h.b;
    if (m.v == 0)
        throw LoadError(LoadError::Code::BadValue, "vocab size must be positive");
    m.values = parse_payload(bytes, h.payload_off,
                             static_cast<std::uint64_t>(m.t) * m.v);
    for (std::uint32_t t = 0; t < m.t; ++t) {
        double sum = 0.0;
        for (std::uint32_t v = 0; v < m.v; ++v) sum += std::exp(static_cast<double>(m.at(t, v)));
        if (std::abs(sum - 1.0) > kRowSumTolerance)
            throw LoadError(LoadError::Code::RowNormalization,
                            "frame " + std::to_string(t) + " exp-sums to " + std::to_string(sum));
    }
    return m;
}

std::vector<std::uint8_t> serialize_emissions(const EmissionMatrix& m) {
    std::vector<std::uint8_t> out;
    out.reserve(16 + m.values.size() * 4);
    out.insert(out.end(), {'C', 'T', 'C', 'E'});
    append_u32le(out, 1);
    append_u32le(out, m.t);
    append_u32le(out, m.v);
    for (float f : m.values) append_f32le(out, f);
    return out;
}

PhonePosteriorMatrix load_phone_posteriors(const std::vector<std::uint8_t>& bytes) {
    Header h = parse_header(bytes, "CTCP", 3);
    PhonePosteriorMatrix m;
    m.t_full = h.a;
    m.p = h.b;
    m.upsample_factor = h.c;
    if (m.p == 0)
        throw LoadError(LoadError::Code::BadValue, "phone-set size must be positive");
    if (m.upsample_factor == 0)
        throw LoadError(LoadError::Code::BadValue, "upsample factor must be positive");
    m.values = parse_payload(bytes, h.payload_off,
                             static_cast<std::uint64_t>(m.t_full) * m.p);
    for (std::uint32_t t = 0; t < m.t_full; ++t) {
        double sum = 0.0;
        for (std::uint32_t p = 0; p < m.p; ++p) sum += static_cast<double>(m.at(t, p));
        if (std::abs(sum - 1.0) > kRowSumTolerance)
            throw LoadError(LoadError::Code::RowNormalization,
                            "frame " + std::to_string(t) + " sums to " + std::to_string(sum));
    }
    return m;
}

std::vector<std::uint8_t> serialize_phone_posteriors(const PhonePosteriorMatrix& m) {
    std::vector<std::uint8_t> out;
    out.reserve(20 + m.values.size() * 4);
    out.insert(out.end(), {'C', 'T', 'C', 'P'});
    append_u32le(out, 1);
    append_u32le(out, m.t_full);
    append_u32le(out, m.p);
    append_u32le(out, m.upsample_factor);
    for (float f : m.values) append_f32le(out, f);
    return out;
}

SubwordVocab load_vocab(const std::string& text) {
    SubwordVocab vocab;
    std::size_t n = 0;
    for (const auto& line : split_lines(text)) {
        ++n;
        if (line.empty()) throw ParseError("empty vocab piece", n);
        if (vocab.piece_to_id.count(line)) throw ParseError("duplicate piece \"" + line + "\"", n);
        vocab.piece_to_id[line] = static_cast<int>(vocab.pieces.size());
        vocab.pieces.push_back(line);
    }
    if (vocab.pieces.empty()) throw ParseError("empty vocab");
    if (vocab.pieces.back() != kBlankPiece)
        throw ParseError("final vocab line must be \"" + std::string(kBlankPiece) + "\"");
    vocab.blank_id = static_cast<int>(vocab.pieces.size()) - 1;
    return vocab;
}

PhoneSet load_phone_set(const std::string& text) {
    PhoneSet ps;
    std::size_t n = 0;
    for (const auto& line : split_lines(text)) {
        ++n;
        if (line.empty()) continue;
        if (ps.phone_to_id.count(line)) throw ParseError("duplicate phone \"" + line + "\"", n);
        ps.phone_to_id[line] = static_cast<int>(ps.phones.size());
        ps.phones.push_back(line);
    }
    ps.silence_id = ps.id_of("sil");
    if (ps.silence_id < 0) throw ParseError("phone set has no \"sil\" entry");
    return ps;
}

Lexicon load_lexicon(const std::string& text, const PhoneSet& phones) {
    Lexicon lex;
    std::size_t n = 0;
    for (const auto& line : split_lines(text)) {
        ++n;
        auto toks = split_ws(line);
        if (toks.empty()) continue;
        if (toks.size() < 2) throw ParseError("lexicon entry without phones", n);
        std::string word = lowercase(toks[0]);
        std::vector<int> pron;
        pron.reserve(toks.size() - 1);
        for (std::size_t i = 1; i < toks.size(); ++i) {
            int id = phones.id_of(toks[i]);
            if (id < 0) throw ParseError("unknown phone \"" + toks[i] + "\"", n);
            pron.push_back(id);
        }
        lex.entries[word].push_back(std::move(pron));
    }
    return lex;
}

EntityCatalog load_catalog(const std::string& text) {
    EntityCatalog cat;
    std::size_t n = 0;
    std::unordered_map<std::string, bool> seen;
    for (const auto& line : split_lines(text)) {
        ++n;
        auto toks = split_ws(line);
        if (toks.empty()) continue;
        std::string entity;
        for (std::size_t i = 0; i < toks.size(); ++i) {
            if (i) entity += ' ';
            entity += lowercase(toks[i]);
        }
        if (seen.count(entity)) throw ParseError("duplicate entity \"" + entity + "\"", n);
        seen[entity] = true;
        cat.entities.push_back(entity);
    }
    return cat;
}

std::vector<std::uint8_t> read_file_bytes(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw LoadError(LoadError::Code::OpenFailed, "cannot open " + path);
    return {std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>()};
}

std::string read_file_text(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw LoadError(LoadError::Code::OpenFailed, "cannot open " + path);
    return {std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>()};
}

void write_file_bytes(const std::string& path, const std::vector<std::uint8_t>& bytes) {
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw LoadError(LoadError::Code::OpenFailed, "cannot write " + path);
    f.write(reinterpret_cast<const char*>(bytes.data()),
            static_cast<std::streamsize>(bytes.size()));
}

void write_file_text(const std::string& path, const std::string& text) {
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw LoadError(LoadError::Code::OpenFailed, "cannot write " + path);
    f.write(text.data(), static_cast<std::streamsize>(text.size()));
}

EmissionMatrix load_emissions_file(const std::string& path) {
    return load_emissions(read_file_bytes(path));
}

void save_emissions_file(const std::string& path, const EmissionMatrix& m) {
    write_file_bytes(path, serialize_emissions(m));
}

PhonePosteriorMatrix load_phone_posteriors_file(const std::string& path) {
    return load_phone_posteriors(read_file_bytes(path));
}

void save_phone_posteriors_file(const std::string& path, const PhonePosteriorMatrix& m) {
    write_file_bytes(path, serialize_phone_posteriors(m));
}

SubwordVocab load_vocab_file(const std::string& path) { return load_vocab(read_file_text(path)); }

PhoneSet load_phone_set_file(const std::string& path) {
    return load_phone_set(read_file_text(path));
}

Lexicon load_lexicon_file(const std::string& path, const PhoneSet& phones) {
    return load_lexicon(read_file_text(path), phones);
}

EntityCatalog load_catalog_file(const std::string& path) {
    return load_catalog(read_file_text(path));
}

}  // namespace ctcbias
