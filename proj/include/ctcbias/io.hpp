#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "ctcbias/types.hpp"

namespace ctcbias {

// CTCE container: "CTCE" | u32 version=1 | u32 T | u32 V | T*V f32 LE,
// row-major natural-log probabilities. Rows must exp-sum to 1 within 1e-4.
EmissionMatrix load_emissions(const std::vector<std::uint8_t>& bytes);
std::vector<std::uint8_t> serialize_emissions(const EmissionMatrix& m);
EmissionMatrix load_emissions_file(const std::string& path);
void save_emissions_file(const std::string& path, const EmissionMatrix& m);

// CTCP container: "CTCP" | u32 version=1 | u32 T_full | u32 P |
// u32 upsample_factor | T_full*P f32 LE linear probabilities.
PhonePosteriorMatrix load_phone_posteriors(const std::vector<std::uint8_t>& bytes);
std::vector<std::uint8_t> serialize_phone_posteriors(const PhonePosteriorMatrix& m);
PhonePosteriorMatrix load_phone_posteriors_file(const std::string& path);
void save_phone_posteriors_file(const std::string& path, const PhonePosteriorMatrix& m);

// One piece per line, line index = id, final line "<blank>".
SubwordVocab load_vocab(const std::string& text);
SubwordVocab load_vocab_file(const std::string& path);

// One phone symbol per line; the silence symbol is "sil".
PhoneSet load_phone_set(const std::string& text);
PhoneSet load_phone_set_file(const std::string& path);

// Lines "word ph1 ph2 ...". Repeated words accumulate pronunciations.
Lexicon load_lexicon(const std::string& text, const PhoneSet& phones);
Lexicon load_lexicon_file(const std::string& path, const PhoneSet& phones);

// One entity per line; duplicates rejected.
EntityCatalog load_catalog(const std::string& text);
EntityCatalog load_catalog_file(const std::string& path);

std::vector<std::uint8_t> read_file_bytes(const std::string& path);
std::string read_file_text(const std::string& path);
void write_file_bytes(const std::string& path, const std::vector<std::uint8_t>& bytes);
void write_file_text(const std::string& path, const std::string& text);

}  // namespace ctcbias
