#pragma once

#include <stdexcept>
#include <string>

namespace ctcbias {

// Binary container problems. The code distinguishes the failure classes the
// loaders are contracted to tell apart.
class LoadError : public std::runtime_error {
  public:
    enum class Code {
        OpenFailed,
        BadMagic,
        BadVersion,
        Truncated,
        SizeMismatch,
        RowNormalization,
        BadValue,
    };

    LoadError(Code code, const std::string& msg) : std::runtime_error(msg), code_(code) {}
    Code code() const { return code_; }

  private:
    Code code_;
};

// Line-oriented text formats (lexicon, ARPA, vocab, ...). line == 0 means
// the error is not tied to a specific line.
class ParseError : public std::runtime_error {
  public:
    ParseError(const std::string& msg, std::size_t line = 0)
        : std::runtime_error(line ? msg + " (line " + std::to_string(line) + ")" : msg),
          line_(line) {}
    std::size_t line() const { return line_; }

  private:
    std::size_t line_;
};

// Contract violations on in-memory inputs (unsegmentable word, dimension
// mismatch, infeasible labels ...).
class InvalidArgument : public std::runtime_error {
  public:
    explicit InvalidArgument(const std::string& msg) : std::runtime_error(msg) {}
};

}  // namespace ctcbias
