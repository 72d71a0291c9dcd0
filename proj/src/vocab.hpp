#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "error.hpp"

namespace traceprune {

// Character-level vocabulary: the distinct bytes of the corpus, sorted by
// code point so the id assignment is deterministic. Text is treated as a
// byte sequence; multi-byte UTF-8 characters tokenize as their bytes.
class Vocab {
  public:
    Vocab() = default;

    static Vocab from_corpus(std::string_view corpus);
    static Vocab from_chars(std::vector<uint8_t> sorted_chars);

    int32_t size() const { return static_cast<int32_t>(chars_.size()); }
    const std::vector<uint8_t>& chars() const { return chars_; }

    bool contains(uint8_t c) const { return to_id_[c] >= 0; }

    std::vector<int32_t> encode(std::string_view text) const;
    std::string decode(std::span<const int32_t> ids) const;

  private:
    std::vector<uint8_t> chars_;
    std::array<int32_t, 256> to_id_{};
};

}  // namespace traceprune
