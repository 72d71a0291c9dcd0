#include "vocab.hpp"

#include <algorithm>
#include <cstdio>

namespace traceprune {

static std::string printable(uint8_t c) {
    if (c >= 0x20 && c < 0x7f) return std::string("'") + static_cast<char>(c) + "'";
    char buf[8];
    std::snprintf(buf, sizeof(buf), "0x%02x", c);
    return buf;
}

Vocab Vocab::from_corpus(std::string_view corpus) {
    if (corpus.empty()) fail(Status::InvalidArgument, "vocab: corpus is empty");
    std::array<bool, 256> seen{};
    for (char c : corpus) seen[static_cast<uint8_t>(c)] = true;
    std::vector<uint8_t> chars;
    for (int c = 0; c < 256; ++c) {
        if (seen[c]) chars.push_back(static_cast<uint8_t>(c));
    }
    return from_chars(std::move(chars));
}

Vocab Vocab::from_chars(std::vector<uint8_t> sorted_chars) {
    if (sorted_chars.empty()) fail(Status::InvalidArgument, "vocab: no characters");
    if (!std::is_sorted(sorted_chars.begin(), sorted_chars.end()) ||
        std::adjacent_find(sorted_chars.begin(), sorted_chars.end()) != sorted_chars.end()) {
        fail(Status::Format, "vocab: character list must be sorted and unique");
    }
    Vocab v;
    v.chars_ = std::move(sorted_chars);
    v.to_id_.fill(-1);
    for (size_t i = 0; i < v.chars_.size(); ++i) {
        v.to_id_[v.chars_[i]] = static_cast<int32_t>(i);
    }
    return v;
}

std::vector<int32_t> Vocab::encode(std::string_view text) const {
    std::vector<int32_t> ids;
    ids.reserve(text.size());
    for (size_t i = 0; i < text.size(); ++i) {
        const uint8_t c = static_cast<uint8_t>(text[i]);
        const int32_t id = to_id_[c];
        if (id < 0) {
            fail(Status::InvalidArgument, "encode: character " + printable(c) +
                                              " at offset " + std::to_string(i) +
                                              " is not in the vocabulary");
        }
        ids.push_back(id);
    }
    return ids;
}

std::string Vocab::decode(std::span<const int32_t> ids) const {
    std::string out;
    out.reserve(ids.size());
    for (size_t i = 0; i < ids.size(); ++i) {
        if (ids[i] < 0 || ids[i] >= size()) {
            fail(Status::InvalidArgument, "decode: id " + std::to_string(ids[i]) +
                                              " at offset " + std::to_string(i) +
                                              " outside vocabulary of " + std::to_string(size()));
        }
        out.push_back(static_cast<char>(chars_[ids[i]]));
    }
    return out;
}

}  // namespace traceprune
