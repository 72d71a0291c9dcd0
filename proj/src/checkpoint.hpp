#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include "error.hpp"

namespace traceprune {

// Binary tensor container:
//   "TPCK" | u32 version | u32 tensor count
//   per tensor: u16 name length | name bytes | u8 dtype | u8 rank |
//               rank x u64 dims | raw little-endian payload
//   trailing metadata: u32 byte length | UTF-8 JSON
// Dtype codes: 0 = f32, 1 = f64, 2 = packed bitset (LSB-first, one bit per
// logical element, payload ceil(n/8) bytes).
struct ContainerTensor {
    std::string name;
    uint8_t dtype = 0;
    std::vector<uint64_t> dims;
    std::vector<uint8_t> bytes;

    uint64_t numel() const;
};

struct Container {
    static constexpr uint32_t kVersion = 1;

    std::vector<ContainerTensor> tensors;
    std::string meta_json;

    const ContainerTensor* find(const std::string& name) const;
};

void write_container(std::ostream& out, const Container& c);
void write_container(const std::string& path, const Container& c);

// Parses and validates the whole stream before returning; a truncated or
// malformed file raises a Format error and produces no partial object.
Container read_container(std::istream& in);
Container read_container(const std::string& path);

// Bitset payload helpers for dtype 2.
std::vector<uint8_t> pack_bits(const std::vector<uint8_t>& flags);
std::vector<uint8_t> unpack_bits(const std::vector<uint8_t>& bytes, uint64_t count);

}  // namespace traceprune
