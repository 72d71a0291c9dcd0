#include "checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

static_assert(std::endian::native == std::endian::little,
              "container payloads are written as raw little-endian words");

namespace traceprune {

static constexpr char kMagic[4] = {'T', 'P', 'C', 'K'};

uint64_t ContainerTensor::numel() const {
    uint64_t n = 1;
    for (uint64_t d : dims) n *= d;
    return n;
}

static uint64_t payload_size(uint8_t dtype, uint64_t numel) {
    switch (dtype) {
        case 0: return numel * 4;
        case 1: return numel * 8;
        case 2: return (numel + 7) / 8;
        default:
            fail(Status::Format, "container: unknown dtype code " + std::to_string(dtype));
    }
}

const ContainerTensor* Container::find(const std::string& name) const {
    for (const auto& t : tensors) {
        if (t.name == name) return &t;
    }
    return nullptr;
}

// ----------------------------- writing -----------------------------

template <typename T>
static void put(std::ostream& out, T v) {
    out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

void write_container(std::ostream& out, const Container& c) {
    out.write(kMagic, 4);
    put<uint32_t>(out, Container::kVersion);
    put<uint32_t>(out, static_cast<uint32_t>(c.tensors.size()));
    for (const ContainerTensor& t : c.tensors) {
        if (t.name.size() > 0xffff) fail(Status::InvalidArgument, "container: name too long");
        if (t.bytes.size() != payload_size(t.dtype, t.numel())) {
            fail(Status::InvalidArgument,
                 "container: payload size mismatch for tensor " + t.name);
        }
        put<uint16_t>(out, static_cast<uint16_t>(t.name.size()));
        out.write(t.name.data(), static_cast<std::streamsize>(t.name.size()));
        put<uint8_t>(out, t.dtype);
        put<uint8_t>(out, static_cast<uint8_t>(t.dims.size()));
        for (uint64_t d : t.dims) put<uint64_t>(out, d);
        out.write(reinterpret_cast<const char*>(t.bytes.data()),
                  static_cast<std::streamsize>(t.bytes.size()));
    }
    put<uint32_t>(out, static_cast<uint32_t>(c.meta_json.size()));
    out.write(c.meta_json.data(), static_cast<std::streamsize>(c.meta_json.size()));
    if (!out) fail(Status::Io, "container: write failed");
}

void write_container(const std::string& path, const Container& c) {
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) fail(Status::Io, "container: cannot open " + path + " for writing");
    write_container(f, c);
    f.flush();
    if (!f) fail(Status::Io, "container: write failed for " + path);
}

// ----------------------------- reading -----------------------------

template <typename T>
static T get(std::istream& in, const char* what) {
    T v;
    in.read(reinterpret_cast<char*>(&v), sizeof(T));
    if (!in) fail(Status::Format, std::string("container: truncated while reading ") + what);
    return v;
}

Container read_container(std::istream& in) {
    char magic[4];
    in.read(magic, 4);
    if (!in || std::memcmp(magic, kMagic, 4) != 0) {
        fail(Status::Format, "container: bad magic bytes (not a TPCK file)");
    }
    const uint32_t version = get<uint32_t>(in, "version");
    if (version != Container::kVersion) {
        fail(Status::Format, "container: unsupported version " + std::to_string(version));
    }
    const uint32_t count = get<uint32_t>(in, "tensor count");
    Container c;
    c.tensors.reserve(count);
    for (uint32_t i = 0; i < count; ++i) {
        ContainerTensor t;
        const uint16_t name_len = get<uint16_t>(in, "name length");
        t.name.resize(name_len);
        in.read(t.name.data(), name_len);
        if (!in) fail(Status::Format, "container: truncated tensor name");
        t.dtype = get<uint8_t>(in, "dtype");
        const uint8_t rank = get<uint8_t>(in, "rank");
        t.dims.resize(rank);
        for (uint8_t d = 0; d < rank; ++d) t.dims[d] = get<uint64_t>(in, "dims");
        const uint64_t bytes = payload_size(t.dtype, t.numel());
        if (bytes > (1ull << 36)) fail(Status::Format, "container: implausible tensor size");
        t.bytes.resize(bytes);
        in.read(reinterpret_cast<char*>(t.bytes.data()), static_cast<std::streamsize>(bytes));
        if (!in) fail(Status::Format, "container: truncated payload of tensor " + t.name);
        c.tensors.push_back(std::move(t));
    }
    const uint32_t meta_len = get<uint32_t>(in, "metadata length");
    c.meta_json.resize(meta_len);
    in.read(c.meta_json.data(), meta_len);
    if (!in) fail(Status::Format, "container: truncated metadata block");
    return c;
}

Container read_container(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) fail(Status::Io, "container: cannot open " + path);
    return read_container(f);
}

// ----------------------------- bitsets -----------------------------

std::vector<uint8_t> pack_bits(const std::vector<uint8_t>& flags) {
    std::vector<uint8_t> bytes((flags.size() + 7) / 8, 0);
    for (size_t i = 0; i < flags.size(); ++i) {
        if (flags[i]) bytes[i >> 3] |= static_cast<uint8_t>(1u << (i & 7));
    }
    return bytes;
}

std::vector<uint8_t> unpack_bits(const std::vector<uint8_t>& bytes, uint64_t count) {
    if (bytes.size() != (count + 7) / 8) {
        fail(Status::Format, "container: bitset byte count does not match element count");
    }
    std::vector<uint8_t> flags(count);
    for (uint64_t i = 0; i < count; ++i) {
        flags[i] = (bytes[i >> 3] >> (i & 7)) & 1u;
    }
    return flags;
}

}  // namespace traceprune
