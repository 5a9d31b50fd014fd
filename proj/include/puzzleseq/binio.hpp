#pragma once

#include <cstdint>
#include <istream>
#include <ostream>
#include <string>
#include <vector>

#include "puzzleseq/errors.hpp"

namespace puzzleseq {

// LEB128 unsigned varint.
inline void put_varint(std::vector<std::uint8_t>& out, std::uint64_t v) {
    while (v >= 0x80) {
        out.push_back((std::uint8_t)(v | 0x80));
        v >>= 7;
    }
    out.push_back((std::uint8_t)v);
}

inline std::uint64_t get_varint(const std::vector<std::uint8_t>& in, std::size_t& pos) {
    std::uint64_t v = 0;
    int shift = 0;
    while (true) {
        if (pos >= in.size()) throw DataError("truncated varint");
        const std::uint8_t b = in[pos++];
        v |= (std::uint64_t)(b & 0x7f) << shift;
        if (!(b & 0x80)) return v;
        shift += 7;
        if (shift >= 64) throw DataError("varint overflow");
    }
}

// Container layout shared by codebook / checkpoint / token dataset files:
// 8-byte magic, u64 little-endian header length, JSON header bytes, payload.
void write_container(const std::string& path, const char magic[8],
                     const std::string& header_json,
                     const std::vector<std::uint8_t>& payload);

struct Container {
    std::string header_json;
    std::vector<std::uint8_t> payload;
};
Container read_container(const std::string& path, const char magic[8]);

// Raw little-endian doubles appended to / consumed from a payload buffer.
void put_f64_array(std::vector<std::uint8_t>& out, const double* data, std::size_t count);
void get_f64_array(const std::vector<std::uint8_t>& in, std::size_t& pos, double* data,
                   std::size_t count);

}  // namespace puzzleseq
