#include "puzzleseq/binio.hpp"

#include <bit>
#include <cstring>
#include <fstream>

namespace puzzleseq {

static_assert(std::endian::native == std::endian::little,
              "file formats assume a little-endian host");

void write_container(const std::string& path, const char magic[8],
                     const std::string& header_json,
                     const std::vector<std::uint8_t>& payload) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot write file: " + path);
    out.write(magic, 8);
    const std::uint64_t hlen = header_json.size();
    out.write((const char*)&hlen, 8);
    out.write(header_json.data(), (std::streamsize)header_json.size());
    out.write((const char*)payload.data(), (std::streamsize)payload.size());
    if (!out) throw DataError("short write: " + path);
}

Container read_container(const std::string& path, const char magic[8]) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open file: " + path);
    char got[8];
    in.read(got, 8);
    if (!in || std::memcmp(got, magic, 8) != 0) {
        throw DataError("bad magic in " + path + " (expected " + std::string(magic, 8) + ")");
    }
    std::uint64_t hlen = 0;
    in.read((char*)&hlen, 8);
    if (!in) throw DataError("truncated header in " + path);
    Container c;
    c.header_json.resize(hlen);
    in.read(c.header_json.data(), (std::streamsize)hlen);
    if (!in) throw DataError("truncated header in " + path);
    const auto data_start = in.tellg();
    in.seekg(0, std::ios::end);
    const auto end = in.tellg();
    in.seekg(data_start);
    c.payload.resize((std::size_t)(end - data_start));
    in.read((char*)c.payload.data(), end - data_start);
    if (!in) throw DataError("truncated payload in " + path);
    return c;
}

void put_f64_array(std::vector<std::uint8_t>& out, const double* data, std::size_t count) {
    const std::size_t off = out.size();
    out.resize(off + count * sizeof(double));
    std::memcpy(out.data() + off, data, count * sizeof(double));
}

void get_f64_array(const std::vector<std::uint8_t>& in, std::size_t& pos, double* data,
                   std::size_t count) {
    if (pos + count * sizeof(double) > in.size()) throw DataError("truncated float array");
    std::memcpy(data, in.data() + pos, count * sizeof(double));
    pos += count * sizeof(double);
}

}  // namespace puzzleseq
