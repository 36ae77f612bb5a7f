#include "storm/core/archive.hpp"

#include <cstring>
#include <fstream>
#include <stdexcept>

namespace storm::core {

namespace {

constexpr char kMagic[8] = {'S', 'T', 'O', 'R', 'M', 'A', 'R', 'C'};
constexpr std::uint32_t kVersion = 1;

template <typename T>
void write_le(std::ostream& os, T x) {
    unsigned char buf[sizeof(T)];
    std::memcpy(buf, &x, sizeof(T));
    os.write(reinterpret_cast<const char*>(buf), sizeof(T));
}

template <typename T>
T read_le(std::istream& is) {
    unsigned char buf[sizeof(T)];
    is.read(reinterpret_cast<char*>(buf), sizeof(T));
    if (!is) throw std::runtime_error("archive: unexpected end of file");
    T x;
    std::memcpy(&x, buf, sizeof(T));
    return x;
}

static_assert(sizeof(double) == 8 && sizeof(float) == 4);

}  // namespace

void write_u8(std::ostream& os, std::uint8_t x) { write_le(os, x); }
void write_u16(std::ostream& os, std::uint16_t x) { write_le(os, x); }
void write_u32(std::ostream& os, std::uint32_t x) { write_le(os, x); }
void write_u64(std::ostream& os, std::uint64_t x) { write_le(os, x); }
void write_f32(std::ostream& os, float x) { write_le(os, x); }
void write_f64(std::ostream& os, double x) { write_le(os, x); }

void write_str(std::ostream& os, const std::string& s) {
    if (s.size() > 0xffff)
        throw std::invalid_argument("archive: string too long");
    write_u16(os, std::uint16_t(s.size()));
    os.write(s.data(), std::streamsize(s.size()));
}

std::uint8_t read_u8(std::istream& is) { return read_le<std::uint8_t>(is); }
std::uint16_t read_u16(std::istream& is) { return read_le<std::uint16_t>(is); }
std::uint32_t read_u32(std::istream& is) { return read_le<std::uint32_t>(is); }
std::uint64_t read_u64(std::istream& is) { return read_le<std::uint64_t>(is); }
float read_f32(std::istream& is) { return read_le<float>(is); }
double read_f64(std::istream& is) { return read_le<double>(is); }

std::string read_str(std::istream& is) {
    const std::uint16_t n = read_u16(is);
    std::string s(n, '\0');
    is.read(s.data(), n);
    if (!is) throw std::runtime_error("archive: unexpected end of file");
    return s;
}

void Archive::save(const std::string& path) const {
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw std::runtime_error("archive: cannot open " + path);
    os.write(kMagic, 8);
    write_u32(os, kVersion);

    write_u32(os, std::uint32_t(meta_u64.size()));
    for (const auto& [k, v] : meta_u64) {
        write_str(os, k);
        write_u64(os, v);
    }
    write_u32(os, std::uint32_t(meta_f64.size()));
    for (const auto& [k, v] : meta_f64) {
        write_str(os, k);
        write_f64(os, v);
    }
    write_u32(os, std::uint32_t(meta_str.size()));
    for (const auto& [k, v] : meta_str) {
        write_str(os, k);
        write_str(os, v);
    }

    write_u32(os, std::uint32_t(tensors.size()));
    for (const auto& [k, m] : tensors) {
        write_str(os, k);
        write_u32(os, std::uint32_t(m.rows));
        write_u32(os, std::uint32_t(m.cols));
        os.write(reinterpret_cast<const char*>(m.data()),
                 std::streamsize(m.size() * sizeof(double)));
    }
    if (!os) throw std::runtime_error("archive: write failed for " + path);
}

Archive Archive::load(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw std::runtime_error("archive: cannot open " + path);
    char magic[8];
    is.read(magic, 8);
    if (!is || std::memcmp(magic, kMagic, 8) != 0)
        throw std::runtime_error("archive: bad magic in " + path);
    const std::uint32_t version = read_u32(is);
    if (version != kVersion)
        throw std::runtime_error("archive: unsupported version " +
                                 std::to_string(version));

    Archive a;
    for (std::uint32_t i = 0, n = read_u32(is); i < n; ++i) {
        std::string k = read_str(is);
        a.meta_u64[k] = read_u64(is);
    }
    for (std::uint32_t i = 0, n = read_u32(is); i < n; ++i) {
        std::string k = read_str(is);
        a.meta_f64[k] = read_f64(is);
    }
    for (std::uint32_t i = 0, n = read_u32(is); i < n; ++i) {
        std::string k = read_str(is);
        a.meta_str[k] = read_str(is);
    }
    for (std::uint32_t i = 0, n = read_u32(is); i < n; ++i) {
        std::string k = read_str(is);
        const std::uint32_t r = read_u32(is);
        const std::uint32_t c = read_u32(is);
        Mat m(r, c);
        is.read(reinterpret_cast<char*>(m.data()),
                std::streamsize(m.size() * sizeof(double)));
        if (!is)
            throw std::runtime_error("archive: truncated tensor " + k +
                                     " in " + path);
        a.tensors.emplace(std::move(k), std::move(m));
    }
    return a;
}

const Mat& Archive::tensor(const std::string& name) const {
    auto it = tensors.find(name);
    if (it == tensors.end())
        throw std::out_of_range("archive: missing tensor " + name);
    return it->second;
}

std::uint64_t Archive::meta(const std::string& name) const {
    auto it = meta_u64.find(name);
    if (it == meta_u64.end())
        throw std::out_of_range("archive: missing meta " + name);
    return it->second;
}

}  // namespace storm::core
