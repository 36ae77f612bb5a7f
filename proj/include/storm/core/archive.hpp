#pragma once

#include <cstdint>
#include <iosfwd>
#include <map>
#include <string>

#include "storm/core/mat.hpp"

namespace storm::core {

// Little-endian primitive IO. Doubles and floats are written as their IEEE
// bit patterns; files are byte-identical across runs on one platform.
void write_u8(std::ostream& os, std::uint8_t x);
void write_u16(std::ostream& os, std::uint16_t x);
void write_u32(std::ostream& os, std::uint32_t x);
void write_u64(std::ostream& os, std::uint64_t x);
void write_f32(std::ostream& os, float x);
void write_f64(std::ostream& os, double x);
void write_str(std::ostream& os, const std::string& s);  // u16 length prefix

std::uint8_t read_u8(std::istream& is);
std::uint16_t read_u16(std::istream& is);
std::uint32_t read_u32(std::istream& is);
std::uint64_t read_u64(std::istream& is);
float read_f32(std::istream& is);
double read_f64(std::istream& is);
std::string read_str(std::istream& is);

// Versioned container of named f64 tensors plus scalar metadata. The
// checkpoint format: tensors hold parameters and optimizer state, meta holds
// step counters, config hashes and small stats.
struct Archive {
    std::map<std::string, Mat> tensors;
    std::map<std::string, double> meta_f64;
    std::map<std::string, std::uint64_t> meta_u64;
    std::map<std::string, std::string> meta_str;

    void save(const std::string& path) const;
    static Archive load(const std::string& path);

    const Mat& tensor(const std::string& name) const;
    bool has_tensor(const std::string& name) const {
        return tensors.count(name) != 0;
    }
    std::uint64_t meta(const std::string& name) const;
};

}  // namespace storm::core
