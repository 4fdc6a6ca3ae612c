#pragma once

// DRT4 tensor files: magic "DRT4", u32 version, four u32 dims (n, c, h, w),
// then n*c*h*w little-endian IEEE-754 float32 values.

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <stdexcept>
#include <string>

#include "crowd/tensor.hpp"

namespace crowd {

inline constexpr std::uint32_t kTensorFormatVersion = 1;

class FormatError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

void write_tensor(std::ostream& out, const Tensor4& tensor);
Tensor4 read_tensor(std::istream& in);

void save_tensor(const std::filesystem::path& path, const Tensor4& tensor);
Tensor4 load_tensor(const std::filesystem::path& path);

// Little-endian primitives shared with the checkpoint writer.
void write_u32(std::ostream& out, std::uint32_t v);
std::uint32_t read_u32(std::istream& in);
void write_bytes(std::ostream& out, const std::string& bytes);
std::string read_bytes(std::istream& in, std::size_t count);

}  // namespace crowd
