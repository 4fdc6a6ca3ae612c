#include "crowd/serialize.hpp"

#include <array>
#include <bit>
#include <cstring>
#include <fstream>
#include <istream>
#include <limits>
#include <ostream>

namespace crowd {

namespace {

constexpr std::array<char, 4> kMagic{'D', 'R', 'T', '4'};

void require_stream(std::istream& in, const char* what) {
    if (!in) {
        throw FormatError(std::string("DRT4: truncated input while reading ") + what);
    }
}

}  // namespace

void write_u32(std::ostream& out, std::uint32_t v) {
    const std::array<char, 4> b{static_cast<char>(v & 0xFFu), static_cast<char>((v >> 8) & 0xFFu),
                                static_cast<char>((v >> 16) & 0xFFu),
                                static_cast<char>((v >> 24) & 0xFFu)};
    out.write(b.data(), b.size());
}

std::uint32_t read_u32(std::istream& in) {
    std::array<unsigned char, 4> b{};
    in.read(reinterpret_cast<char*>(b.data()), b.size());
    require_stream(in, "u32");
    return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
           (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
}

void write_bytes(std::ostream& out, const std::string& bytes) {
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

std::string read_bytes(std::istream& in, std::size_t count) {
    std::string s(count, '\0');
    in.read(s.data(), static_cast<std::streamsize>(count));
    require_stream(in, "byte block");
    return s;
}

void write_tensor(std::ostream& out, const Tensor4& tensor) {
    const Shape4& s = tensor.shape();
    constexpr auto kMax = std::numeric_limits<std::uint32_t>::max();
    if (s.n > kMax || s.c > kMax || s.h > kMax || s.w > kMax) {
        throw FormatError("DRT4: dimension exceeds u32 range in " + s.str());
    }
    out.write(kMagic.data(), kMagic.size());
    write_u32(out, kTensorFormatVersion);
    write_u32(out, static_cast<std::uint32_t>(s.n));
    write_u32(out, static_cast<std::uint32_t>(s.c));
    write_u32(out, static_cast<std::uint32_t>(s.h));
    write_u32(out, static_cast<std::uint32_t>(s.w));
    for (float v : tensor.values()) {
        write_u32(out, std::bit_cast<std::uint32_t>(v));
    }
    if (!out) {
        throw FormatError("DRT4: write failed");
    }
}

Tensor4 read_tensor(std::istream& in) {
    std::array<char, 4> magic{};
    in.read(magic.data(), magic.size());
    require_stream(in, "magic");
    if (magic != kMagic) {
        throw FormatError("DRT4: bad magic");
    }
    const std::uint32_t version = read_u32(in);
    if (version != kTensorFormatVersion) {
        throw FormatError("DRT4: unsupported version " + std::to_string(version));
    }
    Shape4 s;
    s.n = read_u32(in);
    s.c = read_u32(in);
    s.h = read_u32(in);
    s.w = read_u32(in);
    Tensor4 t(s);
    for (float& v : t.values()) {
        v = std::bit_cast<float>(read_u32(in));
    }
    return t;
}

void save_tensor(const std::filesystem::path& path, const Tensor4& tensor) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) {
        throw FormatError("cannot open " + path.string() + " for writing");
    }
    write_tensor(out, tensor);
}

Tensor4 load_tensor(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw FormatError("cannot open " + path.string());
    }
    return read_tensor(in);
}

}  // namespace crowd
