#pragma once

#include <cstdint>
#include <filesystem>
#include <istream>
#include <ostream>
#include <stdexcept>
#include <string>
#include <vector>

namespace apl {

/// Raised for file-format and filesystem failures; the message carries the path.
class IoError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

namespace le {

// Little-endian fixed-width encoding, independent of host byte order.
template <typename U>
void put(std::ostream& os, U value) {
    static_assert(std::is_unsigned_v<U>);
    char buf[sizeof(U)];
    for (std::size_t i = 0; i < sizeof(U); ++i) {
        buf[i] = static_cast<char>((value >> (8 * i)) & 0xffu);
    }
    os.write(buf, sizeof(U));
}

template <typename U>
U get(std::istream& is) {
    static_assert(std::is_unsigned_v<U>);
    unsigned char buf[sizeof(U)];
    if (!is.read(reinterpret_cast<char*>(buf), sizeof(U))) {
        throw IoError("unexpected end of file");
    }
    U value = 0;
    for (std::size_t i = 0; i < sizeof(U); ++i) {
        value |= static_cast<U>(buf[i]) << (8 * i);
    }
    return value;
}

void put_f32(std::ostream& os, float v);
void put_f64(std::ostream& os, double v);
float get_f32(std::istream& is);
double get_f64(std::istream& is);

}  // namespace le

std::vector<char> read_file_bytes(const std::filesystem::path& path);
std::string read_text_file(const std::filesystem::path& path);
void write_text_file(const std::filesystem::path& path, const std::string& text);

/// Lowercase hex SHA-256 of a byte buffer / file.
std::string sha256_hex(const void* data, std::size_t size);
std::string sha256_file(const std::filesystem::path& path);

}  // namespace apl
