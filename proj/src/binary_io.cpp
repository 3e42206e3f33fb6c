#include "apl/binary_io.hpp"

#include <openssl/evp.h>

#include <bit>
#include <fstream>
#include <iomanip>
#include <memory>
#include <sstream>

namespace apl {
namespace le {

void put_f32(std::ostream& os, float v) { put(os, std::bit_cast<std::uint32_t>(v)); }
void put_f64(std::ostream& os, double v) { put(os, std::bit_cast<std::uint64_t>(v)); }
float get_f32(std::istream& is) { return std::bit_cast<float>(get<std::uint32_t>(is)); }
double get_f64(std::istream& is) { return std::bit_cast<double>(get<std::uint64_t>(is)); }

}  // namespace le

std::vector<char> read_file_bytes(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw IoError("cannot open " + path.string());
    }
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

std::string read_text_file(const std::filesystem::path& path) {
    auto bytes = read_file_bytes(path);
    return {bytes.begin(), bytes.end()};
}

void write_text_file(const std::filesystem::path& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) {
        throw IoError("cannot write " + path.string());
    }
    out << text;
    if (!out) {
        throw IoError("write failed for " + path.string());
    }
}

std::string sha256_hex(const void* data, std::size_t size) {
    std::unique_ptr<EVP_MD_CTX, decltype(&EVP_MD_CTX_free)> ctx(EVP_MD_CTX_new(), &EVP_MD_CTX_free);
    unsigned char digest[EVP_MAX_MD_SIZE];
    unsigned int len = 0;
    if (!ctx || EVP_DigestInit_ex(ctx.get(), EVP_sha256(), nullptr) != 1 ||
        EVP_DigestUpdate(ctx.get(), data, size) != 1 ||
        EVP_DigestFinal_ex(ctx.get(), digest, &len) != 1) {
        throw std::runtime_error("sha256 failed");
    }
    std::ostringstream hex;
    for (unsigned int i = 0; i < len; ++i) {
        hex << std::hex << std::setw(2) << std::setfill('0') << static_cast<int>(digest[i]);
    }
    return hex.str();
}

std::string sha256_file(const std::filesystem::path& path) {
    auto bytes = read_file_bytes(path);
    return sha256_hex(bytes.data(), bytes.size());
}

}  // namespace apl
