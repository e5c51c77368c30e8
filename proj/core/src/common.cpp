#include "lanse/common.hpp"

#include <algorithm>
#include <cctype>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <openssl/evp.h>
#include <openssl/sha.h>

#include "binary_io.hpp"

namespace lanse {

std::string_view to_string(ErrorCode code) {
    switch (code) {
        case ErrorCode::InvalidArgument: return "invalid argument";
        case ErrorCode::DimensionMismatch: return "dimension mismatch";
        case ErrorCode::CorpusEmpty: return "corpus empty";
        case ErrorCode::DuplicateId: return "duplicate id";
        case ErrorCode::OutOfRange: return "out of range";
        case ErrorCode::Divergence: return "divergence";
        case ErrorCode::Io: return "io error";
        case ErrorCode::Format: return "format error";
        case ErrorCode::ChecksumMismatch: return "checksum mismatch";
        case ErrorCode::Judge: return "judge error";
        case ErrorCode::Dependency: return "missing dependency";
        case ErrorCode::NotFound: return "not found";
        case ErrorCode::UndefinedMetric: return "undefined metric";
    }
    return "unknown";
}

Error::Error(ErrorCode code, const std::string& message)
    : std::runtime_error(std::string(to_string(code)) + ": " + message), code_(code) {}

std::string_view to_string(Category c) {
    switch (c) {
        case Category::Human: return "human";
        case Category::Animal: return "animal";
        case Category::Object: return "object";
        case Category::Activity: return "activity";
        case Category::Environment: return "environment";
        case Category::Style: return "style";
        case Category::Artifact: return "artifact";
        case Category::Distortion: return "distortion";
        case Category::Structure: return "structure";
        case Category::Uncategorized: return "uncategorized";
    }
    return "uncategorized";
}

std::optional<Category> parse_category(std::string_view name) {
    std::string lower(name);
    std::transform(lower.begin(), lower.end(), lower.begin(),
                   [](unsigned char ch) { return static_cast<char>(std::tolower(ch)); });
    for (Category c : kAllGroups)
        if (lower == to_string(c)) return c;
    return std::nullopt;
}

bool is_semantic(Category c) {
    return std::find(kSemanticGroups.begin(), kSemanticGroups.end(), c) != kSemanticGroups.end();
}

namespace {

std::string to_hex(const unsigned char* digest, std::size_t n) {
    static constexpr char kHex[] = "0123456789abcdef";
    std::string out(n * 2, '0');
    for (std::size_t i = 0; i < n; ++i) {
        out[2 * i] = kHex[digest[i] >> 4];
        out[2 * i + 1] = kHex[digest[i] & 0xF];
    }
    return out;
}

}  // namespace

std::string sha256_hex(std::span<const std::uint8_t> bytes) {
    unsigned char digest[SHA256_DIGEST_LENGTH];
    SHA256(bytes.data(), bytes.size(), digest);
    return to_hex(digest, sizeof(digest));
}

std::string sha256_hex(std::string_view text) {
    return sha256_hex(std::span(reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
}

std::string sha256_file(const std::string& path) {
    auto bytes = detail::read_binary_file(path);
    return sha256_hex(bytes);
}

std::string base64_encode(std::span<const std::uint8_t> bytes) {
    std::string out(4 * ((bytes.size() + 2) / 3), '\0');
    int n = EVP_EncodeBlock(reinterpret_cast<unsigned char*>(out.data()), bytes.data(),
                            static_cast<int>(bytes.size()));
    out.resize(static_cast<std::size_t>(n));
    return out;
}

std::vector<std::uint8_t> base64_decode(std::string_view text) {
    if (text.size() % 4 != 0) throw Error(ErrorCode::Format, "base64 length not a multiple of 4");
    std::vector<std::uint8_t> out(3 * text.size() / 4);
    int n = EVP_DecodeBlock(out.data(), reinterpret_cast<const unsigned char*>(text.data()),
                            static_cast<int>(text.size()));
    if (n < 0) throw Error(ErrorCode::Format, "invalid base64");
    // EVP_DecodeBlock keeps the zero bytes produced by '=' padding.
    std::size_t pad = 0;
    for (auto it = text.rbegin(); it != text.rend() && *it == '='; ++it) ++pad;
    out.resize(static_cast<std::size_t>(n) - pad);
    return out;
}

std::string read_text_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error(ErrorCode::Io, "cannot open " + path);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

void write_text_file(const std::string& path, std::string_view content) {
    auto parent = std::filesystem::path(path).parent_path();
    if (!parent.empty()) std::filesystem::create_directories(parent);
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw Error(ErrorCode::Io, "cannot write " + path);
    out.write(content.data(), static_cast<std::streamsize>(content.size()));
    if (!out) throw Error(ErrorCode::Io, "short write to " + path);
}

namespace detail {

void ByteWriter::seal() {
    unsigned char digest[SHA256_DIGEST_LENGTH];
    SHA256(bytes_.data(), bytes_.size(), digest);
    bytes_.insert(bytes_.end(), digest, digest + SHA256_DIGEST_LENGTH);
}

std::span<const std::uint8_t> verify_sealed(std::span<const std::uint8_t> bytes) {
    if (bytes.size() < SHA256_DIGEST_LENGTH) throw Error(ErrorCode::Format, "file too short for checksum");
    auto payload = bytes.first(bytes.size() - SHA256_DIGEST_LENGTH);
    unsigned char digest[SHA256_DIGEST_LENGTH];
    SHA256(payload.data(), payload.size(), digest);
    if (std::memcmp(digest, bytes.data() + payload.size(), SHA256_DIGEST_LENGTH) != 0)
        throw Error(ErrorCode::ChecksumMismatch, "trailing content hash does not match");
    return payload;
}

std::vector<std::uint8_t> read_binary_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error(ErrorCode::Io, "cannot open " + path);
    return std::vector<std::uint8_t>(std::istreambuf_iterator<char>(in), {});
}

void write_binary_file(const std::string& path, std::span<const std::uint8_t> bytes) {
    auto parent = std::filesystem::path(path).parent_path();
    if (!parent.empty()) std::filesystem::create_directories(parent);
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw Error(ErrorCode::Io, "cannot write " + path);
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw Error(ErrorCode::Io, "short write to " + path);
}

}  // namespace detail
}  // namespace lanse
