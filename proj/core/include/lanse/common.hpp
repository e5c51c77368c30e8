#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Dense>

namespace lanse {

// Parameters live in double precision in memory; files store float32.
using Vec = Eigen::VectorXd;
using Mat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

enum class ErrorCode {
    InvalidArgument,
    DimensionMismatch,
    CorpusEmpty,
    DuplicateId,
    OutOfRange,
    Divergence,
    Io,
    Format,
    ChecksumMismatch,
    Judge,
    Dependency,
    NotFound,
    UndefinedMetric,
};

std::string_view to_string(ErrorCode code);

class Error : public std::runtime_error {
public:
    Error(ErrorCode code, const std::string& message);
    ErrorCode code() const noexcept { return code_; }

private:
    ErrorCode code_;
};

// The nine neuron groups, plus a marker for neurons the judge could not place.
enum class Category : std::uint8_t {
    Human,
    Animal,
    Object,
    Activity,
    Environment,
    Style,
    Artifact,
    Distortion,
    Structure,
    Uncategorized,
};

inline constexpr std::array<Category, 9> kAllGroups = {
    Category::Human,  Category::Animal,   Category::Object,     Category::Activity, Category::Environment,
    Category::Style,  Category::Artifact, Category::Distortion, Category::Structure,
};
inline constexpr std::array<Category, 5> kSemanticGroups = {
    Category::Human, Category::Animal, Category::Object, Category::Activity, Category::Environment,
};
inline constexpr std::array<Category, 2> kRealismGroups = {Category::Style, Category::Artifact};
inline constexpr std::array<Category, 2> kPhysicsGroups = {Category::Distortion, Category::Structure};
// Semantic groups plus style.
inline constexpr std::array<Category, 6> kContentGroups = {
    Category::Human, Category::Animal,      Category::Object,
    Category::Activity, Category::Environment, Category::Style,
};

std::string_view to_string(Category c);
/// Case-insensitive; returns nullopt for anything outside the nine groups.
std::optional<Category> parse_category(std::string_view name);
bool is_semantic(Category c);

/// Hex SHA-256 of a byte buffer.
std::string sha256_hex(std::span<const std::uint8_t> bytes);
std::string sha256_hex(std::string_view text);
std::string sha256_file(const std::string& path);

std::string base64_encode(std::span<const std::uint8_t> bytes);
std::vector<std::uint8_t> base64_decode(std::string_view text);

std::string read_text_file(const std::string& path);
void write_text_file(const std::string& path, std::string_view content);

}  // namespace lanse
