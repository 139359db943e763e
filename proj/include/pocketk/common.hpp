#pragma once

#include <chrono>
#include <cstdint>
#include <filesystem>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace pocketk {

inline constexpr std::string_view kArtifactVersion = "1.0.0";

// ---------------------------------------------------------------------------
// Errors
// ---------------------------------------------------------------------------

class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Invalid argument or configuration value.
class ParameterError : public Error {
public:
    using Error::Error;
};

/// Malformed input; `field()` names the offending field.
class ParseError : public Error {
public:
    ParseError(std::string field, const std::string& what)
        : Error(field + ": " + what), field_(std::move(field)) {}
    const std::string& field() const noexcept { return field_; }

private:
    std::string field_;
};

/// Signal failed a quality gate (zero variance, saturation, no usable clips).
class QualityError : public Error {
public:
    using Error::Error;
};

/// Recording too short to yield a single clip.
class TooShortError : public QualityError {
public:
    using QualityError::QualityError;
};

/// A metric is undefined for the given input (e.g. AUROC with one class).
class UndefinedMetricError : public Error {
public:
    using Error::Error;
};

class IoError : public Error {
public:
    using Error::Error;
};

// ---------------------------------------------------------------------------
// Time
// ---------------------------------------------------------------------------

using Timestamp = std::chrono::sys_seconds;

/// Parses an RFC3339 timestamp ("2021-07-01T00:00:00Z", fractional seconds
/// and numeric offsets accepted). Fractional seconds are truncated.
Timestamp parse_rfc3339(std::string_view text);

/// Formats as "YYYY-MM-DDTHH:MM:SSZ".
std::string format_rfc3339(Timestamp ts);

inline double minutes_between(Timestamp a, Timestamp b) {
    return std::chrono::duration<double, std::ratio<60>>(a - b).count();
}

// ---------------------------------------------------------------------------
// Deterministic random numbers
// ---------------------------------------------------------------------------

// Outputs are byte-identical across toolchains for a given seed; no
// <random> distributions are used.
std::uint64_t splitmix64(std::uint64_t x);

/// Derives an independent stream seed from a base seed and a stream index.
std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream);

class Rng {
public:
    explicit Rng(std::uint64_t seed);

    std::uint64_t next_u64();
    /// Uniform on [0, 1).
    double uniform();
    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
    /// Uniform integer on [0, n).
    std::uint64_t below(std::uint64_t n);
    double normal();
    double normal(double mean, double sd) { return mean + sd * normal(); }
    bool bernoulli(double p) { return uniform() < p; }

private:
    std::uint64_t s_[4];
    bool has_spare_ = false;
    double spare_ = 0.0;
};

// ---------------------------------------------------------------------------
// CSV
// ---------------------------------------------------------------------------

/// Header-addressed CSV table. Lines starting with '#' are comments
/// (provenance lines), blank lines are skipped. No quoting support: fields
/// must not contain commas.
class CsvTable {
public:
    static CsvTable read(const std::filesystem::path& path);
    static CsvTable parse(std::string_view text, const std::string& source = "<memory>");

    const std::vector<std::string>& header() const { return header_; }
    std::size_t rows() const { return rows_.size(); }
    std::size_t column(std::string_view name) const;
    bool has_column(std::string_view name) const;
    const std::string& at(std::size_t row, std::size_t col) const { return rows_[row][col]; }

private:
    std::string source_;
    std::vector<std::string> header_;
    std::vector<std::vector<std::string>> rows_;
};

double parse_double(std::string_view text, std::string_view field);
long long parse_int(std::string_view text, std::string_view field);

/// Shortest round-trip decimal representation.
std::string format_double(double v);

/// Writes `content` atomically enough for our purposes (whole-file replace).
void write_text_file(const std::filesystem::path& path, std::string_view content);
std::string read_text_file(const std::filesystem::path& path);

// ---------------------------------------------------------------------------
// Misc
// ---------------------------------------------------------------------------

/// 64-bit FNV-1a, rendered as 16 lowercase hex digits.
std::string fnv1a_hex(std::string_view data);

std::string to_lower(std::string_view s);

double mean(std::span<const double> xs);
/// Sample standard deviation (n - 1); 0 for fewer than two values.
double sample_sd(std::span<const double> xs);
double median(std::vector<double> xs);

}  // namespace pocketk
