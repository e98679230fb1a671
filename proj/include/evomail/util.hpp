#pragma once

#include <cstdint>
#include <filesystem>
#include <random>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace evomail {

/// Lowercase hex SHA-256 of the given bytes.
std::string sha256_hex(std::string_view bytes);

/// Raw 32-byte SHA-256 of the given bytes.
std::string sha256_raw(std::string_view bytes);

/// 64-bit FNV-1a; stable across platforms and runs.
std::uint64_t fnv1a64(std::string_view bytes, std::uint64_t basis = 0xcbf29ce484222325ULL);

/// splitmix64 finalizer, used to derive independent seeds from (seed, stream).
std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t stream);

/// Seeded generator with platform-independent helpers (the std distributions
/// are implementation-defined, these are not).
class Rng {
public:
    explicit Rng(std::uint64_t seed) : engine_(seed) {}

    std::uint64_t next() { return engine_(); }
    /// Uniform in [0, 1).
    double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }
    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
    /// Uniform integer in [0, n).
    std::size_t index(std::size_t n) { return n == 0 ? 0 : static_cast<std::size_t>(engine_() % n); }
    bool bernoulli(double p) { return uniform() < p; }

    template <typename T>
    void shuffle(std::vector<T>& values) {
        for (std::size_t i = values.size(); i > 1; --i) {
            std::swap(values[i - 1], values[index(i)]);
        }
    }

private:
    std::mt19937_64 engine_;
};

namespace utf8 {

/// Decodes one code point starting at `pos`; advances `pos`. Invalid sequences
/// yield U+FFFD and advance by one byte.
char32_t next(std::string_view text, std::size_t& pos);
void append(std::string& out, char32_t cp);
bool valid(std::string_view text);
/// Prefix of at most `count` code points.
std::string_view prefix(std::string_view text, std::size_t count);
std::size_t length(std::string_view text);

}  // namespace utf8

/// Shortest text form that parses back to the identical double.
std::string format_double(double value);
/// Exact inverse of format_double; throws std::invalid_argument on junk.
double parse_double(std::string_view text);
/// Fixed-point rendering with the given number of decimals.
std::string format_fixed(double value, int decimals);

std::string to_lower_ascii(std::string_view text);
std::string_view trim(std::string_view text);
std::vector<std::string_view> split(std::string_view text, char sep);

std::string read_file(const std::filesystem::path& path);
/// Writes to a sibling temporary file and renames it into place.
void write_file_atomic(const std::filesystem::path& path, std::string_view bytes);

/// Little-endian binary encoder for the persisted record formats.
class BinaryWriter {
public:
    void u8(std::uint8_t v) { bytes_.push_back(static_cast<char>(v)); }
    void u32(std::uint32_t v);
    void u64(std::uint64_t v);
    void i64(std::int64_t v) { u64(static_cast<std::uint64_t>(v)); }
    void f64(double v);
    void str(std::string_view s);
    void raw(std::string_view s) { bytes_.append(s); }
    const std::string& bytes() const { return bytes_; }

private:
    std::string bytes_;
};

/// Counterpart of BinaryWriter; every short read raises CorruptFile with the
/// offset where it happened.
class BinaryReader {
public:
    explicit BinaryReader(std::string_view bytes, std::size_t offset = 0)
        : bytes_(bytes), pos_(offset) {}

    std::uint8_t u8();
    std::uint32_t u32();
    std::uint64_t u64();
    std::int64_t i64() { return static_cast<std::int64_t>(u64()); }
    double f64();
    std::string str();
    /// Reads up to and including '\n', returning the line without it.
    std::string line();
    std::size_t offset() const { return pos_; }
    bool done() const { return pos_ >= bytes_.size(); }

private:
    void need(std::size_t n);
    std::string_view bytes_;
    std::size_t pos_;
};

}  // namespace evomail
