#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

namespace dvl {

// Error categories shared between the C++ core and the C API status codes.
enum class ErrorCode : int {
    ok = 0,
    invalid_argument = 1,
    io_error = 2,
    format_error = 3,
    decode_error = 4,
    diverged = 5,
    internal = 6,
};

class Error : public std::runtime_error {
public:
    Error(ErrorCode code, const std::string& msg) : std::runtime_error(msg), code_(code) {}
    ErrorCode code() const noexcept { return code_; }

private:
    ErrorCode code_;
};

struct InvalidArgument : Error {
    explicit InvalidArgument(const std::string& msg) : Error(ErrorCode::invalid_argument, msg) {}
};
struct IoError : Error {
    explicit IoError(const std::string& msg) : Error(ErrorCode::io_error, msg) {}
};
// Malformed on-disk or in-memory serialized data (bad magic, range violation, ...).
struct FormatError : Error {
    explicit FormatError(const std::string& msg) : Error(ErrorCode::format_error, msg) {}
};
struct DecodeError : Error {
    explicit DecodeError(const std::string& msg) : Error(ErrorCode::decode_error, msg) {}
};
struct DivergedError : Error {
    explicit DivergedError(const std::string& msg) : Error(ErrorCode::diverged, msg) {}
};

inline void require(bool cond, const std::string& msg) {
    if (!cond) throw InvalidArgument(msg);
}

// Uniform double in [0, 1) from a 64-bit generator draw. Used everywhere a
// reproducible uniform is needed so results do not depend on the standard
// library's distribution implementations.
template <typename Rng>
double uniform01(Rng& rng) {
    return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

template <typename Rng>
double uniform_range(Rng& rng, double lo, double hi) {
    return lo + (hi - lo) * uniform01(rng);
}

// SplitMix64; used to derive independent seeds from (base, stream id) pairs.
inline uint64_t mix_seed(uint64_t a, uint64_t b) {
    uint64_t z = a + 0x9e3779b97f4a7c15ULL * (b + 1);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

}  // namespace dvl
