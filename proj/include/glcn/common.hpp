#pragma once

// Shared error types and small helpers used across the library.

#include <cstdint>
#include <sstream>
#include <stdexcept>
#include <string>

namespace glcn {

class Error : public std::runtime_error {
public:
    explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

// Invalid or inconsistent configuration (CLI exit code 1).
class ConfigError : public Error {
public:
    explicit ConfigError(const std::string& msg) : Error(msg) {}
};

// A required upstream artifact (checkpoint, dataset, ...) is absent (exit code 2).
class MissingArtifactError : public Error {
public:
    explicit MissingArtifactError(const std::string& msg) : Error(msg) {}
};

namespace detail {
inline void format_into(std::ostringstream&) {}

template <typename Head, typename... Tail>
void format_into(std::ostringstream& os, Head&& head, Tail&&... tail) {
    os << std::forward<Head>(head);
    format_into(os, std::forward<Tail>(tail)...);
}
} // namespace detail

template <typename... Args>
std::string cat(Args&&... args) {
    std::ostringstream os;
    detail::format_into(os, std::forward<Args>(args)...);
    return os.str();
}

template <typename... Args>
[[noreturn]] void fail(Args&&... args) {
    throw Error(cat(std::forward<Args>(args)...));
}

#define GLCN_CHECK(cond, ...)                                                  \
    do {                                                                       \
        if (!(cond)) ::glcn::fail("check failed: ", #cond, ": ", __VA_ARGS__); \
    } while (0)

// FNV-1a, used for tagging RNG streams with strings.
inline std::uint64_t fnv1a64(const std::string& s) {
    std::uint64_t h = 1469598103934665603ull;
    for (unsigned char c : s) {
        h ^= c;
        h *= 1099511628211ull;
    }
    return h;
}

} // namespace glcn
