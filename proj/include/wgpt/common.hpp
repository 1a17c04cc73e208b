#pragma once

#include <cstdint>
#include <sstream>
#include <stdexcept>
#include <string>

namespace wgpt {

// Violated precondition / postcondition / invariant (caller bug).
struct contract_error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Malformed external input (files, wire formats). Messages carry a byte offset
// where one is known.
struct parse_error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Invalid configuration (CLI flags, JSON config documents, model dims).
struct config_error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

namespace detail {

template <typename... Args>
std::string concat(Args&&... args) {
    std::ostringstream os;
    (os << ... << args);
    return os.str();
}

} // namespace detail

template <typename... Args>
[[noreturn]] void fail_contract(Args&&... args) {
    throw contract_error(detail::concat(std::forward<Args>(args)...));
}

template <typename... Args>
[[noreturn]] void fail_parse(Args&&... args) {
    throw parse_error(detail::concat(std::forward<Args>(args)...));
}

template <typename... Args>
[[noreturn]] void fail_config(Args&&... args) {
    throw config_error(detail::concat(std::forward<Args>(args)...));
}

// FNV-1a, used for seed-independent dataset splits and content hashes.
inline std::uint64_t fnv1a64(const void* data, std::size_t n, std::uint64_t h = 0xcbf29ce484222325ull) {
    const auto* p = static_cast<const unsigned char*>(data);
    for (std::size_t i = 0; i < n; ++i) {
        h ^= p[i];
        h *= 0x100000001b3ull;
    }
    return h;
}

inline std::uint64_t fnv1a64(const std::string& s) { return fnv1a64(s.data(), s.size()); }

} // namespace wgpt
