#pragma once

#include <cstdint>
#include <cstdio>
#include <string>

#include "qfc/model.hpp"

namespace qfc {

inline std::uint64_t fnv1a64(const void* data, std::size_t n,
                             std::uint64_t h = 14695981039346656037ull) {
    const auto* p = static_cast<const unsigned char*>(data);
    for (std::size_t i = 0; i < n; ++i) {
        h ^= p[i];
        h *= 1099511628211ull;
    }
    return h;
}

inline std::uint64_t fnv1a64(const std::string& s,
                             std::uint64_t h = 14695981039346656037ull) {
    return fnv1a64(s.data(), s.size(), h);
}

inline std::string hex64(std::uint64_t v) {
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
    return buf;
}

inline std::string format_double(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

// Canonical text form of the model parameters; basis of the model hash used
// for artifact compatibility checks.
inline std::string canonical_model_string(const TwoLevelParams& p) {
    std::string s;
    const char* names[] = {"kappa_f", "kappa_s", "a", "b", "c",
                           "mu",      "eta",     "T", "dt", "u_max"};
    const double vals[] = {p.kappa_f, p.kappa_s, p.a, p.b, p.c,
                           p.mu,      p.eta,     p.T, p.dt, p.u_max};
    for (int i = 0; i < 10; ++i) {
        s += names[i];
        s += '=';
        s += format_double(vals[i]);
        s += '\n';
    }
    return s;
}

inline std::uint64_t model_hash(const TwoLevelParams& p) {
    return fnv1a64(canonical_model_string(p));
}

}  // namespace qfc
