#pragma once

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <functional>
#include <mutex>
#include <stdexcept>
#include <string>
#include <string_view>
#include <thread>
#include <vector>

namespace tablerl {

// ----------------------------------------------------------------------------
// Deterministic randomness
//
// Everything that samples (policies, resampling, augmentation) goes through
// Rng so runs are bit-reproducible across platforms. std::mt19937 is pinned by
// the standard but the distributions are not, so we roll our own draws.
// ----------------------------------------------------------------------------

inline uint64_t splitmix64(uint64_t& state) {
    uint64_t z = (state += 0x9e3779b97f4a7c15ULL);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

/// Stable 64-bit hash of arbitrary bytes (FNV-1a, finalized with splitmix).
inline uint64_t hash_bytes(std::string_view data, uint64_t seed = 0) {
    uint64_t h = 0xcbf29ce484222325ULL ^ seed;
    for (unsigned char c : data) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    uint64_t s = h;
    return splitmix64(s);
}

class Rng {
public:
    explicit Rng(uint64_t seed = 0) : state_(seed) {
        // burn a couple of outputs so nearby seeds decorrelate
        next_u64();
        next_u64();
    }

    uint64_t next_u64() { return splitmix64(state_); }

    /// Uniform integer in [0, n). n must be > 0.
    uint64_t uniform(uint64_t n) {
        return static_cast<uint64_t>((static_cast<__uint128_t>(next_u64()) * n) >> 64);
    }

    /// Uniform double in [0, 1).
    double uniform_real() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    bool coin(double p = 0.5) { return uniform_real() < p; }

    /// Independent child stream keyed by a tag; the parent stream is untouched.
    Rng split(std::string_view tag) const {
        return Rng(hash_bytes(tag, state_ ^ 0x5851f42d4c957f2dULL));
    }

    template <typename T>
    void shuffle(std::vector<T>& v) {
        for (size_t i = v.size(); i > 1; --i) {
            size_t j = uniform(i);
            std::swap(v[i - 1], v[j]);
        }
    }

    /// Selection sampling (k distinct items, input order preserved).
    template <typename T>
    std::vector<T> sample(const std::vector<T>& v, size_t k) {
        std::vector<T> out;
        out.reserve(std::min(k, v.size()));
        size_t remaining = v.size();
        size_t needed = std::min(k, v.size());
        for (size_t i = 0; i < v.size() && needed > 0; ++i, --remaining) {
            if (uniform(remaining) < needed) {
                out.push_back(v[i]);
                --needed;
            }
        }
        return out;
    }

private:
    uint64_t state_;
};

// ----------------------------------------------------------------------------
// UTF-8
// ----------------------------------------------------------------------------

/// Decodes one codepoint at byte offset i. Invalid sequences yield U+FFFD and
/// advance one byte, so iteration always terminates.
inline char32_t utf8_next(std::string_view s, size_t& i, bool* valid = nullptr) {
    if (valid) *valid = true;
    unsigned char b0 = static_cast<unsigned char>(s[i]);
    if (b0 < 0x80) {
        ++i;
        return b0;
    }
    int len = 0;
    char32_t cp = 0;
    if ((b0 & 0xE0) == 0xC0) {
        len = 2;
        cp = b0 & 0x1F;
    } else if ((b0 & 0xF0) == 0xE0) {
        len = 3;
        cp = b0 & 0x0F;
    } else if ((b0 & 0xF8) == 0xF0) {
        len = 4;
        cp = b0 & 0x07;
    } else {
        ++i;
        if (valid) *valid = false;
        return 0xFFFD;
    }
    if (i + len > s.size()) {
        ++i;
        if (valid) *valid = false;
        return 0xFFFD;
    }
    for (int k = 1; k < len; ++k) {
        unsigned char b = static_cast<unsigned char>(s[i + k]);
        if ((b & 0xC0) != 0x80) {
            ++i;
            if (valid) *valid = false;
            return 0xFFFD;
        }
        cp = (cp << 6) | (b & 0x3F);
    }
    i += len;
    return cp;
}

template <typename Fn>
inline void for_each_codepoint(std::string_view s, Fn&& fn) {
    size_t i = 0;
    while (i < s.size()) {
        bool valid = true;
        char32_t cp = utf8_next(s, i, &valid);
        fn(cp, valid);
    }
}

// ----------------------------------------------------------------------------
// String helpers
// ----------------------------------------------------------------------------

inline std::string to_lower_ascii(std::string_view s) {
    std::string out(s);
    std::transform(out.begin(), out.end(), out.begin(),
                   [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
    return out;
}

inline std::string trim(std::string_view s) {
    size_t b = 0, e = s.size();
    while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
    while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
    return std::string(s.substr(b, e - b));
}

/// Trims and collapses internal whitespace runs to a single space.
inline std::string collapse_whitespace(std::string_view s) {
    std::string out;
    out.reserve(s.size());
    bool in_ws = true;  // leading whitespace dropped
    for (char c : s) {
        if (std::isspace(static_cast<unsigned char>(c))) {
            in_ws = true;
        } else {
            if (in_ws && !out.empty()) out.push_back(' ');
            out.push_back(c);
            in_ws = false;
        }
    }
    return out;
}

inline bool contains_ci(std::string_view haystack, std::string_view needle) {
    if (needle.empty()) return true;
    std::string h = to_lower_ascii(haystack);
    std::string n = to_lower_ascii(needle);
    return h.find(n) != std::string::npos;
}

inline std::vector<std::string> split(std::string_view s, char sep) {
    std::vector<std::string> out;
    size_t start = 0;
    for (size_t i = 0; i <= s.size(); ++i) {
        if (i == s.size() || s[i] == sep) {
            out.emplace_back(s.substr(start, i - start));
            start = i + 1;
        }
    }
    return out;
}

inline std::string replace_all(std::string s, std::string_view from, std::string_view to) {
    if (from.empty()) return s;
    size_t pos = 0;
    while ((pos = s.find(from, pos)) != std::string::npos) {
        s.replace(pos, from.size(), to);
        pos += to.size();
    }
    return s;
}

/// Canonical rendering for numeric answers: integral values print without a
/// decimal point, everything else with up to 12 significant digits.
inline std::string format_number(double v) {
    if (std::isfinite(v) && v == std::floor(v) && std::fabs(v) < 1e15) {
        char buf[32];
        std::snprintf(buf, sizeof(buf), "%.0f", v);
        return buf;
    }
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.12g", v);
    return buf;
}

/// Full-string numeric parse; returns false on trailing garbage.
inline bool parse_number(std::string_view s, double& out) {
    std::string t = trim(s);
    if (t.empty()) return false;
    char* end = nullptr;
    out = std::strtod(t.c_str(), &end);
    return end == t.c_str() + t.size();
}

// ----------------------------------------------------------------------------
// Parallel map
// ----------------------------------------------------------------------------

/// Runs fn(i) for i in [0, n) on up to `jobs` threads. Work is pure per index;
/// results must be written to pre-sized slots so output order is input order.
/// The first exception thrown by any worker is rethrown after all join.
inline void parallel_for(size_t n, unsigned jobs, const std::function<void(size_t)>& fn) {
    if (n == 0) return;
    unsigned workers = std::max(1u, jobs);
    workers = static_cast<unsigned>(std::min<size_t>(workers, n));
    if (workers == 1) {
        for (size_t i = 0; i < n; ++i) fn(i);
        return;
    }
    std::vector<std::thread> threads;
    threads.reserve(workers);
    std::exception_ptr first_error;
    std::mutex error_mutex;
    for (unsigned w = 0; w < workers; ++w) {
        threads.emplace_back([&, w] {
            try {
                for (size_t i = w; i < n; i += workers) fn(i);
            } catch (...) {
                std::lock_guard<std::mutex> lock(error_mutex);
                if (!first_error) first_error = std::current_exception();
            }
        });
    }
    for (auto& t : threads) t.join();
    if (first_error) std::rethrow_exception(first_error);
}

}  // namespace tablerl
