#pragma once

#include <cstdint>
#include <cstdlib>
#include <random>
#include <sstream>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

namespace obj2seq {

// Error taxonomy. The CLI maps these onto exit codes: DataError -> 2,
// NumericError -> 3, everything else -> 1.
struct Error : std::runtime_error {
    explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};
struct ShapeError : Error {
    explicit ShapeError(const std::string& msg) : Error(msg) {}
};
struct ContractError : Error {
    explicit ContractError(const std::string& msg) : Error(msg) {}
};
struct NumericError : Error {
    explicit NumericError(const std::string& msg) : Error(msg) {}
};
struct DataError : Error {
    explicit DataError(const std::string& msg) : Error(msg) {}
};
struct MatchingError : Error {
    explicit MatchingError(const std::string& msg) : Error(msg) {}
};

inline std::string shape_str(const std::vector<int>& s) {
    std::ostringstream os;
    os << "[";
    for (size_t i = 0; i < s.size(); ++i) os << (i ? "x" : "") << s[i];
    os << "]";
    return os.str();
}

// Worker thread cap: OBJ2SEQ_THREADS env var, else hardware concurrency.
inline int max_threads() {
    static int cached = [] {
        if (const char* env = std::getenv("OBJ2SEQ_THREADS")) {
            int n = std::atoi(env);
            if (n >= 1) return n;
        }
        unsigned hw = std::thread::hardware_concurrency();
        return hw ? static_cast<int>(hw) : 1;
    }();
    return cached;
}

inline std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

// Deterministic RNG. Distributions are hand-rolled on top of mt19937 so the
// stream does not depend on the standard library implementation.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : gen_(static_cast<std::uint32_t>(splitmix64(seed))) {}

    // uniform in [0,1)
    float unif() { return static_cast<float>(gen_() >> 8) * (1.0f / 16777216.0f); }
    float unif(float lo, float hi) { return lo + (hi - lo) * unif(); }
    double unifd() { return static_cast<double>(gen_() >> 8) / 16777216.0; }

    // uniform integer in [lo, hi] inclusive
    int uniform_int(int lo, int hi) {
        std::uint64_t span = static_cast<std::uint64_t>(hi - lo) + 1;
        return lo + static_cast<int>((static_cast<std::uint64_t>(gen_()) * span) >> 32);
    }

    float normal() {
        if (has_spare_) {
            has_spare_ = false;
            return spare_;
        }
        float u1 = 0.0f, u2 = 0.0f;
        do {
            u1 = unif();
        } while (u1 <= 1e-12f);
        u2 = unif();
        float r = std::sqrt(-2.0f * std::log(u1));
        float a = 6.28318530717958647692f * u2;
        spare_ = r * std::sin(a);
        has_spare_ = true;
        return r * std::cos(a);
    }

    std::uint32_t next_u32() { return gen_(); }

private:
    std::mt19937 gen_;
    bool has_spare_ = false;
    float spare_ = 0.0f;
};

}  // namespace obj2seq
