#pragma once
// Shared plumbing for the veriloop library: error taxonomy, seeded RNG
// streams, and a small row-major matrix type used by the learner and trainer.

#include <algorithm>
#include <cstdint>
#include <cstring>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

namespace veriloop {

// ---------------------------------------------------------------------------
// Errors. Config problems exit the CLI with code 2, runtime problems with 1.
// ---------------------------------------------------------------------------

struct ConfigError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct NumericError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct IoError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Raised by a registry reader when the publisher shuts down while the reader
// is still waiting for a fresher snapshot.
struct ShutdownError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// ---------------------------------------------------------------------------
// Seeding. Every random stream in the project is derived from the run seed
// plus a purpose tag (and usually an index), so independent consumers never
// share or perturb each other's streams.
// ---------------------------------------------------------------------------

constexpr std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

constexpr std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b) {
    return splitmix64(a ^ splitmix64(b));
}

template <typename... Rest>
constexpr std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b, Rest... rest) {
    return mix_seed(mix_seed(a, b), static_cast<std::uint64_t>(rest)...);
}

// Purpose tags for derived streams. Arbitrary distinct constants.
namespace stream_tag {
constexpr std::uint64_t prompts = 0x70726f6d70ULL;
constexpr std::uint64_t trajectory = 0x7472616aULL;
constexpr std::uint64_t burst = 0x6275727374ULL;
constexpr std::uint64_t noise = 0x6e6f697365ULL;
constexpr std::uint64_t heldout = 0x68656c64ULL;
constexpr std::uint64_t eval = 0x6576616cULL;
constexpr std::uint64_t init = 0x696e6974ULL;
constexpr std::uint64_t session = 0x73657373ULL;
constexpr std::uint64_t shuffle = 0x73687566ULL;
}  // namespace stream_tag

using Rng = std::mt19937_64;

inline Rng make_rng(std::uint64_t seed) { return Rng(splitmix64(seed)); }

inline double draw_uniform(Rng& g) {
    return std::uniform_real_distribution<double>(0.0, 1.0)(g);
}

inline double draw_normal(Rng& g) {
    std::normal_distribution<double> d(0.0, 1.0);
    return d(g);
}

// Uniform integer in [0, n). n must be positive.
inline std::size_t draw_index(Rng& g, std::size_t n) {
    return std::uniform_int_distribution<std::size_t>(0, n - 1)(g);
}

// ---------------------------------------------------------------------------
// Tensor: dense row-major matrix of doubles. Vectors are 1 x n or n x 1.
// ---------------------------------------------------------------------------

struct Tensor {
    int rows = 0;
    int cols = 0;
    std::vector<double> v;

    Tensor() = default;
    Tensor(int r, int c) : rows(r), cols(c), v(static_cast<std::size_t>(r) * c, 0.0) {}

    double& at(int r, int c) { return v[static_cast<std::size_t>(r) * cols + c]; }
    double at(int r, int c) const { return v[static_cast<std::size_t>(r) * cols + c]; }

    std::size_t size() const { return v.size(); }
    double* data() { return v.data(); }
    const double* data() const { return v.data(); }

    bool same_shape(const Tensor& o) const { return rows == o.rows && cols == o.cols; }

    bool bitwise_equal(const Tensor& o) const {
        if (!same_shape(o)) return false;
        for (std::size_t i = 0; i < v.size(); ++i) {
            // Compare representations, not values: distinguishes -0.0 / +0.0
            // and compares NaNs by payload.
            std::uint64_t a, b;
            static_assert(sizeof(double) == sizeof(std::uint64_t));
            std::memcpy(&a, &v[i], sizeof a);
            std::memcpy(&b, &o.v[i], sizeof b);
            if (a != b) return false;
        }
        return true;
    }

    void fill(double x) { std::fill(v.begin(), v.end(), x); }
};

}  // namespace veriloop
