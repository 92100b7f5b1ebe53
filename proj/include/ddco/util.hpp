#pragma once

#include <cstdint>
#include <functional>
#include <stdexcept>
#include <string>
#include <vector>

namespace ddco {

using Vec = std::vector<double>;

class Error : public std::runtime_error {
public:
    explicit Error(const std::string& what) : std::runtime_error(what) {}
};

// Deterministic 64-bit generator (splitmix64). Self-contained so seeded runs
// reproduce bit-identically independent of the standard library's
// distribution implementations.
class Rng {
public:
    explicit Rng(uint64_t seed) : state_(seed) {}

    uint64_t next_u64() {
        uint64_t z = (state_ += 0x9e3779b97f4a7c15ULL);
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
        return z ^ (z >> 31);
    }

    // uniform in [0, 1)
    double uniform01() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform01(); }

    // uniform in [0, n)
    int uniform_int(int n) { return static_cast<int>(next_u64() % static_cast<uint64_t>(n)); }

    // standard normal (Box-Muller, cached pair)
    double normal();

private:
    uint64_t state_;
    bool has_spare_ = false;
    double spare_ = 0.0;
};

// Independent substream seeds derived from a master seed. Stable across runs.
uint64_t derive_seed(uint64_t master, uint64_t a, uint64_t b = 0, uint64_t c = 0);

// Runs fn(i) for i in [0, n). Work is split into contiguous index chunks, one
// per worker; callers must write results only into per-index slots.
void parallel_for(int n, int jobs, const std::function<void(int)>& fn);

// DDCO_JOBS environment variable, else hardware concurrency.
int default_jobs();

std::string format_double(double x);

}  // namespace ddco
