#pragma once

#include <cstdint>
#include <random>
#include <sstream>
#include <stdexcept>
#include <string>

namespace singfuse {

// Thrown when an operation is called with incompatible shapes or an
// invalid configuration. Message names the offending dimensions.
struct dim_error : std::runtime_error {
    explicit dim_error(const std::string & msg) : std::runtime_error(msg) {}
};

struct config_error : std::runtime_error {
    explicit config_error(const std::string & msg) : std::runtime_error(msg) {}
};

struct format_error : std::runtime_error {
    explicit format_error(const std::string & msg) : std::runtime_error(msg) {}
};

// Deterministic RNG. Gaussian sampling is explicit Box-Muller on raw
// uniforms so the full generator state is just the mt19937_64 stream,
// which serializes exactly for checkpoint round-trips.
class rng {
  public:
    explicit rng(uint64_t seed = 0) : eng_(seed) {}

    uint64_t next_u64() { return eng_(); }

    // uniform in [0, 1)
    double uniform() {
        return (eng_() >> 11) * (1.0 / 9007199254740992.0);
    }

    // uniform integer in [0, n)
    uint64_t uniform_int(uint64_t n) {
        // rejection-free modulo bias is negligible for our n << 2^64
        return eng_() % n;
    }

    double gaussian() {
        double u1 = uniform();
        double u2 = uniform();
        while (u1 <= 1e-300) u1 = uniform();
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586 * u2);
    }

    std::string serialize() const {
        std::ostringstream os;
        os << eng_;
        return os.str();
    }

    void deserialize(const std::string & s) {
        std::istringstream is(s);
        is >> eng_;
    }

  private:
    std::mt19937_64 eng_;
};

} // namespace singfuse
