#pragma once

#include <cstdint>
#include <initializer_list>
#include <random>

namespace unicalli {

// Stream tags for counter-derived generators. Keeping them in one place makes
// it obvious that two purposes never share a stream.
enum class Stream : std::uint64_t {
    mode = 1,
    mix = 2,
    timestep = 3,
    noise = 4,
    init = 5,
    synth = 6,
    sampler = 7,
    window = 8,
    glyph_jitter = 9,
};

std::uint64_t mix64(std::uint64_t x);
std::uint64_t hash_words(std::initializer_list<std::uint64_t> words);

// Thin wrapper over mt19937_64. Every random decision in the project goes
// through one of these so streams can be re-derived from (seed, counters).
class Rng {
public:
    explicit Rng(std::uint64_t seed) : engine_(seed) {}

    static Rng derive(std::uint64_t seed, Stream stream, std::uint64_t a = 0, std::uint64_t b = 0) {
        return Rng(hash_words({seed, static_cast<std::uint64_t>(stream), a, b}));
    }

    double uniform() { return std::uniform_real_distribution<double>(0.0, 1.0)(engine_); }
    double uniform(double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(engine_); }
    // Inclusive on both ends.
    int uniform_int(int lo, int hi) { return std::uniform_int_distribution<int>(lo, hi)(engine_); }
    bool bernoulli(double p) { return uniform() < p; }
    double normal() { return normal_(engine_); }
    std::uint64_t next() { return engine_(); }

    std::mt19937_64& engine() { return engine_; }

private:
    std::mt19937_64 engine_;
    std::normal_distribution<double> normal_{0.0, 1.0};
};

} // namespace unicalli
