#pragma once

#include <cstdint>
#include <random>
#include <string>

namespace novo {

// All stochastic choices (init, shuffling, drop/expand, splits) draw from an
// explicitly passed engine so runs are reproducible from a seed.
using Rng = std::mt19937_64;

std::string rng_state(const Rng& rng);
void restore_rng_state(Rng& rng, const std::string& state);

// Independent stream for a purpose, derived from a base seed.
Rng derive_rng(std::uint64_t seed, std::uint64_t stream);

}  // namespace novo
