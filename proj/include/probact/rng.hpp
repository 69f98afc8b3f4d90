#pragma once

#include <array>
#include <cstdint>

namespace probact {

// Identifies one stochastic draw site. Together with the element index and a
// stream seed it addresses exactly one variate, independent of execution
// order and thread count.
struct NoiseKey {
  std::uint32_t layer_id = 0;
  std::uint64_t global_step = 0;
  std::uint32_t draw_id = 0;
};

namespace rng {

// Threefry-2x64, 20 rounds. Matches the Random123 reference outputs.
std::array<std::uint64_t, 2> threefry2x64(std::array<std::uint64_t, 2> ctr,
                                          std::array<std::uint64_t, 2> key);

// Raw 64 bits for (key, stream, element).
std::uint64_t bits_at(const NoiseKey& key, std::uint64_t stream_seed,
                      std::uint64_t element_index);

// Maps 64 bits to the open interval (0,1); never returns an endpoint.
double uniform_from_bits(std::uint64_t bits);

// Inverse CDF of the standard normal distribution (Wichura's AS 241,
// double-precision variant). |error| < 1e-15 over (0,1).
double normal_quantile(double p);

double normal_at(const NoiseKey& key, std::uint64_t stream_seed,
                 std::uint64_t element_index);
double uniform_at(const NoiseKey& key, std::uint64_t stream_seed,
                  std::uint64_t element_index);

}  // namespace rng
}  // namespace probact
