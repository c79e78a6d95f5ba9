#pragma once

#include <cstdint>
#include <string>
#include <string_view>

namespace kloak {

// splitmix64 step: the mixing function behind partition assignment,
// coordinator election and trace digests.
constexpr uint64_t mix64(uint64_t z) {
  z += 0x9E3779B97F4A7C15ULL;
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

// h0 = mix64(seed); h_{i+1} = mix64(h_i ^ byte_i).
constexpr uint64_t hash_bytes(uint64_t seed, std::string_view bytes) {
  uint64_t h = mix64(seed);
  for (const char c : bytes) {
    h = mix64(h ^ static_cast<uint64_t>(static_cast<unsigned char>(c)));
  }
  return h;
}

std::string hex64(uint64_t value);

}  // namespace kloak
