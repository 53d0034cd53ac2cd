#pragma once

#include <cstdint>
#include <initializer_list>

namespace fedema {

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

// Mixes a base seed with stream tags (round, client, purpose...) into an independent seed.
inline std::uint64_t derive_seed(std::uint64_t base, std::initializer_list<std::uint64_t> tags) {
  std::uint64_t s = splitmix64(base);
  for (std::uint64_t t : tags) s = splitmix64(s ^ splitmix64(t + 0x632be59bd9b4e019ULL));
  return s;
}

// Stream purposes used with derive_seed.
enum SeedTag : std::uint64_t {
  kTagInit = 1,
  kTagTrainPool = 2,
  kTagPartition = 3,
  kTagShuffle = 4,
  kTagEvalSet = 5,
  kTagGradEval = 6,
  kTagPhase = 7,
  kTagScene = 8,
};

}  // namespace fedema
