#include "bvxl/rng.h"

namespace bvxl {

std::uint64_t mix_seed(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

Rng Rng::split(std::uint64_t stream_id) const { return Rng(mix_seed(seed_ ^ mix_seed(stream_id + 1))); }

}  // namespace bvxl
