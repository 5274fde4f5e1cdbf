#include "fcd/checksum.hpp"

#include <cstdio>

namespace fcd {

std::string to_hex(std::uint64_t digest) {
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(digest));
  return buf;
}

std::uint64_t derive_seed(std::uint64_t base, std::string_view key) {
  Checksum h;
  h.update_value(base).update(key);
  // splitmix64 finalizer
  std::uint64_t z = h.digest() + 0x9e3779b97f4a7c15ULL;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

}  // namespace fcd
