#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <string_view>

namespace fcd {

/// Incremental 64-bit FNV-1a hash. Used for data fingerprints in reports,
/// checkpoints and fold-hygiene audits; not a cryptographic digest.
class Checksum {
 public:
  Checksum& update(const void* data, std::size_t size) {
    const auto* bytes = static_cast<const unsigned char*>(data);
    for (std::size_t i = 0; i < size; ++i) {
      state_ ^= bytes[i];
      state_ *= kPrime;
    }
    return *this;
  }

  Checksum& update(std::string_view text) {
    update(text.data(), text.size());
    // length terminator so ("ab","c") and ("a","bc") differ
    return update_value(static_cast<std::uint64_t>(text.size()));
  }

  template <typename T>
  Checksum& update(std::span<const T> values) {
    return update(values.data(), values.size_bytes());
  }

  template <typename T>
  Checksum& update_value(const T& value) {
    return update(&value, sizeof(T));
  }

  [[nodiscard]] std::uint64_t digest() const { return state_; }

 private:
  static constexpr std::uint64_t kOffset = 14695981039346656037ULL;
  static constexpr std::uint64_t kPrime = 1099511628211ULL;
  std::uint64_t state_ = kOffset;
};

/// Fixed-width lowercase hex rendering of a digest.
std::string to_hex(std::uint64_t digest);

/// Mixes a base seed with a string key (e.g. a subject id) into an
/// independent stream seed. Stable across runs and platforms.
std::uint64_t derive_seed(std::uint64_t base, std::string_view key);

}  // namespace fcd
