#pragma once

#include <cstdint>
#include <cstring>
#include <span>
#include <string>
#include <string_view>

namespace lfdlab {

// FNV-1a, 64-bit.
class Fnv1a {
 public:
  void update(const void* data, std::size_t n) {
    const auto* bytes = static_cast<const unsigned char*>(data);
    for (std::size_t i = 0; i < n; ++i) {
      state_ ^= bytes[i];
      state_ *= 0x100000001b3ULL;
    }
  }
  void update(std::string_view s) { update(s.data(), s.size()); }

  // Floats are hashed as their little-endian IEEE-754 bytes.
  void update_floats(std::span<const float> xs) {
    for (float x : xs) {
      std::uint32_t bits;
      std::memcpy(&bits, &x, sizeof bits);
      unsigned char le[4] = {static_cast<unsigned char>(bits), static_cast<unsigned char>(bits >> 8),
                             static_cast<unsigned char>(bits >> 16),
                             static_cast<unsigned char>(bits >> 24)};
      update(le, 4);
    }
  }
  void update_doubles(std::span<const double> xs) {
    for (double x : xs) {
      std::uint64_t bits;
      std::memcpy(&bits, &x, sizeof bits);
      for (int b = 0; b < 8; ++b) {
        const auto byte = static_cast<unsigned char>(bits >> (8 * b));
        update(&byte, 1);
      }
    }
  }
  void update_u64(std::uint64_t v) {
    for (int b = 0; b < 8; ++b) {
      const auto byte = static_cast<unsigned char>(v >> (8 * b));
      update(&byte, 1);
    }
  }

  std::uint64_t digest() const { return state_; }

 private:
  std::uint64_t state_ = 0xcbf29ce484222325ULL;
};

inline std::uint64_t fnv1a64(std::string_view s) {
  Fnv1a h;
  h.update(s);
  return h.digest();
}

// splitmix64 finalizer; used to derive independent sub-seeds from the run seed.
inline std::uint64_t mix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

inline std::uint64_t derive_seed(std::uint64_t seed, std::string_view label, std::uint64_t salt = 0) {
  return mix64(seed ^ mix64(fnv1a64(label) ^ mix64(salt)));
}

std::string to_hex(std::uint64_t v);

}  // namespace lfdlab
