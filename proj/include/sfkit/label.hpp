#pragma once

#include <array>
#include <cstdint>
#include <initializer_list>
#include <string>

#include "sfkit/errors.hpp"

namespace sfk {

inline constexpr int kNumClasses = 5;

// Canonical class order. Every file format and report uses this order;
// permuting it anywhere is a bug.
inline constexpr std::array<const char*, kNumClasses> kClassNames = {
    "Prolongation", "Block", "SoundRep", "WordRep", "Interjection"};

enum ClassId : int {
  kProlongation = 0,
  kBlock = 1,
  kSoundRep = 2,
  kWordRep = 3,
  kInterjection = 4,
};

// 5-class binary indicator. The fluent (all-zero) vector is representable
// but filtered out of working corpora before any metric computation.
struct LabelVector {
  std::array<uint8_t, kNumClasses> bits{};

  LabelVector() = default;
  LabelVector(std::initializer_list<int> active) {
    for (int c : active) bits[size_t(c)] = 1;
  }

  static LabelVector from_mask(unsigned mask) {
    LabelVector v;
    for (int c = 0; c < kNumClasses; ++c) v.bits[size_t(c)] = (mask >> c) & 1u;
    return v;
  }

  unsigned mask() const {
    unsigned m = 0;
    for (int c = 0; c < kNumClasses; ++c)
      if (bits[size_t(c)]) m |= 1u << c;
    return m;
  }

  bool test(int c) const { return bits[size_t(c)] != 0; }
  void set(int c, bool on = true) { bits[size_t(c)] = on ? 1 : 0; }

  int count() const {
    int n = 0;
    for (const auto b : bits) n += b;
    return n;
  }

  bool empty() const { return count() == 0; }

  bool operator==(const LabelVector& o) const { return bits == o.bits; }
  bool operator!=(const LabelVector& o) const { return bits != o.bits; }

  std::string to_string() const {
    std::string s = "{";
    bool first = true;
    for (int c = 0; c < kNumClasses; ++c) {
      if (!bits[size_t(c)]) continue;
      if (!first) s += ",";
      s += kClassNames[size_t(c)];
      first = false;
    }
    return s + "}";
  }
};

// |a∩b| / |a∪b|. Undefined when both vectors are empty: the filtered corpus
// never contains empty labels, so that case is rejected rather than patched.
inline double jaccard_similarity(const LabelVector& a, const LabelVector& b) {
  int inter = 0, uni = 0;
  for (int c = 0; c < kNumClasses; ++c) {
    const bool ba = a.test(c), bb = b.test(c);
    inter += (ba && bb) ? 1 : 0;
    uni += (ba || bb) ? 1 : 0;
  }
  if (uni == 0)
    throw DataError("jaccard undefined for two all-zero label vectors");
  return double(inter) / double(uni);
}

inline double jaccard_distance(const LabelVector& a, const LabelVector& b) {
  return 1.0 - jaccard_similarity(a, b);
}

}  // namespace sfk
