#pragma once

// Bit-exact model of mapping two multiplications with a shared signed
// multiplicand onto one 27x18 hardware multiplier. The two unsigned
// operands are concatenated with guard bits, multiplied once, and the
// result fields are extracted with a conditional +1 on the upper field
// where the sign extension of a negative low product bleeds into it.

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "eqsim/fxp.hpp"

namespace eqsim {

struct PackedMulSpec {
  int data_bits = 10;    // width d of the unsigned operands D1, D2
  int weight_bits = 6;   // width w of the signed multiplicand W

  static constexpr int kWidePortBits = 27;
  static constexpr int kNarrowPortBits = 18;

  int result_bits() const { return data_bits + weight_bits; }
  // [0 | D2(d) | guard zeros(w) | D1(d)]
  int packed_word_bits() const { return 2 * data_bits + weight_bits + 1; }

  // Geometric fit of the packed word into the wide port; this condition
  // is what makes the mapping exact and is the one enforced.
  bool fits_wide_port() const { return packed_word_bits() <= kWidePortBits; }

  // A stricter width rule (2w + d <= 26) is sometimes quoted for the
  // same port. Both rules hold at the default (d=10, w=6); only the
  // geometric one is enforced. Exposed for reporting.
  bool fits_quoted_rule() const {
    return 2 * weight_bits + data_bits <= kWidePortBits - 1;
  }

  bool result_fields_fit() const {
    return 2 * result_bits() <= kWidePortBits + kNarrowPortBits;
  }

  void require_valid() const;
};

enum class MappingConstraint {
  SharedMultiplicand,
  WeightSignedness,
  DataSignedness,
  WidthFit,
  WeightPortFit,
  ResultFieldFit,
};

struct ConstraintViolation {
  MappingConstraint kind;
  std::string detail;
};

struct OperandTraits {
  bool shared_multiplicand = true;
  bool weight_signed = true;
  bool data_signed = false;
};

// Empty list iff packed_mul is exact for every operand triple.
std::vector<ConstraintViolation> check_mapping_constraints(
    const PackedMulSpec& spec, const OperandTraits& traits);

// d1 + d2 * 2^(d+w); injective, leading bit zero.
uint64_t pack_operands(uint64_t d1, uint64_t d2, const PackedMulSpec& spec);
std::pair<uint64_t, uint64_t> unpack_operands(uint64_t word,
                                              const PackedMulSpec& spec);

struct PackedProduct {
  int64_t raw = 0;      // full multiplier output
  int64_t r1 = 0;       // low (d+w)-bit field, signed
  int64_t r2_star = 0;  // next (d+w)-bit field, signed, before correction
  int64_t r2 = 0;       // r2_star + 1 when r1 < 0 (negative W, nonzero D1)
};

// One wide signed multiply of the packed word with the sign-extended
// weight, then field extraction and the W<0 correction.
PackedProduct packed_mul_trace(uint64_t d1, uint64_t d2, int64_t weight,
                               const PackedMulSpec& spec);

inline std::pair<int64_t, int64_t> packed_mul(uint64_t d1, uint64_t d2,
                                              int64_t weight,
                                              const PackedMulSpec& spec) {
  const PackedProduct p = packed_mul_trace(d1, d2, weight, spec);
  return {p.r1, p.r2};
}

struct PackVerifyResult {
  uint64_t tested = 0;
  uint64_t mismatches = 0;
  bool exhaustive = false;
  // First counterexample, if any.
  uint64_t d1 = 0, d2 = 0;
  int64_t weight = 0;
  int64_t got_r1 = 0, got_r2 = 0;
  int64_t want_r1 = 0, want_r2 = 0;
};

// Sweeps operand triples against two independent reference products.
// Exhaustive when 2^(2d+w) <= 2^24, otherwise `samples` random triples.
PackVerifyResult verify_packed_mul(const PackedMulSpec& spec, uint64_t samples,
                                   uint64_t seed);

}  // namespace eqsim
