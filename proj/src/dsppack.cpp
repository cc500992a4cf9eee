#include "eqsim/dsppack.hpp"

#include "eqsim/rng.hpp"

namespace eqsim {

namespace {

int64_t sign_extend(uint64_t field, int bits) {
  const uint64_t sign_bit = uint64_t(1) << (bits - 1);
  if (field & sign_bit) return static_cast<int64_t>(field - (sign_bit << 1));
  return static_cast<int64_t>(field);
}

uint64_t extract_field(int64_t raw, int lo, int bits) {
  const uint64_t word = static_cast<uint64_t>(raw);
  return (word >> lo) & ((uint64_t(1) << bits) - 1);
}

}  // namespace

void PackedMulSpec::require_valid() const {
  if (data_bits < 1 || weight_bits < 2)
    throw SpecError("packed-mul spec needs d >= 1 and signed w >= 2");
  if (!fits_wide_port())
    throw SpecError("packed word of " + std::to_string(packed_word_bits()) +
                    " bits exceeds the " + std::to_string(kWidePortBits) +
                    "-bit port");
  if (weight_bits > kNarrowPortBits)
    throw SpecError("weight exceeds the narrow multiplier port");
  if (!result_fields_fit())
    throw SpecError("result fields exceed the product width");
}

std::vector<ConstraintViolation> check_mapping_constraints(
    const PackedMulSpec& spec, const OperandTraits& traits) {
  std::vector<ConstraintViolation> v;
  if (!traits.shared_multiplicand)
    v.push_back({MappingConstraint::SharedMultiplicand,
                 "both products must share the multiplicand W"});
  if (!traits.weight_signed)
    v.push_back({MappingConstraint::WeightSignedness,
                 "W must be signed; the correction assumes two's complement"});
  if (traits.data_signed)
    v.push_back({MappingConstraint::DataSignedness,
                 "D1 and D2 must be unsigned"});
  if (!spec.fits_wide_port())
    v.push_back({MappingConstraint::WidthFit,
                 "2*d + w + 1 = " + std::to_string(spec.packed_word_bits()) +
                     " > " + std::to_string(PackedMulSpec::kWidePortBits)});
  if (spec.weight_bits > PackedMulSpec::kNarrowPortBits)
    v.push_back({MappingConstraint::WeightPortFit,
                 "w = " + std::to_string(spec.weight_bits) + " > " +
                     std::to_string(PackedMulSpec::kNarrowPortBits)});
  if (!spec.result_fields_fit())
    v.push_back({MappingConstraint::ResultFieldFit,
                 "2*(d + w) exceeds the multiplier output width"});
  return v;
}

uint64_t pack_operands(uint64_t d1, uint64_t d2, const PackedMulSpec& spec) {
  spec.require_valid();
  const uint64_t lim = uint64_t(1) << spec.data_bits;
  if (d1 >= lim || d2 >= lim)
    throw RangeError("packed-mul data operand out of range");
  return d1 + (d2 << spec.result_bits());
}

std::pair<uint64_t, uint64_t> unpack_operands(uint64_t word,
                                              const PackedMulSpec& spec) {
  spec.require_valid();
  const uint64_t mask = (uint64_t(1) << spec.data_bits) - 1;
  return {word & mask, (word >> spec.result_bits()) & mask};
}

PackedProduct packed_mul_trace(uint64_t d1, uint64_t d2, int64_t weight,
                               const PackedMulSpec& spec) {
  const int64_t w_min = -(int64_t(1) << (spec.weight_bits - 1));
  const int64_t w_max = (int64_t(1) << (spec.weight_bits - 1)) - 1;
  if (weight < w_min || weight > w_max)
    throw RangeError("packed-mul weight out of range");

  const uint64_t packed = pack_operands(d1, d2, spec);

  PackedProduct p;
  // The single wide multiply: zero-extended packed word times
  // sign-extended weight. Fits int64 (27 + 18 bits).
  p.raw = static_cast<int64_t>(packed) * weight;

  const int r = spec.result_bits();
  p.r1 = sign_extend(extract_field(p.raw, 0, r), r);
  p.r2_star = sign_extend(extract_field(p.raw, r, r), r);
  // A negative low product sign-extends with ones into the upper field;
  // only then is the +1 correction needed. W < 0 with D1 = 0 leaves the
  // upper field untouched.
  p.r2 = p.r2_star + (p.r1 < 0 ? 1 : 0);
  return p;
}

PackVerifyResult verify_packed_mul(const PackedMulSpec& spec, uint64_t samples,
                                   uint64_t seed) {
  spec.require_valid();
  PackVerifyResult res;

  const int total_bits = 2 * spec.data_bits + spec.weight_bits;
  res.exhaustive = total_bits <= 24;

  const uint64_t d_count = uint64_t(1) << spec.data_bits;
  const uint64_t w_count = uint64_t(1) << spec.weight_bits;
  const int64_t w_min = -(int64_t(1) << (spec.weight_bits - 1));

  auto check_one = [&](uint64_t d1, uint64_t d2, int64_t w) {
    const auto [r1, r2] = packed_mul(d1, d2, w, spec);
    const int64_t want1 = static_cast<int64_t>(d1) * w;
    const int64_t want2 = static_cast<int64_t>(d2) * w;
    ++res.tested;
    if (r1 != want1 || r2 != want2) {
      if (res.mismatches == 0) {
        res.d1 = d1;
        res.d2 = d2;
        res.weight = w;
        res.got_r1 = r1;
        res.got_r2 = r2;
        res.want_r1 = want1;
        res.want_r2 = want2;
      }
      ++res.mismatches;
    }
  };

  if (res.exhaustive) {
    for (uint64_t d1 = 0; d1 < d_count; ++d1)
      for (uint64_t d2 = 0; d2 < d_count; ++d2)
        for (uint64_t wi = 0; wi < w_count; ++wi)
          check_one(d1, d2, w_min + static_cast<int64_t>(wi));
  } else {
    Philox rng(seed, /*stream=*/0x70ACC);
    for (uint64_t i = 0; i < samples; ++i) {
      const uint64_t d1 = rng.next_below(static_cast<uint32_t>(d_count));
      const uint64_t d2 = rng.next_below(static_cast<uint32_t>(d_count));
      const int64_t w =
          w_min + rng.next_below(static_cast<uint32_t>(w_count));
      check_one(d1, d2, w);
    }
  }
  return res;
}

}  // namespace eqsim
