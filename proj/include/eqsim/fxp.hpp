#pragma once

// Arbitrary-width two's-complement fixed-point scalars and 3-D tensors.
// Raw values are kept in int64_t regardless of declared width; every
// operation rounds half-to-even and saturates into the target format.

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace eqsim {

struct RangeError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct ShapeError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct SpecError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct FxpFormat {
  int total_bits = 16;
  int frac_bits = 8;
  bool is_signed = true;

  bool valid() const {
    return total_bits >= 1 && total_bits <= 64 && frac_bits >= 0 &&
           frac_bits <= total_bits;
  }
  void require_valid() const {
    if (!valid()) throw SpecError("invalid fixed-point format");
  }

  // Raw two's-complement range of the format.
  int64_t raw_min() const {
    if (!is_signed) return 0;
    if (total_bits == 64) return INT64_MIN;
    return -(int64_t(1) << (total_bits - 1));
  }
  int64_t raw_max() const {
    if (is_signed) {
      if (total_bits == 64) return INT64_MAX;
      return (int64_t(1) << (total_bits - 1)) - 1;
    }
    if (total_bits >= 64) return INT64_MAX;  // unsigned 64 clipped to int64 carrier
    return (int64_t(1) << total_bits) - 1;
  }

  double resolution() const { return std::ldexp(1.0, -frac_bits); }

  bool operator==(const FxpFormat&) const = default;
};

namespace detail {

// Arithmetic shift with round-half-to-even. shift > 0 drops `shift`
// fraction bits; shift <= 0 is an exact left shift.
inline __int128 shift_round_even(__int128 v, int shift) {
  if (shift <= 0) return v << (-shift);
  const __int128 floor_part = v >> shift;
  const __int128 rem = v - (floor_part << shift);  // in [0, 2^shift)
  const __int128 half = __int128(1) << (shift - 1);
  if (rem > half || (rem == half && (floor_part & 1))) return floor_part + 1;
  return floor_part;
}

inline int64_t saturate(__int128 raw, const FxpFormat& fmt) {
  const __int128 lo = fmt.raw_min();
  const __int128 hi = fmt.raw_max();
  if (raw < lo) return fmt.raw_min();
  if (raw > hi) return fmt.raw_max();
  return static_cast<int64_t>(raw);
}

}  // namespace detail

// Real value of a raw integer under a format.
inline double value_of(int64_t raw, const FxpFormat& fmt) {
  return std::ldexp(static_cast<double>(raw), -fmt.frac_bits);
}

// Round-half-to-even quantization of a real into fmt, saturating.
inline int64_t quantize(double x, const FxpFormat& fmt) {
  fmt.require_valid();
  if (!std::isfinite(x)) throw std::domain_error("quantize: non-finite input");
  const double scaled = std::ldexp(x, fmt.frac_bits);
  // Guard the int64 conversion itself; format saturation happens after.
  if (scaled >= 9.2233720368547758e18) return fmt.raw_max();
  if (scaled <= -9.2233720368547758e18) return fmt.raw_min();
  const int64_t r = std::llrint(scaled);  // FE_TONEAREST: ties to even
  return detail::saturate(r, fmt);
}

// Exact re-interpretation of a raw value from one fraction position to
// another, rounding half-to-even and saturating into out_fmt.
inline int64_t rescale_raw(int64_t raw, int from_frac, const FxpFormat& out_fmt) {
  const __int128 shifted =
      detail::shift_round_even(raw, from_frac - out_fmt.frac_bits);
  return detail::saturate(shifted, out_fmt);
}

struct FxpValue {
  int64_t raw = 0;
  FxpFormat fmt;

  double value() const { return value_of(raw, fmt); }
};

inline FxpValue make_fxp(double x, const FxpFormat& fmt) {
  return FxpValue{quantize(x, fmt), fmt};
}

// Exact product, then one rounding into out_fmt.
inline FxpValue fxp_mul(const FxpValue& a, const FxpValue& b,
                        const FxpFormat& out_fmt) {
  out_fmt.require_valid();
  const __int128 prod = static_cast<__int128>(a.raw) * b.raw;
  const int prod_frac = a.fmt.frac_bits + b.fmt.frac_bits;
  const __int128 shifted =
      detail::shift_round_even(prod, prod_frac - out_fmt.frac_bits);
  return FxpValue{detail::saturate(shifted, out_fmt), out_fmt};
}

// Exact sum on a common fraction grid, then one rounding into out_fmt.
// Saturation makes the operation non-associative; callers must not
// rely on regrouping.
inline FxpValue fxp_add(const FxpValue& a, const FxpValue& b,
                        const FxpFormat& out_fmt) {
  out_fmt.require_valid();
  const int cf = std::max(a.fmt.frac_bits, b.fmt.frac_bits);
  const __int128 va = static_cast<__int128>(a.raw) << (cf - a.fmt.frac_bits);
  const __int128 vb = static_cast<__int128>(b.raw) << (cf - b.fmt.frac_bits);
  const __int128 shifted =
      detail::shift_round_even(va + vb, cf - out_fmt.frac_bits);
  return FxpValue{detail::saturate(shifted, out_fmt), out_fmt};
}

inline FxpValue fxp_sub(const FxpValue& a, const FxpValue& b,
                        const FxpFormat& out_fmt) {
  return fxp_add(a, FxpValue{-b.raw, b.fmt}, out_fmt);
}

struct TensorShape {
  int batch = 0;
  int channels = 0;
  int positions = 0;

  int64_t size() const {
    return int64_t(batch) * channels * positions;
  }
  bool operator==(const TensorShape&) const = default;
};

// Dense 3-D fixed-point tensor, row-major (batch, channel, position).
// Also used for weights, read as (in_ch, out_ch, tap).
class FxpTensor {
 public:
  FxpTensor() = default;
  FxpTensor(TensorShape shape, FxpFormat fmt)
      : shape_(shape), fmt_(fmt), data_(check_size(shape), 0) {
    fmt_.require_valid();
  }
  FxpTensor(TensorShape shape, FxpFormat fmt, std::vector<int64_t> data)
      : shape_(shape), fmt_(fmt), data_(std::move(data)) {
    fmt_.require_valid();
    if (static_cast<int64_t>(data_.size()) != shape_.size())
      throw ShapeError("tensor data length does not match shape");
    for (int64_t raw : data_) check_range(raw);
  }

  const TensorShape& shape() const { return shape_; }
  const FxpFormat& format() const { return fmt_; }
  int64_t size() const { return shape_.size(); }

  int64_t& at(int b, int c, int s) { return data_[index(b, c, s)]; }
  int64_t at(int b, int c, int s) const { return data_[index(b, c, s)]; }

  double value_at(int b, int c, int s) const {
    return value_of(at(b, c, s), fmt_);
  }

  void set(int b, int c, int s, int64_t raw) {
    check_range(raw);
    data_[index(b, c, s)] = raw;
  }

  const std::vector<int64_t>& data() const { return data_; }
  std::vector<int64_t>& mutable_data() { return data_; }

  bool operator==(const FxpTensor&) const = default;

 private:
  static int64_t check_size(const TensorShape& s) {
    if (s.batch < 0 || s.channels < 0 || s.positions < 0)
      throw ShapeError("negative tensor dimension");
    return s.size();
  }
  int64_t index(int b, int c, int s) const {
    return (int64_t(b) * shape_.channels + c) * shape_.positions + s;
  }
  void check_range(int64_t raw) const {
    if (raw < fmt_.raw_min() || raw > fmt_.raw_max())
      throw RangeError("raw value outside format range: " +
                       std::to_string(raw));
  }

  TensorShape shape_;
  FxpFormat fmt_ = FxpFormat{64, 0, true};
  std::vector<int64_t> data_;
};

// Elementwise re-quantization of represented values into fmt.
inline FxpTensor requantize(const FxpTensor& t, const FxpFormat& fmt) {
  fmt.require_valid();
  FxpTensor out(t.shape(), fmt);
  const auto& src = t.data();
  auto& dst = out.mutable_data();
  for (size_t i = 0; i < src.size(); ++i)
    dst[i] = rescale_raw(src[i], t.format().frac_bits, fmt);
  return out;
}

inline FxpTensor quantize_tensor(TensorShape shape, const FxpFormat& fmt,
                                 const std::vector<double>& values) {
  if (static_cast<int64_t>(values.size()) != shape.size())
    throw ShapeError("value count does not match shape");
  FxpTensor out(shape, fmt);
  auto& dst = out.mutable_data();
  for (size_t i = 0; i < values.size(); ++i) dst[i] = quantize(values[i], fmt);
  return out;
}

}  // namespace eqsim
