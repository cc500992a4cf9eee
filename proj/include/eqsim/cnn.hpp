#pragma once

// Quantized two-layer Conv1D equalizer: batch-parallel weight-reuse
// forward pass with an optional packed-multiplier datapath for the
// second layer, plus symbol decision and model checkpointing.

#include <array>
#include <string>
#include <vector>

#include "eqsim/dsppack.hpp"
#include "eqsim/fxp.hpp"
#include "eqsim/rng.hpp"

namespace eqsim {

enum class Activation { None, Relu };

struct ConvSpec {
  int in_ch = 1;
  int out_ch = 1;
  int kernel = 1;
  int stride = 1;
  int padding = 0;
  Activation activation = Activation::None;
  FxpFormat weight_fmt;
  FxpFormat act_fmt;    // output format (unsigned when activation is Relu)
  FxpFormat accum_fmt;  // wide accumulator, frac = input frac + weight frac

  int out_len(int in_len) const {
    return (in_len + 2 * padding - kernel) / stride + 1;
  }
  void validate() const;
};

// Accumulator wide enough for kernel*in_ch products plus bias, never
// saturating before the final requantize.
FxpFormat accum_format(const FxpFormat& x_fmt, const FxpFormat& w_fmt,
                       int kernel, int in_ch);

// Multiplier usage tally of a forward pass. A packed multiply computes
// two products on one multiplier.
struct MultiplyStats {
  int64_t scalar = 0;
  int64_t packed = 0;
  int64_t multipliers() const { return scalar + packed; }
  int64_t products() const { return scalar + 2 * packed; }
};

// Reference per-sample convolution:
//   Y[n,o,s] = sum_{i,k} X[n,i,s*stride+k-P] * W[i,o,k] + bias[o]
// with zero padding, wide accumulation, one rounding into act_fmt.
FxpTensor conv1d_forward(const FxpTensor& x, const ConvSpec& spec,
                         const FxpTensor& weights,
                         const std::vector<int64_t>& bias_raw,
                         const FxpFormat& bias_fmt);

// Weight-reuse schedule: every weight is fetched once per output
// position and applied to all batch elements. Bit-identical to
// conv1d_forward per batch element. With use_packed, batch pairs
// (2m, 2m+1) route through packed_mul (requires unsigned inputs).
FxpTensor batch_parallel_forward(const FxpTensor& x, const ConvSpec& spec,
                                 const FxpTensor& weights,
                                 const std::vector<int64_t>& bias_raw,
                                 const FxpFormat& bias_fmt,
                                 bool use_packed = false,
                                 MultiplyStats* stats = nullptr);

struct QuantConfig {
  int input_bits = 10, input_frac = 8;
  int act_bits = 10, act_frac = 8;
  int weight_bits = 6, weight_frac = 5;
  int bias_bits = 16, bias_frac = 8;
  int grad_bits = 24, grad_frac = 16;

  FxpFormat input_fmt() const { return {input_bits, input_frac, true}; }
  FxpFormat relu_fmt() const { return {act_bits, act_frac, false}; }
  FxpFormat output_fmt() const { return {act_bits, act_frac, true}; }
  FxpFormat weight_fmt() const { return {weight_bits, weight_frac, true}; }
  FxpFormat bias_fmt() const { return {bias_bits, bias_frac, true}; }
  FxpFormat grad_fmt() const { return {grad_bits, grad_frac, true}; }
  void validate() const;
};

// Two Conv1D layers: 1->4 (K=9, P=4, stride 8, ReLU) then 4->8
// (K=9, P=4, stride 2); a pass consumes 16 samples and emits 8 symbols.
struct CnnModel {
  ConvSpec layer1, layer2;
  FxpFormat input_fmt, grad_fmt, bias_fmt;
  bool packed_layer2 = true;

  // Master copies carry the training precision; inference copies are
  // requantized snapshots and must never be updated directly.
  FxpTensor w1_master, w2_master;
  FxpTensor w1, w2;
  std::vector<int64_t> b1_master, b2_master;
  std::vector<int64_t> b1, b2;

  void refresh_inference_copies();
  bool inference_matches_master() const;
};

// Uniform init in +-1/sqrt(K*I_c) on the master copy, zero bias.
CnnModel make_equalizer_model(const QuantConfig& quant, bool packed_layer2,
                              Philox& rng);

// y: B x 1 x S with S a multiple of 16 -> B x 1 x (S/2). Output symbol
// s*out_ch + o is feature (o, s) of the second layer.
FxpTensor forward(const CnnModel& model, const FxpTensor& y,
                  MultiplyStats* stats = nullptr);

// Forward pass that keeps what the backward pass needs.
struct ForwardCache {
  FxpTensor x_input;   // network input (input fmt)
  FxpTensor pre_act1;  // layer-1 pre-activation, exact sign (grad fmt)
  FxpTensor act1;      // layer-2 input (unsigned act fmt)
  FxpTensor z;         // flattened output (signed act fmt)
};
ForwardCache forward_with_cache(const CnnModel& model, const FxpTensor& y);

// Nearest alphabet level, ties toward the lower level.
std::vector<double> decide(const std::vector<double>& z, int pam_order);

// Versioned textual checkpoint of formats, layer geometry and raw
// master weights; inference copies are re-derived on load.
void save_model(const CnnModel& model, const std::string& path);
CnnModel load_model(const std::string& path);

}  // namespace eqsim
