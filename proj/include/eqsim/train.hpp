#pragma once

// Fixed-point supervised training path: MSE loss, backward pass through
// both conv layers, ReLU gating, master-weight update with requantized
// inference snapshots. A double-precision shadow of the same dataflow
// backs the gradient verification.

#include <vector>

#include "eqsim/cnn.hpp"
#include "eqsim/fxp.hpp"

namespace eqsim {

struct TrainConfig {
  double lr = 0.001;
  int seq_len = 512;  // symbols per weight update

  void validate() const {
    if (lr <= 0) throw SpecError("learning rate must be > 0");
    if (seq_len < 8 || seq_len % 8 != 0)
      throw SpecError("seq_len must be a positive multiple of 8");
  }
};

struct GradSet {
  FxpTensor dw1, dw2;               // gradient format, weight shapes
  std::vector<int64_t> db1, db2;    // gradient format raws
  FxpTensor dx_l2;  // gradient at the layer-2 input (post-ReLU boundary)
  FxpTensor dx_l1;  // gradient at the network input
};

struct LossResult {
  double loss = 0.0;
  FxpTensor dz;  // gradient format, shape of z
};

// loss = mean((z_k - x_k)^2); dz_k = 2 (z_k - x_k) / SL.
LossResult mse_loss(const FxpTensor& z, const std::vector<double>& x_ref,
                    const FxpFormat& grad_fmt);

// Streaming-pipeline variant: the gradient is normalized per output
// group (the symbols one instance emits per clock) and accumulated
// across the sub-sequence, so the per-update step scales with SL the
// way the pipelined loss block does. Reported loss is still the
// sub-sequence mean.
LossResult streamed_mse_loss(const FxpTensor& z,
                             const std::vector<double>& x_ref,
                             int group_symbols, const FxpFormat& grad_fmt);

struct ConvGrads {
  FxpTensor dw;
  std::vector<int64_t> db;
  FxpTensor dx;
};

// dW[i,o,k] = sum_{n,s} X[n,i,s*stride+k-P] dY[n,o,s];  dB[o] = sum dY;
// dx = stride-dilated transposed convolution of dY with W, sized to the
// forward input. Wide accumulation, one rounding into grad_fmt.
ConvGrads conv1d_backward(const FxpTensor& x_saved, const FxpTensor& dy,
                          const ConvSpec& spec, const FxpTensor& weights,
                          const FxpFormat& grad_fmt);

// dx = dy where the saved pre-activation is > 0, else 0.
FxpTensor relu_backward(const FxpTensor& pre_act_saved, const FxpTensor& dy);

// Full chain: unflatten(dz) -> layer-2 backward -> ReLU gate -> layer-1
// backward.
GradSet backward(const CnnModel& model, const ForwardCache& cache,
                 const FxpTensor& dz);

// master <- master - quantize(lr * grad); inference copies re-derived.
void sgd_update(CnnModel& model, const GradSet& grads, double lr);

// One synchronization round: the gradient sets (all computed against
// the same weight snapshot) are summed exactly and applied as a single
// step, so identical slices amplify the effective step size by P_T.
void parallel_round_update(CnnModel& model, const std::vector<GradSet>& grads,
                           double lr);

// -------- double-precision shadow of the same dataflow ----------------

struct DTensor {
  TensorShape shape;
  std::vector<double> data;

  DTensor() = default;
  explicit DTensor(TensorShape s) : shape(s), data(s.size(), 0.0) {}
  double& at(int b, int c, int p) {
    return data[(size_t(b) * shape.channels + c) * shape.positions + p];
  }
  double at(int b, int c, int p) const {
    return data[(size_t(b) * shape.channels + c) * shape.positions + p];
  }
};

DTensor to_double(const FxpTensor& t);

struct ShadowModel {
  ConvSpec layer1, layer2;  // formats ignored
  std::vector<double> w1, w2, b1, b2;
};

// Shadow built from the inference copies (what the forward pass uses).
ShadowModel shadow_of(const CnnModel& model);

DTensor shadow_conv_forward(const DTensor& x, const ConvSpec& spec,
                            const std::vector<double>& w,
                            const std::vector<double>& b);
DTensor shadow_forward(const ShadowModel& m, const DTensor& y);

struct ShadowCache {
  DTensor pre_act1;  // layer-1 output before the ReLU clamp
  DTensor act1;
  DTensor z;
};
ShadowCache shadow_forward_cache(const ShadowModel& m, const DTensor& y);

struct ShadowGrads {
  std::vector<double> dw1, dw2, db1, db2;
  DTensor dx_l2, dx_l1;
};

// Real-arithmetic backward on the same saved activations and dz.
ShadowGrads shadow_backward(const ShadowModel& m, const DTensor& x_input,
                            const DTensor& pre_act1, const DTensor& act1,
                            const DTensor& dz);

}  // namespace eqsim
