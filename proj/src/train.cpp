#include "eqsim/train.hpp"

#include <cmath>

namespace eqsim {

namespace {

// dz (B x 1 x out_ch*S2) back to feature layout (B x out_ch x S2),
// inverting the channel-major flatten of the forward pass.
FxpTensor unflatten(const FxpTensor& dz, int out_ch) {
  const TensorShape zs = dz.shape();
  if (zs.channels != 1 || zs.positions % out_ch != 0)
    throw ShapeError("unflatten: bad output gradient shape");
  const int s2 = zs.positions / out_ch;
  FxpTensor dy({zs.batch, out_ch, s2}, dz.format());
  for (int n = 0; n < zs.batch; ++n)
    for (int s = 0; s < s2; ++s)
      for (int o = 0; o < out_ch; ++o)
        dy.at(n, o, s) = dz.at(n, 0, s * out_ch + o);
  return dy;
}

}  // namespace

LossResult mse_loss(const FxpTensor& z, const std::vector<double>& x_ref,
                    const FxpFormat& grad_fmt) {
  const TensorShape zs = z.shape();
  if (zs.channels != 1) throw ShapeError("mse_loss expects B x 1 x L outputs");
  const int64_t total = zs.size();
  if (total != static_cast<int64_t>(x_ref.size()))
    throw ShapeError("mse_loss: output and reference lengths differ");
  if (total == 0) throw ShapeError("mse_loss: empty input");

  LossResult res;
  res.dz = FxpTensor(zs, grad_fmt);
  auto& dz = res.dz.mutable_data();
  double acc = 0.0;
  for (int64_t i = 0; i < total; ++i) {
    const double diff = value_of(z.data()[i], z.format()) - x_ref[i];
    acc += diff * diff;
    dz[i] = quantize(2.0 * diff / static_cast<double>(total), grad_fmt);
  }
  res.loss = acc / static_cast<double>(total);
  return res;
}

LossResult streamed_mse_loss(const FxpTensor& z,
                             const std::vector<double>& x_ref,
                             int group_symbols, const FxpFormat& grad_fmt) {
  if (group_symbols < 1) throw SpecError("group size must be >= 1");
  const TensorShape zs = z.shape();
  if (zs.channels != 1) throw ShapeError("mse loss expects B x 1 x L outputs");
  const int64_t total = zs.size();
  if (total != static_cast<int64_t>(x_ref.size()) || total == 0)
    throw ShapeError("mse loss: output and reference lengths differ");

  LossResult res;
  res.dz = FxpTensor(zs, grad_fmt);
  auto& dz = res.dz.mutable_data();
  double acc = 0.0;
  for (int64_t i = 0; i < total; ++i) {
    const double diff = value_of(z.data()[i], z.format()) - x_ref[i];
    acc += diff * diff;
    dz[i] = quantize(2.0 * diff / group_symbols, grad_fmt);
  }
  res.loss = acc / static_cast<double>(total);
  return res;
}

ConvGrads conv1d_backward(const FxpTensor& x_saved, const FxpTensor& dy,
                          const ConvSpec& spec, const FxpTensor& weights,
                          const FxpFormat& grad_fmt) {
  const TensorShape xs = x_saved.shape();
  const TensorShape ys = dy.shape();
  if (xs.channels != spec.in_ch || ys.channels != spec.out_ch ||
      xs.batch != ys.batch || ys.positions != spec.out_len(xs.positions))
    throw ShapeError("conv backward shape mismatch");
  if (weights.shape() != TensorShape{spec.in_ch, spec.out_ch, spec.kernel})
    throw ShapeError("conv backward weight shape mismatch");
  if (dy.format() != grad_fmt)
    throw ShapeError("output gradient must be in gradient format");

  ConvGrads g;

  // dW: accumulate x * dy products exactly, round once per element.
  const int dw_frac = x_saved.format().frac_bits + grad_fmt.frac_bits;
  g.dw = FxpTensor({spec.in_ch, spec.out_ch, spec.kernel}, grad_fmt);
  for (int i = 0; i < spec.in_ch; ++i) {
    for (int o = 0; o < spec.out_ch; ++o) {
      for (int k = 0; k < spec.kernel; ++k) {
        int64_t acc = 0;
        for (int n = 0; n < xs.batch; ++n) {
          for (int s = 0; s < ys.positions; ++s) {
            const int pos = s * spec.stride + k - spec.padding;
            if (pos < 0 || pos >= xs.positions) continue;
            acc += x_saved.at(n, i, pos) * dy.at(n, o, s);
          }
        }
        g.dw.at(i, o, k) = rescale_raw(acc, dw_frac, grad_fmt);
      }
    }
  }

  // dB: plain sum of dy, already on the gradient grid.
  g.db.assign(spec.out_ch, 0);
  for (int o = 0; o < spec.out_ch; ++o) {
    int64_t acc = 0;
    for (int n = 0; n < ys.batch; ++n)
      for (int s = 0; s < ys.positions; ++s) acc += dy.at(n, o, s);
    g.db[o] = rescale_raw(acc, grad_fmt.frac_bits, grad_fmt);
  }

  // dx: transposed convolution, scattered over the forward input grid.
  const int dx_frac = grad_fmt.frac_bits + weights.format().frac_bits;
  std::vector<int64_t> dx_acc(xs.size(), 0);
  auto dx_at = [&](int n, int i, int t) -> int64_t& {
    return dx_acc[(size_t(n) * xs.channels + i) * xs.positions + t];
  };
  for (int n = 0; n < ys.batch; ++n) {
    for (int o = 0; o < spec.out_ch; ++o) {
      for (int s = 0; s < ys.positions; ++s) {
        const int64_t dval = dy.at(n, o, s);
        if (dval == 0) continue;
        for (int i = 0; i < spec.in_ch; ++i) {
          for (int k = 0; k < spec.kernel; ++k) {
            const int t = s * spec.stride + k - spec.padding;
            if (t < 0 || t >= xs.positions) continue;
            dx_at(n, i, t) += dval * weights.at(i, o, k);
          }
        }
      }
    }
  }
  g.dx = FxpTensor(xs, grad_fmt);
  auto& dx = g.dx.mutable_data();
  for (size_t idx = 0; idx < dx_acc.size(); ++idx)
    dx[idx] = rescale_raw(dx_acc[idx], dx_frac, grad_fmt);
  return g;
}

FxpTensor relu_backward(const FxpTensor& pre_act_saved, const FxpTensor& dy) {
  if (pre_act_saved.shape() != dy.shape())
    throw ShapeError("relu backward shape mismatch");
  FxpTensor dx(dy.shape(), dy.format());
  auto& out = dx.mutable_data();
  const auto& pre = pre_act_saved.data();
  const auto& g = dy.data();
  for (size_t i = 0; i < g.size(); ++i) out[i] = pre[i] > 0 ? g[i] : 0;
  return dx;
}

GradSet backward(const CnnModel& model, const ForwardCache& cache,
                 const FxpTensor& dz) {
  const FxpTensor dy2 = unflatten(dz, model.layer2.out_ch);
  ConvGrads g2 =
      conv1d_backward(cache.act1, dy2, model.layer2, model.w2, model.grad_fmt);
  const FxpTensor dpre1 = relu_backward(cache.pre_act1, g2.dx);
  ConvGrads g1 = conv1d_backward(cache.x_input, dpre1, model.layer1, model.w1,
                                 model.grad_fmt);
  GradSet grads;
  grads.dw1 = std::move(g1.dw);
  grads.dw2 = std::move(g2.dw);
  grads.db1 = std::move(g1.db);
  grads.db2 = std::move(g2.db);
  grads.dx_l2 = std::move(g2.dx);
  grads.dx_l1 = std::move(g1.dx);
  return grads;
}

namespace {

void apply_summed(CnnModel& model, const std::vector<const GradSet*>& grads,
                  double lr) {
  const FxpFormat& gf = model.grad_fmt;
  auto step = [&](std::vector<int64_t>& master, auto raw_of) {
    for (size_t i = 0; i < master.size(); ++i) {
      int64_t sum = 0;
      for (const GradSet* g : grads) sum += raw_of(*g, i);
      const int64_t delta = quantize(lr * value_of(sum, gf), gf);
      master[i] = detail::saturate(static_cast<__int128>(master[i]) - delta, gf);
    }
  };
  step(model.w1_master.mutable_data(),
       [](const GradSet& g, size_t i) { return g.dw1.data()[i]; });
  step(model.w2_master.mutable_data(),
       [](const GradSet& g, size_t i) { return g.dw2.data()[i]; });
  step(model.b1_master,
       [](const GradSet& g, size_t i) { return g.db1[i]; });
  step(model.b2_master,
       [](const GradSet& g, size_t i) { return g.db2[i]; });
  model.refresh_inference_copies();
}

void check_grad_shapes(const CnnModel& model, const GradSet& g) {
  if (g.dw1.shape() != model.w1_master.shape() ||
      g.dw2.shape() != model.w2_master.shape() ||
      g.db1.size() != model.b1_master.size() ||
      g.db2.size() != model.b2_master.size())
    throw ShapeError("gradient shapes do not match the model");
}

}  // namespace

void sgd_update(CnnModel& model, const GradSet& grads, double lr) {
  check_grad_shapes(model, grads);
  apply_summed(model, {&grads}, lr);
}

void parallel_round_update(CnnModel& model, const std::vector<GradSet>& grads,
                           double lr) {
  if (grads.empty()) return;
  std::vector<const GradSet*> ptrs;
  ptrs.reserve(grads.size());
  for (const auto& g : grads) {
    check_grad_shapes(model, g);
    ptrs.push_back(&g);
  }
  apply_summed(model, ptrs, lr);
}

// -------- shadow ------------------------------------------------------

DTensor to_double(const FxpTensor& t) {
  DTensor d(t.shape());
  for (int64_t i = 0; i < t.size(); ++i)
    d.data[i] = value_of(t.data()[i], t.format());
  return d;
}

ShadowModel shadow_of(const CnnModel& model) {
  ShadowModel s;
  s.layer1 = model.layer1;
  s.layer2 = model.layer2;
  auto weights_of = [](const FxpTensor& w) {
    std::vector<double> v(w.size());
    for (int64_t i = 0; i < w.size(); ++i)
      v[i] = value_of(w.data()[i], w.format());
    return v;
  };
  s.w1 = weights_of(model.w1);
  s.w2 = weights_of(model.w2);
  auto bias_of = [&](const std::vector<int64_t>& b) {
    std::vector<double> v(b.size());
    for (size_t i = 0; i < b.size(); ++i) v[i] = value_of(b[i], model.bias_fmt);
    return v;
  };
  s.b1 = bias_of(model.b1);
  s.b2 = bias_of(model.b2);
  return s;
}

namespace {

size_t widx(const ConvSpec& spec, int i, int o, int k) {
  return (size_t(i) * spec.out_ch + o) * spec.kernel + k;
}

}  // namespace

DTensor shadow_conv_forward(const DTensor& x, const ConvSpec& spec,
                            const std::vector<double>& w,
                            const std::vector<double>& b) {
  const int out_len = spec.out_len(x.shape.positions);
  DTensor y({x.shape.batch, spec.out_ch, out_len});
  for (int n = 0; n < x.shape.batch; ++n) {
    for (int o = 0; o < spec.out_ch; ++o) {
      for (int s = 0; s < out_len; ++s) {
        double acc = b[o];
        for (int i = 0; i < spec.in_ch; ++i) {
          for (int k = 0; k < spec.kernel; ++k) {
            const int pos = s * spec.stride + k - spec.padding;
            if (pos < 0 || pos >= x.shape.positions) continue;
            acc += x.at(n, i, pos) * w[widx(spec, i, o, k)];
          }
        }
        if (spec.activation == Activation::Relu && acc < 0) acc = 0;
        y.at(n, o, s) = acc;
      }
    }
  }
  return y;
}

namespace {

DTensor flatten_shadow(const DTensor& feat) {
  DTensor z({feat.shape.batch, 1, feat.shape.channels * feat.shape.positions});
  for (int n = 0; n < feat.shape.batch; ++n)
    for (int s = 0; s < feat.shape.positions; ++s)
      for (int o = 0; o < feat.shape.channels; ++o)
        z.at(n, 0, s * feat.shape.channels + o) = feat.at(n, o, s);
  return z;
}

}  // namespace

DTensor shadow_forward(const ShadowModel& m, const DTensor& y) {
  const DTensor a1 = shadow_conv_forward(y, m.layer1, m.w1, m.b1);
  return flatten_shadow(shadow_conv_forward(a1, m.layer2, m.w2, m.b2));
}

ShadowCache shadow_forward_cache(const ShadowModel& m, const DTensor& y) {
  ShadowCache cache;
  ConvSpec linear1 = m.layer1;
  linear1.activation = Activation::None;
  cache.pre_act1 = shadow_conv_forward(y, linear1, m.w1, m.b1);
  cache.act1 = DTensor(cache.pre_act1.shape);
  for (size_t i = 0; i < cache.act1.data.size(); ++i)
    cache.act1.data[i] = std::max(0.0, cache.pre_act1.data[i]);
  cache.z =
      flatten_shadow(shadow_conv_forward(cache.act1, m.layer2, m.w2, m.b2));
  return cache;
}

namespace {

struct ShadowConvGrads {
  std::vector<double> dw, db;
  DTensor dx;
};

ShadowConvGrads shadow_conv_backward(const DTensor& x, const DTensor& dy,
                                     const ConvSpec& spec,
                                     const std::vector<double>& w) {
  ShadowConvGrads g;
  g.dw.assign(w.size(), 0.0);
  g.db.assign(spec.out_ch, 0.0);
  g.dx = DTensor(x.shape);
  for (int n = 0; n < x.shape.batch; ++n) {
    for (int o = 0; o < spec.out_ch; ++o) {
      for (int s = 0; s < dy.shape.positions; ++s) {
        const double dval = dy.at(n, o, s);
        g.db[o] += dval;
        for (int i = 0; i < spec.in_ch; ++i) {
          for (int k = 0; k < spec.kernel; ++k) {
            const int pos = s * spec.stride + k - spec.padding;
            if (pos < 0 || pos >= x.shape.positions) continue;
            g.dw[widx(spec, i, o, k)] += x.at(n, i, pos) * dval;
            g.dx.at(n, i, pos) += dval * w[widx(spec, i, o, k)];
          }
        }
      }
    }
  }
  return g;
}

}  // namespace

ShadowGrads shadow_backward(const ShadowModel& m, const DTensor& x_input,
                            const DTensor& pre_act1, const DTensor& act1,
                            const DTensor& dz) {
  const int out_ch = m.layer2.out_ch;
  const int s2 = dz.shape.positions / out_ch;
  DTensor dy2({dz.shape.batch, out_ch, s2});
  for (int n = 0; n < dz.shape.batch; ++n)
    for (int s = 0; s < s2; ++s)
      for (int o = 0; o < out_ch; ++o)
        dy2.at(n, o, s) = dz.at(n, 0, s * out_ch + o);

  ShadowConvGrads g2 = shadow_conv_backward(act1, dy2, m.layer2, m.w2);

  DTensor dpre1(g2.dx.shape);
  for (size_t i = 0; i < dpre1.data.size(); ++i)
    dpre1.data[i] = pre_act1.data[i] > 0.0 ? g2.dx.data[i] : 0.0;

  ShadowConvGrads g1 = shadow_conv_backward(x_input, dpre1, m.layer1, m.w1);

  ShadowGrads out;
  out.dw1 = std::move(g1.dw);
  out.dw2 = std::move(g2.dw);
  out.db1 = std::move(g1.db);
  out.db2 = std::move(g2.db);
  out.dx_l2 = std::move(g2.dx);
  out.dx_l1 = std::move(g1.dx);
  return out;
}

}  // namespace eqsim
