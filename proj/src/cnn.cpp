#include "eqsim/cnn.hpp"

#include <cmath>
#include <fstream>
#include <sstream>

#include "eqsim/channel.hpp"

namespace eqsim {

namespace {

int ceil_log2(int n) {
  int bits = 0;
  while ((1 << bits) < n) ++bits;
  return bits;
}

// Shared accumulation core. Returns raw accumulator values (fraction
// position = x.frac + w.frac) in output shape, bias already added.
// Loop order is position-major so each weight is fetched once per
// output position and applied across the whole batch; with use_packed,
// batch pairs share one wide multiply.
std::vector<int64_t> conv_accumulate(const FxpTensor& x, const ConvSpec& spec,
                                     const FxpTensor& w,
                                     const std::vector<int64_t>& bias_raw,
                                     const FxpFormat& bias_fmt, bool use_packed,
                                     MultiplyStats* stats) {
  spec.validate();
  const TensorShape xs = x.shape();
  if (xs.channels != spec.in_ch)
    throw ShapeError("conv input channels do not match spec");
  if (w.shape() != TensorShape{spec.in_ch, spec.out_ch, spec.kernel})
    throw ShapeError("conv weight shape does not match spec");
  if (static_cast<int>(bias_raw.size()) != spec.out_ch)
    throw ShapeError("conv bias length does not match spec");

  const int acc_frac = x.format().frac_bits + w.format().frac_bits;
  if (spec.accum_fmt.frac_bits != acc_frac)
    throw SpecError("accumulator fraction does not match operand formats");
  if (bias_fmt.frac_bits > acc_frac)
    throw SpecError("bias fraction exceeds the accumulator fraction");
  const int bias_shift = acc_frac - bias_fmt.frac_bits;

  const int out_len = spec.out_len(xs.positions);
  if (out_len < 1) throw ShapeError("conv output would be empty");

  PackedMulSpec pack{x.format().total_bits, w.format().total_bits};
  if (use_packed) {
    if (x.format().is_signed || !w.format().is_signed)
      throw SpecError("packed datapath needs unsigned data, signed weights");
    if (xs.batch % 2 != 0)
      throw SpecError("packed datapath needs an even batch");
    pack.require_valid();
  }

  std::vector<int64_t> acc(size_t(xs.batch) * spec.out_ch * out_len, 0);
  auto acc_at = [&](int n, int o, int s) -> int64_t& {
    return acc[(size_t(n) * spec.out_ch + o) * out_len + s];
  };

  for (int s = 0; s < out_len; ++s) {
    for (int o = 0; o < spec.out_ch; ++o) {
      for (int i = 0; i < spec.in_ch; ++i) {
        for (int k = 0; k < spec.kernel; ++k) {
          const int pos = s * spec.stride + k - spec.padding;
          if (pos < 0 || pos >= xs.positions) continue;
          const int64_t weight = w.at(i, o, k);
          if (use_packed) {
            for (int n = 0; n < xs.batch; n += 2) {
              const auto [r1, r2] =
                  packed_mul(static_cast<uint64_t>(x.at(n, i, pos)),
                             static_cast<uint64_t>(x.at(n + 1, i, pos)),
                             weight, pack);
              acc_at(n, o, s) += r1;
              acc_at(n + 1, o, s) += r2;
              if (stats) ++stats->packed;
            }
          } else {
            for (int n = 0; n < xs.batch; ++n) {
              acc_at(n, o, s) += x.at(n, i, pos) * weight;
              if (stats) ++stats->scalar;
            }
          }
        }
      }
      const int64_t b = bias_raw[o] << bias_shift;
      for (int n = 0; n < xs.batch; ++n) acc_at(n, o, s) += b;
    }
  }
  return acc;
}

FxpTensor finish_activation(const std::vector<int64_t>& acc, int batch,
                            const ConvSpec& spec, int out_len, int acc_frac) {
  FxpTensor out({batch, spec.out_ch, out_len}, spec.act_fmt);
  auto& data = out.mutable_data();
  for (size_t idx = 0; idx < acc.size(); ++idx) {
    int64_t v = acc[idx];
    if (spec.activation == Activation::Relu && v < 0) v = 0;
    data[idx] = rescale_raw(v, acc_frac, spec.act_fmt);
  }
  return out;
}

}  // namespace

void ConvSpec::validate() const {
  if (in_ch < 1 || out_ch < 1) throw SpecError("conv needs >= 1 channel");
  if (kernel < 1 || kernel % 2 == 0) throw SpecError("kernel must be odd");
  if (stride < 1) throw SpecError("stride must be >= 1");
  if (padding < 0) throw SpecError("padding must be >= 0");
  weight_fmt.require_valid();
  act_fmt.require_valid();
  accum_fmt.require_valid();
  if (activation == Activation::Relu && act_fmt.is_signed)
    throw SpecError("ReLU output format must be unsigned");
}

FxpFormat accum_format(const FxpFormat& x_fmt, const FxpFormat& w_fmt,
                       int kernel, int in_ch) {
  const int total =
      x_fmt.total_bits + w_fmt.total_bits + ceil_log2(kernel * in_ch) + 1;
  return {std::min(total, 64), x_fmt.frac_bits + w_fmt.frac_bits, true};
}

FxpTensor conv1d_forward(const FxpTensor& x, const ConvSpec& spec,
                         const FxpTensor& weights,
                         const std::vector<int64_t>& bias_raw,
                         const FxpFormat& bias_fmt) {
  spec.validate();
  const TensorShape xs = x.shape();
  if (xs.channels != spec.in_ch)
    throw ShapeError("conv input channels do not match spec");
  if (weights.shape() != TensorShape{spec.in_ch, spec.out_ch, spec.kernel})
    throw ShapeError("conv weight shape does not match spec");
  if (static_cast<int>(bias_raw.size()) != spec.out_ch)
    throw ShapeError("conv bias length does not match spec");

  const int acc_frac = x.format().frac_bits + weights.format().frac_bits;
  if (spec.accum_fmt.frac_bits != acc_frac)
    throw SpecError("accumulator fraction does not match operand formats");
  if (bias_fmt.frac_bits > acc_frac)
    throw SpecError("bias fraction exceeds the accumulator fraction");
  const int bias_shift = acc_frac - bias_fmt.frac_bits;

  const int out_len = spec.out_len(xs.positions);
  if (out_len < 1) throw ShapeError("conv output would be empty");

  FxpTensor out({xs.batch, spec.out_ch, out_len}, spec.act_fmt);
  for (int n = 0; n < xs.batch; ++n) {
    for (int o = 0; o < spec.out_ch; ++o) {
      for (int s = 0; s < out_len; ++s) {
        int64_t acc = 0;
        for (int i = 0; i < spec.in_ch; ++i) {
          for (int k = 0; k < spec.kernel; ++k) {
            const int pos = s * spec.stride + k - spec.padding;
            if (pos < 0 || pos >= xs.positions) continue;
            acc += x.at(n, i, pos) * weights.at(i, o, k);
          }
        }
        acc += bias_raw[o] << bias_shift;
        if (spec.activation == Activation::Relu && acc < 0) acc = 0;
        out.at(n, o, s) = rescale_raw(acc, acc_frac, spec.act_fmt);
      }
    }
  }
  return out;
}

FxpTensor batch_parallel_forward(const FxpTensor& x, const ConvSpec& spec,
                                 const FxpTensor& weights,
                                 const std::vector<int64_t>& bias_raw,
                                 const FxpFormat& bias_fmt, bool use_packed,
                                 MultiplyStats* stats) {
  const auto acc = conv_accumulate(x, spec, weights, bias_raw, bias_fmt,
                                   use_packed, stats);
  const int acc_frac = x.format().frac_bits + weights.format().frac_bits;
  return finish_activation(acc, x.shape().batch, spec,
                           spec.out_len(x.shape().positions), acc_frac);
}

void QuantConfig::validate() const {
  input_fmt().require_valid();
  relu_fmt().require_valid();
  weight_fmt().require_valid();
  bias_fmt().require_valid();
  grad_fmt().require_valid();
  if (grad_frac < input_frac + weight_frac)
    throw SpecError("gradient fraction too narrow for exact pre-activations");
}

void CnnModel::refresh_inference_copies() {
  w1 = requantize(w1_master, w1.format());
  w2 = requantize(w2_master, w2.format());
  for (size_t i = 0; i < b1.size(); ++i)
    b1[i] = rescale_raw(b1_master[i], grad_fmt.frac_bits, bias_fmt);
  for (size_t i = 0; i < b2.size(); ++i)
    b2[i] = rescale_raw(b2_master[i], grad_fmt.frac_bits, bias_fmt);
}

bool CnnModel::inference_matches_master() const {
  CnnModel copy = *this;
  copy.refresh_inference_copies();
  return copy.w1 == w1 && copy.w2 == w2 && copy.b1 == b1 && copy.b2 == b2;
}

CnnModel make_equalizer_model(const QuantConfig& quant, bool packed_layer2,
                              Philox& rng) {
  quant.validate();
  CnnModel m;
  m.input_fmt = quant.input_fmt();
  m.grad_fmt = quant.grad_fmt();
  m.bias_fmt = quant.bias_fmt();
  m.packed_layer2 = packed_layer2;

  m.layer1 = ConvSpec{1,
                      4,
                      9,
                      8,
                      4,
                      Activation::Relu,
                      quant.weight_fmt(),
                      quant.relu_fmt(),
                      accum_format(quant.input_fmt(), quant.weight_fmt(), 9, 1)};
  m.layer2 = ConvSpec{4,
                      8,
                      9,
                      2,
                      4,
                      Activation::None,
                      quant.weight_fmt(),
                      quant.output_fmt(),
                      accum_format(quant.relu_fmt(), quant.weight_fmt(), 9, 4)};

  if (packed_layer2) {
    const PackedMulSpec pack{quant.act_bits, quant.weight_bits};
    const auto violations = check_mapping_constraints(pack, OperandTraits{});
    if (!violations.empty())
      throw SpecError("layer-2 widths violate the packed-multiplier rules: " +
                      violations.front().detail);
  }

  auto init_weights = [&](const ConvSpec& spec) {
    const double bound = 1.0 / std::sqrt(double(spec.kernel) * spec.in_ch);
    FxpTensor w({spec.in_ch, spec.out_ch, spec.kernel}, m.grad_fmt);
    auto& data = w.mutable_data();
    for (auto& raw : data)
      raw = quantize(rng.next_uniform(-bound, bound), m.grad_fmt);
    return w;
  };
  m.w1_master = init_weights(m.layer1);
  m.w2_master = init_weights(m.layer2);
  m.b1_master.assign(m.layer1.out_ch, 0);
  m.b2_master.assign(m.layer2.out_ch, 0);

  m.w1 = FxpTensor(m.w1_master.shape(), quant.weight_fmt());
  m.w2 = FxpTensor(m.w2_master.shape(), quant.weight_fmt());
  m.b1.assign(m.layer1.out_ch, 0);
  m.b2.assign(m.layer2.out_ch, 0);
  m.refresh_inference_copies();
  return m;
}

namespace {

FxpTensor flatten_features(const FxpTensor& feat) {
  const TensorShape fs = feat.shape();
  FxpTensor z({fs.batch, 1, fs.channels * fs.positions}, feat.format());
  for (int n = 0; n < fs.batch; ++n)
    for (int s = 0; s < fs.positions; ++s)
      for (int o = 0; o < fs.channels; ++o)
        z.at(n, 0, s * fs.channels + o) = feat.at(n, o, s);
  return z;
}

void check_input_shape(const CnnModel& model, const FxpTensor& y) {
  if (y.shape().channels != 1)
    throw ShapeError("equalizer input must have one channel");
  if (y.shape().positions % 16 != 0)
    throw ShapeError("equalizer input length must be a multiple of 16");
  if (y.format() != model.input_fmt)
    throw ShapeError("equalizer input format mismatch");
}

}  // namespace

FxpTensor forward(const CnnModel& model, const FxpTensor& y,
                  MultiplyStats* stats) {
  check_input_shape(model, y);
  const FxpTensor a1 = batch_parallel_forward(
      y, model.layer1, model.w1, model.b1, model.bias_fmt, false, stats);
  const bool packed = model.packed_layer2 && y.shape().batch % 2 == 0;
  const FxpTensor feat = batch_parallel_forward(
      a1, model.layer2, model.w2, model.b2, model.bias_fmt, packed, stats);
  return flatten_features(feat);
}

ForwardCache forward_with_cache(const CnnModel& model, const FxpTensor& y) {
  check_input_shape(model, y);
  ForwardCache cache;
  cache.x_input = y;

  const auto acc1 = conv_accumulate(y, model.layer1, model.w1, model.b1,
                                    model.bias_fmt, false, nullptr);
  const int acc1_frac = model.layer1.accum_fmt.frac_bits;
  const int out1 = model.layer1.out_len(y.shape().positions);

  cache.pre_act1 =
      FxpTensor({y.shape().batch, model.layer1.out_ch, out1}, model.grad_fmt);
  auto& pre = cache.pre_act1.mutable_data();
  for (size_t i = 0; i < acc1.size(); ++i)
    pre[i] = rescale_raw(acc1[i], acc1_frac, model.grad_fmt);

  cache.act1 =
      finish_activation(acc1, y.shape().batch, model.layer1, out1, acc1_frac);

  const bool packed = model.packed_layer2 && y.shape().batch % 2 == 0;
  const FxpTensor feat =
      batch_parallel_forward(cache.act1, model.layer2, model.w2, model.b2,
                             model.bias_fmt, packed, nullptr);
  cache.z = flatten_features(feat);
  return cache;
}

std::vector<double> decide(const std::vector<double>& z, int pam_order) {
  const double delta = pam_level_spacing(pam_order);
  std::vector<double> out(z.size());
  for (size_t i = 0; i < z.size(); ++i) {
    int best = 0;
    double best_dist = std::abs(z[i] - 0.0);
    for (int m = 1; m < pam_order; ++m) {
      const double dist = std::abs(z[i] - m * delta);
      if (dist < best_dist) {  // strict: ties stay at the lower level
        best = m;
        best_dist = dist;
      }
    }
    out[i] = best * delta;
  }
  return out;
}

void save_model(const CnnModel& m, const std::string& path) {
  std::ofstream f(path);
  if (!f) throw std::runtime_error("cannot open checkpoint for writing");
  auto fmt_line = [&](const char* name, const FxpFormat& fmt) {
    f << "fmt " << name << ' ' << fmt.total_bits << ' ' << fmt.frac_bits << ' '
      << (fmt.is_signed ? 1 : 0) << '\n';
  };
  auto layer_line = [&](const ConvSpec& s) {
    f << "layer " << s.in_ch << ' ' << s.out_ch << ' ' << s.kernel << ' '
      << s.stride << ' ' << s.padding << ' '
      << (s.activation == Activation::Relu ? "relu" : "none") << ' '
      << s.act_fmt.total_bits << ' ' << s.act_fmt.frac_bits << ' '
      << (s.act_fmt.is_signed ? 1 : 0) << '\n';
  };
  auto raw_block = [&](const char* name, const std::vector<int64_t>& v) {
    f << name;
    for (int64_t r : v) f << ' ' << r;
    f << '\n';
  };

  f << "eqsim-model 1\n";
  f << "packed_layer2 " << (m.packed_layer2 ? 1 : 0) << '\n';
  fmt_line("input", m.input_fmt);
  fmt_line("weight", m.layer1.weight_fmt);
  fmt_line("bias", m.bias_fmt);
  fmt_line("grad", m.grad_fmt);
  layer_line(m.layer1);
  layer_line(m.layer2);
  raw_block("w1_master", m.w1_master.data());
  raw_block("w2_master", m.w2_master.data());
  raw_block("b1_master", m.b1_master);
  raw_block("b2_master", m.b2_master);
  if (!f) throw std::runtime_error("checkpoint write failed");
}

CnnModel load_model(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw std::runtime_error("cannot open checkpoint: " + path);

  auto expect = [&](const std::string& want) {
    std::string tok;
    if (!(f >> tok) || tok != want)
      throw std::runtime_error("bad checkpoint: expected '" + want + "'");
  };

  expect("eqsim-model");
  int version = 0;
  f >> version;
  if (version != 1) throw std::runtime_error("unsupported checkpoint version");

  CnnModel m;
  int flag = 0;
  expect("packed_layer2");
  f >> flag;
  m.packed_layer2 = flag != 0;

  auto read_fmt = [&](const char* name) {
    expect("fmt");
    expect(name);
    FxpFormat fmt;
    int s = 0;
    f >> fmt.total_bits >> fmt.frac_bits >> s;
    fmt.is_signed = s != 0;
    fmt.require_valid();
    return fmt;
  };
  m.input_fmt = read_fmt("input");
  const FxpFormat weight_fmt = read_fmt("weight");
  m.bias_fmt = read_fmt("bias");
  m.grad_fmt = read_fmt("grad");

  auto read_layer = [&]() {
    expect("layer");
    ConvSpec s;
    std::string act;
    int sg = 0;
    f >> s.in_ch >> s.out_ch >> s.kernel >> s.stride >> s.padding >> act >>
        s.act_fmt.total_bits >> s.act_fmt.frac_bits >> sg;
    s.act_fmt.is_signed = sg != 0;
    s.activation = act == "relu" ? Activation::Relu : Activation::None;
    s.weight_fmt = weight_fmt;
    return s;
  };
  m.layer1 = read_layer();
  m.layer2 = read_layer();
  m.layer1.accum_fmt = accum_format(m.input_fmt, weight_fmt, m.layer1.kernel,
                                    m.layer1.in_ch);
  m.layer2.accum_fmt = accum_format(m.layer1.act_fmt, weight_fmt,
                                    m.layer2.kernel, m.layer2.in_ch);

  auto read_raws = [&](const char* name, int64_t count) {
    expect(name);
    std::vector<int64_t> v(count);
    for (auto& r : v)
      if (!(f >> r)) throw std::runtime_error("truncated checkpoint");
    return v;
  };
  const auto shape1 = TensorShape{m.layer1.in_ch, m.layer1.out_ch, m.layer1.kernel};
  const auto shape2 = TensorShape{m.layer2.in_ch, m.layer2.out_ch, m.layer2.kernel};
  m.w1_master = FxpTensor(shape1, m.grad_fmt, read_raws("w1_master", shape1.size()));
  m.w2_master = FxpTensor(shape2, m.grad_fmt, read_raws("w2_master", shape2.size()));
  m.b1_master = read_raws("b1_master", m.layer1.out_ch);
  m.b2_master = read_raws("b2_master", m.layer2.out_ch);

  m.w1 = FxpTensor(shape1, weight_fmt);
  m.w2 = FxpTensor(shape2, weight_fmt);
  m.b1.assign(m.layer1.out_ch, 0);
  m.b2.assign(m.layer2.out_ch, 0);
  m.refresh_inference_copies();
  return m;
}

}  // namespace eqsim
