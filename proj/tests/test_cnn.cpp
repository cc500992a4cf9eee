#include <doctest.h>

#include <cstdio>
#include <filesystem>

#include "eqsim/channel.hpp"
#include "eqsim/cnn.hpp"
#include "oracle.hpp"

using namespace eqsim;

namespace {

// Direct triple-loop convolution on wide integers, independent of the
// library's accumulation core.
FxpTensor oracle_conv(const FxpTensor& x, const ConvSpec& spec,
                      const FxpTensor& w, const std::vector<int64_t>& bias,
                      const FxpFormat& bias_fmt) {
  const TensorShape xs = x.shape();
  const int out_len = spec.out_len(xs.positions);
  const int acc_frac = x.format().frac_bits + w.format().frac_bits;
  FxpTensor out({xs.batch, spec.out_ch, out_len}, spec.act_fmt);
  for (int n = 0; n < xs.batch; ++n) {
    for (int o = 0; o < spec.out_ch; ++o) {
      for (int s = 0; s < out_len; ++s) {
        oracle::Wide acc = oracle::Wide(bias[o])
                           << (acc_frac - bias_fmt.frac_bits);
        for (int i = 0; i < spec.in_ch; ++i) {
          for (int k = 0; k < spec.kernel; ++k) {
            const int pos = s * spec.stride + k - spec.padding;
            if (pos < 0 || pos >= xs.positions) continue;
            acc += oracle::Wide(x.at(n, i, pos)) * oracle::Wide(w.at(i, o, k));
          }
        }
        if (spec.activation == Activation::Relu && acc < 0) acc = 0;
        out.at(n, o, s) = oracle::clamp_to(
            spec.act_fmt,
            oracle::rne_shift(acc, acc_frac - spec.act_fmt.frac_bits));
      }
    }
  }
  return out;
}

FxpTensor random_tensor(TensorShape shape, const FxpFormat& fmt, Philox& rng) {
  FxpTensor t(shape, fmt);
  const uint64_t span = static_cast<uint64_t>(fmt.raw_max() - fmt.raw_min());
  for (auto& raw : t.mutable_data())
    raw = fmt.raw_min() + static_cast<int64_t>(rng.next_u64() % (span + 1));
  return t;
}

FxpTensor random_input(const CnnModel& m, int batch, int positions,
                       Philox& rng) {
  return random_tensor({batch, 1, positions}, m.input_fmt, rng);
}

}  // namespace

TEST_CASE("conv1d_forward: 1x1 kernel identity") {
  const FxpFormat act{10, 8, true};
  const FxpFormat wf{6, 4, true};
  ConvSpec spec{1, 1, 1, 1, 0, Activation::None, wf, act,
                accum_format(act, wf, 1, 1)};
  FxpTensor w({1, 1, 1}, wf);
  w.at(0, 0, 0) = 16;  // 1.0
  Philox rng(1, 0);
  const FxpTensor x = random_tensor({2, 1, 16}, act, rng);
  const FxpTensor y =
      conv1d_forward(x, spec, w, {0}, FxpFormat{16, 8, true});
  CHECK(y.data() == x.data());
}

TEST_CASE("conv1d_forward: zero weights broadcast the bias") {
  const FxpFormat act{10, 8, true};
  const FxpFormat wf{6, 4, true};
  const FxpFormat bf{16, 8, true};
  ConvSpec spec{2, 3, 3, 1, 1, Activation::None, wf, act,
                accum_format(act, wf, 3, 2)};
  const FxpTensor w({2, 3, 3}, wf);  // zeros
  Philox rng(2, 0);
  const FxpTensor x = random_tensor({1, 2, 8}, act, rng);
  const std::vector<int64_t> bias{37, -100, 255};
  const FxpTensor y = conv1d_forward(x, spec, w, bias, bf);
  for (int o = 0; o < 3; ++o)
    for (int s = 0; s < 8; ++s)
      REQUIRE(y.at(0, o, s) == bias[o]);  // same fraction position
}

TEST_CASE("conv1d_forward: bit-exact against the brute-force oracle") {
  Philox rng(3, 0);
  const FxpFormat act{10, 8, true};
  const FxpFormat wf{6, 4, true};
  const FxpFormat bf{16, 8, true};
  for (int trial = 0; trial < 50; ++trial) {
    ConvSpec spec{4, 3, 9, 1 + (int)rng.next_below(3), 4,
                  trial % 2 ? Activation::Relu : Activation::None,
                  wf,
                  trial % 2 ? FxpFormat{10, 8, false} : act,
                  accum_format(act, wf, 9, 4)};
    const FxpTensor x = random_tensor({2, 4, 32}, act, rng);
    const FxpTensor w = random_tensor({4, 3, 9}, wf, rng);
    std::vector<int64_t> bias(3);
    for (auto& b : bias)
      b = bf.raw_min() + static_cast<int64_t>(rng.next_u64() %
                                              (bf.raw_max() - bf.raw_min() + 1));
    const FxpTensor got = conv1d_forward(x, spec, w, bias, bf);
    const FxpTensor want = oracle_conv(x, spec, w, bias, bf);
    REQUIRE(got == want);
  }
}

TEST_CASE("batch_parallel_forward equals per-sample forward, bit-exact") {
  Philox rng(4, 0);
  const FxpFormat act{10, 8, true};
  const FxpFormat wf{6, 4, true};
  const FxpFormat bf{16, 8, true};
  for (int b : {1, 2, 4, 8}) {
    for (int trial = 0; trial < 20; ++trial) {
      ConvSpec spec{3, 5, 9, 2, 4, Activation::None, wf, act,
                    accum_format(act, wf, 9, 3)};
      const FxpTensor x = random_tensor({b, 3, 48}, act, rng);
      const FxpTensor w = random_tensor({3, 5, 9}, wf, rng);
      std::vector<int64_t> bias(5);
      for (auto& v : bias) v = static_cast<int64_t>(rng.next_below(501)) - 250;
      const FxpTensor batch = batch_parallel_forward(x, spec, w, bias, bf);
      const FxpTensor ref = conv1d_forward(x, spec, w, bias, bf);
      REQUIRE(batch == ref);
    }
  }
}

TEST_CASE("packed layer-2 datapath is bit-identical to the plain one") {
  Philox rng(5, 0);
  QuantConfig quant;
  Philox mrng(5, 1);
  CnnModel packed_model = make_equalizer_model(quant, true, mrng);
  CnnModel plain_model = packed_model;
  plain_model.packed_layer2 = false;

  for (int frame = 0; frame < 1000; ++frame) {
    const FxpTensor y = random_input(packed_model, 2, 64, rng);
    const FxpTensor zp = forward(packed_model, y);
    const FxpTensor zu = forward(plain_model, y);
    REQUIRE(zp == zu);
  }
}

TEST_CASE("packed pairing: one packed multiply per (i,o,k,position)") {
  QuantConfig quant;
  Philox rng(6, 0);
  CnnModel model = make_equalizer_model(quant, true, rng);
  const FxpTensor a1 = random_tensor({2, 4, 8}, quant.relu_fmt(), rng);

  MultiplyStats stats;
  batch_parallel_forward(a1, model.layer2, model.w2, model.b2, model.bias_fmt,
                         true, &stats);
  // per output position: taps inside the padded window, all 4 in-ch
  int64_t sites = 0;
  const int out_len = model.layer2.out_len(8);
  for (int s = 0; s < out_len; ++s)
    for (int k = 0; k < 9; ++k) {
      const int pos = s * 2 + k - 4;
      if (pos >= 0 && pos < 8) sites += 4 * 8;  // in_ch * out_ch
    }
  CHECK(stats.packed == sites);
  CHECK(stats.scalar == 0);
}

TEST_CASE("forward: shape law and zero propagation") {
  QuantConfig quant;
  Philox rng(7, 0);
  CnnModel model = make_equalizer_model(quant, true, rng);

  const FxpTensor y16({1, 1, 16}, model.input_fmt);
  CHECK(forward(model, y16).shape() == TensorShape{1, 1, 8});

  for (int s : {16, 32, 64, 128}) {
    const FxpTensor y({3, 1, s}, model.input_fmt);
    CHECK(forward(model, y).shape().positions == s / 2);
  }

  // zero input, zero bias -> zero output
  const FxpTensor z = forward(model, FxpTensor({2, 1, 32}, model.input_fmt));
  for (int64_t raw : z.data()) REQUIRE(raw == 0);

  CHECK_THROWS_AS(forward(model, FxpTensor({1, 1, 24}, model.input_fmt)),
                  ShapeError);
}

TEST_CASE("layer-1 outputs satisfy the unsigned precondition of packing") {
  QuantConfig quant;
  Philox rng(8, 0);
  CnnModel model = make_equalizer_model(quant, true, rng);
  const FxpTensor y = random_input(model, 2, 64, rng);
  const ForwardCache cache = forward_with_cache(model, y);
  CHECK_FALSE(cache.act1.format().is_signed);
  for (int64_t raw : cache.act1.data()) REQUIRE(raw >= 0);
}

TEST_CASE("decide: exact levels, tie goes to the lower level") {
  const Eigen::ArrayXd a = pam_alphabet(2);
  CHECK(decide({a[1]}, 2)[0] == a[1]);
  CHECK(decide({a[0]}, 2)[0] == a[0]);
  const double mid = 0.5 * (a[0] + a[1]);
  CHECK(decide({mid}, 2)[0] == a[0]);

  // random points against an argmin oracle
  Philox rng(9, 0);
  const Eigen::ArrayXd a4 = pam_alphabet(4);
  for (int i = 0; i < 20000; ++i) {
    const double z = rng.next_uniform(-1.0, 3.0);
    const double got = decide({z}, 4)[0];
    int best = 0;
    for (int m = 1; m < 4; ++m)
      if (std::abs(z - a4[m]) < std::abs(z - a4[best])) best = m;
    REQUIRE(got == a4[best]);
  }
}

TEST_CASE("checkpoint round-trips bit-exactly") {
  QuantConfig quant;
  Philox rng(10, 0);
  CnnModel model = make_equalizer_model(quant, true, rng);
  // a few updates' worth of master drift to make it non-trivial
  for (auto& raw : model.w2_master.mutable_data()) raw += 3;
  model.b1_master[2] = -777;
  model.refresh_inference_copies();

  const std::string path = "ckpt_roundtrip_test.txt";
  save_model(model, path);
  const CnnModel loaded = load_model(path);
  std::filesystem::remove(path);

  CHECK(loaded.w1_master == model.w1_master);
  CHECK(loaded.w2_master == model.w2_master);
  CHECK(loaded.b1_master == model.b1_master);
  CHECK(loaded.b2_master == model.b2_master);
  CHECK(loaded.w1 == model.w1);
  CHECK(loaded.w2 == model.w2);
  CHECK(loaded.b1 == model.b1);
  CHECK(loaded.b2 == model.b2);
  CHECK(loaded.packed_layer2 == model.packed_layer2);
  CHECK(loaded.input_fmt == model.input_fmt);
  CHECK(loaded.grad_fmt == model.grad_fmt);
}

TEST_CASE("inference copies always mirror the master") {
  QuantConfig quant;
  Philox rng(11, 0);
  CnnModel model = make_equalizer_model(quant, true, rng);
  CHECK(model.inference_matches_master());
}
