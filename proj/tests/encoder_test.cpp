// Copyright 2026 The RLDX Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include <gtest/gtest.h>

#include <random>

#include "rldx/encoder/encoder.hpp"
#include "rldx/numerics/autograd.hpp"
#include "rldx/numerics/gradcheck.hpp"

using namespace rldx;
using namespace rldx::encoder;

namespace {

EncoderConfig small_config() {
  EncoderConfig c;
  c.d = 8;
  c.n_layers = 2;
  c.n_heads = 2;
  c.ffn_hidden = 8;
  c.stss_layer_index = 0;
  c.compress_layer_index = 1;
  c.extract_layer_index = 2;
  c.n_q = 2;
  c.n_tasks = 2;
  c.stss_hidden = 4;
  c.channels = 2;
  c.height = 1;
  c.width = 8;
  c.patch_w = 2;
  c.offsets = {-2, 0};
  return c;
}

ObservationWindow random_window(const EncoderConfig& cfg, std::mt19937_64& rng) {
  std::uniform_real_distribution<float> u(-1.0f, 1.0f);
  ObservationWindow w;
  w.offsets = cfg.offsets;
  for (std::size_t f = 0; f < cfg.frames(); ++f) {
    std::vector<float> fr(cfg.frame_size());
    for (auto& v : fr) v = u(rng);
    w.frames.push_back(fr);
  }
  return w;
}

void randomize(ParamStore& ps, const std::string& name, std::mt19937_64& rng, double scale = 0.5) {
  ps.set_values(name, init::uniform(ps[name].numel(), -scale, scale, rng));
}

}  // namespace

TEST(PatchEmbed, Examples) {
  EncoderConfig cfg;
  cfg.channels = 1;
  cfg.width = 4;
  cfg.patch_w = 1;
  cfg.offsets = {0};
  cfg.d = 4;
  cfg.n_heads = 2;
  std::mt19937_64 rng(1);
  ParamStore ps;
  init_params(ps, cfg, rng);
  ObservationWindow w{{{0.f, 0.f, 0.f, 0.f}}, {0}};
  Tensor tok = patch_embed(patchify(w, cfg), ps);
  EXPECT_EQ(tok.shape(), (Shape{4, 4}));
  ps.set_values("enc.pos", std::vector<double>(ps["enc.pos"].numel(), 0.0));
  Tensor zero_tok = patch_embed(patchify(w, cfg), ps);
  for (double v : zero_tok.values()) EXPECT_EQ(v, 0.0);

  EncoderConfig big;  // 3x1x24 frames, 1x2 patches, 4 frames
  EXPECT_EQ(big.frames() * big.patches_per_frame(), 4u * 12u);
  ObservationWindow w2{std::vector<std::vector<float>>(4, std::vector<float>(72, 0.f)), big.offsets};
  EXPECT_EQ(patchify(w2, big).dim(0), 48u);

  EncoderConfig bad = big;
  bad.patch_w = 5;
  EXPECT_THROW(bad.validate(), ShapeError);
}

TEST(Stss, Examples) {
  auto same = Tensor::from_vector({2, 3, 2}, {1, 2, 1, 2, 1, 2, 1, 2, 1, 2, 1, 2});
  Tensor s = encoder::stss(same, 1);
  EXPECT_EQ(s.shape(), (Shape{2, 3, 6}));
  // Entry (f, p, f', delta) is 1 when p + delta - 1 lies in range, 0 otherwise.
  for (std::size_t f = 0; f < 2; ++f)
    for (std::size_t p = 0; p < 3; ++p)
      for (std::size_t g = 0; g < 2; ++g)
        for (std::size_t dl = 0; dl < 3; ++dl) {
          const long q = long(p) + long(dl) - 1;
          const double expect = (q >= 0 && q < 3) ? 1.0 : 0.0;
          EXPECT_NEAR(s.values()[((f * 3 + p) * 2 + g) * 3 + dl], expect, 1e-12);
        }
  auto orth = Tensor::from_vector({1, 2, 2}, {1, 0, 0, 1});
  EXPECT_NEAR(encoder::stss(orth, 1).values()[2], 0.0, 1e-15);  // (p=0) vs (p=1)
  auto zero = Tensor::from_vector({1, 2, 2}, {0, 0, 3, 4});
  Tensor z = encoder::stss(zero, 1);
  for (std::size_t i = 0; i < 3; ++i) EXPECT_EQ(z.values()[i], 0.0);
}

TEST(MotionInject, IdentityAtInitAndGradientFlows) {
  auto cfg = small_config();
  std::mt19937_64 rng(2);
  ParamStore ps;
  init_params(ps, cfg, rng);
  const std::size_t n = cfg.frames() * cfg.patches_per_frame();
  Tensor x = Tensor::from_vector({n, cfg.d}, init::uniform(n * cfg.d, -1, 1, rng));
  Tensor y = motion_inject(x, ps, cfg);
  EXPECT_EQ(y.shape(), x.shape());
  EXPECT_EQ(y.values(), x.values());

  // A loss that depends on the motion pathway: after one SGD step on w2,
  // the first layer also receives gradient.
  Tensor w = Tensor::from_vector({n, cfg.d}, init::uniform(n * cfg.d, -1, 1, rng));
  auto step = [&] {
    ps.zero_grad();
    backward(sum(mul(motion_inject(x, ps, cfg), w)));
  };
  step();
  double g2 = 0;
  for (double g : ps["enc.stss.w2"].grad()) g2 += std::abs(g);
  EXPECT_GT(g2, 0.0);
  auto& w2 = ps.get("enc.stss.w2");
  for (std::size_t i = 0; i < w2.numel(); ++i) w2.mutable_data()[i] -= 0.1 * w2.grad()[i];
  step();
  double g1 = 0;
  for (double g : ps["enc.stss.w1"].grad()) g1 += std::abs(g);
  EXPECT_GT(g1, 0.0);
}

TEST(CompressPast, Examples) {
  Layout one{1, 1, 1, 1, false};
  auto h = Tensor::from_vector({4, 2}, {5, 6, 1, 1, 2, 2, 3, 3});
  auto [c1, l1] = compress_past(h, one);
  EXPECT_EQ(c1.values(), h.values());
  EXPECT_EQ(l1.past, 1u);
  EXPECT_TRUE(l1.compressed);
  EXPECT_THROW(compress_past(c1, l1), ContractError);

  Layout two{2, 1, 1, 1, false};
  auto h2 = Tensor::from_vector({5, 1}, {2, 4, 7, 8, 9});
  auto [c2, l2] = compress_past(h2, two);
  EXPECT_EQ(c2.values(), (std::vector<double>{3, 7, 8, 9}));
  EXPECT_EQ(l2.total(), 4u);

  Layout none{0, 2, 1, 1, false};
  auto h3 = Tensor::from_vector({4, 1}, {1, 2, 3, 4});
  auto [c3, l3] = compress_past(h3, none);
  EXPECT_EQ(c3.values(), h3.values());
  EXPECT_EQ(l3.total(), 4u);
}

TEST(Encode, ShapeDeterminismAndLayoutBookkeeping) {
  EncoderConfig cfg;  // default toy config
  std::mt19937_64 rng(3);
  ParamStore ps;
  init_params(ps, cfg, rng);
  auto w = random_window(cfg, rng);
  EncodeTrace tr;
  Tensor out = encode_patches(patchify(w, cfg), 1, ps, cfg, &tr);
  EXPECT_EQ(out.shape(), (Shape{cfg.n_q, cfg.d}));
  EXPECT_TRUE(out.all_finite());
  EXPECT_EQ(encode(w, 1, ps, cfg).values(), out.values());

  const std::size_t P = cfg.patches_per_frame();
  ASSERT_EQ(tr.layouts.size(), cfg.n_layers);
  for (std::size_t l = 0; l < cfg.n_layers; ++l) {
    const std::size_t expect = l < cfg.compress_layer_index ? 3 * P + P + 1 + cfg.n_q : 1 + P + 1 + cfg.n_q;
    EXPECT_EQ(tr.layouts[l].total(), expect);
    EXPECT_EQ(tr.mask_dims[l], expect);
  }
  EXPECT_THROW(encode(w, cfg.n_tasks, ps, cfg), ContractError);
}

TEST(Encode, PastFrameSensitivity) {
  EncoderConfig cfg;
  std::mt19937_64 rng(4);
  ParamStore ps;
  init_params(ps, cfg, rng);
  auto w = random_window(cfg, rng);
  auto w2 = w;
  w2.frames[1][5] += 0.5f;
  Tensor a = encode(w, 0, ps, cfg), b = encode(w2, 0, ps, cfg);
  double diff = 0;
  for (std::size_t i = 0; i < a.numel(); ++i) diff = std::max(diff, std::abs(a.at(i) - b.at(i)));
  EXPECT_GT(diff, 1e-6);
}

TEST(Encode, QueryRowSwapIsCausal) {
  // Strict causal order: swapping the last two query rows cannot change any
  // earlier query output, and does change the swapped ones.
  EncoderConfig cfg;
  std::mt19937_64 rng(5);
  ParamStore ps;
  init_params(ps, cfg, rng);
  auto w = random_window(cfg, rng);
  Tensor a = encode(w, 0, ps, cfg);
  auto q = ps["enc.query"].values();
  const std::size_t d = cfg.d, n = cfg.n_q;
  for (std::size_t c = 0; c < d; ++c) std::swap(q[(n - 2) * d + c], q[(n - 1) * d + c]);
  ps.set_values("enc.query", q);
  Tensor b = encode(w, 0, ps, cfg);
  for (std::size_t i = 0; i < (n - 2) * d; ++i) EXPECT_EQ(a.at(i), b.at(i));
  double diff = 0;
  for (std::size_t i = (n - 2) * d; i < n * d; ++i) diff = std::max(diff, std::abs(a.at(i) - b.at(i)));
  EXPECT_GT(diff, 1e-9);
}

TEST(Encode, SingleFrameWithoutHooksIsPlainTransformer) {
  EncoderConfig cfg;
  cfg.offsets = {0};
  cfg.motion = false;
  std::mt19937_64 rng(6);
  ParamStore ps;
  init_params(ps, cfg, rng);
  auto w = random_window(cfg, rng);
  Tensor got = encode(w, 2, ps, cfg);

  // Reference: token sequence through pre-norm parallel blocks, no hooks.
  Tensor x = concat({patch_embed(patchify(w, cfg), ps), slice_rows(ps["enc.instr"], 2, 3), ps["enc.query"]}, 0);
  const std::size_t n = x.dim(0);
  std::vector<double> mv(n * n, 0.0), pos(n);
  for (std::size_t i = 0; i < n; ++i) {
    pos[i] = double(i);
    for (std::size_t j = 0; j <= i; ++j) mv[i * n + j] = 1.0;
  }
  Tensor mask = Tensor::from_vector({n, n}, mv);
  for (std::size_t l = 0; l < cfg.n_layers; ++l) {
    const std::string p = "enc.l" + std::to_string(l) + ".";
    Tensor nx = rmsnorm(x, ps[p + "norm"], cfg.eps);
    Tensor q = rope(rmsnorm(matmul(nx, ps[p + "wq"]), ps[p + "qn"], cfg.eps), pos, cfg.rope_base);
    Tensor k = rope(rmsnorm(matmul(nx, ps[p + "wk"]), ps[p + "kn"], cfg.eps), pos, cfg.rope_base);
    Tensor a = matmul(attention(q, k, matmul(nx, ps[p + "wv"]), mask, {cfg.n_heads, 1.0 / std::sqrt(8.0)}),
                      ps[p + "wo"]);
    Tensor f = matmul(swiglu(matmul(nx, ps[p + "w1"])), ps[p + "w2"]);
    x = add(add(x, a), f);
  }
  Tensor ref = slice_rows(rmsnorm(x, ps["enc.final_norm"], cfg.eps), n - cfg.n_q, n);
  for (std::size_t i = 0; i < ref.numel(); ++i) EXPECT_NEAR(got.at(i), ref.at(i), 1e-12);
}

TEST(Encode, ExtractLayerIndexTruncatesStack) {
  EncoderConfig cfg;
  std::mt19937_64 rng(7);
  ParamStore ps;
  init_params(ps, cfg, rng);
  auto w = random_window(cfg, rng);
  Tensor full = encode(w, 0, ps, cfg);
  cfg.extract_layer_index = 3;
  Tensor mid = encode(w, 0, ps, cfg);
  ps.set_values("enc.l3.wo", std::vector<double>(ps["enc.l3.wo"].numel(), 0.0));
  ps.set_values("enc.l3.w2", std::vector<double>(ps["enc.l3.w2"].numel(), 0.0));
  cfg.extract_layer_index = 4;
  EXPECT_EQ(encode(w, 0, ps, cfg).values(), mid.values());  // a zeroed last layer is an identity
  EXPECT_NE(full.values(), mid.values());
  cfg.extract_layer_index = 5;
  EXPECT_THROW(cfg.validate(), ConfigError);
}

TEST(Encode, GradCheckAllParams) {
  auto cfg = small_config();
  std::mt19937_64 rng(8);
  ParamStore ps;
  init_params(ps, cfg, rng);
  randomize(ps, "enc.stss.w2", rng);
  randomize(ps, "enc.stss.b1", rng);
  auto w = random_window(cfg, rng);
  Tensor patches = patchify(w, cfg);
  Tensor r = Tensor::from_vector({cfg.n_q, cfg.d}, init::uniform(cfg.n_q * cfg.d, -1, 1, rng));
  auto f = [&] { return sum(mul(encode_patches(patches, 1, ps, cfg), r)); };
  auto res = finite_diff_check_detailed(f, ps, 1e-5);
  EXPECT_LE(res.max_rel_error, 1e-4) << res.worst_param << "[" << res.worst_index << "]";
}
