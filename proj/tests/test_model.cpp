#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <map>
#include <vector>

#include "mib/model.hpp"
#include "mib/sampler.hpp"
#include "mib/synth.hpp"

using namespace mib;

namespace {

InbetweenTask task_from(const MotionSequence& window, std::vector<int> in,
                        std::vector<int> out) {
  InbetweenTask t;
  t.window = window;
  t.in_indices = std::move(in);
  t.out_indices = std::move(out);
  t.validate();
  return t;
}

Skeleton root_only() {
  Skeleton s;
  s.names = {"root"};
  s.parents = {-1};
  s.offsets = {{0, 0, 0}};
  return s;
}

template <class S>
void set_param(Model<S>& m, const std::string& name, const std::vector<S>& vals) {
  for (auto& [n, t] : m.named_parameters())
    if (n == name) {
      REQUIRE(t.values().size() == vals.size());
      t.values_mut() = vals;
      return;
    }
  FAIL("no parameter named ", name);
}

template <class S>
std::vector<S> identity_matrix(std::int64_t n) {
  std::vector<S> v(n * n, S(0));
  for (std::int64_t i = 0; i < n; ++i) v[i * n + i] = S(1);
  return v;
}

// layernorm with gain 1, bias 0 — mirrors the network's eps
std::vector<double> hand_layernorm(const std::vector<double>& x) {
  double mu = 0;
  for (double v : x) mu += v;
  mu /= x.size();
  double var = 0;
  for (double v : x) var += (v - mu) * (v - mu);
  var /= x.size();
  std::vector<double> out(x.size());
  for (std::size_t i = 0; i < x.size(); ++i)
    out[i] = (x[i] - mu) / std::sqrt(var + 1e-5);
  return out;
}

std::vector<double> hand_relu(std::vector<double> x) {
  for (auto& v : x) v = v > 0 ? v : 0;
  return x;
}

}  // namespace

TEST_CASE("delta referencing zeroes the root channels of a constant window") {
  ModelConfig cfg;
  cfg.joints = 3;
  cfg.max_frame_index = 16;
  const auto skel = synthetic_skeleton(3);
  auto seq = synth_motion(SynthKind::SinusoidWalk, skel, 8, 1);
  for (auto& f : seq.frames) f = seq.frames[3];  // constant pose
  const auto task = task_from(seq, {0, 1, 2, 7}, {3, 4, 5, 6});
  const auto in = build_task_tensors<double>(task, cfg);
  // per key frame, the root joint's 9 channels sit first and must be zero
  for (std::int64_t r = 0; r < 4; ++r)
    for (int c = 0; c < 9; ++c)
      CHECK(in.x_delta.values()[r * 27 + c] == 0.0);
}

TEST_CASE("delta referencing cancels a rigid shift bitwise on dyadic data") {
  ModelConfig cfg;
  cfg.joints = 3;
  cfg.max_frame_index = 16;
  Skeleton skel;
  skel.names = {"root", "a", "b"};
  skel.parents = {-1, 0, 1};
  skel.offsets = {{0, 0, 0}, {0, 0.5, 0}, {0.25, 0.5, 0}};  // dyadic
  Rot6d id;
  id << 1, 0, 0, 0, 1, 0;
  MotionSequence seq;
  seq.skeleton = skel;
  for (int f = 0; f < 8; ++f) {
    Pose p;
    p.root_pos = {0.25 * f, 1.5, -0.75 * f};  // dyadic
    p.rot = {id, id, id};
    seq.frames.push_back(p);
  }
  auto shifted = seq;
  for (auto& f : shifted.frames) f.root_pos += Vec3d{7, 0, -3};

  const auto a = build_task_tensors<double>(task_from(seq, {0, 1, 7}, {2, 3, 4, 5, 6}), cfg);
  const auto b =
      build_task_tensors<double>(task_from(shifted, {0, 1, 7}, {2, 3, 4, 5, 6}), cfg);
  CHECK(a.x_delta.values() == b.x_delta.values());  // bitwise
}

TEST_CASE("single-token forward matches a hand evaluation with fixed weights") {
  ModelConfig cfg;
  cfg.width = 12;
  cfg.heads = 2;
  cfg.residual_blocks = 1;
  cfg.encoder_mlp_layers = 1;
  cfg.decoder_mlp_layers = 1;
  cfg.embed_dim = 3;
  cfg.dropout = 0.0;
  cfg.joints = 1;
  cfg.max_frame_index = 4;
  cfg.input_delta = InputDeltaMode::None;
  cfg.output_delta = OutputDeltaMode::None;

  Model<double> m(cfg);
  set_param(m, "input.w", identity_matrix<double>(12));
  set_param(m, "block0.attn.wq", identity_matrix<double>(12));
  set_param(m, "block0.attn.wk", identity_matrix<double>(12));
  set_param(m, "block0.attn.wv", identity_matrix<double>(12));
  set_param(m, "block0.attn.wo", identity_matrix<double>(12));
  set_param(m, "block0.ln.gain", std::vector<double>(12, 1.0));
  set_param(m, "block0.mlp0.w", identity_matrix<double>(12));
  {
    std::vector<double> pick(12 * 9, 0.0);
    for (int i = 0; i < 9; ++i) pick[i * 9 + i] = 1.0;
    set_param(m, "dec0.w", pick);
    // identity-rotation bias keeps the decoded rot6 away from degeneracy
    set_param(m, "dec0.b", {1, 0, 0, 0, 1, 0, 0, 0, 0});
  }
  std::vector<double> pe0{0.3, -0.2, 0.5}, pe1{-0.4, 0.1, 0.2};
  {
    std::vector<double> table(4 * 3, 0.0);
    for (int i = 0; i < 3; ++i) table[0 + i] = pe0[i];
    for (int i = 0; i < 3; ++i) table[3 + i] = pe1[i];
    set_param(m, "pos_embed", table);
  }

  const auto skel = root_only();
  MotionSequence seq;
  seq.skeleton = skel;
  Pose p0, p1;
  p0.root_pos = {0.5, 1.0, -2.0};
  Rot6d id;
  id << 1, 0, 0, 0, 1, 0;
  p0.rot = {id};
  p1 = p0;
  p1.root_pos = {0.6, 1.0, -1.9};
  seq.frames = {p0, p1};
  const auto task = task_from(seq, {0}, {1});
  const auto in = build_task_tensors<double>(task, cfg);
  const auto fwd = m.forward(in, skel);

  // hand path: e0K = [x | pe0]; one token, identity projections
  std::vector<double> e0k{0.5, 1.0, -2.0, 1, 0, 0, 0, 1, 0, pe0[0], pe0[1], pe0[2]};
  std::vector<double> twice(12);
  for (int i = 0; i < 12; ++i) twice[i] = 2 * e0k[i];  // MHA(e)=e, +residual
  const auto e1k = hand_relu(hand_layernorm(twice));

  std::vector<double> e0m{0, 0, 0, 0, 0, 0, 0, 0, 0, pe1[0], pe1[1], pe1[2]};
  std::vector<double> mix(12);
  for (int i = 0; i < 12; ++i) mix[i] = e1k[i] + e0m[i];  // cross-MHA + residual
  const auto e1m = hand_relu(hand_layernorm(mix));

  const std::vector<double> dec_bias{1, 0, 0, 0, 1, 0, 0, 0, 0};
  for (int i = 0; i < 6; ++i)
    CHECK(fwd.pred_rot6.values()[i] == doctest::Approx(e1m[i] + dec_bias[i]).epsilon(1e-12));
  for (int i = 0; i < 3; ++i)
    CHECK(fwd.pred_root.values()[i] == doctest::Approx(e1m[6 + i] + dec_bias[6 + i]).epsilon(1e-12));
  for (int i = 0; i < 6; ++i)
    CHECK(fwd.rec_rot6.values()[i] == doctest::Approx(e1k[i] + dec_bias[i]).epsilon(1e-12));
}

TEST_CASE("permuting key-frames (with their embeddings) permutes rec rows only") {
  ModelConfig cfg;
  cfg.width = 16;
  cfg.heads = 2;
  cfg.residual_blocks = 2;
  cfg.encoder_mlp_layers = 2;
  cfg.embed_dim = 4;
  cfg.dropout = 0.0;
  cfg.joints = 3;
  cfg.max_frame_index = 8;
  const auto skel = synthetic_skeleton(3);
  const auto seq = synth_motion(SynthKind::SinusoidWalk, skel, 6, 2);
  const auto task = task_from(seq, {0, 1, 2, 5}, {3, 4});
  auto in = build_task_tensors<float>(task, cfg);

  Model<float> m(cfg);
  Rng rng(5);
  m.init(rng);
  const auto base = m.forward(in, skel);

  // swap key rows 1 and 2 everywhere they appear
  auto permuted = in;
  std::swap(permuted.in_idx[1], permuted.in_idx[2]);
  auto swap_rows = [](TensorF& t, std::int64_t r0, std::int64_t r1) {
    const std::int64_t w = t.numel() / t.shape()[0];
    for (std::int64_t i = 0; i < w; ++i)
      std::swap(t.values_mut()[r0 * w + i], t.values_mut()[r1 * w + i]);
  };
  permuted.x_delta = in.x_delta.detached();
  permuted.x_base = in.x_base.detached();
  swap_rows(permuted.x_delta, 1, 2);
  swap_rows(permuted.x_base, 1, 2);
  const auto perm = m.forward(permuted, skel);

  // predictions for the missing frames are unchanged (set-valued attention)
  for (std::int64_t i = 0; i < base.pred_fk.pos.numel(); ++i)
    CHECK(perm.pred_fk.pos.values()[i] ==
          doctest::Approx(base.pred_fk.pos.values()[i]).epsilon(1e-4));
  // reconstructions follow the permutation
  const std::int64_t w = base.rec_root.numel() / 4;
  for (std::int64_t i = 0; i < w; ++i) {
    CHECK(perm.rec_root.values()[1 * w + i] ==
          doctest::Approx(base.rec_root.values()[2 * w + i]).epsilon(1e-4));
    CHECK(perm.rec_root.values()[2 * w + i] ==
          doctest::Approx(base.rec_root.values()[1 * w + i]).epsilon(1e-4));
  }
}

TEST_CASE("no attention among missing frames: row probe") {
  ModelConfig cfg;
  cfg.width = 16;
  cfg.heads = 2;
  cfg.residual_blocks = 2;
  cfg.encoder_mlp_layers = 2;
  cfg.embed_dim = 4;
  cfg.dropout = 0.0;
  cfg.joints = 3;
  cfg.max_frame_index = 16;
  const auto skel = synthetic_skeleton(3);
  const auto seq = synth_motion(SynthKind::FigureEight, skel, 7, 3);
  const auto task = task_from(seq, {0, 1, 2, 6}, {3, 4, 5});
  auto in = build_task_tensors<double>(task, cfg);

  Model<double> m(cfg);
  Rng rng(11);
  m.init(rng);
  const auto base = m.forward(in, skel);

  auto probe = in;
  probe.out_idx[0] = 9;  // different positional row for missing frame 0
  const auto alt = m.forward(probe, skel);

  const std::int64_t jw = cfg.joints * 3;
  // rows 1 and 2 of the prediction are bitwise untouched
  for (std::int64_t r = 1; r < 3; ++r)
    for (std::int64_t i = 0; i < jw; ++i)
      CHECK(alt.pred_fk.pos.values()[r * jw + i] == base.pred_fk.pos.values()[r * jw + i]);
  // key path untouched entirely
  for (std::int64_t i = 0; i < base.rec_fk.pos.numel(); ++i)
    CHECK(alt.rec_fk.pos.values()[i] == base.rec_fk.pos.values()[i]);
}

TEST_CASE("encoder level shapes and |out|=1 contract") {
  ModelConfig cfg;
  cfg.width = 16;
  cfg.heads = 2;
  cfg.residual_blocks = 3;
  cfg.encoder_mlp_layers = 2;
  cfg.embed_dim = 4;
  cfg.dropout = 0.0;
  cfg.joints = 3;
  cfg.max_frame_index = 8;
  const auto skel = synthetic_skeleton(3);
  const auto seq = synth_motion(SynthKind::SinusoidWalk, skel, 6, 4);
  const auto task = task_from(seq, {0, 1, 2, 4, 5}, {3});
  const auto in = build_task_tensors<float>(task, cfg);
  Model<float> m(cfg);
  Rng rng(2);
  m.init(rng);
  ForwardProbe probe;
  const auto out = m.forward(in, skel, false, nullptr, nullptr, &probe);
  REQUIRE(probe.key_shapes.size() == 3);
  for (const auto& s : probe.key_shapes) CHECK(s == Shape{5, 16});
  for (const auto& s : probe.missing_shapes) CHECK(s == Shape{1, 16});
  CHECK(out.pred_root.shape() == Shape{1, 3});
  CHECK(out.pred_rot6.shape() == Shape{1, 3, 6});
  CHECK(out.pred_fk.pos.shape() == Shape{1, 3, 3});
}

TEST_CASE("attention-score accounting: 11 keys, 30 missing") {
  CHECK(attention_entries_split(11, 30) == 451);
  CHECK(attention_entries_joint(41) == 1681);
  CHECK(attention_entries_joint(41) / double(attention_entries_split(11, 30)) ==
        doctest::Approx(3.727).epsilon(1e-3));

  ModelConfig cfg;
  cfg.width = 16;
  cfg.heads = 2;
  cfg.residual_blocks = 2;
  cfg.encoder_mlp_layers = 2;
  cfg.embed_dim = 4;
  cfg.dropout = 0.0;
  cfg.joints = 3;
  cfg.max_frame_index = 64;
  const auto skel = synthetic_skeleton(3);
  const auto seq = synth_motion(SynthKind::SinusoidWalk, skel, 41, 5);
  std::vector<int> in_idx, out_idx;
  split_indices(10, 1, 30, 0, in_idx, out_idx);
  const auto task = task_from(seq, in_idx, out_idx);
  const auto in = build_task_tensors<float>(task, cfg);
  Model<float> m(cfg);
  Rng rng(3);
  m.init(rng);
  AttnStats stats;
  m.forward(in, skel, false, nullptr, &stats);
  CHECK(stats.score_entries == 2 * 451);  // R levels, each 11*11 + 11*30
  CHECK(stats.mha_calls == 4);
}

TEST_CASE("zero residual reproduces the closed-form baselines through FK") {
  ModelConfig cfg;
  cfg.width = 16;
  cfg.heads = 2;
  cfg.residual_blocks = 1;
  cfg.encoder_mlp_layers = 1;
  cfg.embed_dim = 4;
  cfg.dropout = 0.0;
  cfg.joints = 4;
  cfg.max_frame_index = 16;
  const auto skel = synthetic_skeleton(4);
  const auto seq = synth_motion(SynthKind::FigureEight, skel, 10, 7);
  const auto task = task_from(seq, {0, 1, 2, 9}, {3, 4, 5, 6, 7, 8});

  // all-zero parameters -> ΔY ≡ 0
  SUBCASE("interp mode equals the slerp interpolator") {
    cfg.output_delta = OutputDeltaMode::Interp;
    Model<double> m(cfg);
    const auto in = build_task_tensors<double>(task, cfg);
    const auto fwd = m.forward(in, skel);
    const auto expect = slerp_interpolate(task);
    for (std::size_t i = 0; i < expect.size(); ++i) {
      const auto ref = fk_pose(skel, expect[i].root_pos, expect[i].rot);
      for (int k = 0; k < 4; ++k)
        for (int a = 0; a < 3; ++a)
          CHECK(fwd.pred_fk.pos.values()[(i * 4 + k) * 3 + a] ==
                doctest::Approx(ref.pos[k][a]).epsilon(1e-12));
    }
  }

  SUBCASE("last-frame mode equals the zero-velocity baseline") {
    cfg.output_delta = OutputDeltaMode::LastFrame;
    Model<double> m(cfg);
    const auto in = build_task_tensors<double>(task, cfg);
    const auto fwd = m.forward(in, skel);
    const auto expect = zero_velocity(task);
    for (std::size_t i = 0; i < expect.size(); ++i) {
      const auto ref = fk_pose(skel, expect[i].root_pos, expect[i].rot);
      for (int k = 0; k < 4; ++k)
        for (int a = 0; a < 3; ++a)
          CHECK(fwd.pred_fk.pos.values()[(i * 4 + k) * 3 + a] ==
                doctest::Approx(ref.pos[k][a]).epsilon(1e-12));
    }
  }
}

TEST_CASE("untrained translation equivariance for (last_frame, interp)") {
  ModelConfig cfg;
  cfg.width = 24;
  cfg.heads = 3;
  cfg.residual_blocks = 2;
  cfg.encoder_mlp_layers = 2;
  cfg.embed_dim = 6;
  cfg.dropout = 0.0;
  cfg.joints = 4;
  cfg.max_frame_index = 16;
  const auto skel = synthetic_skeleton(4);
  const auto seq = synth_motion(SynthKind::SinusoidWalk, skel, 12, 9);
  auto shifted = seq;
  const Vec3d delta{7, 0, -3};
  for (auto& f : shifted.frames) f.root_pos += delta;

  Model<double> m(cfg);
  Rng rng(17);
  m.init(rng);
  const std::vector<int> in_idx{0, 1, 2, 11}, out_idx{3, 4, 5, 6, 7, 8, 9, 10};
  const auto a = m.forward(
      build_task_tensors<double>(task_from(seq, in_idx, out_idx), cfg), skel);
  const auto b = m.forward(
      build_task_tensors<double>(task_from(shifted, in_idx, out_idx), cfg), skel);

  double worst = 0;
  for (std::int64_t i = 0; i < a.pred_fk.pos.numel(); ++i) {
    const double expected = a.pred_fk.pos.values()[i] + delta[i % 3];
    worst = std::max(worst, std::abs(b.pred_fk.pos.values()[i] - expected));
  }
  CHECK(worst < 1e-9);
}

TEST_CASE("post-FK global rotations stay orthonormal") {
  ModelConfig cfg;
  cfg.width = 16;
  cfg.heads = 2;
  cfg.residual_blocks = 2;
  cfg.encoder_mlp_layers = 2;
  cfg.embed_dim = 4;
  cfg.dropout = 0.0;
  cfg.joints = 3;
  cfg.max_frame_index = 16;
  const auto skel = synthetic_skeleton(3);
  const auto seq = synth_motion(SynthKind::TwoPoseBlend, skel, 10, 13);
  const auto task = task_from(seq, {0, 1, 9}, {2, 3, 4, 5, 6, 7, 8});
  Model<float> m(cfg);
  Rng rng(23);
  m.init(rng);
  const auto fwd = m.forward(build_task_tensors<float>(task, cfg), skel);
  const auto& rv = fwd.pred_fk.rot.values();
  const std::int64_t mats = fwd.pred_fk.rot.numel() / 9;
  for (std::int64_t n = 0; n < mats; ++n) {
    Eigen::Matrix3f r;
    for (int i = 0; i < 3; ++i)
      for (int c = 0; c < 3; ++c) r(i, c) = rv[n * 9 + i * 3 + c];
    CHECK((r.transpose() * r - Eigen::Matrix3f::Identity()).cwiseAbs().maxCoeff() < 1e-4f);
    CHECK(r.determinant() == doctest::Approx(1.0).epsilon(1e-4));
  }
}

TEST_CASE("weight sharing yields strictly fewer parameters than an unshared clone") {
  ModelConfig cfg;
  cfg.width = 32;
  cfg.heads = 4;
  cfg.residual_blocks = 2;
  cfg.embed_dim = 8;
  cfg.joints = 4;
  Model<float> m(cfg);
  CHECK(m.parameter_count() < m.parameter_count_unshared());
}

TEST_CASE("full forward/backward gradient check on a tiny config") {
  ModelConfig cfg;
  cfg.width = 16;
  cfg.heads = 2;
  cfg.residual_blocks = 2;
  cfg.encoder_mlp_layers = 2;
  cfg.decoder_mlp_layers = 2;
  cfg.embed_dim = 8;
  cfg.dropout = 0.0;
  cfg.joints = 3;
  cfg.max_frame_index = 8;
  const auto skel = synthetic_skeleton(3);
  const auto seq = synth_motion(SynthKind::SinusoidWalk, skel, 5, 21);
  const auto task = task_from(seq, {0, 1, 4}, {2, 3});
  const auto in = build_task_tensors<double>(task, cfg);

  Model<double> m(cfg);
  Rng rng(31);
  m.init(rng);

  auto loss_of = [&]() {
    const auto fwd = m.forward(in, skel);
    Rng wr(77);
    auto weigh = [&wr](const TensorD& t) {
      auto w = TensorD::zeros(t.shape());
      for (auto& v : w.values_mut()) v = wr.uniform(-1.0, 1.0);
      return mean(mul(t, w));
    };
    return add(add(weigh(fwd.pred_fk.pos), weigh(fwd.pred_fk.rot)),
               add(weigh(fwd.rec_fk.pos), weigh(fwd.rec_fk.rot)));
  };

  // analytic
  auto params = m.named_parameters();
  for (auto& [n, t] : params) t.zero_grad();
  backward(loss_of());

  const double h = 1e-5;
  double worst = 0;
  std::string worst_at;
  for (auto& [name, t] : params) {
    const auto& g = t.has_grad() ? t.grad() : std::vector<double>(t.numel(), 0.0);
    for (std::int64_t i = 0; i < t.numel(); ++i) {
      const double saved = t.values()[i];
      double fp, fm;
      {
        NoGrad ng;
        t.values_mut()[i] = saved + h;
        fp = loss_of().item();
        t.values_mut()[i] = saved - h;
        fm = loss_of().item();
        t.values_mut()[i] = saved;
      }
      const double numeric = (fp - fm) / (2 * h);
      const double err = std::abs(g[i] - numeric) /
                         std::max({1.0, std::abs(g[i]), std::abs(numeric)});
      if (err > worst) {
        worst = err;
        worst_at = name + "[" + std::to_string(i) + "]";
      }
    }
  }
  CAPTURE(worst_at);
  CHECK(worst < 1e-3);
}

TEST_CASE("config JSON round-trip and validation") {
  ModelConfig cfg;
  cfg.width = 64;
  cfg.heads = 4;
  cfg.joints = 5;
  cfg.input_delta = InputDeltaMode::None;
  cfg.output_delta = OutputDeltaMode::LastFrame;
  const auto back = ModelConfig::from_json(cfg.to_json());
  CHECK(back.width == 64);
  CHECK(back.input_delta == InputDeltaMode::None);
  CHECK(back.output_delta == OutputDeltaMode::LastFrame);

  ModelConfig bad;
  bad.width = 10;
  bad.heads = 4;  // not divisible
  CHECK_THROWS_AS(bad.validate(), ConfigError);
}

TEST_CASE("frame indices beyond the positional table raise config errors") {
  ModelConfig cfg;
  cfg.width = 16;
  cfg.heads = 2;
  cfg.embed_dim = 4;
  cfg.joints = 3;
  cfg.max_frame_index = 4;  // window of 6 will not fit
  const auto skel = synthetic_skeleton(3);
  const auto seq = synth_motion(SynthKind::SinusoidWalk, skel, 6, 2);
  const auto task = task_from(seq, {0, 1, 5}, {2, 3, 4});
  CHECK_THROWS_AS(build_task_tensors<float>(task, cfg), ConfigError);
}
