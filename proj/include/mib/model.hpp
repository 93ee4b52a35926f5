#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "mib/autodiff_geometry.hpp"
#include "mib/baselines.hpp"
#include "mib/errors.hpp"
#include "mib/jsonio.hpp"
#include "mib/motion.hpp"
#include "mib/rng.hpp"
#include "mib/tensor.hpp"

// The interpolation network: inputs referenced against the last context
// frame, a key-frame self-attention encoder, a missing-frame cross-attention
// encoder that reads the key encodings at every level, and a shared MLP
// decoder whose residual output is added to a closed-form baseline before
// the FK pass.

namespace mib {

enum class InputDeltaMode { LastFrame, None };
enum class OutputDeltaMode { Interp, LastFrame, None };

inline InputDeltaMode input_delta_from_string(const std::string& s) {
  if (s == "last_frame") return InputDeltaMode::LastFrame;
  if (s == "none") return InputDeltaMode::None;
  throw ConfigError("unknown input delta mode '" + s + "'");
}

inline OutputDeltaMode output_delta_from_string(const std::string& s) {
  if (s == "interp") return OutputDeltaMode::Interp;
  if (s == "last_frame") return OutputDeltaMode::LastFrame;
  if (s == "none") return OutputDeltaMode::None;
  throw ConfigError("unknown output delta mode '" + s + "'");
}

inline std::string to_string(InputDeltaMode m) {
  return m == InputDeltaMode::LastFrame ? "last_frame" : "none";
}

inline std::string to_string(OutputDeltaMode m) {
  switch (m) {
    case OutputDeltaMode::Interp: return "interp";
    case OutputDeltaMode::LastFrame: return "last_frame";
    default: return "none";
  }
}

struct ModelConfig {
  int width = 1024;            // d
  int heads = 8;               // h
  int residual_blocks = 6;     // R
  int encoder_mlp_layers = 3;  // L_E
  int decoder_mlp_layers = 2;  // L_D
  int embed_dim = 32;
  double dropout = 0.2;
  InputDeltaMode input_delta = InputDeltaMode::LastFrame;
  OutputDeltaMode output_delta = OutputDeltaMode::Interp;
  int max_frame_index = 64;
  int joints = 22;

  void validate() const {
    if (width < 1 || heads < 1 || width % heads != 0)
      throw ConfigError("model: width must be a positive multiple of heads");
    if (residual_blocks < 1) throw ConfigError("model: need at least one block");
    if (encoder_mlp_layers < 1 || decoder_mlp_layers < 1)
      throw ConfigError("model: MLPs need at least one layer");
    if (embed_dim < 1) throw ConfigError("model: embed_dim must be positive");
    if (dropout < 0 || dropout >= 1) throw ConfigError("model: dropout must be in [0,1)");
    if (max_frame_index < 2) throw ConfigError("model: max_frame_index too small");
    if (joints < 1) throw ConfigError("model: joints must be positive");
  }

  json to_json() const {
    return {{"width", width},
            {"heads", heads},
            {"residual_blocks", residual_blocks},
            {"encoder_mlp_layers", encoder_mlp_layers},
            {"decoder_mlp_layers", decoder_mlp_layers},
            {"embed_dim", embed_dim},
            {"dropout", dropout},
            {"input_delta", to_string(input_delta)},
            {"output_delta", to_string(output_delta)},
            {"max_frame_index", max_frame_index},
            {"joints", joints}};
  }

  static ModelConfig from_json(const json& j) {
    ModelConfig c;
    try {
      c.width = j.at("width").get<int>();
      c.heads = j.at("heads").get<int>();
      c.residual_blocks = j.at("residual_blocks").get<int>();
      c.encoder_mlp_layers = j.at("encoder_mlp_layers").get<int>();
      c.decoder_mlp_layers = j.at("decoder_mlp_layers").get<int>();
      c.embed_dim = j.at("embed_dim").get<int>();
      c.dropout = j.at("dropout").get<double>();
      c.input_delta = input_delta_from_string(j.at("input_delta").get<std::string>());
      c.output_delta = output_delta_from_string(j.at("output_delta").get<std::string>());
      c.max_frame_index = j.at("max_frame_index").get<int>();
      c.joints = j.at("joints").get<int>();
    } catch (const json::exception& e) {
      throw ConfigError(std::string("model config: malformed JSON: ") + e.what());
    }
    c.validate();
    return c;
  }
};

// Attention-cost accounting: one entry per query/key score.
struct AttnStats {
  std::int64_t score_entries = 0;
  std::int64_t mha_calls = 0;
};

// Optional capture of per-level encoder shapes.
struct ForwardProbe {
  std::vector<Shape> key_shapes, missing_shapes;
};

// Per level: one self-attention over keys plus one cross-attention from the
// missing frames into the keys.
inline std::int64_t attention_entries_split(std::int64_t n_in, std::int64_t n_out) {
  return n_in * n_in + n_in * n_out;
}

// Joint self-attention over the full window for comparison.
inline std::int64_t attention_entries_joint(std::int64_t n_total) {
  return n_total * n_total;
}

// Everything the forward pass needs from one task, with inputs already
// Δ-referenced. Built under NoGrad; only the positional-embedding lookup and
// the network itself are recorded on the graph.
template <class S>
struct TaskInputs {
  std::vector<std::int64_t> in_idx, out_idx;  // frame positions in the window
  Tensor<S> x_delta;   // [n_in, 9J] referenced input features
  Tensor<S> y_base;    // [n_out, J*6+3] output baseline channels (rot | root)
  Tensor<S> x_base;    // [n_in, J*6+3] reconstruction baseline channels
  Tensor<S> y_gt_pos;  // [n_out, J, 3] target global positions
  Tensor<S> y_gt_quat; // [n_out, J, 4] target global quaternions (w >= 0)
  Tensor<S> x_gt_pos;  // [n_in, J, 3]
  Tensor<S> x_gt_quat; // [n_in, J, 4]
};

namespace detail {

// Channel layout helpers: per frame [J*6 rotations | 3 root position].
inline std::vector<double> pose_channels(const Pose& p) {
  std::vector<double> out;
  for (const auto& r : p.rot)
    for (int i = 0; i < 6; ++i) out.push_back(r[i]);
  out.push_back(p.root_pos.x());
  out.push_back(p.root_pos.y());
  out.push_back(p.root_pos.z());
  return out;
}

}  // namespace detail

// The frame whose pose anchors both the input reference and the last-frame
// output baseline: the last key before the first missing frame.
inline int reference_frame(const InbetweenTask& task) {
  if (task.out_indices.empty()) return task.in_indices.back();
  int ref = -1;
  for (int k : task.in_indices)
    if (k < task.out_indices.front()) ref = k;
  if (ref < 0)
    throw TaskError("task: no key-frame precedes the first missing frame");
  return ref;
}

template <class S>
TaskInputs<S> build_task_tensors(const InbetweenTask& task, const ModelConfig& cfg) {
  task.validate();
  const Skeleton& skel = task.window.skeleton;
  const int j = skel.joint_count();
  if (j != cfg.joints)
    throw ConfigError("model: config expects " + std::to_string(cfg.joints) +
                      " joints, task has " + std::to_string(j));
  if (task.window.frame_count() > cfg.max_frame_index)
    throw ConfigError("model: window of " + std::to_string(task.window.frame_count()) +
                      " frames exceeds max_frame_index " +
                      std::to_string(cfg.max_frame_index));
  NoGrad ng;
  TaskInputs<S> out;
  for (int i : task.in_indices) out.in_idx.push_back(i);
  for (int i : task.out_indices) out.out_idx.push_back(i);
  const std::int64_t n_in = static_cast<std::int64_t>(task.in_indices.size());
  const std::int64_t n_out = static_cast<std::int64_t>(task.out_indices.size());

  // FK once per frame (double precision), giving input features and targets.
  std::vector<FkPose> fk_frames;
  for (const auto& f : task.window.frames)
    fk_frames.push_back(fk_pose(skel, f.root_pos, f.rot));

  const int ref = reference_frame(task);
  const Pose& ref_pose = task.window.frames[ref];

  // input features: per joint [global position | local rot6], minus the
  // reference root channels when Δ-referencing is on
  std::vector<double> x_delta;
  x_delta.reserve(n_in * j * 9);
  for (int t : task.in_indices) {
    for (int k = 0; k < j; ++k) {
      const Vec3d& p = fk_frames[t].pos[k];
      const Rot6d& r = task.window.frames[t].rot[k];
      if (cfg.input_delta == InputDeltaMode::LastFrame) {
        for (int a = 0; a < 3; ++a) x_delta.push_back(p[a] - ref_pose.root_pos[a]);
        for (int a = 0; a < 6; ++a) x_delta.push_back(r[a] - ref_pose.rot[0][a]);
      } else {
        for (int a = 0; a < 3; ++a) x_delta.push_back(p[a]);
        for (int a = 0; a < 6; ++a) x_delta.push_back(r[a]);
      }
    }
  }
  {
    std::vector<S> cast(x_delta.size());
    for (std::size_t i = 0; i < x_delta.size(); ++i) cast[i] = static_cast<S>(x_delta[i]);
    out.x_delta = Tensor<S>::from_values({n_in, j * 9}, std::move(cast));
  }

  // output baselines
  const std::int64_t ch = static_cast<std::int64_t>(j) * 6 + 3;
  std::vector<double> y_base, x_base;
  switch (cfg.output_delta) {
    case OutputDeltaMode::Interp: {
      const auto interp = slerp_interpolate(task);
      for (const auto& p : interp) {
        const auto c = detail::pose_channels(p);
        y_base.insert(y_base.end(), c.begin(), c.end());
      }
      for (int t : task.in_indices) {
        const auto c = detail::pose_channels(task.window.frames[t]);
        x_base.insert(x_base.end(), c.begin(), c.end());
      }
      break;
    }
    case OutputDeltaMode::LastFrame: {
      const auto c = detail::pose_channels(ref_pose);
      for (std::int64_t i = 0; i < n_out; ++i)
        y_base.insert(y_base.end(), c.begin(), c.end());
      for (std::int64_t i = 0; i < n_in; ++i)
        x_base.insert(x_base.end(), c.begin(), c.end());
      break;
    }
    case OutputDeltaMode::None: {
      y_base.assign(static_cast<std::size_t>(n_out * ch), 0.0);
      x_base.assign(static_cast<std::size_t>(n_in * ch), 0.0);
      break;
    }
  }
  {
    std::vector<S> yc(y_base.size()), xc(x_base.size());
    for (std::size_t i = 0; i < y_base.size(); ++i) yc[i] = static_cast<S>(y_base[i]);
    for (std::size_t i = 0; i < x_base.size(); ++i) xc[i] = static_cast<S>(x_base[i]);
    out.y_base = Tensor<S>::from_values({n_out, ch}, std::move(yc));
    out.x_base = Tensor<S>::from_values({n_in, ch}, std::move(xc));
  }

  // targets: global positions and global quaternions from the same FK sweep
  const auto fill_targets = [&](const std::vector<int>& idx, Tensor<S>& pos_t,
                                Tensor<S>& quat_t) {
    const std::int64_t n = static_cast<std::int64_t>(idx.size());
    pos_t = Tensor<S>::zeros({n, j, 3});
    quat_t = Tensor<S>::zeros({n, j, 4});
    std::int64_t row = 0;
    for (int t : idx) {
      for (int k = 0; k < j; ++k) {
        for (int a = 0; a < 3; ++a)
          pos_t.values_mut()[(row * j + k) * 3 + a] = static_cast<S>(fk_frames[t].pos[k][a]);
        const Quatd q = matrix_to_quaternion(fk_frames[t].rot[k]);
        quat_t.values_mut()[(row * j + k) * 4 + 0] = static_cast<S>(q.w);
        quat_t.values_mut()[(row * j + k) * 4 + 1] = static_cast<S>(q.x);
        quat_t.values_mut()[(row * j + k) * 4 + 2] = static_cast<S>(q.y);
        quat_t.values_mut()[(row * j + k) * 4 + 3] = static_cast<S>(q.z);
      }
      ++row;
    }
  };
  fill_targets(task.out_indices, out.y_gt_pos, out.y_gt_quat);
  fill_targets(task.in_indices, out.x_gt_pos, out.x_gt_quat);
  return out;
}

template <class S>
struct ModelForward {
  Tensor<S> pred_root;   // [n_out, 3]
  Tensor<S> pred_rot6;   // [n_out, J, 6]
  FkOut<S> pred_fk;
  Tensor<S> rec_root;    // [n_in, 3]
  Tensor<S> rec_rot6;
  FkOut<S> rec_fk;
};

template <class S>
class Model {
 public:
  explicit Model(ModelConfig cfg) : cfg_(std::move(cfg)) {
    cfg_.validate();
    const std::int64_t d = cfg_.width;
    const std::int64_t in_dim = static_cast<std::int64_t>(cfg_.joints) * 9 + cfg_.embed_dim;
    const std::int64_t out_dim = static_cast<std::int64_t>(cfg_.joints) * 6 + 3;
    input_w_ = param({in_dim, d});
    input_b_ = param({d});
    pos_embed_ = param({cfg_.max_frame_index, cfg_.embed_dim});
    blocks_.resize(cfg_.residual_blocks);
    for (auto& b : blocks_) {
      b.wq = param({d, d});
      b.wk = param({d, d});
      b.wv = param({d, d});
      b.wo = param({d, d});
      b.ln_gain = param({d});
      b.ln_bias = param({d});
      for (int l = 0; l < cfg_.encoder_mlp_layers; ++l) {
        b.mlp_w.push_back(param({d, d}));
        b.mlp_b.push_back(param({d}));
      }
    }
    for (int l = 0; l < cfg_.decoder_mlp_layers; ++l) {
      const std::int64_t rows = d;
      const std::int64_t cols = l + 1 == cfg_.decoder_mlp_layers ? out_dim : d;
      dec_w_.push_back(param({rows, cols}));
      dec_b_.push_back(param({cols}));
    }
  }

  const ModelConfig& config() const { return cfg_; }

  // Uniform +-1/sqrt(fan_in) for weights, zeros for biases, small normal for
  // the positional table.
  void init(Rng& rng) {
    double fan_in = 1.0;  // linear biases reuse the fan-in of their weight
    for (auto& [name, t] : named_parameters()) {
      if (name == "pos_embed") {
        for (auto& v : t.values_mut()) v = static_cast<S>(rng.normal(0.0, 0.02));
      } else if (name.ends_with(".bias")) {
        for (auto& v : t.values_mut()) v = S(0);
      } else if (name.ends_with(".gain")) {
        for (auto& v : t.values_mut()) v = S(1);
      } else {
        if (!name.ends_with(".b")) fan_in = static_cast<double>(t.shape()[0]);
        const double bound = 1.0 / std::sqrt(fan_in);
        for (auto& v : t.values_mut())
          v = static_cast<S>(rng.uniform(-bound, bound));
      }
    }
  }

  std::vector<std::pair<std::string, Tensor<S>>> named_parameters() {
    std::vector<std::pair<std::string, Tensor<S>>> out;
    out.emplace_back("input.w", input_w_);
    out.emplace_back("input.b", input_b_);
    out.emplace_back("pos_embed", pos_embed_);
    for (std::size_t i = 0; i < blocks_.size(); ++i) {
      const std::string p = "block" + std::to_string(i) + ".";
      auto& b = blocks_[i];
      out.emplace_back(p + "attn.wq", b.wq);
      out.emplace_back(p + "attn.wk", b.wk);
      out.emplace_back(p + "attn.wv", b.wv);
      out.emplace_back(p + "attn.wo", b.wo);
      out.emplace_back(p + "ln.gain", b.ln_gain);
      out.emplace_back(p + "ln.bias", b.ln_bias);
      for (std::size_t l = 0; l < b.mlp_w.size(); ++l) {
        out.emplace_back(p + "mlp" + std::to_string(l) + ".w", b.mlp_w[l]);
        out.emplace_back(p + "mlp" + std::to_string(l) + ".b", b.mlp_b[l]);
      }
    }
    for (std::size_t l = 0; l < dec_w_.size(); ++l) {
      out.emplace_back("dec" + std::to_string(l) + ".w", dec_w_[l]);
      out.emplace_back("dec" + std::to_string(l) + ".b", dec_b_[l]);
    }
    return out;
  }

  std::int64_t parameter_count() {
    std::int64_t n = 0;
    for (auto& [name, t] : named_parameters()) n += t.numel();
    return n;
  }

  // Parameters an unshared variant would need: a second copy of every
  // per-level block for the missing-frame path.
  std::int64_t parameter_count_unshared() {
    std::int64_t n = parameter_count();
    for (auto& b : blocks_) {
      n += b.wq.numel() + b.wk.numel() + b.wv.numel() + b.wo.numel();
      n += b.ln_gain.numel() + b.ln_bias.numel();
      for (std::size_t l = 0; l < b.mlp_w.size(); ++l)
        n += b.mlp_w[l].numel() + b.mlp_b[l].numel();
    }
    return n;
  }

  // training=true enables dropout; rng must then be non-null. stats, when
  // given, accumulates attention-score counts.
  ModelForward<S> forward(const TaskInputs<S>& in, const Skeleton& skel,
                          bool training = false, Rng* rng = nullptr,
                          AttnStats* stats = nullptr, ForwardProbe* probe = nullptr) {
    if (training && cfg_.dropout > 0 && rng == nullptr)
      throw ContractError("model: training forward needs an RNG for dropout");
    for (auto idx : in.in_idx) check_frame_index(idx);
    for (auto idx : in.out_idx) check_frame_index(idx);

    const std::int64_t n_in = in.x_delta.shape()[0];
    const std::int64_t n_out = in.y_base.shape()[0];
    const std::int64_t j9 = static_cast<std::int64_t>(cfg_.joints) * 9;

    // level-0 encodings: pose channels (Δ-referenced keys; zeros for missing
    // frames) concatenated with the positional embedding, then projected
    auto pe_in = gather_rows(pos_embed_, in.in_idx);
    auto pe_out = gather_rows(pos_embed_, in.out_idx);
    auto ek = linear(concat<S>({in.x_delta, pe_in}, 1), input_w_, input_b_);
    auto em = linear(concat<S>({Tensor<S>::zeros({n_out, j9}), pe_out}, 1),
                     input_w_, input_b_);

    for (auto& b : blocks_) {
      // key-frame self-attention block
      auto ak = dropout(mha(ek, ek, b, stats), training, rng);
      auto ek_next = mlp(b, relu(layernorm(add(ak, ek), b.ln_gain, b.ln_bias)),
                         training, rng);
      // missing-frame cross-attention into the current key encodings
      auto am = dropout(mha(em, ek_next, b, stats), training, rng);
      auto em_next = mlp(b, relu(layernorm(add(am, em), b.ln_gain, b.ln_bias)),
                         training, rng);
      ek = ek_next;
      em = em_next;
      if (probe) {
        probe->key_shapes.push_back(ek.shape());
        probe->missing_shapes.push_back(em.shape());
      }
    }

    auto dy = decode(em, training, rng);  // [n_out, J*6+3]
    auto dx = decode(ek, training, rng);  // [n_in,  J*6+3]

    ModelForward<S> out;
    compose(add(in.y_base, dy), skel, out.pred_root, out.pred_rot6, out.pred_fk);
    compose(add(in.x_base, dx), skel, out.rec_root, out.rec_rot6, out.rec_fk);
    return out;
  }

 private:
  struct Block {
    Tensor<S> wq, wk, wv, wo;
    Tensor<S> ln_gain, ln_bias;
    std::vector<Tensor<S>> mlp_w, mlp_b;
  };

  static Tensor<S> param(Shape shape) { return Tensor<S>::zeros(std::move(shape), true); }

  void check_frame_index(std::int64_t idx) const {
    if (idx < 0 || idx >= cfg_.max_frame_index)
      throw ConfigError("model: frame index " + std::to_string(idx) +
                        " outside positional table of " +
                        std::to_string(cfg_.max_frame_index));
  }

  Tensor<S> linear(const Tensor<S>& x, const Tensor<S>& w, const Tensor<S>& b) {
    return add(matmul(x, w), b);
  }

  // Inverted dropout with a constant mask; identity when not training.
  Tensor<S> dropout(const Tensor<S>& x, bool training, Rng* rng) {
    if (!training || cfg_.dropout <= 0) return x;
    const S keep = static_cast<S>(1.0 - cfg_.dropout);
    auto mask = Tensor<S>::zeros(x.shape());
    for (auto& v : mask.values_mut())
      v = rng->uniform() < cfg_.dropout ? S(0) : S(1) / keep;
    return mul(x, mask);
  }

  Tensor<S> mha(const Tensor<S>& eq, const Tensor<S>& ekv, Block& b,
                AttnStats* stats) {
    const std::int64_t d = cfg_.width;
    const std::int64_t dh = d / cfg_.heads;
    const S scale = static_cast<S>(1.0 / std::sqrt(static_cast<double>(d)));
    auto q = matmul(eq, b.wq);
    auto k = matmul(ekv, b.wk);
    auto v = matmul(ekv, b.wv);
    std::vector<Tensor<S>> heads;
    for (int h = 0; h < cfg_.heads; ++h) {
      auto qh = slice(q, 1, h * dh, dh);
      auto kh = slice(k, 1, h * dh, dh);
      auto vh = slice(v, 1, h * dh, dh);
      auto scores = scalar_mul(matmul(qh, transpose(kh)), scale);
      heads.push_back(matmul(softmax(scores, -1), vh));
    }
    if (stats) {
      stats->score_entries += eq.shape()[0] * ekv.shape()[0];
      stats->mha_calls += 1;
    }
    return matmul(concat<S>(heads, 1), b.wo);
  }

  Tensor<S> mlp(Block& b, const Tensor<S>& x, bool training, Rng* rng) {
    auto h = x;
    for (std::size_t l = 0; l < b.mlp_w.size(); ++l) {
      h = linear(h, b.mlp_w[l], b.mlp_b[l]);
      if (l + 1 < b.mlp_w.size()) h = dropout(relu(h), training, rng);
    }
    return h;
  }

  Tensor<S> decode(const Tensor<S>& x, bool training, Rng* rng) {
    auto h = x;
    for (std::size_t l = 0; l < dec_w_.size(); ++l) {
      h = linear(h, dec_w_[l], dec_b_[l]);
      if (l + 1 < dec_w_.size()) h = dropout(relu(h), training, rng);
    }
    return h;
  }

  // channels [J*6 | 3] -> split, then FK
  void compose(const Tensor<S>& channels, const Skeleton& skel, Tensor<S>& root,
               Tensor<S>& rot6, FkOut<S>& fk_out) {
    const std::int64_t n = channels.shape()[0];
    const std::int64_t j6 = static_cast<std::int64_t>(cfg_.joints) * 6;
    rot6 = reshape(slice(channels, 1, 0, j6), {n, cfg_.joints, 6});
    root = slice(channels, 1, j6, 3);
    fk_out = fk(skel, root, rot6);
  }

  ModelConfig cfg_;
  Tensor<S> input_w_, input_b_, pos_embed_;
  std::vector<Block> blocks_;
  std::vector<Tensor<S>> dec_w_, dec_b_;
};

}  // namespace mib
