#pragma once

// Losses, Adam, the learning-rate schedule, and the training loop.

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <map>
#include <ostream>
#include <string>
#include <utility>
#include <vector>

#include "mib/autodiff_geometry.hpp"
#include "mib/checkpoint.hpp"
#include "mib/errors.hpp"
#include "mib/jsonio.hpp"
#include "mib/model.hpp"
#include "mib/sampler.hpp"
#include "mib/tensor.hpp"

namespace mib {

struct TrainConfig {
  int epochs = 300;
  int batch_size = 64;
  double lr_max = 2e-4;
  int warmup_epochs = 50;
  int lr_drop_epoch = 250;
  double lr_drop_factor = 0.1;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  std::uint64_t seed = 0;
  bool reconstruction_loss = true;
  int batches_per_epoch = 256;  // synthetic data has no natural epoch
  int checkpoint_every = 50;

  void validate() const {
    if (epochs < 1) throw ConfigError("train: epochs must be positive");
    if (batch_size < 1) throw ConfigError("train: batch_size must be positive");
    if (lr_max <= 0) throw ConfigError("train: lr_max must be positive");
    if (!(warmup_epochs < lr_drop_epoch && lr_drop_epoch <= epochs))
      throw ConfigError("train: need warmup_epochs < lr_drop_epoch <= epochs");
    if (warmup_epochs < 1) throw ConfigError("train: warmup_epochs must be positive");
    if (lr_drop_factor <= 0 || lr_drop_factor > 1)
      throw ConfigError("train: lr_drop_factor must be in (0,1]");
    if (batches_per_epoch < 1) throw ConfigError("train: batches_per_epoch must be positive");
    if (checkpoint_every < 1) throw ConfigError("train: checkpoint_every must be positive");
  }

  json to_json() const {
    return {{"epochs", epochs},
            {"batch_size", batch_size},
            {"lr_max", lr_max},
            {"warmup_epochs", warmup_epochs},
            {"lr_drop_epoch", lr_drop_epoch},
            {"lr_drop_factor", lr_drop_factor},
            {"beta1", beta1},
            {"beta2", beta2},
            {"adam_eps", adam_eps},
            {"seed", seed},
            {"reconstruction_loss", reconstruction_loss},
            {"batches_per_epoch", batches_per_epoch},
            {"checkpoint_every", checkpoint_every}};
  }

  static TrainConfig from_json(const json& j) {
    TrainConfig c;
    try {
      c.epochs = j.at("epochs").get<int>();
      c.batch_size = j.at("batch_size").get<int>();
      c.lr_max = j.at("lr_max").get<double>();
      c.warmup_epochs = j.at("warmup_epochs").get<int>();
      c.lr_drop_epoch = j.at("lr_drop_epoch").get<int>();
      c.lr_drop_factor = j.at("lr_drop_factor").get<double>();
      c.beta1 = j.at("beta1").get<double>();
      c.beta2 = j.at("beta2").get<double>();
      c.adam_eps = j.at("adam_eps").get<double>();
      c.seed = j.at("seed").get<std::uint64_t>();
      c.reconstruction_loss = j.at("reconstruction_loss").get<bool>();
      c.batches_per_epoch = j.at("batches_per_epoch").get<int>();
      c.checkpoint_every = j.at("checkpoint_every").get<int>();
    } catch (const json::exception& e) {
      throw ConfigError(std::string("train config: malformed JSON: ") + e.what());
    }
    c.validate();
    return c;
  }
};

// Linear warmup to lr_max, flat, then a single step down.
inline double lr_schedule(const TrainConfig& cfg, int epoch) {
  if (epoch < 0) throw ContractError("lr_schedule: negative epoch");
  if (epoch < cfg.warmup_epochs)
    return cfg.lr_max * static_cast<double>(epoch) / cfg.warmup_epochs;
  if (epoch < cfg.lr_drop_epoch) return cfg.lr_max;
  return cfg.lr_max * cfg.lr_drop_factor;
}

struct LossBreakdown {
  double l_pos_pred = 0;
  double l_pos_rec = 0;
  double l_quat_pred = 0;
  double l_quat_rec = 0;
  double l_tot = 0;
};

namespace detail {

// L1 over the last axis, mean pooled over everything else.
template <class S>
Tensor<S> l1_pooled(const Tensor<S>& pred, const Tensor<S>& target) {
  return mean(l1_norm_lastaxis(sub(pred, target)));
}

// Quaternion L1 against per-row hemisphere-aligned targets. `rot` holds
// post-FK global rotation matrices [..,3,3]; `target_quat` [..,4] with w >= 0.
template <class S>
Tensor<S> quat_l1_pooled(const Tensor<S>& rot, const Tensor<S>& target_quat) {
  const std::int64_t rows = rot.numel() / 9;
  if (target_quat.numel() != rows * 4)
    throw ShapeError("quat loss: rotation/quaternion row counts disagree");
  auto pred_q = matrix_to_quaternion_rows(reshape(rot, {rows, 3, 3}));
  // flip each target row when the prediction lands on the far hemisphere;
  // the sign comes from forward values only, so no gradient flows through it
  auto aligned = Tensor<S>::zeros({rows, 4});
  {
    const auto& pv = pred_q.values();
    const auto& tv = target_quat.values();
    auto& av = aligned.values_mut();
    for (std::int64_t r = 0; r < rows; ++r) {
      S dot = 0;
      for (int c = 0; c < 4; ++c) dot += pv[r * 4 + c] * tv[r * 4 + c];
      const S s = dot < S(0) ? S(-1) : S(1);
      for (int c = 0; c < 4; ++c) av[r * 4 + c] = s * tv[r * 4 + c];
    }
  }
  return mean(l1_norm_lastaxis(sub(pred_q, aligned)));
}

}  // namespace detail

template <class S>
struct LossResult {
  Tensor<S> total;
  LossBreakdown parts;
};

// Assemble the four loss terms from a forward pass. Targets are the FK
// ground truth stored alongside the task tensors. With `reconstruction`
// off, the key-frame terms are dropped from the total and reported as 0.
template <class S>
LossResult<S> compute_losses(const ModelForward<S>& fwd, const TaskInputs<S>& in,
                             bool reconstruction = true) {
  LossResult<S> r;
  auto pos_pred = detail::l1_pooled(fwd.pred_fk.pos, in.y_gt_pos);
  auto quat_pred = detail::quat_l1_pooled(fwd.pred_fk.rot, in.y_gt_quat);
  r.parts.l_pos_pred = pos_pred.item();
  r.parts.l_quat_pred = quat_pred.item();
  r.total = add(pos_pred, quat_pred);
  if (reconstruction) {
    auto pos_rec = detail::l1_pooled(fwd.rec_fk.pos, in.x_gt_pos);
    auto quat_rec = detail::quat_l1_pooled(fwd.rec_fk.rot, in.x_gt_quat);
    r.parts.l_pos_rec = pos_rec.item();
    r.parts.l_quat_rec = quat_rec.item();
    r.total = add(r.total, add(pos_rec, quat_rec));
  }
  r.parts.l_tot = r.total.item();
  return r;
}

// Adam with bias correction. State is keyed by parameter name so it can be
// round-tripped through checkpoints.
template <class S>
class Adam {
 public:
  Adam(double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8)
      : b1_(beta1), b2_(beta2), eps_(eps) {}

  std::int64_t step_count() const { return t_; }

  void step(std::vector<std::pair<std::string, Tensor<S>>>& params, double lr) {
    ++t_;
    const double bc1 = 1.0 - std::pow(b1_, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(b2_, static_cast<double>(t_));
    for (auto& [name, p] : params) {
      auto& m = m_[name];
      auto& v = v_[name];
      if (m.empty()) {
        m.assign(p.numel(), S(0));
        v.assign(p.numel(), S(0));
      }
      // a parameter untouched by backward counts as zero gradient
      static const std::vector<S> kEmpty;
      const auto& g = p.has_grad() ? p.grad() : kEmpty;
      auto& val = p.values_mut();
      for (std::int64_t i = 0; i < p.numel(); ++i) {
        const double gi = g.empty() ? 0.0 : static_cast<double>(g[i]);
        m[i] = static_cast<S>(b1_ * m[i] + (1.0 - b1_) * gi);
        v[i] = static_cast<S>(b2_ * v[i] + (1.0 - b2_) * gi * gi);
        const double mhat = m[i] / bc1;
        const double vhat = v[i] / bc2;
        val[i] = static_cast<S>(val[i] - lr * mhat / (std::sqrt(vhat) + eps_));
      }
    }
  }

  static void zero_grad(std::vector<std::pair<std::string, Tensor<S>>>& params) {
    for (auto& [name, p] : params) p.zero_grad();
  }

  // m/v moments flattened into checkpoint tensors next to the parameters.
  NamedTensors state_tensors() const {
    NamedTensors out;
    for (const auto& [name, m] : m_) {
      auto t = TensorF::zeros({static_cast<std::int64_t>(m.size())});
      for (std::size_t i = 0; i < m.size(); ++i) t.values_mut()[i] = static_cast<float>(m[i]);
      out.emplace_back("adam.m." + name, std::move(t));
    }
    for (const auto& [name, v] : v_) {
      auto t = TensorF::zeros({static_cast<std::int64_t>(v.size())});
      for (std::size_t i = 0; i < v.size(); ++i) t.values_mut()[i] = static_cast<float>(v[i]);
      out.emplace_back("adam.v." + name, std::move(t));
    }
    return out;
  }

  void load_state(const NamedTensors& tensors, std::int64_t step_count) {
    t_ = step_count;
    for (const auto& [name, t] : tensors) {
      auto fill = [&](std::map<std::string, std::vector<S>>& dst, const std::string& key) {
        auto& slot = dst[key];
        slot.resize(t.numel());
        for (std::int64_t i = 0; i < t.numel(); ++i) slot[i] = static_cast<S>(t.values()[i]);
      };
      if (name.rfind("adam.m.", 0) == 0) fill(m_, name.substr(7));
      else if (name.rfind("adam.v.", 0) == 0) fill(v_, name.substr(7));
    }
  }

 private:
  double b1_, b2_, eps_;
  std::int64_t t_ = 0;
  std::map<std::string, std::vector<S>> m_, v_;
};

struct TrainDataset {
  Skeleton skeleton;
  std::vector<MotionSequence> windows;
};

namespace detail {

template <class S>
NamedTensors params_as_f32(Model<S>& model) {
  NamedTensors out;
  for (auto& [name, t] : model.named_parameters()) out.emplace_back(name, t.template cast<float>());
  return out;
}

}  // namespace detail

// Model parameters + optimizer moments + progress marker in one directory.
template <class S>
void save_training_checkpoint(const std::filesystem::path& dir, Model<S>& model,
                              const Adam<S>& adam, int epoch) {
  auto tensors = detail::params_as_f32(model);
  for (auto& nt : adam.state_tensors()) tensors.push_back(std::move(nt));
  save_checkpoint(dir, tensors);
  write_json_file(dir / "model_config.json", model.config().to_json());
  write_json_file(dir / "train_state.json",
                  json{{"epoch", epoch}, {"adam_steps", adam.step_count()}});
}

// Restores parameters (and optimizer state when present). Returns the saved epoch.
template <class S>
int load_training_checkpoint(const std::filesystem::path& dir, Model<S>& model,
                             Adam<S>* adam = nullptr) {
  const auto tensors = load_checkpoint(dir);
  std::map<std::string, const TensorF*> by_name;
  for (const auto& [name, t] : tensors) by_name[name] = &t;
  for (auto& [name, p] : model.named_parameters()) {
    auto it = by_name.find(name);
    if (it == by_name.end())
      throw DataError("checkpoint: missing parameter '" + name + "'");
    if (it->second->shape() != p.shape())
      throw DataError("checkpoint: shape mismatch for '" + name + "'");
    auto& dst = p.values_mut();
    const auto& src = it->second->values();
    for (std::int64_t i = 0; i < p.numel(); ++i) dst[i] = static_cast<S>(src[i]);
  }
  int epoch = 0;
  std::int64_t steps = 0;
  const auto state_path = dir / "train_state.json";
  if (std::filesystem::exists(state_path)) {
    const auto st = read_json_file(state_path);
    epoch = st.value("epoch", 0);
    steps = st.value("adam_steps", std::int64_t{0});
  }
  if (adam) adam->load_state(tensors, steps);
  return epoch;
}

struct TrainSummary {
  LossBreakdown first;  // first optimizer step of the run
  LossBreakdown last;   // final optimizer step
  int steps = 0;
};

// The batch loop. Draws weighted tasks from `data.windows`, averages losses
// over the batch, steps Adam once per batch, and emits one JSON line per
// step. A non-finite loss aborts with a diagnostic snapshot.
template <class S>
TrainSummary train_model(Model<S>& model, const TrainConfig& tc, const SamplerConfig& sc,
                         const TrainDataset& data, std::ostream* log = nullptr,
                         const std::filesystem::path& out_dir = {}) {
  tc.validate();
  SamplerConfig sampler = sc;
  sampler.batch_size = tc.batch_size;
  sampler.validate();
  if (data.windows.empty()) throw DataError("train: no windows");

  Rng rng(tc.seed);
  model.init(rng);
  auto params = model.named_parameters();
  Adam<S> adam(tc.beta1, tc.beta2, tc.adam_eps);

  TrainSummary summary;
  for (int epoch = 0; epoch < tc.epochs; ++epoch) {
    const double lr = lr_schedule(tc, epoch);
    for (int step = 0; step < tc.batches_per_epoch; ++step) {
      const auto batch = sample_batch(sampler, data.windows, rng);
      Tensor<S> total;
      LossBreakdown acc;
      try {
        for (const auto& task : batch.tasks) {
          const auto in = build_task_tensors<S>(task, model.config());
          const auto fwd = model.forward(in, data.skeleton, /*training=*/true, &rng);
          auto lr_task = compute_losses(fwd, in, tc.reconstruction_loss);
          total = total.defined() ? add(total, lr_task.total) : lr_task.total;
          acc.l_pos_pred += lr_task.parts.l_pos_pred;
          acc.l_pos_rec += lr_task.parts.l_pos_rec;
          acc.l_quat_pred += lr_task.parts.l_quat_pred;
          acc.l_quat_rec += lr_task.parts.l_quat_rec;
          acc.l_tot += lr_task.parts.l_tot;
        }
      } catch (const NumericError& e) {
        // degenerate geometry from exploded parameters lands here too
        if (!out_dir.empty())
          save_training_checkpoint(out_dir / "diagnostic_nan", model, adam, epoch);
        throw NumericError("train: numeric failure at epoch " + std::to_string(epoch) +
                           " step " + std::to_string(step) + ": " + e.what());
      }
      const double inv = 1.0 / static_cast<double>(batch.tasks.size());
      total = scalar_mul(total, static_cast<S>(inv));
      acc.l_pos_pred *= inv;
      acc.l_pos_rec *= inv;
      acc.l_quat_pred *= inv;
      acc.l_quat_rec *= inv;
      acc.l_tot *= inv;

      if (!std::isfinite(acc.l_tot)) {
        if (!out_dir.empty())
          save_training_checkpoint(out_dir / "diagnostic_nan", model, adam, epoch);
        throw NumericError("train: non-finite loss at epoch " + std::to_string(epoch) +
                           " step " + std::to_string(step) +
                           (out_dir.empty() ? "" : "; snapshot in diagnostic_nan/"));
      }

      Adam<S>::zero_grad(params);
      backward(total);
      adam.step(params, lr);

      if (log) {
        *log << json{{"epoch", epoch},       {"step", step},
                     {"lr", lr},             {"lPosPred", acc.l_pos_pred},
                     {"lPosRec", acc.l_pos_rec}, {"lQuatPred", acc.l_quat_pred},
                     {"lQuatRec", acc.l_quat_rec}, {"lTot", acc.l_tot}}
                    .dump()
             << '\n';
      }
      if (summary.steps == 0) summary.first = acc;
      summary.last = acc;
      ++summary.steps;
    }
    if (!out_dir.empty() && (epoch + 1) % tc.checkpoint_every == 0 && epoch + 1 < tc.epochs)
      save_training_checkpoint(out_dir / ("checkpoint_epoch" + std::to_string(epoch + 1)),
                               model, adam, epoch + 1);
    if (log) log->flush();
  }
  if (!out_dir.empty())
    save_training_checkpoint(out_dir / "checkpoint_final", model, adam, tc.epochs);
  return summary;
}

}  // namespace mib
