#pragma once

#include <vector>

#include "mib/errors.hpp"
#include "mib/motion.hpp"
#include "mib/rng.hpp"

namespace mib {

struct SamplerConfig {
  int past_keys = 10;
  int future_keys = 1;
  int n_in_min = 5;
  int n_in_max = 39;
  int keyframe_stride = 0;  // 0 disables interior key-frames
  int window_len = 50;      // T_max
  int batch_size = 64;

  void validate() const {
    if (past_keys < 1 || future_keys < 1)
      throw ConfigError("sampler: need at least one past and one future key");
    if (n_in_min < 1 || n_in_max < n_in_min)
      throw ConfigError("sampler: bad gap range");
    if (past_keys + future_keys + n_in_max > window_len)
      throw ConfigError("sampler: window of " + std::to_string(window_len) +
                        " frames cannot hold past+future+max gap");
    if (batch_size < 1) throw ConfigError("sampler: batch size must be >= 1");
    if (keyframe_stride < 0) throw ConfigError("sampler: stride must be >= 0");
  }
};

// Gap length drawn with probability proportional to 1/n (long gaps would
// otherwise dominate the loss budget).
inline int sample_weighted_n_in(Rng& rng, const std::vector<int>& candidates) {
  if (candidates.empty()) throw ConfigError("sampler: empty gap-length set");
  double total = 0;
  for (int n : candidates) total += 1.0 / n;
  double u = rng.uniform() * total;
  for (int n : candidates) {
    u -= 1.0 / n;
    if (u < 0) return n;
  }
  return candidates.back();
}

inline int sample_weighted_n_in(Rng& rng, int lo, int hi) {
  std::vector<int> candidates;
  for (int n = lo; n <= hi; ++n) candidates.push_back(n);
  return sample_weighted_n_in(rng, candidates);
}

// Key/missing split for a gap of n_in frames starting after `past` keys:
// keys are the leading past frames plus the trailing future frames; with a
// stride, interior frames whose task index is a multiple of the stride are
// promoted to keys as well.
inline void split_indices(int past, int future, int n_in, int stride,
                          std::vector<int>& in_idx, std::vector<int>& out_idx) {
  const int total = past + n_in + future;
  in_idx.clear();
  out_idx.clear();
  for (int i = 0; i < past; ++i) in_idx.push_back(i);
  for (int i = past; i < past + n_in; ++i) {
    if (stride > 0 && i % stride == 0)
      in_idx.push_back(i);
    else
      out_idx.push_back(i);
  }
  for (int i = past + n_in; i < total; ++i) in_idx.push_back(i);
}

// Cuts the task subrange [start, start+past+n_in+future) out of a window and
// re-indexes it from zero.
inline InbetweenTask make_task(const MotionSequence& window, int start, int n_in,
                               const SamplerConfig& cfg) {
  const int len = cfg.past_keys + n_in + cfg.future_keys;
  if (start < 0 || start + len > window.frame_count())
    throw TaskError("task: range [" + std::to_string(start) + "," +
                    std::to_string(start + len) + ") outside window of " +
                    std::to_string(window.frame_count()) + " frames");
  InbetweenTask task;
  task.window.skeleton = window.skeleton;
  task.window.frame_rate = window.frame_rate;
  task.window.frames.assign(window.frames.begin() + start,
                            window.frames.begin() + start + len);
  split_indices(cfg.past_keys, cfg.future_keys, n_in, cfg.keyframe_stride,
                task.in_indices, task.out_indices);
  task.validate();
  return task;
}

inline InbetweenTask sample_task(const SamplerConfig& cfg,
                                 const std::vector<MotionSequence>& windows,
                                 Rng& rng) {
  cfg.validate();
  if (windows.empty()) throw TaskError("sampler: no windows");
  const int n_in = sample_weighted_n_in(rng, cfg.n_in_min, cfg.n_in_max);
  const auto& w = windows[static_cast<std::size_t>(
      rng.uniform_int(0, static_cast<std::int64_t>(windows.size()) - 1))];
  const int len = cfg.past_keys + n_in + cfg.future_keys;
  if (w.frame_count() < len)
    throw TaskError("sampler: window of " + std::to_string(w.frame_count()) +
                    " frames too short for a " + std::to_string(len) + "-frame task");
  const int start = static_cast<int>(rng.uniform_int(0, w.frame_count() - len));
  return make_task(w, start, n_in, cfg);
}

// One training batch: a shared gap length keeps every tensor rectangular.
struct TaskBatch {
  int n_in = 0;
  std::vector<InbetweenTask> tasks;
};

inline TaskBatch sample_batch(const SamplerConfig& cfg,
                              const std::vector<MotionSequence>& windows,
                              Rng& rng) {
  cfg.validate();
  if (windows.empty()) throw TaskError("sampler: no windows");
  TaskBatch batch;
  batch.n_in = sample_weighted_n_in(rng, cfg.n_in_min, cfg.n_in_max);
  const int len = cfg.past_keys + batch.n_in + cfg.future_keys;
  for (int b = 0; b < cfg.batch_size; ++b) {
    const auto& w = windows[static_cast<std::size_t>(
        rng.uniform_int(0, static_cast<std::int64_t>(windows.size()) - 1))];
    if (w.frame_count() < len)
      throw TaskError("sampler: window too short for sampled gap");
    const int start = static_cast<int>(rng.uniform_int(0, w.frame_count() - len));
    batch.tasks.push_back(make_task(w, start, batch.n_in, cfg));
  }
  return batch;
}

}  // namespace mib
