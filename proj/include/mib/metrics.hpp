#pragma once

// Benchmark metrics over transition lengths: L2Q, L2P, NPSS, and the
// evaluation drivers that build fixed tasks and assemble reports.

#include <algorithm>
#include <cmath>
#include <complex>
#include <cstdio>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <unsupported/Eigen/FFT>

#include "mib/baselines.hpp"
#include "mib/errors.hpp"
#include "mib/jsonio.hpp"
#include "mib/motion.hpp"
#include "mib/rotations.hpp"
#include "mib/skeleton.hpp"

namespace mib {

// One evaluation sequence: rows = frames of the gap, cols = feature channels.
using ChannelSeq = Eigen::MatrixXd;

namespace detail {

inline void check_pairs(const std::vector<ChannelSeq>& pred,
                        const std::vector<ChannelSeq>& target) {
  if (pred.size() != target.size())
    throw ShapeError("metrics: sequence count mismatch");
  if (pred.empty()) throw ContractError("metrics: no sequences");
  for (std::size_t s = 0; s < pred.size(); ++s)
    if (pred[s].rows() != target[s].rows() || pred[s].cols() != target[s].cols())
      throw ShapeError("metrics: sequence " + std::to_string(s) + " shape mismatch");
}

}  // namespace detail

// Mean L2 over frames of the flattened per-joint quaternion difference,
// each 4-block of the prediction flipped onto the target's hemisphere.
inline double l2q(const std::vector<ChannelSeq>& pred,
                  const std::vector<ChannelSeq>& target) {
  detail::check_pairs(pred, target);
  double sum = 0;
  std::int64_t frames = 0;
  for (std::size_t s = 0; s < pred.size(); ++s) {
    if (pred[s].cols() % 4 != 0)
      throw ShapeError("l2q: channel count must be a multiple of 4");
    for (Eigen::Index t = 0; t < pred[s].rows(); ++t) {
      double norm2 = 0;
      for (Eigen::Index j = 0; j < pred[s].cols(); j += 4) {
        double dot = 0;
        for (int c = 0; c < 4; ++c) dot += pred[s](t, j + c) * target[s](t, j + c);
        const double sign = dot < 0 ? -1.0 : 1.0;
        for (int c = 0; c < 4; ++c) {
          const double d = sign * pred[s](t, j + c) - target[s](t, j + c);
          norm2 += d * d;
        }
      }
      sum += std::sqrt(norm2);
      ++frames;
    }
  }
  return sum / static_cast<double>(frames);
}

// Mean L2 over frames of standardized global positions (3 channels per joint).
inline double l2p(const std::vector<ChannelSeq>& pred,
                  const std::vector<ChannelSeq>& target, const NormStats& stats) {
  detail::check_pairs(pred, target);
  const Eigen::Index channels = pred[0].cols();
  if (channels != static_cast<Eigen::Index>(stats.std.size() * 3))
    throw ShapeError("l2p: stats cover " + std::to_string(stats.std.size() * 3) +
                     " channels, sequences have " + std::to_string(channels));
  double sum = 0;
  std::int64_t frames = 0;
  for (std::size_t s = 0; s < pred.size(); ++s) {
    for (Eigen::Index t = 0; t < pred[s].rows(); ++t) {
      double norm2 = 0;
      for (Eigen::Index c = 0; c < channels; ++c) {
        const double sd = stats.std[c / 3][c % 3];
        const double d = (pred[s](t, c) - target[s](t, c)) / sd;
        norm2 += d * d;
      }
      sum += std::sqrt(norm2);
      ++frames;
    }
  }
  return sum / static_cast<double>(frames);
}

namespace detail {

// Full-length squared-magnitude spectrum, DC bin included, no windowing.
inline Eigen::VectorXd power_spectrum(const Eigen::VectorXd& x) {
  Eigen::FFT<double> fft;
  std::vector<double> in(x.data(), x.data() + x.size());
  std::vector<std::complex<double>> out;
  fft.fwd(out, in);
  Eigen::VectorXd p(x.size());
  for (Eigen::Index k = 0; k < x.size(); ++k) p[k] = std::norm(out[k]);
  return p;
}

// Normalized cumulative spectrum; identically-zero power stays all-zero.
inline Eigen::VectorXd power_cdf(const Eigen::VectorXd& p) {
  const double total = p.sum();
  Eigen::VectorXd cdf = Eigen::VectorXd::Zero(p.size());
  if (total <= 0) return cdf;
  double acc = 0;
  for (Eigen::Index k = 0; k < p.size(); ++k) {
    acc += p[k] / total;
    cdf[k] = acc;
  }
  return cdf;
}

}  // namespace detail

// Normalized power spectrum similarity: per sequence and channel, the
// earth-mover distance between normalized power-spectrum CDFs, averaged
// with weights proportional to the target channel's total power.
inline double npss(const std::vector<ChannelSeq>& pred,
                   const std::vector<ChannelSeq>& target) {
  detail::check_pairs(pred, target);
  double weighted = 0, weight_total = 0;
  for (std::size_t s = 0; s < pred.size(); ++s) {
    if (pred[s].rows() < 2)
      throw ContractError("npss: sequences need at least 2 frames");
    for (Eigen::Index c = 0; c < pred[s].cols(); ++c) {
      const auto pp = detail::power_spectrum(pred[s].col(c));
      const auto tp = detail::power_spectrum(target[s].col(c));
      const double emd =
          (detail::power_cdf(pp) - detail::power_cdf(tp)).cwiseAbs().sum();
      const double w = tp.sum();
      weighted += emd * w;
      weight_total += w;
    }
  }
  return weight_total > 0 ? weighted / weight_total : 0.0;
}

struct MetricsRow {
  std::optional<double> l2q, l2p, npss;
};

struct MetricsReport {
  std::string dataset_id;
  std::string model_id;
  int seed_count = 1;
  std::map<int, MetricsRow> rows;  // keyed by transition length

  json to_json() const {
    json r = json::object();
    for (const auto& [len, row] : rows) {
      json cell = json::object();
      cell["l2q"] = row.l2q ? json(*row.l2q) : json(nullptr);
      cell["l2p"] = row.l2p ? json(*row.l2p) : json(nullptr);
      cell["npss"] = row.npss ? json(*row.npss) : json(nullptr);
      r[std::to_string(len)] = cell;
    }
    return {{"dataset", dataset_id},
            {"model", model_id},
            {"seed_count", seed_count},
            {"lengths", r}};
  }

  std::string table() const {
    char buf[128];
    std::string out = "dataset=" + dataset_id + " model=" + model_id +
                      " seeds=" + std::to_string(seed_count) + "\n";
    out += "gap    L2Q       L2P       NPSS\n";
    auto cell = [&](const std::optional<double>& v) {
      if (!v) return std::string("   -     ");
      std::snprintf(buf, sizeof buf, "%-9.4f", *v);
      return std::string(buf);
    };
    for (const auto& [len, row] : rows) {
      std::snprintf(buf, sizeof buf, "%-6d ", len);
      out += buf;
      out += cell(row.l2q) + " " + cell(row.l2p) + " " + cell(row.npss) + "\n";
    }
    return out;
  }
};

// Mean of several single-seed reports, cell by cell.
inline MetricsReport average_reports(const std::vector<MetricsReport>& reports) {
  if (reports.empty()) throw ContractError("average_reports: empty list");
  MetricsReport out = reports[0];
  out.seed_count = 0;
  for (const auto& r : reports) out.seed_count += r.seed_count;
  for (auto& [len, row] : out.rows) {
    auto avg = [&](std::optional<double> MetricsRow::* field) -> std::optional<double> {
      double sum = 0;
      for (const auto& r : reports) {
        const auto it = r.rows.find(len);
        if (it == r.rows.end() || !(it->second.*field)) return std::nullopt;
        sum += *(it->second.*field);
      }
      return sum / static_cast<double>(reports.size());
    };
    row.l2q = avg(&MetricsRow::l2q);
    row.l2p = avg(&MetricsRow::l2p);
    row.npss = avg(&MetricsRow::npss);
  }
  return out;
}

using PosePredictor = std::function<std::vector<Pose>(const InbetweenTask&)>;
using PositionPredictor =
    std::function<std::vector<std::vector<Vec3d>>(const PositionTask&)>;

struct EvalProtocol {
  std::vector<int> lengths{5, 15, 30};
  int past_keys = 10;
  int future_keys = 1;
};

// Fixed-context task: `past` leading keys, the gap, then `future` trailing
// keys; the window is trimmed to exactly that span.
inline InbetweenTask make_eval_task(const MotionSequence& window, int past, int gap,
                                    int future) {
  const int span = past + gap + future;
  if (window.frame_count() < span)
    throw TaskError("eval task: window of " + std::to_string(window.frame_count()) +
                    " frames cannot host past=" + std::to_string(past) +
                    " gap=" + std::to_string(gap) + " future=" + std::to_string(future));
  InbetweenTask t;
  t.window = window;
  t.window.frames.resize(span);
  for (int i = 0; i < past; ++i) t.in_indices.push_back(i);
  for (int i = 0; i < gap; ++i) t.out_indices.push_back(past + i);
  for (int i = 0; i < future; ++i) t.in_indices.push_back(past + gap + i);
  t.validate();
  return t;
}

// Stride-keyed task for position-only data: a key every gap+1 frames,
// trimmed so the window ends on a key.
inline PositionTask make_stride_eval_task(const PositionSequence& window, int gap) {
  const int stride = gap + 1;
  const int last_key = ((window.frame_count() - 1) / stride) * stride;
  if (last_key < stride)
    throw TaskError("eval task: window too short for gap " + std::to_string(gap));
  PositionTask t;
  t.window = window;
  t.window.frames.resize(last_key + 1);
  for (int i = 0; i <= last_key; ++i)
    (i % stride == 0 ? t.in_indices : t.out_indices).push_back(i);
  return t;
}

// Runs a pose predictor over all windows at each transition length and
// aggregates post-FK metrics. Windows too short for a length are skipped;
// a length with no usable window is an error.
inline MetricsReport evaluate_pose(const PosePredictor& predict,
                                   const std::vector<MotionSequence>& windows,
                                   const NormStats& stats, const EvalProtocol& proto,
                                   const std::string& dataset_id,
                                   const std::string& model_id) {
  if (windows.empty()) throw DataError("evaluate: no windows");
  MetricsReport report;
  report.dataset_id = dataset_id;
  report.model_id = model_id;
  for (int gap : proto.lengths) {
    std::vector<ChannelSeq> pq, tq, pp, tp;
    for (const auto& w : windows) {
      if (w.frame_count() < proto.past_keys + gap + proto.future_keys) continue;
      const auto task = make_eval_task(w, proto.past_keys, gap, proto.future_keys);
      const auto pred = predict(task);
      if (static_cast<int>(pred.size()) != gap)
        throw ContractError("evaluate: predictor returned " +
                            std::to_string(pred.size()) + " poses for a gap of " +
                            std::to_string(gap));
      const int j = w.joint_count();
      ChannelSeq pqm(gap, 4 * j), tqm(gap, 4 * j), ppm(gap, 3 * j), tpm(gap, 3 * j);
      for (int i = 0; i < gap; ++i) {
        const auto& gt = task.window.frames[task.out_indices[i]];
        const auto fk_p = fk_pose(w.skeleton, pred[i].root_pos, pred[i].rot);
        const auto fk_t = fk_pose(w.skeleton, gt.root_pos, gt.rot);
        for (int k = 0; k < j; ++k) {
          const auto qp = matrix_to_quaternion(fk_p.rot[k]);
          const auto qt = matrix_to_quaternion(fk_t.rot[k]);
          pqm(i, 4 * k + 0) = qp.w, pqm(i, 4 * k + 1) = qp.x;
          pqm(i, 4 * k + 2) = qp.y, pqm(i, 4 * k + 3) = qp.z;
          tqm(i, 4 * k + 0) = qt.w, tqm(i, 4 * k + 1) = qt.x;
          tqm(i, 4 * k + 2) = qt.y, tqm(i, 4 * k + 3) = qt.z;
          for (int a = 0; a < 3; ++a) {
            ppm(i, 3 * k + a) = fk_p.pos[k][a];
            tpm(i, 3 * k + a) = fk_t.pos[k][a];
          }
        }
      }
      pq.push_back(std::move(pqm));
      tq.push_back(std::move(tqm));
      pp.push_back(std::move(ppm));
      tp.push_back(std::move(tpm));
    }
    if (pq.empty())
      throw DataError("evaluate: no window long enough for gap " + std::to_string(gap));
    MetricsRow row;
    row.l2q = l2q(pq, tq);
    row.l2p = l2p(pp, tp, stats);
    row.npss = npss(pq, tq);
    report.rows[gap] = row;
  }
  return report;
}

// Position-only lane: L2P and NPSS over position channels; L2Q is absent.
inline MetricsReport evaluate_positions(const PositionPredictor& predict,
                                        const std::vector<PositionSequence>& windows,
                                        const NormStats& stats, const EvalProtocol& proto,
                                        const std::string& dataset_id,
                                        const std::string& model_id) {
  if (windows.empty()) throw DataError("evaluate: no windows");
  MetricsReport report;
  report.dataset_id = dataset_id;
  report.model_id = model_id;
  for (int gap : proto.lengths) {
    std::vector<ChannelSeq> pp, tp;
    for (const auto& w : windows) {
      if (w.frame_count() < 2 * (gap + 1)) continue;  // at least two key spans
      const auto task = make_stride_eval_task(w, gap);
      const auto pred = predict(task);
      if (pred.size() != task.out_indices.size())
        throw ContractError("evaluate: predictor returned wrong frame count");
      const int j = w.joints;
      const int n = static_cast<int>(task.out_indices.size());
      ChannelSeq ppm(n, 3 * j), tpm(n, 3 * j);
      for (int i = 0; i < n; ++i)
        for (int k = 0; k < j; ++k)
          for (int a = 0; a < 3; ++a) {
            ppm(i, 3 * k + a) = pred[i][k][a];
            tpm(i, 3 * k + a) = task.window.frames[task.out_indices[i]][k][a];
          }
      pp.push_back(std::move(ppm));
      tp.push_back(std::move(tpm));
    }
    if (pp.empty())
      throw DataError("evaluate: no window long enough for gap " + std::to_string(gap));
    MetricsRow row;
    row.l2p = l2p(pp, tp, stats);
    row.npss = npss(pp, tp);
    report.rows[gap] = row;
  }
  return report;
}

}  // namespace mib
