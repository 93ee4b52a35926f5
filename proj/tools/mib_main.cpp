// Command-line driver: synth, train, eval, baseline, inbetween, ablate.

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "mib/baselines.hpp"
#include "mib/errors.hpp"
#include "mib/jsonio.hpp"
#include "mib/metrics.hpp"
#include "mib/model.hpp"
#include "mib/motion.hpp"
#include "mib/motion_csv.hpp"
#include "mib/sampler.hpp"
#include "mib/skeleton.hpp"
#include "mib/synth.hpp"
#include "mib/training.hpp"

namespace fs = std::filesystem;
using namespace mib;

namespace {

// ---------------------------------------------------------------- config ---

// Plain-text run configuration: one `section.key=value` per line, '#' comments.
std::map<std::string, std::string> parse_config_text(std::istream& in,
                                                     const std::string& origin) {
  std::map<std::string, std::string> kv;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    const auto b = line.find_first_not_of(" \t\r");
    if (b == std::string::npos) continue;
    const auto e = line.find_last_not_of(" \t\r");
    line = line.substr(b, e - b + 1);
    const auto eq = line.find('=');
    if (eq == std::string::npos || eq == 0)
      throw ConfigError(origin + ":" + std::to_string(line_no) +
                        ": expected key=value, got '" + line + "'");
    auto trim = [](std::string s) {
      const auto sb = s.find_first_not_of(" \t");
      const auto se = s.find_last_not_of(" \t");
      return sb == std::string::npos ? std::string() : s.substr(sb, se - sb + 1);
    };
    kv[trim(line.substr(0, eq))] = trim(line.substr(eq + 1));
  }
  return kv;
}

struct RunConfig {
  ModelConfig model;
  TrainConfig train;
  SamplerConfig sampler;
  bool normalize = true;
  int window_offset = 0;  // 0 means windows do not overlap

  void apply(const std::map<std::string, std::string>& kv) {
    for (const auto& [key, value] : kv) apply_one(key, value);
  }

  void apply_one(const std::string& key, const std::string& value) {
    auto as_int = [&] {
      try {
        std::size_t used = 0;
        const int v = std::stoi(value, &used);
        if (used != value.size()) throw std::invalid_argument("");
        return v;
      } catch (const std::exception&) {
        throw ConfigError("config: '" + key + "' needs an integer, got '" + value + "'");
      }
    };
    auto as_double = [&] {
      try {
        std::size_t used = 0;
        const double v = std::stod(value, &used);
        if (used != value.size()) throw std::invalid_argument("");
        return v;
      } catch (const std::exception&) {
        throw ConfigError("config: '" + key + "' needs a number, got '" + value + "'");
      }
    };
    auto as_bool = [&] {
      if (value == "true" || value == "on" || value == "1") return true;
      if (value == "false" || value == "off" || value == "0") return false;
      throw ConfigError("config: '" + key + "' needs a boolean, got '" + value + "'");
    };

    if (key == "model.width") model.width = as_int();
    else if (key == "model.heads") model.heads = as_int();
    else if (key == "model.residual_blocks") model.residual_blocks = as_int();
    else if (key == "model.encoder_mlp_layers") model.encoder_mlp_layers = as_int();
    else if (key == "model.decoder_mlp_layers") model.decoder_mlp_layers = as_int();
    else if (key == "model.embed_dim") model.embed_dim = as_int();
    else if (key == "model.dropout") model.dropout = as_double();
    else if (key == "model.input_delta") model.input_delta = input_delta_from_string(value);
    else if (key == "model.output_delta") model.output_delta = output_delta_from_string(value);
    else if (key == "model.max_frame_index") model.max_frame_index = as_int();
    else if (key == "train.epochs") train.epochs = as_int();
    else if (key == "train.batch_size") train.batch_size = as_int();
    else if (key == "train.lr_max") train.lr_max = as_double();
    else if (key == "train.warmup_epochs") train.warmup_epochs = as_int();
    else if (key == "train.lr_drop_epoch") train.lr_drop_epoch = as_int();
    else if (key == "train.lr_drop_factor") train.lr_drop_factor = as_double();
    else if (key == "train.beta1") train.beta1 = as_double();
    else if (key == "train.beta2") train.beta2 = as_double();
    else if (key == "train.adam_eps") train.adam_eps = as_double();
    else if (key == "train.seed") train.seed = static_cast<std::uint64_t>(as_int());
    else if (key == "train.reconstruction_loss") train.reconstruction_loss = as_bool();
    else if (key == "train.batches_per_epoch") train.batches_per_epoch = as_int();
    else if (key == "train.checkpoint_every") train.checkpoint_every = as_int();
    else if (key == "sampler.past_keys") sampler.past_keys = as_int();
    else if (key == "sampler.future_keys") sampler.future_keys = as_int();
    else if (key == "sampler.n_in_min") sampler.n_in_min = as_int();
    else if (key == "sampler.n_in_max") sampler.n_in_max = as_int();
    else if (key == "sampler.keyframe_stride") sampler.keyframe_stride = as_int();
    else if (key == "sampler.window_len") sampler.window_len = as_int();
    else if (key == "data.normalize") normalize = as_bool();
    else if (key == "data.window_offset") window_offset = as_int();
    else throw ConfigError("config: unknown key '" + key + "'");
  }

  std::string to_text() const {
    std::ostringstream out;
    out << "model.width=" << model.width << "\n"
        << "model.heads=" << model.heads << "\n"
        << "model.residual_blocks=" << model.residual_blocks << "\n"
        << "model.encoder_mlp_layers=" << model.encoder_mlp_layers << "\n"
        << "model.decoder_mlp_layers=" << model.decoder_mlp_layers << "\n"
        << "model.embed_dim=" << model.embed_dim << "\n"
        << "model.dropout=" << model.dropout << "\n"
        << "model.input_delta=" << to_string(model.input_delta) << "\n"
        << "model.output_delta=" << to_string(model.output_delta) << "\n"
        << "model.max_frame_index=" << model.max_frame_index << "\n"
        << "train.epochs=" << train.epochs << "\n"
        << "train.batch_size=" << train.batch_size << "\n"
        << "train.lr_max=" << train.lr_max << "\n"
        << "train.warmup_epochs=" << train.warmup_epochs << "\n"
        << "train.lr_drop_epoch=" << train.lr_drop_epoch << "\n"
        << "train.lr_drop_factor=" << train.lr_drop_factor << "\n"
        << "train.beta1=" << train.beta1 << "\n"
        << "train.beta2=" << train.beta2 << "\n"
        << "train.adam_eps=" << train.adam_eps << "\n"
        << "train.seed=" << train.seed << "\n"
        << "train.reconstruction_loss=" << (train.reconstruction_loss ? "true" : "false")
        << "\n"
        << "train.batches_per_epoch=" << train.batches_per_epoch << "\n"
        << "train.checkpoint_every=" << train.checkpoint_every << "\n"
        << "sampler.past_keys=" << sampler.past_keys << "\n"
        << "sampler.future_keys=" << sampler.future_keys << "\n"
        << "sampler.n_in_min=" << sampler.n_in_min << "\n"
        << "sampler.n_in_max=" << sampler.n_in_max << "\n"
        << "sampler.keyframe_stride=" << sampler.keyframe_stride << "\n"
        << "sampler.window_len=" << sampler.window_len << "\n"
        << "data.normalize=" << (normalize ? "true" : "false") << "\n"
        << "data.window_offset=" << window_offset << "\n";
    return out.str();
  }
};

RunConfig resolve_config(const std::string& config_path,
                         const std::vector<std::string>& overrides) {
  RunConfig rc;
  if (!config_path.empty()) {
    std::ifstream in(config_path);
    if (!in) throw ConfigError("config: cannot open " + config_path);
    rc.apply(parse_config_text(in, config_path));
  }
  for (const auto& kv : overrides) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos || eq == 0)
      throw ConfigError("--set expects key=value, got '" + kv + "'");
    rc.apply_one(kv.substr(0, eq), kv.substr(eq + 1));
  }
  return rc;
}

// ----------------------------------------------------------------- paths ---

fs::path data_dir_or_env(const std::string& flag) {
  if (!flag.empty()) return flag;
  if (const char* env = std::getenv("MIB_DATA_DIR"); env && *env) return env;
  throw ConfigError("no --data given and MIB_DATA_DIR is not set");
}

// Reruns never silently overwrite: the output directory must be new or empty.
fs::path fresh_out_dir(const std::string& out) {
  if (out.empty()) throw ConfigError("--out is required");
  const fs::path dir(out);
  if (fs::exists(dir) && !fs::is_directory(dir))
    throw ConfigError("output path " + dir.string() + " exists and is not a directory");
  if (fs::exists(dir) && !fs::is_empty(dir))
    throw ConfigError("output directory " + dir.string() +
                      " is not empty; refusing to overwrite");
  fs::create_directories(dir);
  return dir;
}

std::vector<int> parse_lengths(const std::string& s) {
  std::vector<int> out;
  std::stringstream ss(s);
  std::string tok;
  while (std::getline(ss, tok, ',')) {
    try {
      out.push_back(std::stoi(tok));
    } catch (const std::exception&) {
      throw ConfigError("--lengths expects comma-separated integers, got '" + s + "'");
    }
    if (out.back() < 1) throw ConfigError("--lengths entries must be positive");
  }
  if (out.empty()) throw ConfigError("--lengths is empty");
  return out;
}

struct PoseData {
  Skeleton skeleton;
  MotionSequence motion;
};

PoseData load_pose_data(const fs::path& dir) {
  if (!fs::exists(dir / "skeleton.json"))
    throw DataError("data: " + (dir / "skeleton.json").string() + " not found");
  if (!fs::exists(dir / "motion.csv"))
    throw DataError("data: " + (dir / "motion.csv").string() + " not found");
  PoseData d;
  d.skeleton = load_skeleton(dir / "skeleton.json");
  d.motion = load_csv(dir / "motion.csv", d.skeleton);
  return d;
}

std::vector<MotionSequence> build_windows(const MotionSequence& motion,
                                          const RunConfig& rc, int window_len) {
  const int offset = rc.window_offset > 0 ? rc.window_offset : window_len;
  auto windows = make_windows(motion, window_len, offset);
  if (rc.normalize)
    for (auto& w : windows) normalize_window(w);
  return windows;
}

// ----------------------------------------------------------------- model ---

std::vector<Pose> predict_poses(Model<float>& model, const Skeleton& skel,
                                const InbetweenTask& task) {
  const auto in = build_task_tensors<float>(task, model.config());
  const auto fwd = model.forward(in, skel);
  const int j = model.config().joints;
  const auto& root = fwd.pred_root.values();
  const auto& r6 = fwd.pred_rot6.values();
  std::vector<Pose> out(task.out_indices.size());
  for (std::size_t i = 0; i < out.size(); ++i) {
    out[i].root_pos = {root[i * 3 + 0], root[i * 3 + 1], root[i * 3 + 2]};
    out[i].rot.resize(j);
    for (int k = 0; k < j; ++k)
      for (int c = 0; c < 6; ++c)
        out[i].rot[k][c] = r6[(i * j + k) * 6 + c];
  }
  return out;
}

struct LoadedModel {
  ModelConfig config;
  Model<float> model;
  std::optional<NormStats> stats;

  explicit LoadedModel(const fs::path& checkpoint)
      : config(ModelConfig::from_json(read_json_file(checkpoint / "model_config.json"))),
        model(config) {
    load_training_checkpoint(checkpoint, model);
    for (const fs::path p :
         {checkpoint / "norm_stats.json", checkpoint.parent_path() / "norm_stats.json"})
      if (fs::exists(p)) {
        stats = NormStats::from_json(read_json_file(p));
        break;
      }
  }
};

void write_report(const fs::path& dir, const MetricsReport& report) {
  write_json_file(dir / "report.json", report.to_json());
  std::ofstream txt(dir / "report.txt");
  txt << report.table();
  std::cout << report.table();
}

// ------------------------------------------------------------- commands ----

struct SynthArgs {
  std::string kind = "walk";
  int frames = 1000;
  int joints = 8;
  std::uint64_t seed = 1;
  double fps = 30.0;
  bool positions = false;
  std::string out;
};

int cmd_synth(const SynthArgs& a) {
  std::string kind_name = a.kind;
  if (kind_name == "walk") kind_name = "sinusoid-walk";
  else if (kind_name == "eight") kind_name = "figure-eight";
  else if (kind_name == "blend") kind_name = "two-pose-blend";
  const auto kind = synth_kind_from_string(kind_name);
  if (a.frames < 2) throw ConfigError("--frames must be at least 2");
  if (a.joints < 1) throw ConfigError("--joints must be positive");
  const auto dir = fresh_out_dir(a.out);
  const auto skel = synthetic_skeleton(a.joints);
  auto seq = synth_motion(kind, skel, a.frames, a.seed);
  seq.frame_rate = a.fps;
  save_skeleton(dir / "skeleton.json", skel);
  save_csv(dir / "motion.csv", seq);
  if (a.positions) {
    auto pos = synth_positions(kind, a.joints, a.frames, a.seed);
    pos.frame_rate = a.fps;
    save_position_csv(dir / "positions.csv", pos);
  }
  std::cout << json{{"out", dir.string()},
                    {"frames", a.frames},
                    {"joints", a.joints},
                    {"kind", a.kind}}
                   .dump()
            << "\n";
  return 0;
}

struct TrainArgs {
  std::string data, out, config;
  std::vector<std::string> sets;
};

int cmd_train(const TrainArgs& a) {
  RunConfig rc = resolve_config(a.config, a.sets);
  const auto data_dir = data_dir_or_env(a.data);
  auto pd = load_pose_data(data_dir);
  rc.model.joints = pd.skeleton.joint_count();
  rc.model.validate();
  rc.train.validate();
  rc.sampler.validate();
  if (rc.sampler.window_len > rc.model.max_frame_index)
    throw ConfigError("sampler.window_len exceeds model.max_frame_index");

  const auto windows = build_windows(pd.motion, rc, rc.sampler.window_len);
  if (windows.empty())
    throw DataError("train: motion of " + std::to_string(pd.motion.frame_count()) +
                    " frames yields no window of " + std::to_string(rc.sampler.window_len));
  const auto stats = compute_norm_stats(windows);

  const auto out = fresh_out_dir(a.out);
  {
    std::ofstream cfg(out / "resolved_config.cfg");
    cfg << rc.to_text();
  }
  write_json_file(out / "norm_stats.json", stats.to_json());

  std::ofstream log(out / "log.jsonl");
  Model<float> model(rc.model);
  const auto summary =
      train_model(model, rc.train, rc.sampler, {pd.skeleton, windows}, &log, out);

  // stats travel with every checkpoint so eval is self-contained
  for (const auto& entry : fs::directory_iterator(out))
    if (entry.is_directory() && entry.path().filename().string().rfind("checkpoint", 0) == 0)
      write_json_file(entry.path() / "norm_stats.json", stats.to_json());

  std::cout << json{{"out", out.string()},
                    {"steps", summary.steps},
                    {"first_l_tot", summary.first.l_tot},
                    {"last_l_tot", summary.last.l_tot}}
                   .dump()
            << "\n";
  return 0;
}

struct EvalArgs {
  std::string checkpoint, data, out, stats, lengths = "5,15,30";
  int past = 10, future = 1;
  std::string config;
  std::vector<std::string> sets;
};

int cmd_eval(const EvalArgs& a) {
  if (a.checkpoint.empty()) throw ConfigError("--checkpoint is required");
  RunConfig rc = resolve_config(a.config, a.sets);
  EvalProtocol proto;
  proto.lengths = parse_lengths(a.lengths);
  proto.past_keys = a.past;
  proto.future_keys = a.future;

  LoadedModel lm(a.checkpoint);
  const auto data_dir = data_dir_or_env(a.data);
  auto pd = load_pose_data(data_dir);
  if (pd.skeleton.joint_count() != lm.config.joints)
    throw DataError("eval: checkpoint expects " + std::to_string(lm.config.joints) +
                    " joints, data has " + std::to_string(pd.skeleton.joint_count()));

  const int max_gap = *std::max_element(proto.lengths.begin(), proto.lengths.end());
  const int span = proto.past_keys + max_gap + proto.future_keys;
  if (span > lm.config.max_frame_index)
    throw ConfigError("eval: task span " + std::to_string(span) +
                      " exceeds the checkpoint's max_frame_index " +
                      std::to_string(lm.config.max_frame_index));
  const auto windows = build_windows(pd.motion, rc, span);

  NormStats stats;
  if (!a.stats.empty())
    stats = NormStats::from_json(read_json_file(a.stats));
  else if (lm.stats)
    stats = *lm.stats;
  else
    stats = compute_norm_stats(windows);

  const auto out = fresh_out_dir(a.out);
  auto& model = lm.model;
  const auto& skel = pd.skeleton;
  const auto report = evaluate_pose(
      [&](const InbetweenTask& t) { return predict_poses(model, skel, t); }, windows,
      stats, proto, data_dir.filename().string(),
      fs::path(a.checkpoint).filename().string());
  write_report(out, report);
  return 0;
}

struct BaselineArgs {
  std::string kind = "zerovel";
  std::string data, out, stats, lengths = "5,15,30", lane = "auto";
  int past = 10, future = 1;
};

int cmd_baseline(const BaselineArgs& a) {
  const auto data_dir = data_dir_or_env(a.data);
  EvalProtocol proto;
  proto.lengths = parse_lengths(a.lengths);
  proto.past_keys = a.past;
  proto.future_keys = a.future;

  std::string lane = a.lane;
  if (lane == "auto")
    lane = fs::exists(data_dir / "motion.csv") ? "pose" : "positions";
  if (lane != "pose" && lane != "positions")
    throw ConfigError("--lane must be pose, positions, or auto");

  const auto out = fresh_out_dir(a.out);
  MetricsReport report;
  if (lane == "pose") {
    auto pd = load_pose_data(data_dir);
    const int max_gap = *std::max_element(proto.lengths.begin(), proto.lengths.end());
    RunConfig rc;  // baselines see the raw windows; normalization is a no-op for them
    rc.normalize = false;
    const auto windows =
        build_windows(pd.motion, rc, proto.past_keys + max_gap + proto.future_keys);
    NormStats stats = a.stats.empty() ? compute_norm_stats(windows)
                                      : NormStats::from_json(read_json_file(a.stats));
    PosePredictor predict;
    if (a.kind == "zerovel")
      predict = [](const InbetweenTask& t) { return zero_velocity(t); };
    else if (a.kind == "slerp")
      predict = [](const InbetweenTask& t) { return slerp_interpolate(t); };
    else
      throw ConfigError("--kind '" + a.kind + "' is not a pose-lane baseline");
    report = evaluate_pose(predict, windows, stats, proto, data_dir.filename().string(),
                           a.kind);
  } else {
    if (!fs::exists(data_dir / "positions.csv"))
      throw DataError("data: " + (data_dir / "positions.csv").string() + " not found");
    const auto pos = load_position_csv(data_dir / "positions.csv");
    const int max_gap = *std::max_element(proto.lengths.begin(), proto.lengths.end());
    const int span = 2 * (max_gap + 1);
    const auto windows = make_position_windows(pos, span, span);
    NormStats stats = a.stats.empty() ? compute_norm_stats(windows)
                                      : NormStats::from_json(read_json_file(a.stats));
    PositionPredictor predict;
    if (a.kind == "zerovel")
      predict = [](const PositionTask& t) { return pos_zero_velocity(t); };
    else if (a.kind == "lerp")
      predict = [](const PositionTask& t) { return pos_lerp(t); };
    else
      throw ConfigError("--kind '" + a.kind + "' is not a position-lane baseline");
    report = evaluate_positions(predict, windows, stats, proto,
                                data_dir.filename().string(), a.kind);
  }
  write_report(out, report);
  return 0;
}

struct InbetweenArgs {
  std::string checkpoint, input, out, skeleton;
};

int cmd_inbetween(const InbetweenArgs& a) {
  if (a.checkpoint.empty()) throw ConfigError("--checkpoint is required");
  if (a.input.empty()) throw ConfigError("--input is required");
  const fs::path input(a.input);
  fs::path skel_path = a.skeleton.empty() ? input.parent_path() / "skeleton.json"
                                          : fs::path(a.skeleton);
  if (!fs::exists(skel_path))
    throw DataError("inbetween: skeleton file " + skel_path.string() +
                    " not found (pass --skeleton)");

  LoadedModel lm(a.checkpoint);
  const auto skel = load_skeleton(skel_path);
  if (skel.joint_count() != lm.config.joints)
    throw DataError("inbetween: checkpoint expects " + std::to_string(lm.config.joints) +
                    " joints, skeleton has " + std::to_string(skel.joint_count()));

  auto gapped = load_csv_gaps(input, skel);
  const auto out = fresh_out_dir(a.out);
  if (gapped.out_indices.empty()) {
    save_csv(out / "completed.csv", gapped.seq);
    std::cout << json{{"out", (out / "completed.csv").string()}, {"filled", 0}}.dump()
              << "\n";
    return 0;
  }
  if (gapped.seq.frame_count() > lm.config.max_frame_index)
    throw ConfigError("inbetween: input has " + std::to_string(gapped.seq.frame_count()) +
                      " frames; this checkpoint supports at most " +
                      std::to_string(lm.config.max_frame_index));

  // normalize from key frames only; placeholders carry no information
  WindowTransform t;
  {
    double mx = 0, mz = 0;
    for (int i : gapped.in_indices) {
      mx += gapped.seq.frames[i].root_pos.x();
      mz += gapped.seq.frames[i].root_pos.z();
    }
    t.shift = {mx / gapped.in_indices.size(), 0.0, mz / gapped.in_indices.size()};
    Vec3d avg_x = Vec3d::Zero();
    const int n = std::min<std::size_t>(10, gapped.in_indices.size());
    for (int i = 0; i < n; ++i)
      avg_x += rot6_to_matrix(gapped.seq.frames[gapped.in_indices[i]].rot[0]).col(0);
    avg_x /= n;
    Vec3d facing = Vec3d{0, 1, 0}.cross(avg_x);
    facing.y() = 0;
    if (facing.norm() >= 1e-6) {
      facing.normalize();
      t.rot = yaw_matrix(-std::atan2(facing.x(), facing.z()));
    }
  }
  InbetweenTask task;
  task.window = gapped.seq;
  for (auto& f : task.window.frames) f = t.apply(f);
  task.in_indices = gapped.in_indices;
  task.out_indices = gapped.out_indices;
  task.validate();

  std::vector<Pose> predicted;
  try {
    predicted = predict_poses(lm.model, skel, task);
  } catch (const ContractError& e) {
    throw TaskError(std::string("inbetween: this gap pattern is unsupported by the "
                                "checkpoint's output mode (") +
                    to_string(lm.config.output_delta) + "): " + e.what());
  }

  MotionSequence completed = gapped.seq;
  for (std::size_t i = 0; i < predicted.size(); ++i)
    completed.frames[task.out_indices[i]] = t.invert(predicted[i]);
  save_csv(out / "completed.csv", completed);
  std::cout << json{{"out", (out / "completed.csv").string()},
                    {"filled", predicted.size()}}
                   .dump()
            << "\n";
  return 0;
}

struct AblateArgs {
  std::string data, out, config;
  std::string modes = "last:interp,last:last,none:none,none:interp,none:last";
  std::string recon = "on";
  std::string eval_data, lengths = "5,15,30";
  int past = 10, future = 1;
  std::vector<std::string> sets;
};

std::pair<InputDeltaMode, OutputDeltaMode> parse_mode_cell(const std::string& cell) {
  const auto colon = cell.find(':');
  if (colon == std::string::npos)
    throw ConfigError("--modes cell '" + cell + "' must look like in:out");
  auto lower = [](std::string s) {
    for (auto& c : s) c = static_cast<char>(std::tolower(c));
    return s;
  };
  const std::string in = lower(cell.substr(0, colon));
  const std::string out = lower(cell.substr(colon + 1));
  InputDeltaMode im;
  if (in == "last" || in == "last_frame") im = InputDeltaMode::LastFrame;
  else if (in == "no" || in == "none") im = InputDeltaMode::None;
  else throw ConfigError("--modes: unknown input mode '" + in + "'");
  OutputDeltaMode om;
  if (out == "i" || out == "interp") om = OutputDeltaMode::Interp;
  else if (out == "last" || out == "last_frame") om = OutputDeltaMode::LastFrame;
  else if (out == "no" || out == "none") om = OutputDeltaMode::None;
  else throw ConfigError("--modes: unknown output mode '" + out + "'");
  return {im, om};
}

int cmd_ablate(const AblateArgs& a) {
  if (a.recon != "on" && a.recon != "off")
    throw ConfigError("--recon must be on or off");
  std::vector<std::pair<InputDeltaMode, OutputDeltaMode>> cells;
  {
    std::stringstream ss(a.modes);
    std::string tok;
    while (std::getline(ss, tok, ',')) cells.push_back(parse_mode_cell(tok));
  }
  if (cells.empty()) throw ConfigError("--modes is empty");

  const auto out = fresh_out_dir(a.out);
  json index = json::array();
  for (const auto& [im, om] : cells) {
    const std::string cell_name =
        std::string(to_string(im)) + "__" + std::string(to_string(om));
    const fs::path cell_dir = out / ("cell_" + cell_name);

    TrainArgs ta;
    ta.data = a.data;
    ta.out = (cell_dir / "train").string();
    ta.config = a.config;
    ta.sets = a.sets;
    ta.sets.push_back("model.input_delta=" + std::string(to_string(im)));
    ta.sets.push_back("model.output_delta=" + std::string(to_string(om)));
    ta.sets.push_back(std::string("train.reconstruction_loss=") +
                      (a.recon == "on" ? "true" : "false"));
    cmd_train(ta);

    EvalArgs ea;
    ea.checkpoint = (cell_dir / "train" / "checkpoint_final").string();
    ea.data = a.eval_data.empty() ? a.data : a.eval_data;
    ea.out = (cell_dir / "eval").string();
    ea.lengths = a.lengths;
    ea.past = a.past;
    ea.future = a.future;
    ea.config = a.config;
    ea.sets = a.sets;
    cmd_eval(ea);

    index.push_back({{"cell", cell_name},
                     {"report", (cell_dir / "eval" / "report.json").string()}});
  }
  write_json_file(out / "index.json", index);
  std::cout << json{{"out", out.string()}, {"cells", index.size()}}.dump() << "\n";
  return 0;
}

// ------------------------------------------------------------------ main ---

void print_error(const std::string& code, const std::string& message) {
  std::cerr << json{{"error", code}, {"message", message}}.dump() << "\n";
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"motion in-betweening toolkit"};
  app.require_subcommand(1);

  SynthArgs sa;
  auto* synth = app.add_subcommand("synth", "generate a synthetic motion dataset");
  synth->add_option("--kind", sa.kind, "walk | eight | blend");
  synth->add_option("--frames", sa.frames, "number of frames");
  synth->add_option("--joints", sa.joints, "chain length");
  synth->add_option("--seed", sa.seed, "generator seed");
  synth->add_option("--fps", sa.fps, "frame rate metadata");
  synth->add_flag("--positions", sa.positions, "also write positions.csv");
  synth->add_option("--out", sa.out, "output directory")->required();

  TrainArgs ta;
  auto* train = app.add_subcommand("train", "train a model on a dataset directory");
  train->add_option("--data", ta.data, "dataset directory (or MIB_DATA_DIR)");
  train->add_option("--config", ta.config, "key=value config file");
  train->add_option("--set", ta.sets, "override, e.g. --set train.epochs=10");
  train->add_option("--out", ta.out, "output directory")->required();

  EvalArgs ea;
  auto* eval = app.add_subcommand("eval", "evaluate a checkpoint");
  eval->add_option("--checkpoint", ea.checkpoint, "checkpoint directory")->required();
  eval->add_option("--data", ea.data, "dataset directory (or MIB_DATA_DIR)");
  eval->add_option("--stats", ea.stats, "norm_stats.json for standardization");
  eval->add_option("--lengths", ea.lengths, "transition lengths, e.g. 5,15,30");
  eval->add_option("--past", ea.past, "leading key-frames");
  eval->add_option("--future", ea.future, "trailing key-frames");
  eval->add_option("--config", ea.config, "key=value config file");
  eval->add_option("--set", ea.sets, "config override");
  eval->add_option("--out", ea.out, "output directory")->required();

  BaselineArgs ba;
  auto* baseline = app.add_subcommand("baseline", "run a closed-form baseline");
  baseline->add_option("--kind", ba.kind, "zerovel | slerp | lerp");
  baseline->add_option("--data", ba.data, "dataset directory (or MIB_DATA_DIR)");
  baseline->add_option("--stats", ba.stats, "norm_stats.json for standardization");
  baseline->add_option("--lengths", ba.lengths, "transition lengths");
  baseline->add_option("--past", ba.past, "leading key-frames (pose lane)");
  baseline->add_option("--future", ba.future, "trailing key-frames (pose lane)");
  baseline->add_option("--lane", ba.lane, "pose | positions | auto");
  baseline->add_option("--out", ba.out, "output directory")->required();

  InbetweenArgs ia;
  auto* inb = app.add_subcommand("inbetween", "fill gaps in a motion CSV");
  inb->add_option("--checkpoint", ia.checkpoint, "checkpoint directory")->required();
  inb->add_option("--input", ia.input, "CSV with empty pose cells marking gaps")
      ->required();
  inb->add_option("--skeleton", ia.skeleton, "skeleton.json (default: next to input)");
  inb->add_option("--out", ia.out, "output directory")->required();

  AblateArgs aa;
  auto* ablate = app.add_subcommand("ablate", "train/eval a grid of delta modes");
  ablate->add_option("--data", aa.data, "dataset directory (or MIB_DATA_DIR)");
  ablate->add_option("--eval-data", aa.eval_data, "held-out dataset (default --data)");
  ablate->add_option("--modes", aa.modes, "comma list of in:out cells");
  ablate->add_option("--recon", aa.recon, "on | off reconstruction loss");
  ablate->add_option("--lengths", aa.lengths, "transition lengths");
  ablate->add_option("--past", aa.past, "leading key-frames");
  ablate->add_option("--future", aa.future, "trailing key-frames");
  ablate->add_option("--config", aa.config, "key=value config file");
  ablate->add_option("--set", aa.sets, "config override");
  ablate->add_option("--out", aa.out, "output directory")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    print_error("config", e.what());
    return 2;
  }

  try {
    if (synth->parsed()) return cmd_synth(sa);
    if (train->parsed()) return cmd_train(ta);
    if (eval->parsed()) return cmd_eval(ea);
    if (baseline->parsed()) return cmd_baseline(ba);
    if (inb->parsed()) return cmd_inbetween(ia);
    if (ablate->parsed()) return cmd_ablate(aa);
    print_error("config", "no subcommand");
    return 2;
  } catch (const ConfigError& e) {
    print_error("config", e.what());
    return 2;
  } catch (const DataError& e) {
    print_error("data", e.what());
    return 3;
  } catch (const NumericError& e) {  // DegeneracyError included
    print_error("numeric", e.what());
    return 4;
  } catch (const TaskError& e) {
    print_error("task", e.what());
    return 5;
  } catch (const ContractError& e) {
    print_error("task", e.what());
    return 5;
  } catch (const std::exception& e) {
    print_error("internal", e.what());
    return 1;
  }
}
