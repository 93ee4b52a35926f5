#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>
#include <fstream>

#include "mib/motion.hpp"
#include "mib/motion_csv.hpp"
#include "mib/synth.hpp"

using namespace mib;
namespace fs = std::filesystem;

namespace {

MotionSequence walk(int frames, std::uint64_t seed = 1) {
  return synth_motion(SynthKind::SinusoidWalk, synthetic_skeleton(4), frames, seed);
}

double max_pose_diff(const MotionSequence& a, const MotionSequence& b) {
  double worst = 0;
  for (int f = 0; f < a.frame_count(); ++f) {
    worst = std::max(worst, (a.frames[f].root_pos - b.frames[f].root_pos).norm());
    for (int j = 0; j < a.joint_count(); ++j)
      worst = std::max(worst, (a.frames[f].rot[j] - b.frames[f].rot[j]).norm());
  }
  return worst;
}

}  // namespace

TEST_CASE("make_windows counts and placement") {
  const auto seq = walk(65);
  auto w = make_windows(seq, 50, 20);
  REQUIRE(w.size() == 1);
  CHECK(max_pose_diff(w[0], [&] {
          MotionSequence s = seq;
          s.frames.resize(50);
          return s;
        }()) == 0.0);

  const auto seq90 = walk(90);
  w = make_windows(seq90, 50, 20);
  REQUIRE(w.size() == 3);
  for (int k = 0; k < 3; ++k)
    for (int f = 0; f < 50; ++f)
      CHECK((w[k].frames[f].root_pos - seq90.frames[20 * k + f].root_pos).norm() == 0.0);

  w = make_windows(seq, 65, 20);
  REQUIRE(w.size() == 1);
  CHECK(w[0].frame_count() == 65);
  CHECK(max_pose_diff(w[0], seq) == 0.0);
}

TEST_CASE("xz_center is idempotent and kills rigid XZ translation") {
  auto w = walk(30);
  auto centered = w;
  xz_center(centered);
  auto twice = centered;
  xz_center(twice);
  CHECK(max_pose_diff(centered, twice) < 1e-12);

  auto shifted = w;
  for (auto& f : shifted.frames) {
    f.root_pos.x() += 13.5;
    f.root_pos.z() -= 4.25;
  }
  xz_center(shifted);
  CHECK(max_pose_diff(centered, shifted) < 1e-9);
}

TEST_CASE("y_rotate aligns the context facing with +Z and is idempotent") {
  auto w = walk(30, 7);
  normalize_window(w);
  // after normalization the average facing of the first 10 frames is +Z
  Vec3d avg_x = Vec3d::Zero();
  for (int f = 0; f < 10; ++f) avg_x += rot6_to_matrix(w.frames[f].rot[0]).col(0);
  Vec3d facing = Vec3d{0, 1, 0}.cross(Vec3d(avg_x / 10));
  facing.y() = 0;
  facing.normalize();
  CHECK(facing.z() == doctest::Approx(1.0).epsilon(1e-9));
  CHECK(facing.x() == doctest::Approx(0.0));

  auto again = w;
  normalize_window(again);
  CHECK(max_pose_diff(w, again) < 1e-9);
}

TEST_CASE("full normalization is invariant to rigid XZ translation") {
  auto a = walk(40, 3);
  auto b = a;
  for (auto& f : b.frames) {
    f.root_pos.x() -= 101.0;
    f.root_pos.z() += 57.5;
  }
  normalize_window(a);
  normalize_window(b);
  CHECK(max_pose_diff(a, b) < 1e-9);
}

TEST_CASE("norm stats JSON round-trip and degenerate-channel guard") {
  const auto seq = walk(25, 5);
  auto stats = compute_norm_stats({seq});
  REQUIRE(static_cast<int>(stats.mean.size()) == seq.joint_count());
  const auto back = NormStats::from_json(stats.to_json());
  for (std::size_t j = 0; j < stats.mean.size(); ++j) {
    CHECK((back.mean[j] - stats.mean[j]).norm() == doctest::Approx(0.0));
    CHECK((back.std[j] - stats.std[j]).norm() == doctest::Approx(0.0));
  }

  // constant sequence: every std channel hits the guard value 1
  MotionSequence frozen = seq;
  for (auto& f : frozen.frames) f = seq.frames[0];
  const auto fstats = compute_norm_stats({frozen});
  for (const auto& s : fstats.std)
    for (int a = 0; a < 3; ++a) CHECK(s[a] == 1.0);
}

TEST_CASE("pose CSV round-trip within 1e-6") {
  const auto seq = walk(12, 9);
  const auto path = fs::temp_directory_path() / "mib_motion_rt.csv";
  save_csv(path, seq);
  const auto back = load_csv(path, seq.skeleton, seq.frame_rate);
  REQUIRE(back.frame_count() == seq.frame_count());
  CHECK(max_pose_diff(seq, back) < 1e-6);
}

TEST_CASE("single-row CSV loads as a 1-frame sequence") {
  auto seq = walk(5);
  seq.frames.resize(1);
  const auto path = fs::temp_directory_path() / "mib_motion_single.csv";
  save_csv(path, seq);
  CHECK(load_csv(path, seq.skeleton).frame_count() == 1);
}

TEST_CASE("alternating-sign quaternion input loads sign-continuously") {
  // a smooth track with artificially flipped odd frames
  std::vector<Quatd> track;
  for (int f = 0; f < 8; ++f) {
    Quatd q = quat_from_axis_angle<double>({0, 0, 1}, 0.1 * f);
    track.push_back(f % 2 ? -q : q);
  }
  auto fixed = track;
  fix_quaternion_signs(fixed);
  for (std::size_t f = 1; f < fixed.size(); ++f)
    CHECK(fixed[f].dot(fixed[f - 1]) > 0.0);

  // loader end-to-end: flipped file and clean file give identical sequences
  const auto skel = synthetic_skeleton(2);
  const auto base = fs::temp_directory_path();
  for (int variant = 0; variant < 2; ++variant) {
    std::ofstream out(base / ("mib_signs_" + std::to_string(variant) + ".csv"));
    out << "frame,root_px,root_py,root_pz,j0_qw,j0_qx,j0_qy,j0_qz,j1_qw,j1_qx,j1_qy,j1_qz\n";
    for (int f = 0; f < 8; ++f) {
      const Quatd q = variant == 0 ? (f % 2 ? -quat_from_axis_angle<double>({0, 0, 1}, 0.1 * f)
                                            : quat_from_axis_angle<double>({0, 0, 1}, 0.1 * f))
                                   : quat_from_axis_angle<double>({0, 0, 1}, 0.1 * f);
      out << f << ",0,0.9,0," << q.w << ',' << q.x << ',' << q.y << ',' << q.z
          << ',' << q.w << ',' << q.x << ',' << q.y << ',' << q.z << "\n";
    }
  }
  const auto a = load_csv(base / "mib_signs_0.csv", skel);
  const auto b = load_csv(base / "mib_signs_1.csv", skel);
  CHECK(max_pose_diff(a, b) < 1e-12);
}

TEST_CASE("CSV validation errors cite the row") {
  const auto skel = synthetic_skeleton(2);
  const auto path = fs::temp_directory_path() / "mib_motion_bad.csv";
  {
    std::ofstream out(path);
    out << "frame,root_px,root_py,root_pz,j0_qw,j0_qx,j0_qy,j0_qz,j1_qw,j1_qx,j1_qy,j1_qz\n";
    for (int f = 0; f < 8; ++f) {
      if (f == 5)  // file line 7 (header is line 1)
        out << f << ",0,nan,0,1,0,0,0,1,0,0,0\n";
      else
        out << f << ",0,0.9,0,1,0,0,0,1,0,0,0\n";
    }
  }
  CHECK_THROWS_WITH_AS(load_csv(path, skel), doctest::Contains("row 7"), DataError);

  {
    std::ofstream out(path);
    out << "frame,root_px,root_py,root_pz,j0_qw,j0_qx,j0_qy,j0_qz,j1_qw,j1_qx,j1_qy,j1_qz\n";
    out << "0,0,0.9,0,1,0,0,0,0.5,0,0,0\n";  // non-unit quaternion
  }
  CHECK_THROWS_WITH_AS(load_csv(path, skel), doctest::Contains("row 2"), DataError);

  {
    std::ofstream out(path);
    out << "frame,root_px,root_py,root_pz,j0_qw,j0_qx,j0_qy,j0_qz\n";  // j1 missing
    out << "0,0,0.9,0,1,0,0,0\n";
  }
  CHECK_THROWS_WITH_AS(load_csv(path, skel), doctest::Contains("j1_qw"), DataError);
}

TEST_CASE("synthetic motion is deterministic per seed") {
  const auto skel = synthetic_skeleton(5);
  for (auto kind : {SynthKind::SinusoidWalk, SynthKind::FigureEight,
                    SynthKind::TwoPoseBlend}) {
    const auto a = synth_motion(kind, skel, 20, 123);
    const auto b = synth_motion(kind, skel, 20, 123);
    CHECK(max_pose_diff(a, b) == 0.0);
    const auto c = synth_motion(kind, skel, 20, 124);
    CHECK(max_pose_diff(a, c) > 0.0);
  }
}

TEST_CASE("sinusoid-walk root X is strictly increasing") {
  const auto seq = walk(40, 11);
  for (int f = 1; f < seq.frame_count(); ++f)
    CHECK(seq.frames[f].root_pos.x() > seq.frames[f - 1].root_pos.x());
}

TEST_CASE("generated rotations stay non-degenerate over 100 seeds") {
  const auto skel = synthetic_skeleton(4);
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    for (auto kind : {SynthKind::SinusoidWalk, SynthKind::FigureEight,
                      SynthKind::TwoPoseBlend}) {
      const auto seq = synth_motion(kind, skel, 12, seed);
      for (const auto& f : seq.frames)
        for (const auto& r : f.rot) CHECK_NOTHROW(rot6_to_matrix(r));
    }
  }
}

TEST_CASE("position lane: windows, CSV round-trip, synth shapes") {
  const auto pos = synth_positions(SynthKind::FigureEight, 6, 300, 2);
  CHECK(pos.joints == 6);
  CHECK(pos.frame_count() == 300);

  const auto w = make_position_windows(pos, 128, 64);
  REQUIRE(w.size() == 3);  // starts 0, 64, 128 ; 192+128 > 300
  CHECK(w[2].frames[0][0] == pos.frames[128][0]);

  const auto path = fs::temp_directory_path() / "mib_pos_rt.csv";
  save_position_csv(path, pos);
  const auto back = load_position_csv(path, pos.frame_rate);
  REQUIRE(back.frame_count() == pos.frame_count());
  double worst = 0;
  for (int f = 0; f < pos.frame_count(); ++f)
    for (int j = 0; j < pos.joints; ++j)
      worst = std::max(worst, (back.frames[f][j] - pos.frames[f][j]).norm());
  CHECK(worst < 1e-6);
}
