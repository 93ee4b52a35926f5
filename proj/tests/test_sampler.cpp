#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <map>

#include "mib/sampler.hpp"
#include "mib/synth.hpp"

using namespace mib;

TEST_CASE("gap-length weights follow reciprocals: {5,15,30} -> 2/3, 2/9, 1/9") {
  Rng rng(2024);
  std::map<int, int> counts;
  const int draws = 100000;
  for (int i = 0; i < draws; ++i) counts[sample_weighted_n_in(rng, {5, 15, 30})]++;
  CHECK(std::abs(counts[5] / double(draws) - 2.0 / 3.0) < 0.02);
  CHECK(std::abs(counts[15] / double(draws) - 2.0 / 9.0) < 0.02);
  CHECK(std::abs(counts[30] / double(draws) - 1.0 / 9.0) < 0.02);
}

TEST_CASE("contiguous range [5,39] matches 1/n weights within 2% absolute") {
  Rng rng(7);
  std::map<int, int> counts;
  const int draws = 100000;
  for (int i = 0; i < draws; ++i) counts[sample_weighted_n_in(rng, 5, 39)]++;
  double total = 0;
  for (int n = 5; n <= 39; ++n) total += 1.0 / n;
  for (int n = 5; n <= 39; ++n)
    CHECK(std::abs(counts[n] / double(draws) - (1.0 / n) / total) < 0.02);
}

TEST_CASE("key/missing split: 10 past + gap 5 + 1 future on 16 frames") {
  std::vector<int> in, out;
  split_indices(10, 1, 5, 0, in, out);
  CHECK(in == std::vector<int>{0, 1, 2, 3, 4, 5, 6, 7, 8, 9, 15});
  CHECK(out == std::vector<int>{10, 11, 12, 13, 14});
}

TEST_CASE("stride mode promotes every stride-th frame inside the gap") {
  std::vector<int> in, out;
  split_indices(1, 1, 11, 6, in, out);
  CHECK(in == std::vector<int>{0, 6, 12});
  CHECK(out == std::vector<int>{1, 2, 3, 4, 5, 7, 8, 9, 10, 11});
}

TEST_CASE("make_task cuts and re-indexes the window") {
  const auto seq = synth_motion(SynthKind::SinusoidWalk, synthetic_skeleton(3), 50, 1);
  SamplerConfig cfg;
  cfg.window_len = 50;
  const auto task = make_task(seq, 4, 7, cfg);
  CHECK(task.window.frame_count() == 10 + 7 + 1);
  CHECK((task.window.frames[0].root_pos - seq.frames[4].root_pos).norm() == 0.0);
  CHECK(task.in_indices.front() == 0);
  CHECK(task.in_indices.back() == 17);
  CHECK(task.out_indices.front() == 10);
  CHECK_NOTHROW(task.validate());

  CHECK_THROWS_AS(make_task(seq, 45, 7, cfg), TaskError);
}

TEST_CASE("sampler config validation") {
  SamplerConfig cfg;
  cfg.window_len = 30;  // cannot hold 10+39+1
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
  cfg.window_len = 50;
  CHECK_NOTHROW(cfg.validate());
  cfg.n_in_min = 0;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
}

TEST_CASE("sample_batch shares one gap length and is deterministic per seed") {
  const auto seq = synth_motion(SynthKind::SinusoidWalk, synthetic_skeleton(3), 200, 3);
  const auto windows = make_windows(seq, 50, 20);
  SamplerConfig cfg;
  cfg.batch_size = 8;

  Rng r1(99), r2(99);
  const auto b1 = sample_batch(cfg, windows, r1);
  const auto b2 = sample_batch(cfg, windows, r2);
  CHECK(b1.n_in == b2.n_in);
  REQUIRE(b1.tasks.size() == 8);
  for (std::size_t i = 0; i < b1.tasks.size(); ++i) {
    CHECK(b1.tasks[i].window.frame_count() == 10 + b1.n_in + 1);
    CHECK((b1.tasks[i].window.frames[0].root_pos -
           b2.tasks[i].window.frames[0].root_pos).norm() == 0.0);
  }
}

TEST_CASE("sample_task draws valid tasks across many seeds") {
  const auto seq = synth_motion(SynthKind::FigureEight, synthetic_skeleton(3), 120, 5);
  const auto windows = make_windows(seq, 51, 17);
  SamplerConfig cfg;
  cfg.window_len = 51;
  Rng rng(1);
  for (int i = 0; i < 200; ++i) {
    const auto task = sample_task(cfg, windows, rng);
    CHECK_NOTHROW(task.validate());
    const int n_in = task.window.frame_count() - cfg.past_keys - cfg.future_keys;
    CHECK(n_in >= cfg.n_in_min);
    CHECK(n_in <= cfg.n_in_max);
  }
}
