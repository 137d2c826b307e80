#include <doctest.h>

#include <cmath>
#include <fstream>
#include <random>

#include "c5cc/error.hpp"
#include "c5cc/harness.hpp"

using namespace c5cc;
namespace fs = std::filesystem;

namespace {

fs::path scratch_dir(const char* name) {
  const fs::path d = fs::temp_directory_path() / (std::string("c5cc_harness_") + name);
  fs::remove_all(d);
  fs::create_directories(d);
  return d;
}

RawImage tinted(int w, int h, const Rgb& tint, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> d(0.1, 1.0);
  RawImage img(w, h);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) img.set(x, y, {tint[0] * d(rng), tint[1] * d(rng), tint[2] * d(rng)});
  return img;
}

void write_lines(const fs::path& p, const std::vector<std::string>& lines) {
  std::ofstream out(p);
  for (const auto& l : lines) out << l << '\n';
}

const char* kCamera = R"({"type":"camera","id":"A","c1":[[1,0,0],[0,1,0],[0,0,1]],"c2":[[1,0,0],[0,1,0],[0,0,1]],"q1":2850,"q2":6500})";

}  // namespace

TEST_CASE("eval_stats on a hand-computed set") {
  const ErrorStats s = eval_stats({4.0, 1.0, 3.0, 2.0});
  CHECK(s.mean == doctest::Approx(2.5));
  CHECK(s.median == doctest::Approx(2.5));
  CHECK(s.trimean == doctest::Approx(2.5));
  CHECK(s.best25 == doctest::Approx(1.0));
  CHECK(s.worst25 == doctest::Approx(4.0));
}

TEST_CASE("eval_stats odd count uses Tukey hinges") {
  // hinges of {1,2,3,4,10}: median(1,2,3)=2, median(3,4,10)=4
  const ErrorStats s = eval_stats({10.0, 1.0, 2.0, 3.0, 4.0});
  CHECK(s.median == doctest::Approx(3.0));
  CHECK(s.trimean == doctest::Approx((2.0 + 6.0 + 4.0) / 4.0));
  CHECK(s.best25 == doctest::Approx(1.5));  // ceil(5/4) = 2
  CHECK(s.worst25 == doctest::Approx(7.0));
  CHECK_THROWS_AS(eval_stats({}), DataError);
  CHECK_THROWS_AS(eval_stats({1.0, std::nan("")}), DataError);
}

TEST_CASE("aggregate_runs uses the population std") {
  ErrorStats a, b;
  a.mean = 1.0;
  b.mean = 3.0;
  const EvalReport r = aggregate_runs({a, b}, 7);
  CHECK(r.mean.mean == doctest::Approx(2.0));
  CHECK(r.std.mean == doctest::Approx(1.0));
  CHECK(r.images == 7);
  CHECK(format_report(r).find("std") != std::string::npos);
}

TEST_CASE("gray world normalizes the masked mean") {
  RawImage img(2, 1);
  img.set(0, 0, {1, 0, 0});
  img.set(1, 0, {0, 1, 0});
  const Rgb g = gray_world(img);
  CHECK(g[0] == doctest::Approx(1 / std::sqrt(2.0)));
  CHECK(g[1] == doctest::Approx(1 / std::sqrt(2.0)));
  CHECK(g[2] == doctest::Approx(0.0));
  img.mask[1] = 0;
  CHECK(gray_world(img)[0] == doctest::Approx(1.0));
}

TEST_CASE("manifest round trip and validation") {
  const fs::path dir = scratch_dir("manifest");
  std::mt19937_64 rng(3);
  write_pfm(dir / "a.pfm", tinted(8, 6, {1, 1, 1}, rng));
  write_lines(dir / "m.jsonl",
              {kCamera, R"({"type":"image","image":"a.pfm","camera":"A","illuminant":[2,2,1],"scene":"s1"})"});
  const DatasetManifest m = read_manifest(dir / "m.jsonl");
  REQUIRE(m.entries.size() == 1);
  CHECK(m.entries[0].illuminant[0] == doctest::Approx(2.0 / 3.0));
  CHECK(m.warnings.size() == 1);
  CHECK(m.cameras.at("A").q2 == 6500.0);
  CHECK(load_entry_image(m, m.entries[0], {4, 3}).width == 4);

  write_manifest(dir / "copy.jsonl", m);
  const DatasetManifest c = read_manifest(dir / "copy.jsonl");
  CHECK(c.entries[0].scene == "s1");
  CHECK(c.entries[0].illuminant == m.entries[0].illuminant);
  CHECK(c.warnings.empty());

  write_lines(dir / "bad1.jsonl", {R"({"type":"image","image":"a.pfm","camera":"B","illuminant":[1,1,1]})"});
  CHECK_THROWS_AS(read_manifest(dir / "bad1.jsonl"), DataError);
  write_lines(dir / "bad2.jsonl", {kCamera, R"({"type":"image","image":"none.pfm","camera":"A","illuminant":[1,1,1]})"});
  CHECK_THROWS_AS(read_manifest(dir / "bad2.jsonl"), DataError);
  write_lines(dir / "bad3.jsonl", {kCamera, "{not json"});
  CHECK_THROWS_AS(read_manifest(dir / "bad3.jsonl"), DataError);
  CHECK_THROWS_AS(read_manifest(dir / "missing.jsonl"), DataError);
}

TEST_CASE("leave-one-camera-out drops shared scenes") {
  DatasetManifest m;
  auto add = [&m](std::string cam, std::string scene) {
    ManifestEntry e;
    e.camera = std::move(cam);
    e.scene = std::move(scene);
    m.entries.push_back(e);
  };
  add("A", "s1");
  add("B", "s1");
  add("B", "s2");
  add("A", "");
  const CameraSplit s = leave_one_camera_out(m, "A");
  CHECK(s.test == std::vector<int>{0, 3});
  CHECK(s.train == std::vector<int>{2});
  CHECK_THROWS_AS(leave_one_camera_out(m, "C"), DataError);
  m.entries.erase(m.entries.begin() + 1, m.entries.begin() + 3);
  CHECK_THROWS_AS(leave_one_camera_out(m, "A"), DataError);
}

TEST_CASE("policies pick from the right pools") {
  std::mt19937_64 rng(5);
  const HistogramConfig cfg{16, -2.85, 2.85};
  std::vector<EvalSample> test, cross;
  for (int i = 0; i < 30; ++i) {
    const double s = 0.2 + 0.02 * i;
    test.push_back(make_eval_sample(tinted(8, 6, {1, 1 - s, s}, rng), {0.6, 0.6, 0.52915}, "A", cfg));
    cross.push_back(make_eval_sample(tinted(8, 6, {1, 1, 1}, rng), {0.6, 0.6, 0.52915}, i % 2 ? "A" : "B", cfg));
  }
  for (AdditionalPolicy p : {AdditionalPolicy::kRandom, AdditionalPolicy::kVivid, AdditionalPolicy::kDull}) {
    std::mt19937_64 r(1);
    const auto picks = choose_additional(test, cross, p, 7, r);
    for (std::size_t q = 0; q < picks.size(); ++q) {
      CHECK(picks[q].size() == 7);
      for (int i : picks[q]) CHECK(i != static_cast<int>(q));
    }
  }
  {
    std::mt19937_64 r(1);
    const auto vivid = choose_additional(test, cross, AdditionalPolicy::kVivid, 7, r);
    std::mt19937_64 r2(1);
    const auto dull = choose_additional(test, cross, AdditionalPolicy::kDull, 7, r2);
    double v = 0, d = 0;
    for (int i : vivid[0]) v += test[i].uv_variance;
    for (int i : dull[0]) d += test[i].uv_variance;
    CHECK(v > d);
  }
  {
    std::mt19937_64 r(1);
    const auto picks = choose_additional(test, cross, AdditionalPolicy::kCrossCamera, 7, r);
    for (int i : picks[0]) CHECK(cross[i].camera == "B");
  }
  std::mt19937_64 r(1);
  CHECK(choose_additional(test, cross, AdditionalPolicy::kNone, 7, r)[0].empty());
  CHECK(parse_policy(policy_name(AdditionalPolicy::kCrossCamera)) == AdditionalPolicy::kCrossCamera);
  CHECK_THROWS_AS(parse_policy("bogus"), UsageError);
}

TEST_CASE("gray world ignores the additional-image policy") {
  std::mt19937_64 rng(9);
  const HistogramConfig cfg{16, -2.85, 2.85};
  std::vector<EvalSample> test, cross;
  for (int i = 0; i < 12; ++i) {
    test.push_back(make_eval_sample(tinted(8, 6, {1, 0.8, 0.5}, rng), {0.7, 0.6, 0.3873}, "A", cfg));
    cross.push_back(make_eval_sample(tinted(8, 6, {1, 1, 1}, rng), {0.6, 0.6, 0.52915}, "B", cfg));
  }
  EvalOptions opt;
  opt.repeats = 3;
  opt.seed = 11;
  opt.policy = AdditionalPolicy::kNone;
  const EvalReport base = run_eval(gray_world_estimator(), test, cross, opt);
  CHECK(base.std.mean == 0.0);
  for (AdditionalPolicy p : {AdditionalPolicy::kRandom, AdditionalPolicy::kVivid, AdditionalPolicy::kDull,
                             AdditionalPolicy::kCrossCamera}) {
    opt.policy = p;
    CHECK(run_eval(gray_world_estimator(), test, cross, opt) == base);
  }
}

TEST_CASE("C5 evaluation is reproducible from the seed") {
  std::mt19937_64 rng(13);
  ArchitectureConfig arch;
  arch.n = 16;
  arch.m = 3;
  arch.depth = 2;
  arch.base_channels = 4;
  arch.convs_per_block = 1;
  const NetworkWeights w = NetworkWeights::initialize(arch, 4);
  const HistogramConfig cfg{16, -2.85, 2.85};
  std::vector<EvalSample> test;
  for (int i = 0; i < 6; ++i)
    test.push_back(make_eval_sample(tinted(8, 6, {1, 0.7, 0.4}, rng), {0.7, 0.6, 0.3873}, "A", cfg));
  EvalOptions opt;
  opt.repeats = 2;
  opt.seed = 21;
  opt.additional = 2;
  const EvalReport a = run_eval(c5_estimator(w), test, {}, opt);
  const EvalReport b = run_eval(c5_estimator(w), test, {}, opt);
  CHECK(a == b);
  CHECK(a.runs.size() == 2);
  CHECK(std::isfinite(a.mean.mean));
}
