// Command-line front end. Talks to the library only through c5cc.h.

#include <CLI11.hpp>

#include <cstdio>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "c5cc/c5cc.h"

namespace {

int fail(c5cc_status s) {
  std::cerr << "error: " << c5cc_last_error() << '\n';
  return static_cast<int>(s == C5CC_ERR_INTERNAL ? C5CC_ERR_NUMERICAL : s);
}

void print_line(const char* line, void*) { std::cout << line << '\n' << std::flush; }

std::string read_text(const std::string& path) {
  std::ifstream in(path);
  if (!in) return {};
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

struct Weights {
  c5cc_weights* p = nullptr;
  ~Weights() { c5cc_weights_free(p); }
};

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"C5 cross-camera colour constancy"};
  app.require_subcommand(1);
  std::uint64_t seed = 0;
  app.add_option("--seed", seed, "random seed for every stochastic step");

  auto* train = app.add_subcommand("train", "train a model from a key = value config");
  std::string train_config;
  train->add_option("config", train_config)->required();

  auto* infer = app.add_subcommand("infer", "estimate the illuminant of a query image");
  std::string weights_path, query, heatmap, filters;
  std::vector<std::string> additional;
  infer->add_option("--weights,-w", weights_path)->required();
  infer->add_option("query", query)->required();
  infer->add_option("additional", additional, "additional images from the same camera");
  infer->add_option("--heatmap", heatmap, "write the heat map as a PFM");
  infer->add_option("--filters", filters, "prefix for the generated filter / bias / gain PFMs");

  auto* augment = app.add_subcommand("augment", "map images from other cameras into a target camera");
  std::string source_manifest, target_manifest, out_dir;
  int count = 0;
  augment->add_option("source", source_manifest)->required();
  augment->add_option("target", target_manifest)->required();
  augment->add_option("--count,-n", count)->required();
  augment->add_option("--out,-o", out_dir)->required();

  auto* synth = app.add_subcommand("synth-camera", "render a synthetic multi-camera dataset");
  int cameras = 1, images = 20;
  double perturbation = 0.25;
  synth->add_option("--count,-n", cameras, "number of cameras");
  synth->add_option("--images", images, "images per camera");
  synth->add_option("--perturbation", perturbation, "cross-talk scale of the sensors");
  synth->add_option("--out,-o", out_dir)->required();

  auto* eval = app.add_subcommand("eval", "leave-one-camera-out style evaluation");
  std::string manifest, policy = "random", camera;
  int repeats = 10;
  bool gray = false;
  auto* wopt = eval->add_option("--weights,-w", weights_path);
  eval->add_flag("--gray-world", gray, "evaluate the gray-world baseline")->excludes(wopt);
  eval->add_option("manifest", manifest)->required();
  eval->add_option("--policy", policy, "random | vivid | dull | cross-camera | none");
  eval->add_option("--repeats", repeats);
  eval->add_option("--camera", camera, "restrict the test set to one camera");

  auto* grad = app.add_subcommand("gradcheck", "finite-difference check of every op and the training loss");
  double tolerance = 1e-4;
  grad->add_option("--tolerance", tolerance);

  auto* info = app.add_subcommand("info", "describe a weight file");
  info->add_option("weights", weights_path)->required();

  auto* init = app.add_subcommand("init", "write freshly initialized weights");
  std::string arch_config;
  init->add_option("--config", arch_config, "key = value architecture settings");
  init->add_option("--out,-o", weights_path)->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 1;
  }

  if (*train) {
    const c5cc_status s = c5cc_train_file(train_config.c_str(), seed, app.count("--seed") > 0, print_line, nullptr);
    return s == C5CC_OK ? 0 : fail(s);
  }

  if (*infer) {
    Weights w;
    if (auto s = c5cc_weights_load(weights_path.c_str(), &w.p)) return fail(s);
    std::vector<const char*> extra;
    for (const auto& a : additional) extra.push_back(a.c_str());
    c5cc_estimate est{};
    const c5cc_status s =
        c5cc_infer_files(w.p, query.c_str(), extra.data(), extra.size(), heatmap.empty() ? nullptr : heatmap.c_str(),
                         filters.empty() ? nullptr : filters.c_str(), &est);
    if (s) return fail(s);
    std::printf("%.9f %.9f %.9f\n", est.illuminant[0], est.illuminant[1], est.illuminant[2]);
    return 0;
  }

  if (*augment) {
    const c5cc_status s = c5cc_augment(source_manifest.c_str(), target_manifest.c_str(), count, out_dir.c_str(), seed,
                                       print_line, nullptr);
    return s == C5CC_OK ? 0 : fail(s);
  }

  if (*synth) {
    const c5cc_status s = c5cc_synth_cameras(seed, cameras, images, perturbation, out_dir.c_str(), print_line, nullptr);
    return s == C5CC_OK ? 0 : fail(s);
  }

  if (*eval) {
    if (!gray && weights_path.empty()) {
      std::cerr << "error: eval needs --weights or --gray-world\n";
      return 1;
    }
    Weights w;
    if (!gray)
      if (auto s = c5cc_weights_load(weights_path.c_str(), &w.p)) return fail(s);
    c5cc_report* report = nullptr;
    const c5cc_status s = c5cc_eval(w.p, manifest.c_str(), camera.empty() ? nullptr : camera.c_str(), policy.c_str(),
                                    repeats, seed, &report);
    if (s) return fail(s);
    std::cout << c5cc_report_text(report);
    c5cc_report_free(report);
    return 0;
  }

  if (*grad) {
    int failures = 0;
    auto cb = [](const char* name, double worst, int passed, void*) {
      std::printf("%-20s %.3e %s\n", name, worst, passed ? "ok" : "FAIL");
    };
    const c5cc_status s = c5cc_gradcheck(seed, tolerance, cb, nullptr, &failures);
    if (s) return fail(s);
    std::printf("%d failure(s)\n", failures);
    return failures ? 3 : 0;
  }

  if (*info) {
    Weights w;
    if (auto s = c5cc_weights_load(weights_path.c_str(), &w.p)) return fail(s);
    c5cc_weights_info i{};
    if (auto s = c5cc_weights_get_info(w.p, &i)) return fail(s);
    std::printf("n %d  m %d  depth %d  base_channels %d  convs_per_block %d  gain %d\n", i.n, i.m, i.depth,
                i.base_channels, i.convs_per_block, i.emit_gain);
    std::printf("values %zu (trainable %zu)  file %zu bytes\n", i.total_values, i.trainable_values, i.serialized_bytes);
    return 0;
  }

  if (*init) {
    std::string text;
    if (!arch_config.empty()) {
      text = read_text(arch_config);
      if (text.empty()) {
        std::cerr << "error: cannot read " << arch_config << '\n';
        return 1;
      }
    }
    Weights w;
    if (auto s = c5cc_weights_init(text.c_str(), seed, &w.p)) return fail(s);
    if (auto s = c5cc_weights_save(w.p, weights_path.c_str())) return fail(s);
    return 0;
  }
  return 1;
}
