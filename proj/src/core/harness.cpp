#include "c5cc/harness.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <numeric>
#include <set>
#include <sstream>

#include <json.hpp>

#include "c5cc/error.hpp"

namespace c5cc {

using nlohmann::json;

// ---------------------------------------------------------------------------
// Manifest

std::filesystem::path DatasetManifest::resolve(const std::filesystem::path& p) const {
  return p.is_absolute() || p.empty() ? p : base_dir / p;
}

std::vector<std::string> DatasetManifest::camera_ids() const {
  std::vector<std::string> ids;
  std::set<std::string> seen;
  for (const ManifestEntry& e : entries)
    if (seen.insert(e.camera).second) ids.push_back(e.camera);
  return ids;
}

namespace {

Mat3 matrix_from(const json& j, const std::string& what) {
  if (!j.is_array() || j.size() != 3) throw DataError(what + " must be a 3x3 array");
  Mat3 m;
  for (int r = 0; r < 3; ++r) {
    if (!j[r].is_array() || j[r].size() != 3) throw DataError(what + " must be a 3x3 array");
    for (int c = 0; c < 3; ++c) m(r, c) = j[r][c].get<double>();
  }
  return m;
}

json matrix_to(const Mat3& m) {
  json j = json::array();
  for (int r = 0; r < 3; ++r) j.push_back({m(r, 0), m(r, 1), m(r, 2)});
  return j;
}

}  // namespace

DatasetManifest read_manifest(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open manifest " + path.string());
  DatasetManifest m;
  m.base_dir = path.parent_path();
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    const std::string where = path.string() + ":" + std::to_string(lineno) + ": ";
    try {
      const json j = json::parse(line);
      const std::string type = j.value("type", j.contains("image") ? "image" : "");
      if (type == "camera") {
        CameraProfile p;
        p.id = j.at("id").get<std::string>();
        p.c1 = matrix_from(j.at("c1"), "c1");
        p.c2 = matrix_from(j.at("c2"), "c2");
        p.q1 = j.at("q1").get<double>();
        p.q2 = j.at("q2").get<double>();
        p.validate();
        if (!m.cameras.emplace(p.id, p).second) throw DataError("duplicate camera " + p.id);
      } else if (type == "image") {
        ManifestEntry e;
        e.image = j.at("image").get<std::string>();
        e.mask = j.value("mask", std::string());
        e.camera = j.at("camera").get<std::string>();
        e.scene = j.value("scene", std::string());
        const auto& l = j.at("illuminant");
        if (!l.is_array() || l.size() != 3) throw DataError("illuminant must have 3 components");
        for (int k = 0; k < 3; ++k) e.illuminant[k] = l[k].get<double>();
        if (!(e.illuminant[0] > 0 && e.illuminant[1] > 0 && e.illuminant[2] > 0)) {
          throw DataError("illuminant components must be positive");
        }
        const double n = std::hypot(e.illuminant[0], e.illuminant[1], e.illuminant[2]);
        if (std::abs(n - 1.0) > 1e-6) {
          m.warnings.push_back(where + "illuminant re-normalized to unit length");
        }
        for (double& c : e.illuminant) c /= n;
        if (j.contains("meta")) {
          const json& mj = j.at("meta");
          e.meta.iso = mj.value("iso", e.meta.iso);
          e.meta.aperture = mj.value("aperture", e.meta.aperture);
          e.meta.exposure_time = mj.value("exposure_time", e.meta.exposure_time);
          e.meta.baseline_exposure = mj.value("baseline_exposure", e.meta.baseline_exposure);
          e.meta.baseline_noise = mj.value("baseline_noise", e.meta.baseline_noise);
        }
        e.meta.validate();
        m.entries.push_back(std::move(e));
      } else {
        throw DataError("unknown record type '" + type + "'");
      }
    } catch (const json::exception& ex) {
      throw DataError(where + "malformed record: " + ex.what());
    } catch (const DataError& ex) {
      throw DataError(where + ex.what());
    }
  }
  for (const ManifestEntry& e : m.entries) {
    if (!m.cameras.count(e.camera)) throw DataError("manifest: no camera profile for '" + e.camera + "'");
    if (!std::filesystem::exists(m.resolve(e.image))) throw DataError("missing image " + m.resolve(e.image).string());
    if (!e.mask.empty() && !std::filesystem::exists(m.resolve(e.mask))) {
      throw DataError("missing mask " + m.resolve(e.mask).string());
    }
  }
  return m;
}

void write_manifest(const std::filesystem::path& path, const DatasetManifest& m) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write manifest " + path.string());
  for (const auto& [id, p] : m.cameras) {
    json j{{"type", "camera"}, {"id", id}, {"c1", matrix_to(p.c1)}, {"c2", matrix_to(p.c2)}, {"q1", p.q1}, {"q2", p.q2}};
    out << j.dump() << '\n';
  }
  for (const ManifestEntry& e : m.entries) {
    json j{{"type", "image"},
           {"image", e.image.generic_string()},
           {"camera", e.camera},
           {"illuminant", {e.illuminant[0], e.illuminant[1], e.illuminant[2]}},
           {"meta",
            {{"iso", e.meta.iso},
             {"aperture", e.meta.aperture},
             {"exposure_time", e.meta.exposure_time},
             {"baseline_exposure", e.meta.baseline_exposure},
             {"baseline_noise", e.meta.baseline_noise}}}};
    if (!e.mask.empty()) j["mask"] = e.mask.generic_string();
    if (!e.scene.empty()) j["scene"] = e.scene;
    out << j.dump() << '\n';
  }
  if (!out) throw DataError("failed writing manifest " + path.string());
}

RawImage load_entry_image(const DatasetManifest& m, const ManifestEntry& e, const WorkingSize& size) {
  RawImage img = load_image(m.resolve(e.image), e.mask.empty() ? std::filesystem::path() : m.resolve(e.mask));
  if (size.width > 0 && size.height > 0 && (img.width > size.width || img.height > size.height)) {
    img = resize(img, size.width, size.height);
  }
  return img;
}

CameraSplit leave_one_camera_out(const DatasetManifest& m, const std::string& test_camera) {
  const auto ids = m.camera_ids();
  if (ids.size() < 2) throw DataError("leave-one-camera-out needs at least two cameras");
  if (std::find(ids.begin(), ids.end(), test_camera) == ids.end()) {
    throw DataError("unknown camera '" + test_camera + "'");
  }
  std::set<std::string> test_scenes;
  for (const ManifestEntry& e : m.entries)
    if (e.camera == test_camera && !e.scene.empty()) test_scenes.insert(e.scene);
  CameraSplit s;
  for (int i = 0; i < static_cast<int>(m.entries.size()); ++i) {
    const ManifestEntry& e = m.entries[i];
    if (e.camera == test_camera) {
      s.test.push_back(i);
    } else if (e.scene.empty() || !test_scenes.count(e.scene)) {
      s.train.push_back(i);
    }
  }
  return s;
}

// ---------------------------------------------------------------------------
// Statistics

namespace {

double median_sorted(const std::vector<double>& v, std::size_t begin, std::size_t end) {
  const std::size_t n = end - begin;
  const std::size_t mid = begin + n / 2;
  return n % 2 ? v[mid] : 0.5 * (v[mid - 1] + v[mid]);
}

}  // namespace

ErrorStats eval_stats(std::vector<double> e) {
  if (e.empty()) throw DataError("no errors to summarize");
  for (double v : e)
    if (!std::isfinite(v) || v < 0.0) throw DataError("angular errors must be finite and non-negative");
  std::sort(e.begin(), e.end());
  const std::size_t n = e.size();
  ErrorStats s;
  s.mean = std::accumulate(e.begin(), e.end(), 0.0) / static_cast<double>(n);
  s.median = median_sorted(e, 0, n);
  const std::size_t half = (n + 1) / 2;
  const double q1 = median_sorted(e, 0, half);
  const double q3 = median_sorted(e, n - half, n);
  s.trimean = 0.25 * (q1 + 2.0 * s.median + q3);
  const std::size_t quarter = (n + 3) / 4;
  s.best25 = std::accumulate(e.begin(), e.begin() + quarter, 0.0) / static_cast<double>(quarter);
  s.worst25 = std::accumulate(e.end() - quarter, e.end(), 0.0) / static_cast<double>(quarter);
  return s;
}

EvalReport aggregate_runs(std::vector<ErrorStats> runs, std::size_t images) {
  if (runs.empty()) throw DataError("no evaluation runs");
  EvalReport r;
  r.images = images;
  r.runs = std::move(runs);
  const double k = static_cast<double>(r.runs.size());
  auto fields = [](ErrorStats& s) { return std::array<double*, 5>{&s.mean, &s.median, &s.trimean, &s.best25, &s.worst25}; };
  const auto mean = fields(r.mean);
  const auto sd = fields(r.std);
  for (ErrorStats run : r.runs) {
    const auto f = fields(run);
    for (int i = 0; i < 5; ++i) *mean[i] += *f[i] / k;
  }
  for (ErrorStats run : r.runs) {
    const auto f = fields(run);
    for (int i = 0; i < 5; ++i) *sd[i] += (*f[i] - *mean[i]) * (*f[i] - *mean[i]) / k;
  }
  for (int i = 0; i < 5; ++i) *sd[i] = std::sqrt(*sd[i]);
  return r;
}

std::string format_report(const EvalReport& r) {
  std::ostringstream os;
  os << std::fixed << std::setprecision(3);
  auto row = [&os](const char* name, const ErrorStats& s) {
    os << name << "\tmean " << s.mean << "\tmedian " << s.median << "\ttrimean " << s.trimean << "\tbest25 " << s.best25
       << "\tworst25 " << s.worst25 << '\n';
  };
  os << "images " << r.images << ", runs " << r.runs.size() << '\n';
  for (std::size_t i = 0; i < r.runs.size(); ++i) row(("run " + std::to_string(i + 1)).c_str(), r.runs[i]);
  row("mean", r.mean);
  row("std", r.std);
  return os.str();
}

Rgb gray_world(const RawImage& img) {
  double s[3] = {0, 0, 0};
  std::size_t count = 0;
  for (int y = 0; y < img.height; ++y)
    for (int x = 0; x < img.width; ++x) {
      if (!img.valid(x, y)) continue;
      const Rgb c = img.at(x, y);
      for (int k = 0; k < 3; ++k) s[k] += c[k];
      ++count;
    }
  if (count == 0) throw DataError("gray world: no valid pixels");
  const double n = std::hypot(s[0], s[1], s[2]);
  if (!(n > 0.0)) throw DataError("gray world: image is black");
  return {s[0] / n, s[1] / n, s[2] / n};
}

// ---------------------------------------------------------------------------
// Evaluation

EvalSample make_eval_sample(const RawImage& img, const Rgb& illuminant, std::string camera,
                            const HistogramConfig& cfg) {
  EvalSample s;
  s.features = std::make_shared<ChromaHistogram>(assemble_feature_stack(img, cfg));
  s.illuminant = illuminant;
  s.camera = std::move(camera);
  s.uv_variance = uv_chroma_variance(img);
  s.gray_world = gray_world(img);
  return s;
}

AdditionalPolicy parse_policy(const std::string& name) {
  if (name == "random") return AdditionalPolicy::kRandom;
  if (name == "vivid") return AdditionalPolicy::kVivid;
  if (name == "dull") return AdditionalPolicy::kDull;
  if (name == "cross-camera") return AdditionalPolicy::kCrossCamera;
  if (name == "none") return AdditionalPolicy::kNone;
  throw UsageError("unknown policy '" + name + "' (random|vivid|dull|cross-camera|none)");
}

std::string policy_name(AdditionalPolicy p) {
  switch (p) {
    case AdditionalPolicy::kRandom: return "random";
    case AdditionalPolicy::kVivid: return "vivid";
    case AdditionalPolicy::kDull: return "dull";
    case AdditionalPolicy::kCrossCamera: return "cross-camera";
    case AdditionalPolicy::kNone: return "none";
  }
  return "?";
}

namespace {

constexpr std::size_t kVividPool = 20;

std::vector<int> shuffled_cycle(std::vector<int> candidates, int count, std::mt19937_64& rng) {
  std::vector<int> out;
  if (candidates.empty()) return out;
  std::shuffle(candidates.begin(), candidates.end(), rng);
  for (int j = 0; j < count; ++j) out.push_back(candidates[j % candidates.size()]);
  return out;
}

}  // namespace

std::vector<std::vector<int>> choose_additional(const std::vector<EvalSample>& test,
                                                const std::vector<EvalSample>& cross_pool, AdditionalPolicy policy,
                                                int count, std::mt19937_64& rng) {
  std::vector<std::vector<int>> out(test.size());
  if (policy == AdditionalPolicy::kNone || count <= 0) return out;
  std::map<std::string, std::vector<int>> by_camera;
  for (int i = 0; i < static_cast<int>(test.size()); ++i) by_camera[test[i].camera].push_back(i);
  if (policy == AdditionalPolicy::kVivid || policy == AdditionalPolicy::kDull) {
    const bool vivid = policy == AdditionalPolicy::kVivid;
    for (auto& [cam, idx] : by_camera) {
      std::stable_sort(idx.begin(), idx.end(), [&](int a, int b) {
        return vivid ? test[a].uv_variance > test[b].uv_variance : test[a].uv_variance < test[b].uv_variance;
      });
      if (idx.size() > kVividPool) idx.resize(kVividPool);
    }
  }
  for (int q = 0; q < static_cast<int>(test.size()); ++q) {
    std::vector<int> candidates;
    if (policy == AdditionalPolicy::kCrossCamera) {
      for (int i = 0; i < static_cast<int>(cross_pool.size()); ++i)
        if (cross_pool[i].camera != test[q].camera) candidates.push_back(i);
      if (candidates.empty()) throw DataError("cross-camera policy needs images from another camera");
    } else {
      for (int i : by_camera[test[q].camera])
        if (i != q) candidates.push_back(i);
    }
    out[q] = shuffled_cycle(std::move(candidates), count, rng);
  }
  return out;
}

Estimator c5_estimator(const NetworkWeights& w) {
  return [&w](const std::vector<const EvalSample*>& queries, const std::vector<std::vector<const EvalSample*>>& extra) {
    const HistogramConfig cfg{w.arch().n, -2.85, 2.85};
    std::vector<Rgb> out;
    constexpr std::size_t kChunk = 32;
    for (std::size_t start = 0; start < queries.size(); start += kChunk) {
      std::vector<std::vector<const ChromaHistogram*>> sets;
      for (std::size_t q = start; q < std::min(queries.size(), start + kChunk); ++q) {
        std::vector<const ChromaHistogram*> add;
        for (const EvalSample* s : extra[q]) add.push_back(s->features.get());
        sets.push_back(complete_inputs(*queries[q]->features, add, w.arch().m));
      }
      for (const InferenceResult& r : c5_infer_batch(w, sets, cfg)) out.push_back(r.illuminant);
    }
    return out;
  };
}

Estimator gray_world_estimator() {
  return [](const std::vector<const EvalSample*>& queries, const std::vector<std::vector<const EvalSample*>>&) {
    std::vector<Rgb> out;
    for (const EvalSample* q : queries) out.push_back(q->gray_world);
    return out;
  };
}

EvalReport run_eval(const Estimator& estimate, const std::vector<EvalSample>& test,
                    const std::vector<EvalSample>& cross_pool, const EvalOptions& opt) {
  if (test.empty()) throw DataError("test set is empty");
  if (opt.repeats < 1) throw UsageError("repeats must be at least 1");
  std::vector<const EvalSample*> queries;
  for (const EvalSample& s : test) queries.push_back(&s);
  std::vector<ErrorStats> runs;
  for (int r = 0; r < opt.repeats; ++r) {
    std::seed_seq seq{opt.seed, static_cast<std::uint64_t>(r)};
    std::mt19937_64 rng(seq);
    const auto picks = choose_additional(test, cross_pool, opt.policy, opt.additional, rng);
    const auto& pool = opt.policy == AdditionalPolicy::kCrossCamera ? cross_pool : test;
    std::vector<std::vector<const EvalSample*>> extra(test.size());
    for (std::size_t q = 0; q < test.size(); ++q)
      for (int i : picks[q]) extra[q].push_back(&pool[i]);
    const std::vector<Rgb> est = estimate(queries, extra);
    if (est.size() != test.size()) throw DataError("estimator returned the wrong number of illuminants");
    std::vector<double> errors;
    for (std::size_t q = 0; q < test.size(); ++q) errors.push_back(degrees(angular_error(est[q], test[q].illuminant)));
    runs.push_back(eval_stats(std::move(errors)));
  }
  return aggregate_runs(std::move(runs), test.size());
}

}  // namespace c5cc
