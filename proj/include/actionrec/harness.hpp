#pragma once

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iomanip>
#include <limits>
#include <map>
#include <mutex>
#include <set>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "actionrec/descriptors.hpp"
#include "actionrec/detector.hpp"
#include "actionrec/errors.hpp"
#include "actionrec/imaging.hpp"
#include "actionrec/io.hpp"
#include "actionrec/rng.hpp"
#include "actionrec/segmentation.hpp"
#include "actionrec/structmodel.hpp"

namespace actionrec {

// ---------------------------------------------------------------------------
// Configuration

struct PipelineConfig {
  std::uint64_t seed = 0;
  int jobs = 1;
  SegmentationParams segmentation;
  DenseParams dense;
  std::size_t codebook_size = kCodebookSize;
  int codebook_iterations = 100;
  std::size_t codebook_max_descriptors = 200000;
  DetectorConfig detector;
  LssvmConfig action;
  std::size_t negatives_per_class = 5;
  std::filesystem::path codebook_path;
  std::filesystem::path detector_path;
  std::filesystem::path cache_dir;
};

namespace detail {

template <class T>
void take(const Json& obj, const char* key, T& out) {
  if (obj.contains(key)) {
    try {
      out = obj.at(key).get<T>();
    } catch (const Json::exception& e) {
      throw ConfigError(std::string("config key '") + key + "': " + e.what());
    }
  }
}

inline void reject_unknown(const Json& obj, std::initializer_list<const char*> known,
                           const std::string& where) {
  for (const auto& [key, _] : obj.items()) {
    if (std::none_of(known.begin(), known.end(), [&](const char* k) { return key == k; }))
      throw ConfigError("unknown config key '" + where + key + "'");
  }
}

}  // namespace detail

// Keys override the defaults; unknown keys are rejected.
inline PipelineConfig config_from_json(const Json& doc) {
  if (!doc.is_object()) throw ConfigError("config must be a JSON object");
  detail::reject_unknown(doc,
                         {"schema_version", "kind", "seed", "jobs", "segmentation", "dense",
                          "codebook", "detector", "action", "protocol", "artifacts"},
                         "");
  if (doc.contains("schema_version") && doc.at("schema_version") != kSchemaVersion)
    throw ConfigError("unsupported config schema_version");
  PipelineConfig c;
  detail::take(doc, "seed", c.seed);
  detail::take(doc, "jobs", c.jobs);
  auto section = [&](const char* name) { return doc.contains(name) ? doc.at(name) : Json::object(); };
  {
    const Json s = section("segmentation");
    detail::reject_unknown(s, {"sigma", "k", "min_size"}, "segmentation.");
    detail::take(s, "sigma", c.segmentation.sigma);
    detail::take(s, "k", c.segmentation.k);
    detail::take(s, "min_size", c.segmentation.min_size);
  }
  {
    const Json s = section("dense");
    detail::reject_unknown(s, {"step", "cell_sizes"}, "dense.");
    detail::take(s, "step", c.dense.step);
    detail::take(s, "cell_sizes", c.dense.cell_sizes);
  }
  {
    const Json s = section("codebook");
    detail::reject_unknown(s, {"size", "max_iterations", "max_descriptors"}, "codebook.");
    detail::take(s, "size", c.codebook_size);
    detail::take(s, "max_iterations", c.codebook_iterations);
    detail::take(s, "max_descriptors", c.codebook_max_descriptors);
  }
  {
    const Json s = section("detector");
    detail::reject_unknown(s, {"C", "epochs", "standardize", "bias"}, "detector.");
    detail::take(s, "C", c.detector.C);
    detail::take(s, "epochs", c.detector.epochs);
    detail::take(s, "standardize", c.detector.standardize);
    detail::take(s, "bias", c.detector.bias);
  }
  {
    const Json s = section("action");
    detail::reject_unknown(s, {"C", "epochs", "max_rounds", "max_sweeps", "normalize_pairs"},
                           "action.");
    detail::take(s, "C", c.action.C);
    detail::take(s, "epochs", c.action.epochs);
    detail::take(s, "max_rounds", c.action.max_rounds);
    detail::take(s, "max_sweeps", c.action.max_sweeps);
    detail::take(s, "normalize_pairs", c.action.normalize_pairs);
  }
  {
    const Json s = section("protocol");
    detail::reject_unknown(s, {"negatives_per_class"}, "protocol.");
    detail::take(s, "negatives_per_class", c.negatives_per_class);
  }
  {
    const Json s = section("artifacts");
    detail::reject_unknown(s, {"codebook", "detector", "cache_dir"}, "artifacts.");
    if (s.contains("codebook")) c.codebook_path = s.at("codebook").get<std::string>();
    if (s.contains("detector")) c.detector_path = s.at("detector").get<std::string>();
    if (s.contains("cache_dir")) c.cache_dir = s.at("cache_dir").get<std::string>();
  }
  c.segmentation.validate();
  if (c.jobs < 1) throw ConfigError("jobs must be >= 1");
  if (!(c.action.C > 0) || !(c.detector.C > 0)) throw ConfigError("C must be > 0");
  return c;
}

inline Json config_to_json(const PipelineConfig& c) {
  return {{"schema_version", kSchemaVersion},
          {"kind", "pipeline_config"},
          {"seed", c.seed},
          {"jobs", c.jobs},
          {"segmentation",
           {{"sigma", c.segmentation.sigma}, {"k", c.segmentation.k}, {"min_size", c.segmentation.min_size}}},
          {"dense", {{"step", c.dense.step}, {"cell_sizes", c.dense.cell_sizes}}},
          {"codebook",
           {{"size", c.codebook_size},
            {"max_iterations", c.codebook_iterations},
            {"max_descriptors", c.codebook_max_descriptors}}},
          {"detector",
           {{"C", c.detector.C},
            {"epochs", c.detector.epochs},
            {"standardize", c.detector.standardize},
            {"bias", c.detector.bias}}},
          {"action",
           {{"C", c.action.C},
            {"epochs", c.action.epochs},
            {"max_rounds", c.action.max_rounds},
            {"max_sweeps", c.action.max_sweeps},
            {"normalize_pairs", c.action.normalize_pairs}}},
          {"protocol", {{"negatives_per_class", c.negatives_per_class}}},
          {"artifacts",
           {{"codebook", c.codebook_path.string()},
            {"detector", c.detector_path.string()},
            {"cache_dir", c.cache_dir.string()}}}};
}

// Accepts inline JSON text or a path to a JSON file.
inline PipelineConfig load_config(const std::string& text_or_path) {
  std::string text = text_or_path;
  const auto first = text.find_first_not_of(" \t\r\n");
  if (first == std::string::npos || text[first] != '{') text = read_text_file(text_or_path);
  try {
    return config_from_json(Json::parse(text));
  } catch (const Json::parse_error& e) {
    throw ConfigError(std::string("config is not valid JSON: ") + e.what());
  }
}

// ---------------------------------------------------------------------------
// Synthetic corpora

struct SynthConfig {
  std::size_t K = 5;
  int t_min = 3;
  int t_max = 8;
  std::size_t N = 200;
  double noise = 0.05;
  std::uint64_t seed = 7;
  // y = 1 iff at least `rule_min_count` superpixels are in `rule_state`
  // (default: the last state).
  int rule_state = -1;
  int rule_min_count = 1;
};

struct SynthData {
  std::vector<ActionExample> examples;
  std::vector<LatentAssignment> truth;
};

// Each superpixel draws a uniform true state. With probability `noise` the
// observed state is replaced by a uniformly drawn different one; the score
// vector puts 1 - noise on the observed state and noise/(K-1) on every other
// one (one-hot mixed with uniform at weight 1 - noise*K/(K-1)).
inline SynthData synth_generate(const SynthConfig& cfg) {
  if (cfg.K < 2) throw ValidationError("synthetic K must be >= 2");
  if (cfg.N < 4) throw ValidationError("synthetic N must be >= 4");
  if (!(cfg.noise >= 0 && cfg.noise < 0.5)) throw ValidationError("noise must be in [0, 0.5)");
  if (cfg.t_min < 1 || cfg.t_max < cfg.t_min) throw ValidationError("invalid T range");
  const int state = cfg.rule_state < 0 ? static_cast<int>(cfg.K) - 1 : cfg.rule_state;
  if (state >= static_cast<int>(cfg.K)) throw ValidationError("rule state outside [0, K)");
  if (cfg.rule_min_count > cfg.t_max) throw ValidationError("rule can never hold for this T range");
  if (cfg.rule_min_count <= 0) throw ValidationError("rule always holds");

  const std::size_t K = cfg.K;
  Rng rng(derive_seed(cfg.seed, "synth"));
  SynthData out;
  for (std::size_t i = 0; i < cfg.N; ++i) {
    const int T = cfg.t_min + static_cast<int>(uniform_index(rng, static_cast<std::uint64_t>(cfg.t_max - cfg.t_min + 1)));
    LatentAssignment h(static_cast<std::size_t>(T));
    ActionExample ex;
    int hits = 0;
    for (auto& s : h) {
      s = static_cast<int>(uniform_index(rng, K));
      hits += s == state;
      int observed = s;
      if (uniform01(rng) < cfg.noise) {
        const int other = static_cast<int>(uniform_index(rng, K - 1));
        observed = other >= s ? other + 1 : other;
      }
      ScoreVector x(K, cfg.noise / static_cast<double>(K - 1));
      x[static_cast<std::size_t>(observed)] = 1.0 - cfg.noise;
      ex.x.push_back(std::move(x));
    }
    ex.y = hits >= cfg.rule_min_count ? 1 : 0;
    out.examples.push_back(std::move(ex));
    out.truth.push_back(std::move(h));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Datasets

struct ManifestEntry {
  std::filesystem::path path;
  std::string class_name;
  std::string split;  // "train" or "test"
};

struct DatasetManifest {
  std::vector<ManifestEntry> entries;
  std::vector<std::string> class_names;
  std::vector<std::string> warnings;

  std::size_t count(const std::string& cls, const std::string& split) const {
    return static_cast<std::size_t>(std::count_if(entries.begin(), entries.end(), [&](const auto& e) {
      return e.class_name == cls && e.split == split;
    }));
  }
};

inline void validate_manifest(const DatasetManifest& m) {
  std::set<std::string> classes(m.class_names.begin(), m.class_names.end());
  if (classes.size() != m.class_names.size()) throw ValidationError("duplicate class name in manifest");
  std::set<std::string> seen_paths;
  std::set<std::string> used;
  for (const auto& e : m.entries) {
    if (!classes.count(e.class_name))
      throw ValidationError("unknown class '" + e.class_name + "' for " + e.path.string());
    if (e.split != "train" && e.split != "test")
      throw ValidationError("invalid split '" + e.split + "' for " + e.path.string());
    if (!seen_paths.insert(e.path.lexically_normal().string()).second)
      throw ValidationError("repeated path " + e.path.string());
    used.insert(e.class_name);
  }
  for (const auto& c : m.class_names)
    if (!used.count(c)) throw ValidationError("class '" + c + "' has no entries");
}

enum class DatasetLayout { FolderPerClass, ManifestFile };

namespace detail {

inline bool is_image_file(const std::filesystem::path& p) {
  const auto ext = p.extension().string();
  return ext == ".ppm" || ext == ".pgm";
}

inline void check_readable(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw IoError("unreadable file " + p.string());
}

inline std::set<std::string> read_split_list(const std::filesystem::path& p) {
  std::set<std::string> out;
  std::ifstream in(p);
  if (!in) throw IoError("cannot open split file " + p.string());
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (!line.empty() && line[0] != '#') out.insert(line);
  }
  return out;
}

}  // namespace detail

// FolderPerClass: root/<class>/*.ppm|*.pgm. Optional root/train.txt and
// root/test.txt list paths relative to root; when present, unlisted images
// are skipped, otherwise everything is "train".
// ManifestFile: root is a JSON file (or a directory holding manifest.json)
// with {"classes": [...], "entries": [{"path", "class", "split"}]}, paths
// relative to the manifest's directory.
inline DatasetManifest ingest(const std::filesystem::path& root, DatasetLayout layout) {
  namespace fs = std::filesystem;
  DatasetManifest m;
  if (layout == DatasetLayout::ManifestFile) {
    const fs::path file = fs::is_directory(root) ? root / "manifest.json" : root;
    const Json doc = load_json_file(file);
    check_schema(doc, "dataset_manifest");
    m.class_names = doc.at("classes").get<std::vector<std::string>>();
    for (const auto& e : doc.at("entries")) {
      ManifestEntry entry{file.parent_path() / e.at("path").get<std::string>(),
                          e.at("class").get<std::string>(), e.value("split", std::string("train"))};
      m.entries.push_back(std::move(entry));
    }
  } else {
    if (!fs::is_directory(root)) throw IoError("not a directory: " + root.string());
    const bool has_splits = fs::exists(root / "train.txt") || fs::exists(root / "test.txt");
    std::set<std::string> train, test;
    if (fs::exists(root / "train.txt")) train = detail::read_split_list(root / "train.txt");
    if (fs::exists(root / "test.txt")) test = detail::read_split_list(root / "test.txt");
    std::vector<fs::path> dirs;
    for (const auto& d : fs::directory_iterator(root))
      if (d.is_directory()) dirs.push_back(d.path());
    std::sort(dirs.begin(), dirs.end());
    for (const auto& dir : dirs) {
      std::vector<fs::path> files;
      for (const auto& f : fs::directory_iterator(dir))
        if (f.is_regular_file() && detail::is_image_file(f.path())) files.push_back(f.path());
      const std::string cls = dir.filename().string();
      std::size_t added = 0;
      for (const auto& f : files) {
        const std::string rel = fs::relative(f, root).generic_string();
        std::string split = "train";
        if (has_splits) {
          if (test.count(rel)) split = "test";
          else if (!train.count(rel)) continue;
        }
        m.entries.push_back({f, cls, split});
        ++added;
      }
      if (added == 0) {
        m.warnings.push_back("class folder '" + cls + "' has no images; excluded");
        continue;
      }
      m.class_names.push_back(cls);
    }
  }
  std::sort(m.entries.begin(), m.entries.end(),
            [](const auto& a, const auto& b) { return a.path < b.path; });
  for (const auto& e : m.entries) detail::check_readable(e.path);
  validate_manifest(m);
  return m;
}

struct TrainingItem {
  std::filesystem::path path;
  std::string class_name;
  int y = 0;
};

// All train images of the positive class, then `per_class` seeded picks
// from the train images of every other class (in class order).
inline std::vector<TrainingItem> subsample_negatives(const DatasetManifest& m,
                                                     const std::string& positive,
                                                     std::size_t per_class, std::uint64_t seed) {
  if (std::find(m.class_names.begin(), m.class_names.end(), positive) == m.class_names.end())
    throw ValidationError("unknown positive class '" + positive + "'");
  std::vector<TrainingItem> out;
  for (const auto& e : m.entries)
    if (e.split == "train" && e.class_name == positive) out.push_back({e.path, e.class_name, 1});
  for (const auto& cls : m.class_names) {
    if (cls == positive) continue;
    std::vector<const ManifestEntry*> pool;
    for (const auto& e : m.entries)
      if (e.split == "train" && e.class_name == cls) pool.push_back(&e);
    if (per_class > pool.size())
      throw CapacityError("cannot draw " + std::to_string(per_class) + " negatives from class '" +
                          cls + "' with " + std::to_string(pool.size()) + " training images");
    Rng rng(derive_seed(seed, "negatives/" + positive + "/" + cls));
    shuffle(pool.begin(), pool.end(), rng);
    pool.resize(per_class);
    std::sort(pool.begin(), pool.end(), [](auto* a, auto* b) { return a->path < b->path; });
    for (const auto* e : pool) out.push_back({e->path, e->class_name, 0});
  }
  return out;
}

// ---------------------------------------------------------------------------
// Evaluation reports

struct ClassResult {
  std::string class_name;
  std::size_t true_positive = 0;
  std::size_t false_negative = 0;
  std::size_t true_negative = 0;
  std::size_t false_positive = 0;

  std::size_t positive_support() const { return true_positive + false_negative; }
  std::size_t negative_support() const { return true_negative + false_positive; }
  double positive_accuracy() const {
    return positive_support() ? static_cast<double>(true_positive) / static_cast<double>(positive_support())
                              : std::numeric_limits<double>::quiet_NaN();
  }
  double negative_accuracy() const {
    return negative_support() ? static_cast<double>(true_negative) / static_cast<double>(negative_support())
                              : std::numeric_limits<double>::quiet_NaN();
  }
};

struct EvalReport {
  std::vector<ClassResult> rows;

  // Arithmetic mean over classes with a defined accuracy; NaN when none.
  double mean_positive_accuracy() const { return mean_of(&ClassResult::positive_accuracy); }
  double mean_negative_accuracy() const { return mean_of(&ClassResult::negative_accuracy); }

 private:
  double mean_of(double (ClassResult::*f)() const) const {
    double s = 0.0;
    std::size_t n = 0;
    for (const auto& r : rows) {
      const double v = (r.*f)();
      if (!std::isnan(v)) {
        s += v;
        ++n;
      }
    }
    return n ? s / static_cast<double>(n) : std::numeric_limits<double>::quiet_NaN();
  }
};

// Confusion counts for one action class from (truth, prediction) pairs.
inline ClassResult tally(const std::string& cls, std::span<const int> truth, std::span<const int> pred) {
  if (truth.size() != pred.size()) throw ShapeError("truth/prediction length mismatch");
  ClassResult r{cls};
  for (std::size_t i = 0; i < truth.size(); ++i) {
    if (truth[i]) (pred[i] ? r.true_positive : r.false_negative)++;
    else (pred[i] ? r.false_positive : r.true_negative)++;
  }
  return r;
}

enum class ReportFormat { Tsv, Json };

// TSV columns: class, positive_accuracy, negative_accuracy,
// positive_support, negative_support. Last row "mean" holds the class means
// and the summed supports; undefined values print as "-".
inline std::string report_emit(const EvalReport& report, ReportFormat format) {
  auto fmt = [](double v) {
    if (std::isnan(v)) return std::string("-");
    std::ostringstream ss;
    ss << std::fixed << std::setprecision(4) << v;
    return ss.str();
  };
  std::size_t pos_total = 0, neg_total = 0;
  for (const auto& r : report.rows) {
    pos_total += r.positive_support();
    neg_total += r.negative_support();
  }
  if (format == ReportFormat::Json) {
    auto num = [](double v) { return std::isnan(v) ? Json(nullptr) : Json(v); };
    Json doc{{"schema_version", kSchemaVersion}, {"kind", "eval_report"}, {"classes", Json::array()}};
    for (const auto& r : report.rows)
      doc["classes"].push_back({{"class", r.class_name},
                                {"positive_accuracy", num(r.positive_accuracy())},
                                {"negative_accuracy", num(r.negative_accuracy())},
                                {"positive_support", r.positive_support()},
                                {"negative_support", r.negative_support()}});
    doc["mean"] = {{"positive_accuracy", num(report.mean_positive_accuracy())},
                   {"negative_accuracy", num(report.mean_negative_accuracy())},
                   {"positive_support", pos_total},
                   {"negative_support", neg_total}};
    return doc.dump(2) + "\n";
  }
  std::ostringstream out;
  out << "class\tpositive_accuracy\tnegative_accuracy\tpositive_support\tnegative_support\n";
  for (const auto& r : report.rows)
    out << r.class_name << '\t' << fmt(r.positive_accuracy()) << '\t' << fmt(r.negative_accuracy())
        << '\t' << r.positive_support() << '\t' << r.negative_support() << '\n';
  out << "mean\t" << fmt(report.mean_positive_accuracy()) << '\t'
      << fmt(report.mean_negative_accuracy()) << '\t' << pos_total << '\t' << neg_total << '\n';
  return out.str();
}

// ---------------------------------------------------------------------------
// CSV artifacts

inline std::string format_double(double v) {
  std::ostringstream ss;
  ss << std::setprecision(17) << v;
  return ss.str();
}

inline std::string rows_to_csv(const std::vector<std::string>& header,
                               const std::vector<std::vector<double>>& rows) {
  std::ostringstream out;
  for (std::size_t i = 0; i < header.size(); ++i) out << (i ? "," : "") << header[i];
  out << '\n';
  for (const auto& r : rows) {
    if (r.size() != header.size()) throw ShapeError("CSV row length does not match header");
    for (std::size_t i = 0; i < r.size(); ++i) out << (i ? "," : "") << format_double(r[i]);
    out << '\n';
  }
  return out.str();
}

inline std::vector<std::vector<double>> csv_numeric_rows(const CsvTable& t) {
  std::vector<std::vector<double>> rows;
  for (const auto& r : t.rows) {
    std::vector<double> v;
    for (const auto& f : r) v.push_back(parse_double(f));
    rows.push_back(std::move(v));
  }
  return rows;
}

// One superpixel per row, one column per detector class.
inline void write_scores_csv(const std::filesystem::path& path, const ExampleMeasurements& x,
                             const std::vector<std::string>& class_names) {
  write_file_atomic(path, rows_to_csv(class_names, x));
}

inline ExampleMeasurements read_scores_csv(const std::filesystem::path& path) {
  const auto rows = csv_numeric_rows(read_csv(path));
  if (rows.empty()) throw FormatError(path.string() + ": scores file has no superpixels");
  return rows;
}

inline std::vector<std::string> default_state_names(std::size_t K) {
  std::vector<std::string> names;
  for (std::size_t k = 0; k < K; ++k) names.push_back("s" + std::to_string(k));
  return names;
}

// ---------------------------------------------------------------------------
// Image -> detector scores, cached on disk

using ScoreProvider = std::function<ExampleMeasurements(const std::filesystem::path&)>;

// Segments, describes and scores images with a fixed codebook and detector.
// Scores are cached per image under cache_dir (keyed by the image path) when
// a cache directory is configured. The detector is only read, never trained.
class PipelineScorer {
 public:
  explicit PipelineScorer(const PipelineConfig& cfg) : cfg_(cfg) {
    if (cfg.codebook_path.empty())
      throw ConfigError("codebook stage missing: set artifacts.codebook (run `actionrec codebook train`)");
    if (cfg.detector_path.empty())
      throw ConfigError("detector stage missing: set artifacts.detector (run `actionrec detector train`)");
    if (!std::filesystem::exists(cfg.codebook_path))
      throw ConfigError("codebook stage missing: " + cfg.codebook_path.string() + " does not exist");
    if (!std::filesystem::exists(cfg.detector_path))
      throw ConfigError("detector stage missing: " + cfg.detector_path.string() + " does not exist");
    book_ = codebook_from_json(load_json_file(cfg.codebook_path));
    detector_ = detector_from_json(load_json_file(cfg.detector_path));
    if (detector_.feature_dim != kAppearanceDim + book_.size())
      throw ConfigError("detector feature_dim does not match codebook size");
  }

  const DetectorModel& detector() const noexcept { return detector_; }

  ExampleMeasurements operator()(const std::filesystem::path& image) const {
    std::filesystem::path cached;
    if (!cfg_.cache_dir.empty()) {
      std::ostringstream key;
      key << std::hex << fnv1a64(std::filesystem::absolute(image).lexically_normal().string());
      cached = cfg_.cache_dir / (image.stem().string() + "_" + key.str() + ".scores.csv");
      if (std::filesystem::exists(cached)) return read_scores_csv(cached);
    }
    const ImageBuffer img = ensure_rgb(load_ppm(image));
    const SegmentLabelMap seg = segment(img, cfg_.segmentation);
    const auto descs = superpixel_descriptors(img, seg, book_, cfg_.dense);
    ExampleMeasurements x;
    for (const auto& d : descs) x.push_back(score(detector_, d));
    if (!cached.empty()) write_scores_csv(cached, x, detector_.class_names);
    return x;
  }

 private:
  PipelineConfig cfg_;
  Codebook book_;
  DetectorModel detector_;
};

// ---------------------------------------------------------------------------
// One-vs-rest protocol

// For every action class: sub-sample negatives, train a latent SSVM on the
// provider's score vectors, predict every test image and tally positive /
// negative accuracy. Classes run on up to cfg.jobs threads; results do not
// depend on the job count.
inline EvalReport run_protocol(const DatasetManifest& m, const PipelineConfig& cfg,
                               const ScoreProvider& provider) {
  validate_manifest(m);
  if (!provider) throw ConfigError("scoring stage missing: no score provider configured");

  std::map<std::filesystem::path, ExampleMeasurements> scores;
  for (const auto& e : m.entries) scores.emplace(e.path, provider(e.path));
  std::size_t K = 0;
  for (const auto& [_, x] : scores) {
    if (x.empty()) throw ValidationError("image produced no superpixels");
    if (K == 0) K = x.front().size();
  }

  std::vector<const ManifestEntry*> test;
  for (const auto& e : m.entries)
    if (e.split == "test") test.push_back(&e);

  EvalReport report;
  report.rows.resize(m.class_names.size());
  std::atomic<std::size_t> next{0};
  std::mutex error_mutex;
  std::exception_ptr error;
  auto worker = [&] {
    for (;;) {
      const std::size_t c = next++;
      if (c >= m.class_names.size()) return;
      try {
        const std::string& cls = m.class_names[c];
        const auto items = subsample_negatives(m, cls, cfg.negatives_per_class,
                                               derive_seed(cfg.seed, "protocol.negatives"));
        std::vector<ActionExample> data;
        for (const auto& it : items) data.push_back({scores.at(it.path), it.y});
        LssvmConfig acfg = cfg.action;
        acfg.seed = derive_seed(cfg.seed, "protocol.action/" + cls);
        const ActionModel model = train_lssvm(data, K, acfg);
        std::vector<int> truth, pred;
        const GreedyOptions opts{acfg.max_sweeps};
        for (const auto* e : test) {
          truth.push_back(e->class_name == cls ? 1 : 0);
          pred.push_back(infer_greedy(model, scores.at(e->path), opts).y);
        }
        report.rows[c] = tally(cls, truth, pred);
      } catch (...) {
        std::lock_guard lock(error_mutex);
        if (!error) error = std::current_exception();
        return;
      }
    }
  };
  const int jobs = std::max(1, std::min<int>(cfg.jobs, static_cast<int>(m.class_names.size())));
  if (jobs == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (int j = 0; j < jobs; ++j) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }
  if (error) std::rethrow_exception(error);
  return report;
}

inline Json manifest_to_json(const DatasetManifest& m, const std::filesystem::path& base) {
  Json doc{{"schema_version", kSchemaVersion}, {"kind", "dataset_manifest"}, {"classes", m.class_names}};
  doc["entries"] = Json::array();
  for (const auto& e : m.entries)
    doc["entries"].push_back({{"path", std::filesystem::relative(e.path, base).generic_string()},
                              {"class", e.class_name},
                              {"split", e.split}});
  return doc;
}

}  // namespace actionrec
