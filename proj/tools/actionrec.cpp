#include <CLI11.hpp>

#include <algorithm>
#include <filesystem>
#include <iostream>
#include <map>
#include <optional>

#include "actionrec.hpp"

namespace fs = std::filesystem;
using namespace actionrec;

namespace {

struct Globals {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::optional<int> jobs;
};

PipelineConfig resolve_config(const Globals& g) {
  PipelineConfig cfg = g.config.empty() ? PipelineConfig{} : load_config(g.config);
  if (g.seed) cfg.seed = *g.seed;
  if (g.jobs) cfg.jobs = *g.jobs;
  return cfg;
}

std::uint64_t pick_seed(const std::optional<std::uint64_t>& local, const PipelineConfig& cfg) {
  return local ? *local : cfg.seed;
}

std::vector<fs::path> list_images(const fs::path& dir) {
  if (!fs::is_directory(dir)) throw IoError(dir.string() + " is not a directory");
  std::vector<fs::path> out;
  for (const auto& e : fs::recursive_directory_iterator(dir))
    if (e.is_regular_file() && e.path().extension() == ".ppm") out.push_back(e.path());
  std::sort(out.begin(), out.end());
  return out;
}

void write_json(const fs::path& out, const Json& doc) { write_file_atomic(out, doc.dump(1) + "\n"); }

// Labels CSV: a "label" column holding class names or integer class ids.
std::pair<std::vector<int>, std::vector<std::string>> read_class_labels(const fs::path& path) {
  const auto t = read_csv(path);
  const auto it = std::find(t.header.begin(), t.header.end(), "label");
  if (it == t.header.end()) throw FormatError(path.string() + ": missing 'label' column");
  const auto col = static_cast<std::size_t>(it - t.header.begin());
  bool numeric = true;
  for (const auto& r : t.rows)
    numeric = numeric && !r[col].empty() &&
              std::all_of(r[col].begin(), r[col].end(), [](char c) { return c >= '0' && c <= '9'; });
  std::vector<int> labels;
  std::vector<std::string> names;
  if (numeric) {
    int top = -1;
    for (const auto& r : t.rows) {
      labels.push_back(std::stoi(r[col]));
      top = std::max(top, labels.back());
    }
    for (int k = 0; k <= top; ++k) names.push_back("class" + std::to_string(k));
  } else {
    std::set<std::string> uniq;
    for (const auto& r : t.rows) uniq.insert(r[col]);
    names.assign(uniq.begin(), uniq.end());
    for (const auto& r : t.rows)
      labels.push_back(static_cast<int>(std::lower_bound(names.begin(), names.end(), r[col]) - names.begin()));
  }
  return {labels, names};
}

// Labels CSV for action training: columns "file" (relative to the scores
// directory) and "y" (0 or 1).
std::vector<ActionExample> read_action_examples(const fs::path& scores_dir, const fs::path& labels) {
  const auto t = read_csv(labels);
  auto col = [&](const char* name) {
    const auto it = std::find(t.header.begin(), t.header.end(), name);
    if (it == t.header.end()) throw FormatError(labels.string() + ": missing '" + name + "' column");
    return static_cast<std::size_t>(it - t.header.begin());
  };
  const auto fc = col("file"), yc = col("y");
  std::vector<ActionExample> data;
  for (const auto& r : t.rows) {
    const int y = static_cast<int>(parse_double(r[yc]));
    if (y != 0 && y != 1) throw ValidationError(labels.string() + ": y must be 0 or 1");
    data.push_back({read_scores_csv(scores_dir / r[fc]), y});
  }
  if (data.empty()) throw ValidationError(labels.string() + ": no examples");
  return data;
}

std::string join(const std::vector<int>& v) {
  std::string s;
  for (std::size_t i = 0; i < v.size(); ++i) s += (i ? " " : "") + std::to_string(v[i]);
  return s;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Still-image action recognition with latent structural SVMs"};
  app.require_subcommand(1);
  Globals g;
  app.add_option("--config", g.config, "JSON config text or path to a JSON file");
  app.add_option("--seed", g.seed, "Global seed");
  app.add_option("--jobs", g.jobs, "Worker threads")->check(CLI::PositiveNumber);

  // segment
  auto* seg_cmd = app.add_subcommand("segment", "Over-segment a PPM image into superpixels");
  fs::path seg_input, seg_out;
  std::optional<double> seg_sigma, seg_k;
  std::optional<int> seg_min;
  seg_cmd->add_option("--input", seg_input)->required();
  seg_cmd->add_option("--sigma", seg_sigma);
  seg_cmd->add_option("--k", seg_k);
  seg_cmd->add_option("--min-size", seg_min);
  seg_cmd->add_option("--out", seg_out)->required();

  // codebook train
  auto* cb_cmd = app.add_subcommand("codebook", "Codebook operations");
  cb_cmd->require_subcommand(1);
  auto* cb_train = cb_cmd->add_subcommand("train", "Cluster dense descriptors into visual words");
  fs::path cb_images, cb_out;
  std::optional<std::uint64_t> cb_seed;
  std::optional<std::size_t> cb_size;
  cb_train->add_option("--images", cb_images)->required();
  cb_train->add_option("--seed", cb_seed);
  cb_train->add_option("--size", cb_size, "Number of visual words");
  cb_train->add_option("--out", cb_out)->required();

  // features extract
  auto* ft_cmd = app.add_subcommand("features", "Superpixel descriptors");
  ft_cmd->require_subcommand(1);
  auto* ft_extract = ft_cmd->add_subcommand("extract", "Write one descriptor row per superpixel");
  fs::path ft_image, ft_seg, ft_book, ft_out;
  ft_extract->add_option("--image", ft_image)->required();
  ft_extract->add_option("--seg", ft_seg)->required();
  ft_extract->add_option("--codebook", ft_book)->required();
  ft_extract->add_option("--out", ft_out)->required();

  // detector train / score
  auto* det_cmd = app.add_subcommand("detector", "Superpixel class detector");
  det_cmd->require_subcommand(1);
  auto* det_train = det_cmd->add_subcommand("train", "Train the multiclass detector");
  fs::path det_features, det_labels, det_out, det_model;
  std::optional<double> det_C;
  std::optional<std::uint64_t> det_seed;
  det_train->add_option("--features", det_features)->required();
  det_train->add_option("--labels", det_labels)->required();
  det_train->add_option("--C", det_C)->check(CLI::PositiveNumber);
  det_train->add_option("--seed", det_seed);
  det_train->add_option("--out", det_out)->required();
  auto* det_score = det_cmd->add_subcommand("score", "Class posteriors for each feature row");
  det_score->add_option("--features", det_features)->required();
  det_score->add_option("--model", det_model)->required();
  det_score->add_option("--out", det_out)->required();

  // action train / infer
  auto* act_cmd = app.add_subcommand("action", "Latent structural action model");
  act_cmd->require_subcommand(1);
  auto* act_train = act_cmd->add_subcommand("train", "Train with CCCP");
  fs::path act_scores, act_labels, act_out, act_model;
  std::optional<double> act_C;
  std::optional<std::uint64_t> act_seed;
  act_train->add_option("--scores", act_scores, "Directory of per-image score CSVs")->required();
  act_train->add_option("--labels", act_labels, "CSV with columns file,y")->required();
  act_train->add_option("--C", act_C)->check(CLI::PositiveNumber);
  act_train->add_option("--seed", act_seed);
  bool act_normalize = false;
  act_train->add_flag("--normalize-pairs", act_normalize, "Divide the pairwise block by T-1");
  act_train->add_option("--out", act_out)->required();
  auto* act_infer = act_cmd->add_subcommand("infer", "Predict y and latent states for one image");
  act_infer->add_option("--scores", act_scores, "Per-image score CSV")->required();
  act_infer->add_option("--model", act_model)->required();

  // protocol
  auto* pr_cmd = app.add_subcommand("protocol", "One-vs-rest train/test evaluation");
  fs::path pr_root, pr_manifest, pr_scores, pr_report;
  std::string pr_format = "tsv";
  std::optional<std::size_t> pr_negatives;
  pr_cmd->add_option("--root", pr_root, "Dataset root (one folder per class)");
  pr_cmd->add_option("--manifest", pr_manifest, "Dataset manifest JSON");
  pr_cmd->add_option("--scores", pr_scores, "Precomputed score CSVs mirroring the dataset tree");
  pr_cmd->add_option("--negatives-per-class", pr_negatives);
  pr_cmd->add_option("--format", pr_format)->check(CLI::IsMember({"tsv", "json"}));
  pr_cmd->add_option("--report", pr_report, "Report path (stdout when omitted)");

  // synth
  auto* sy_cmd = app.add_subcommand("synth", "Generate a synthetic scores corpus");
  SynthConfig sy;
  fs::path sy_out;
  std::optional<std::uint64_t> sy_seed;
  sy_cmd->add_option("--K", sy.K);
  sy_cmd->add_option("--N", sy.N);
  sy_cmd->add_option("--t-min", sy.t_min);
  sy_cmd->add_option("--t-max", sy.t_max);
  sy_cmd->add_option("--noise", sy.noise);
  sy_cmd->add_option("--seed", sy_seed);
  sy_cmd->add_option("--out", sy_out)->required();

  CLI11_PARSE(app, argc, argv);

  try {
    const PipelineConfig cfg = resolve_config(g);

    if (*seg_cmd) {
      SegmentationParams p = cfg.segmentation;
      if (seg_sigma) p.sigma = *seg_sigma;
      if (seg_k) p.k = *seg_k;
      if (seg_min) p.min_size = *seg_min;
      const auto labels = segment(ensure_rgb(load_ppm(seg_input)), p);
      save_label_pgm(labels, seg_out);
      std::cout << "superpixels " << labels.count << "\n";
    } else if (*cb_train) {
      std::vector<DenseGradientDescriptor> all;
      for (const auto& p : list_images(cb_images)) {
        auto d = dense_descriptors(ensure_rgb(load_ppm(p)), cfg.dense);
        for (auto& v : d)
          if (!v.is_zero()) all.push_back(std::move(v));
      }
      const std::uint64_t seed = pick_seed(cb_seed, cfg);
      if (all.size() > cfg.codebook_max_descriptors) {
        Rng rng(derive_seed(seed, "codebook.subsample"));
        shuffle(all.begin(), all.end(), rng);
        all.resize(cfg.codebook_max_descriptors);
      }
      const auto book = train_codebook(all, derive_seed(seed, "codebook.kmeans"),
                                       cb_size.value_or(cfg.codebook_size), cfg.codebook_iterations);
      write_json(cb_out, codebook_to_json(book));
      std::cout << "codebook " << book.size() << " words from " << all.size() << " descriptors\n";
    } else if (*ft_extract) {
      const auto img = ensure_rgb(load_ppm(ft_image));
      const auto seg = load_label_pgm(ft_seg);
      const auto book = codebook_from_json(load_json_file(ft_book));
      const auto rows = superpixel_descriptors(img, seg, book, cfg.dense);
      write_file_atomic(ft_out, rows_to_csv(descriptor_column_names(book.size()), rows));
    } else if (*det_train) {
      const auto table = read_csv(det_features);
      const auto feats = csv_numeric_rows(table);
      const auto [labels, names] = read_class_labels(det_labels);
      if (labels.size() != feats.size())
        throw ShapeError("features has " + std::to_string(feats.size()) + " rows, labels has " +
                         std::to_string(labels.size()));
      std::vector<LabeledSample> samples;
      for (std::size_t i = 0; i < feats.size(); ++i) samples.push_back({feats[i], labels[i]});
      DetectorConfig dc = cfg.detector;
      if (det_C) dc.C = *det_C;
      dc.seed = derive_seed(pick_seed(det_seed, cfg), "detector");
      write_json(det_out, detector_to_json(train_multiclass(samples, dc, names)));
    } else if (*det_score) {
      const auto model = detector_from_json(load_json_file(det_model));
      std::vector<std::vector<double>> out;
      for (const auto& f : csv_numeric_rows(read_csv(det_features))) out.push_back(score(model, f));
      write_file_atomic(det_out, rows_to_csv(model.class_names, out));
    } else if (*act_train) {
      const auto data = read_action_examples(act_scores, act_labels);
      LssvmConfig ac = cfg.action;
      if (act_C) ac.C = *act_C;
      if (act_normalize) ac.normalize_pairs = true;
      ac.seed = derive_seed(pick_seed(act_seed, cfg), "action");
      TrainingTrace trace;
      const auto model = train_lssvm(data, data.front().x.front().size(), ac, &trace);
      write_json(act_out, action_model_to_json(model));
      std::cout << "rounds " << trace.rounds << " risk " << format_double(trace.risk.back()) << "\n";
    } else if (*act_infer) {
      const auto model = action_model_from_json(load_json_file(act_model));
      const auto r = infer_greedy(model, read_scores_csv(act_scores), GreedyOptions{cfg.action.max_sweeps});
      std::cout << "y " << r.y << "\nh " << join(r.h) << "\nscore " << format_double(r.score) << "\n";
    } else if (*pr_cmd) {
      if (pr_root.empty() == pr_manifest.empty())
        throw ConfigError("protocol needs exactly one of --root or --manifest");
      const fs::path base = pr_root.empty() ? pr_manifest.parent_path() : pr_root;
      const DatasetManifest m = pr_root.empty() ? ingest(pr_manifest, DatasetLayout::ManifestFile)
                                                : ingest(pr_root, DatasetLayout::FolderPerClass);
      for (const auto& w : m.warnings) std::cerr << "warning: " << w << "\n";
      PipelineConfig pc = cfg;
      if (pr_negatives) pc.negatives_per_class = *pr_negatives;
      ScoreProvider provider;
      if (!pr_scores.empty()) {
        provider = [&](const fs::path& p) {
          return read_scores_csv(pr_scores / fs::relative(p, base).replace_extension(".csv"));
        };
      } else {
        provider = PipelineScorer(pc);
      }
      const auto text =
          report_emit(run_protocol(m, pc, provider), pr_format == "json" ? ReportFormat::Json : ReportFormat::Tsv);
      if (pr_report.empty()) std::cout << text;
      else write_file_atomic(pr_report, text);
    } else if (*sy_cmd) {
      if (sy_seed || g.seed) sy.seed = pick_seed(sy_seed, cfg);
      const auto data = synth_generate(sy);
      fs::create_directories(sy_out);
      const auto names = default_state_names(sy.K);
      std::string labels = "file,y\n";
      for (std::size_t i = 0; i < data.examples.size(); ++i) {
        char file[32];
        std::snprintf(file, sizeof file, "ex%05zu.csv", i);
        write_scores_csv(sy_out / file, data.examples[i].x, names);
        labels += std::string(file) + "," + std::to_string(data.examples[i].y) + "\n";
      }
      write_file_atomic(sy_out / "labels.csv", labels);
      std::cout << "examples " << data.examples.size() << "\n";
    }
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
