#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "actionrec/errors.hpp"
#include "actionrec/io.hpp"
#include "actionrec/rng.hpp"

namespace actionrec {

inline constexpr std::size_t kDetectorClasses = 23;

// Posterior over the K detector classes (a point on the simplex).
using ScoreVector = std::vector<double>;

struct LabeledSample {
  std::vector<double> features;
  int label = 0;
};

struct DetectorConfig {
  double C = 1.0;
  int epochs = 50;
  std::uint64_t seed = 0;
  bool standardize = true;  // per-dimension z-score fitted on the training set
  bool bias = false;        // append a constant-1 feature after standardization
  std::size_t num_classes = 0;  // 0: max label + 1
};

// Linear multiclass model. Row k of `weights` scores class k on the
// transformed feature vector (standardized, optionally with a trailing 1).
struct DetectorModel {
  std::size_t feature_dim = 0;
  std::vector<std::string> class_names;
  std::vector<std::vector<double>> weights;
  std::vector<double> mean;   // empty when standardization is off
  std::vector<double> scale;
  bool bias = false;

  std::size_t num_classes() const noexcept { return weights.size(); }

  std::vector<double> transform(std::span<const double> s) const {
    if (s.size() != feature_dim)
      throw ShapeError("feature length " + std::to_string(s.size()) + " != model dimension " +
                       std::to_string(feature_dim));
    std::vector<double> z(s.begin(), s.end());
    if (!mean.empty())
      for (std::size_t j = 0; j < z.size(); ++j) z[j] = (z[j] - mean[j]) / scale[j];
    if (bias) z.push_back(1.0);
    return z;
  }

  std::vector<double> logits(std::span<const double> s) const {
    const auto z = transform(s);
    std::vector<double> out(weights.size());
    for (std::size_t k = 0; k < weights.size(); ++k)
      out[k] = std::inner_product(z.begin(), z.end(), weights[k].begin(), 0.0);
    return out;
  }
};

// exp(l_k - m) / sum_j exp(l_j - m), m = max_k l_k.
inline ScoreVector softmax(std::span<const double> logits) {
  if (logits.empty()) throw ShapeError("softmax of an empty vector");
  const double m = *std::max_element(logits.begin(), logits.end());
  ScoreVector p(logits.size());
  double sum = 0.0;
  for (std::size_t k = 0; k < logits.size(); ++k) sum += (p[k] = std::exp(logits[k] - m));
  for (double& v : p) v /= sum;
  return p;
}

inline std::size_t argmax_lowest(std::span<const double> v) {
  std::size_t best = 0;
  for (std::size_t k = 1; k < v.size(); ++k)
    if (v[k] > v[best]) best = k;
  return best;
}

inline ScoreVector score(const DetectorModel& model, std::span<const double> s) {
  return softmax(model.logits(s));
}

inline std::size_t predict_class(const DetectorModel& model, std::span<const double> s) {
  return argmax_lowest(score(model, s));
}

namespace detail {

inline double dot(std::span<const double> a, std::span<const double> b) {
  return std::inner_product(a.begin(), a.end(), b.begin(), 0.0);
}

// Crammer-Singer slack of one (transformed) sample:
// max_k (1[k != y] + w_k.z) - w_y.z, together with the maximizing k.
inline std::pair<double, std::size_t> cs_violation(const std::vector<std::vector<double>>& w,
                                                   std::span<const double> z, std::size_t y) {
  const double own = dot(w[y], z);
  double best = 0.0;  // k = y contributes exactly 0
  std::size_t arg = y;
  for (std::size_t k = 0; k < w.size(); ++k) {
    if (k == y) continue;
    const double v = 1.0 + dot(w[k], z) - own;
    if (v > best) {
      best = v;
      arg = k;
    }
  }
  return {best, arg};
}

}  // namespace detail

// 1/2 ||W||^2 + C sum_i xi_i on the model's transformed features.
inline double multiclass_objective(const DetectorModel& model, std::span<const LabeledSample> samples,
                                   double C) {
  double reg = 0.0;
  for (const auto& row : model.weights) reg += detail::dot(row, row);
  double slack = 0.0;
  for (const auto& s : samples)
    slack += detail::cs_violation(model.weights, model.transform(s.features),
                                  static_cast<std::size_t>(s.label))
                 .first;
  return 0.5 * reg + C * slack;
}

// Crammer-Singer multiclass SVM trained by stochastic subgradient descent on
// the primal (step 1/(lambda t), lambda = 1/(C N), projection onto the
// 1/sqrt(lambda) ball). Returns the average of the iterates from the second
// half of the run. The visiting order is a seeded shuffle per epoch.
inline DetectorModel train_multiclass(std::span<const LabeledSample> samples,
                                      const DetectorConfig& config,
                                      std::vector<std::string> class_names = {}) {
  if (samples.empty()) throw DegenerateDataError("no training samples");
  if (!(config.C > 0)) throw DomainError("C must be > 0");
  if (config.epochs < 1) throw DomainError("epochs must be >= 1");
  const std::size_t dim = samples.front().features.size();
  int max_label = -1;
  std::vector<int> seen;
  for (const auto& s : samples) {
    if (s.features.size() != dim) throw ShapeError("inconsistent feature lengths");
    if (s.label < 0) throw DomainError("negative class id");
    max_label = std::max(max_label, s.label);
    if (std::find(seen.begin(), seen.end(), s.label) == seen.end()) seen.push_back(s.label);
  }
  if (seen.size() < 2) throw DegenerateDataError("multiclass training needs at least two classes");
  const std::size_t K = config.num_classes ? config.num_classes : static_cast<std::size_t>(max_label) + 1;
  if (static_cast<std::size_t>(max_label) >= K) throw DomainError("class id exceeds num_classes");
  if (class_names.empty())
    for (std::size_t k = 0; k < K; ++k) class_names.push_back("class" + std::to_string(k));
  if (class_names.size() != K) throw ShapeError("class_names size does not match class count");

  DetectorModel model;
  model.feature_dim = dim;
  model.class_names = std::move(class_names);
  model.bias = config.bias;
  if (config.standardize) {
    model.mean.assign(dim, 0.0);
    model.scale.assign(dim, 0.0);
    for (const auto& s : samples)
      for (std::size_t j = 0; j < dim; ++j) model.mean[j] += s.features[j];
    for (double& m : model.mean) m /= static_cast<double>(samples.size());
    for (const auto& s : samples)
      for (std::size_t j = 0; j < dim; ++j) {
        const double d = s.features[j] - model.mean[j];
        model.scale[j] += d * d;
      }
    for (double& v : model.scale) {
      v = std::sqrt(v / static_cast<double>(samples.size()));
      if (!(v > 1e-12)) v = 1.0;
    }
  }
  const std::size_t zdim = dim + (config.bias ? 1 : 0);
  model.weights.assign(K, std::vector<double>(zdim, 0.0));

  std::vector<std::vector<double>> z(samples.size());
  for (std::size_t i = 0; i < samples.size(); ++i) z[i] = model.transform(samples[i].features);

  const std::size_t n = samples.size();
  const double lambda = 1.0 / (config.C * static_cast<double>(n));
  const double radius = 1.0 / std::sqrt(lambda);
  const std::uint64_t total_steps = static_cast<std::uint64_t>(config.epochs) * n;
  const std::uint64_t average_from = total_steps / 2 + 1;
  auto& w = model.weights;
  std::vector<std::vector<double>> avg(K, std::vector<double>(zdim, 0.0));
  std::uint64_t averaged = 0;

  Rng rng(derive_seed(config.seed, "detector.order"));
  std::vector<std::size_t> order(n);
  std::uint64_t t = 0;
  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    std::iota(order.begin(), order.end(), std::size_t{0});
    shuffle(order.begin(), order.end(), rng);
    for (std::size_t i : order) {
      ++t;
      const double eta = 1.0 / (lambda * static_cast<double>(t));
      const auto y = static_cast<std::size_t>(samples[i].label);
      const auto [viol, k] = detail::cs_violation(w, z[i], y);
      const double shrink = 1.0 - eta * lambda;
      for (auto& row : w)
        for (double& v : row) v *= shrink;
      if (viol > 0 && k != y) {
        for (std::size_t j = 0; j < zdim; ++j) {
          w[y][j] += eta * z[i][j];
          w[k][j] -= eta * z[i][j];
        }
      }
      double norm2 = 0.0;
      for (const auto& row : w) norm2 += detail::dot(row, row);
      if (norm2 > radius * radius) {
        const double f = radius / std::sqrt(norm2);
        for (auto& row : w)
          for (double& v : row) v *= f;
      }
      if (t >= average_from) {
        ++averaged;
        const double a = 1.0 / static_cast<double>(averaged);
        for (std::size_t c = 0; c < K; ++c)
          for (std::size_t j = 0; j < zdim; ++j) avg[c][j] += a * (w[c][j] - avg[c][j]);
      }
    }
  }
  model.weights = std::move(avg);
  return model;
}

inline Json detector_to_json(const DetectorModel& model) {
  Json doc;
  doc["schema_version"] = kSchemaVersion;
  doc["kind"] = "detector";
  doc["K"] = model.num_classes();
  doc["feature_dim"] = model.feature_dim;
  doc["class_names"] = model.class_names;
  doc["bias"] = model.bias;
  doc["weights"] = model.weights;
  doc["standardization"] = {{"mean", model.mean}, {"scale", model.scale}};
  return doc;
}

inline DetectorModel detector_from_json(const Json& doc) {
  check_schema(doc, "detector");
  DetectorModel m;
  m.feature_dim = doc.at("feature_dim").get<std::size_t>();
  m.class_names = doc.at("class_names").get<std::vector<std::string>>();
  m.bias = doc.at("bias").get<bool>();
  m.weights = doc.at("weights").get<std::vector<std::vector<double>>>();
  m.mean = doc.at("standardization").at("mean").get<std::vector<double>>();
  m.scale = doc.at("standardization").at("scale").get<std::vector<double>>();
  const std::size_t zdim = m.feature_dim + (m.bias ? 1 : 0);
  if (m.weights.size() != doc.at("K").get<std::size_t>() || m.class_names.size() != m.weights.size())
    throw FormatError("detector: K, class_names and weights disagree");
  for (const auto& row : m.weights) {
    if (row.size() != zdim) throw FormatError("detector: weight row has wrong length");
    for (double v : row)
      if (!std::isfinite(v)) throw FormatError("detector: non-finite weight");
  }
  if (!m.mean.empty() && (m.mean.size() != m.feature_dim || m.scale.size() != m.feature_dim))
    throw FormatError("detector: standardization vectors have wrong length");
  return m;
}

}  // namespace actionrec
