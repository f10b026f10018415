#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "actionrec/detector.hpp"
#include "actionrec/errors.hpp"
#include "actionrec/io.hpp"
#include "actionrec/rng.hpp"

// Latent structural SVM over superpixel states.
//
// States and action labels are 0-based throughout: a superpixel state j is in
// [0, K) and corresponds to class j+1 in 1-based notation; the action label y
// is 0 or 1. The parameter / feature vector has three blocks:
//
//   [0, K^2)             measurement: x^t placed at offset K*j for state j
//   [K^2, 2K^2)          state: ordered pair (j, k) counted at K^2 + K*j + k
//   [2K^2, 2K^2 + 2K)    class: (y, j) counted at 2K^2 + K*y + j
//
// The state block sums over ordered pairs (t, u), u != t, so each unordered
// pair contributes twice. With normalize_pairs it is divided by (T - 1).

namespace actionrec {

using ExampleMeasurements = std::vector<ScoreVector>;
using LatentAssignment = std::vector<int>;

inline std::size_t joint_feature_dim(std::size_t K) { return 2 * K * K + 2 * K; }

struct ActionModel {
  std::size_t K = 0;
  std::vector<double> w;  // joint_feature_dim(K)
  bool normalize_pairs = false;
  Json metadata = Json::object();

  ActionModel() = default;
  explicit ActionModel(std::size_t num_states, bool normalize = false)
      : K(num_states), w(joint_feature_dim(num_states), 0.0), normalize_pairs(normalize) {}

  std::size_t state_offset() const noexcept { return K * K; }
  std::size_t class_offset() const noexcept { return 2 * K * K; }

  std::span<const double> measurement_block() const { return std::span(w).subspan(0, K * K); }
  std::span<const double> state_block() const { return std::span(w).subspan(K * K, K * K); }
  std::span<const double> class_block() const { return std::span(w).subspan(2 * K * K, 2 * K); }
  std::span<double> measurement_block() { return std::span(w).subspan(0, K * K); }
  std::span<double> state_block() { return std::span(w).subspan(K * K, K * K); }
  std::span<double> class_block() { return std::span(w).subspan(2 * K * K, 2 * K); }
};

struct InferenceResult {
  int y = 0;
  LatentAssignment h;
  double score = 0.0;
  int sweeps = 0;  // greedy sweeps performed for the returned y
};

namespace detail {

inline void check_state(int j, std::size_t K) {
  if (j < 0 || static_cast<std::size_t>(j) >= K)
    throw DomainError("state " + std::to_string(j) + " outside [0, " + std::to_string(K) + ")");
}

inline void check_label(int y) {
  if (y != 0 && y != 1) throw DomainError("action label must be 0 or 1");
}

inline void check_measurements(const ExampleMeasurements& x, std::size_t K) {
  if (x.empty()) throw ShapeError("example has no superpixels");
  for (const auto& xt : x)
    if (xt.size() != K)
      throw ShapeError("score vector length " + std::to_string(xt.size()) + " != K " +
                       std::to_string(K));
}

inline double pair_scale(const ActionModel& m, std::size_t T) {
  return m.normalize_pairs && T > 1 ? 1.0 / static_cast<double>(T - 1) : 1.0;
}

}  // namespace detail

// Measurement feature: x_t copied to [K*j, K*j + K).
inline std::vector<double> feature_measurement(std::span<const double> x_t, int j) {
  const std::size_t K = x_t.size();
  detail::check_state(j, K);
  std::vector<double> f(K * K, 0.0);
  std::copy(x_t.begin(), x_t.end(), f.begin() + static_cast<std::ptrdiff_t>(K * j));
  return f;
}

// State co-occurrence feature: one-hot at K*j + k.
inline std::vector<double> feature_state(int j, int k, std::size_t K) {
  detail::check_state(j, K);
  detail::check_state(k, K);
  std::vector<double> f(K * K, 0.0);
  f[K * j + k] = 1.0;
  return f;
}

// Action-state feature: one-hot at K*y + j.
inline std::vector<double> feature_class(int y, int j, std::size_t K) {
  detail::check_label(y);
  detail::check_state(j, K);
  std::vector<double> f(2 * K, 0.0);
  f.at(K * static_cast<std::size_t>(y) + static_cast<std::size_t>(j)) = 1.0;
  return f;
}

inline std::vector<double> joint_feature(const ExampleMeasurements& x, const LatentAssignment& h,
                                         int y, std::size_t K, bool normalize_pairs = false) {
  detail::check_measurements(x, K);
  detail::check_label(y);
  if (h.size() != x.size()) throw ShapeError("latent assignment length does not match T");
  for (int j : h) detail::check_state(j, K);
  const std::size_t T = x.size();
  std::vector<double> psi(joint_feature_dim(K), 0.0);
  std::vector<std::size_t> counts(K, 0);
  for (std::size_t t = 0; t < T; ++t) {
    const auto j = static_cast<std::size_t>(h[t]);
    for (std::size_t k = 0; k < K; ++k) psi[K * j + k] += x[t][k];
    psi[2 * K * K + K * y + j] += 1.0;
    ++counts[j];
  }
  const double ps = normalize_pairs && T > 1 ? 1.0 / static_cast<double>(T - 1) : 1.0;
  for (std::size_t j = 0; j < K; ++j)
    for (std::size_t k = 0; k < K; ++k) {
      const std::size_t pairs = j == k ? counts[j] * (counts[j] ? counts[j] - 1 : 0) : counts[j] * counts[k];
      psi[K * K + K * j + k] = ps * static_cast<double>(pairs);
    }
  return psi;
}

// Direct accumulation of the three score sums (measurement, ordered state
// pairs, action-state) without building the joint feature vector.
inline double score(const ActionModel& model, const ExampleMeasurements& x,
                    const LatentAssignment& h, int y) {
  const std::size_t K = model.K;
  detail::check_measurements(x, K);
  detail::check_label(y);
  if (h.size() != x.size()) throw ShapeError("latent assignment length does not match T");
  const std::size_t T = x.size();
  const auto wm = model.measurement_block();
  const auto ws = model.state_block();
  const auto wc = model.class_block();
  double meas = 0.0, pair = 0.0, cls = 0.0;
  for (std::size_t t = 0; t < T; ++t) {
    const auto j = static_cast<std::size_t>(h[t]);
    for (std::size_t k = 0; k < K; ++k) meas += wm[K * j + k] * x[t][k];
    for (std::size_t u = 0; u < T; ++u)
      if (u != t) pair += ws[K * j + static_cast<std::size_t>(h[u])];
    cls += wc[K * static_cast<std::size_t>(y) + j];
  }
  return meas + detail::pair_scale(model, T) * pair + cls;
}

// h^t = argmax_k x^t_k, ties to the lowest index.
inline LatentAssignment init_latent(const ExampleMeasurements& x) {
  LatentAssignment h(x.size());
  for (std::size_t t = 0; t < x.size(); ++t) h[t] = static_cast<int>(argmax_lowest(x[t]));
  return h;
}

struct GreedyOptions {
  int max_sweeps = 50;
};

namespace detail {

// Per-superpixel unary scores: measurement term for every state.
inline std::vector<double> unary_table(const ActionModel& m, const ExampleMeasurements& x) {
  const std::size_t K = m.K, T = x.size();
  const auto wm = m.measurement_block();
  std::vector<double> u(T * K, 0.0);
  for (std::size_t t = 0; t < T; ++t)
    for (std::size_t j = 0; j < K; ++j) {
      double s = 0.0;
      for (std::size_t k = 0; k < K; ++k) s += wm[K * j + k] * x[t][k];
      u[t * K + j] = s;
    }
  return u;
}

}  // namespace detail

// Coordinate ascent over the states with the action label fixed to y.
// Without a starting point each state starts at the argmax of its
// measurement + action-state terms. Sweeps visit superpixels in ascending
// order; a state moves only on a strict improvement (lowest index among the
// best), so the score never decreases.
inline InferenceResult infer_greedy_for_label(const ActionModel& model, const ExampleMeasurements& x,
                                              int y, const LatentAssignment* start = nullptr,
                                              const GreedyOptions& opts = {}) {
  const std::size_t K = model.K;
  detail::check_measurements(x, K);
  detail::check_label(y);
  const std::size_t T = x.size();
  const auto unary = detail::unary_table(model, x);
  const auto ws = model.state_block();
  const auto wc = model.class_block();
  const double ps = detail::pair_scale(model, T);

  InferenceResult r;
  r.y = y;
  if (start) {
    if (start->size() != T) throw ShapeError("starting assignment length does not match T");
    for (int j : *start) detail::check_state(j, K);
    r.h = *start;
  } else {
    r.h.resize(T);
    for (std::size_t t = 0; t < T; ++t) {
      std::size_t best = 0;
      double best_v = unary[t * K] + wc[K * y];
      for (std::size_t j = 1; j < K; ++j) {
        const double v = unary[t * K + j] + wc[K * y + j];
        if (v > best_v) {
          best_v = v;
          best = j;
        }
      }
      r.h[t] = static_cast<int>(best);
    }
  }

  std::vector<std::size_t> counts(K, 0);
  for (int j : r.h) ++counts[static_cast<std::size_t>(j)];
  auto local = [&](std::size_t t, std::size_t j) {
    const auto cur = static_cast<std::size_t>(r.h[t]);
    double pair = 0.0;
    for (std::size_t s = 0; s < K; ++s) {
      const std::size_t c = counts[s] - (s == cur ? 1 : 0);
      if (c) pair += static_cast<double>(c) * (ws[K * j + s] + ws[K * s + j]);
    }
    return unary[t * K + j] + wc[K * y + j] + ps * pair;
  };

  for (int sweep = 0; sweep < opts.max_sweeps; ++sweep) {
    ++r.sweeps;
    bool changed = false;
    for (std::size_t t = 0; t < T; ++t) {
      const auto cur = static_cast<std::size_t>(r.h[t]);
      std::size_t best = cur;
      double best_v = local(t, cur);
      for (std::size_t j = 0; j < K; ++j) {
        if (j == cur) continue;
        const double v = local(t, j);
        if (v > best_v) {
          best_v = v;
          best = j;
        }
      }
      if (best != cur) {
        --counts[cur];
        ++counts[best];
        r.h[t] = static_cast<int>(best);
        changed = true;
      }
    }
    if (!changed) break;
  }
  r.score = score(model, x, r.h, y);
  return r;
}

namespace detail {

inline InferenceResult pick_label(InferenceResult r0, InferenceResult r1, double bonus0,
                                  double bonus1) {
  r0.score += bonus0;
  r1.score += bonus1;
  return r1.score > r0.score ? r1 : r0;
}

}  // namespace detail

// Greedy MAP over (y, h): both action labels are tried and the higher score
// wins, ties to y = 0.
inline InferenceResult infer_greedy(const ActionModel& model, const ExampleMeasurements& x,
                                    const GreedyOptions& opts = {}) {
  return detail::pick_label(infer_greedy_for_label(model, x, 0, nullptr, opts),
                            infer_greedy_for_label(model, x, 1, nullptr, opts), 0.0, 0.0);
}

// Greedy inference with the 0-1 loss added: the label different from y_gt
// gets +1. The returned score includes the loss.
inline InferenceResult infer_loss_augmented(const ActionModel& model, const ExampleMeasurements& x,
                                            int y_gt, const GreedyOptions& opts = {}) {
  detail::check_label(y_gt);
  return detail::pick_label(infer_greedy_for_label(model, x, 0, nullptr, opts),
                            infer_greedy_for_label(model, x, 1, nullptr, opts),
                            y_gt == 0 ? 0.0 : 1.0, y_gt == 1 ? 0.0 : 1.0);
}

inline constexpr double kMaxExactAssignments = 1e7;

// Exhaustive maximization, optionally loss-augmented against y_gt. Labels are
// visited y = 0 first and assignments in lexicographic order, keeping only
// strict improvements, which reproduces the greedy tie rules.
inline InferenceResult infer_exact(const ActionModel& model, const ExampleMeasurements& x,
                                   std::optional<int> y_gt = std::nullopt) {
  const std::size_t K = model.K;
  detail::check_measurements(x, K);
  if (y_gt) detail::check_label(*y_gt);
  const std::size_t T = x.size();
  if (std::pow(static_cast<double>(K), static_cast<double>(T)) * 2.0 > kMaxExactAssignments)
    throw CapacityError("exact inference limited to K^T * 2 <= 1e7 assignments");

  InferenceResult best;
  bool have = false;
  LatentAssignment h(T, 0);
  for (int y = 0; y <= 1; ++y) {
    const double loss = y_gt && *y_gt != y ? 1.0 : 0.0;
    std::fill(h.begin(), h.end(), 0);
    for (;;) {
      const double s = score(model, x, h, y) + loss;
      if (!have || s > best.score) {
        best.y = y;
        best.h = h;
        best.score = s;
        have = true;
      }
      std::size_t pos = T;
      while (pos > 0) {
        --pos;
        if (static_cast<std::size_t>(++h[pos]) < K) break;
        h[pos] = 0;
        if (pos == 0) {
          pos = T;  // wrapped
          break;
        }
      }
      if (pos == T) break;
    }
  }
  return best;
}

struct ActionExample {
  ExampleMeasurements x;
  int y = 0;
};

struct LssvmConfig {
  double C = 1.0;
  int epochs = 50;       // inner solver passes per CCCP round
  int max_rounds = 10;   // CCCP rounds
  int max_sweeps = 50;   // greedy sweeps per inference call
  std::uint64_t seed = 0;
  bool normalize_pairs = false;
  double risk_tolerance = 1e-3;
};

struct TrainingTrace {
  std::vector<double> risk;                       // regularized risk after each round
  std::vector<std::vector<LatentAssignment>> latent;  // assignments used to train each round
  std::vector<std::size_t> latent_changes;        // examples whose h* changed after each round
  int rounds = 0;
  int risk_increases = 0;  // rounds whose risk rose by more than risk_tolerance
};

// Latent completion: best h for the fixed ground-truth label, by greedy ascent
// from `start`.
inline LatentAssignment complete_latent(const ActionModel& model, const ExampleMeasurements& x,
                                        int y, const LatentAssignment& start,
                                        const GreedyOptions& opts = {}) {
  return infer_greedy_for_label(model, x, y, &start, opts).h;
}

// 1/2 ||w||^2 + C sum_i max(0, max_{y,h}[loss + w.psi(y,h)] - w.psi(y_i, h_i*)).
// h_i* is the clamped greedy completion started from init_latent, or the
// better of that and a completion started from `warm[i]` when given.
inline double regularized_risk(const ActionModel& model, std::span<const ActionExample> data,
                               double C, const std::vector<LatentAssignment>* warm = nullptr,
                               const GreedyOptions& opts = {}) {
  double reg = 0.0;
  for (double v : model.w) reg += v * v;
  double slack = 0.0;
  for (std::size_t i = 0; i < data.size(); ++i) {
    const auto& ex = data[i];
    const auto init = init_latent(ex.x);
    double gt = infer_greedy_for_label(model, ex.x, ex.y, &init, opts).score;
    if (warm) gt = std::max(gt, infer_greedy_for_label(model, ex.x, ex.y, &(*warm)[i], opts).score);
    const double aug = infer_loss_augmented(model, ex.x, ex.y, opts).score;
    slack += std::max(0.0, aug - gt);
  }
  return 0.5 * reg + C * slack;
}

namespace detail {

// Structural SVM with the latent states fixed: stochastic subgradient on
// lambda/2 ||w||^2 + 1/N sum_i hinge_i, lambda = 1/(C N), step 1/(lambda t),
// projection onto the 1/sqrt(lambda) ball, average of the second-half
// iterates returned.
inline std::vector<double> solve_ssvm(const ActionModel& shape, std::span<const ActionExample> data,
                                      const std::vector<LatentAssignment>& latent,
                                      const LssvmConfig& cfg, const GreedyOptions& opts) {
  const std::size_t n = data.size(), K = shape.K, dim = joint_feature_dim(K);
  const double lambda = 1.0 / (cfg.C * static_cast<double>(n));
  const double radius = 1.0 / std::sqrt(lambda);

  std::vector<std::vector<double>> psi_gt(n);
  for (std::size_t i = 0; i < n; ++i)
    psi_gt[i] = joint_feature(data[i].x, latent[i], data[i].y, K, shape.normalize_pairs);

  ActionModel model = shape;
  std::vector<double> avg(dim, 0.0);
  const std::uint64_t total = static_cast<std::uint64_t>(cfg.epochs) * n;
  const std::uint64_t average_from = total / 2 + 1;
  std::uint64_t averaged = 0, t = 0;

  Rng rng(derive_seed(cfg.seed, "lssvm.order"));
  std::vector<std::size_t> order(n);
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::iota(order.begin(), order.end(), std::size_t{0});
    shuffle(order.begin(), order.end(), rng);
    for (std::size_t i : order) {
      ++t;
      const double eta = 1.0 / (lambda * static_cast<double>(t));
      const auto hat = infer_loss_augmented(model, data[i].x, data[i].y, opts);
      const double gt_score = dot(model.w, psi_gt[i]);
      const double shrink = 1.0 - eta * lambda;
      for (double& v : model.w) v *= shrink;
      if (hat.score - gt_score > 0) {
        const auto psi_hat = joint_feature(data[i].x, hat.h, hat.y, K, shape.normalize_pairs);
        for (std::size_t d = 0; d < dim; ++d) model.w[d] += eta * (psi_gt[i][d] - psi_hat[d]);
      }
      const double norm2 = dot(model.w, model.w);
      if (norm2 > radius * radius) {
        const double f = radius / std::sqrt(norm2);
        for (double& v : model.w) v *= f;
      }
      if (t >= average_from) {
        ++averaged;
        const double a = 1.0 / static_cast<double>(averaged);
        for (std::size_t d = 0; d < dim; ++d) avg[d] += a * (model.w[d] - avg[d]);
      }
    }
  }
  return avg;
}

}  // namespace detail

// CCCP: alternate the structural SVM solve with latent completion until the
// completed assignments stop changing or max_rounds is reached. The first
// round trains on init_latent assignments.
inline ActionModel train_lssvm(std::span<const ActionExample> data, std::size_t K,
                               const LssvmConfig& cfg, TrainingTrace* trace = nullptr) {
  if (data.empty()) throw DegenerateDataError("no training examples");
  if (!(cfg.C > 0)) throw DomainError("C must be > 0");
  if (cfg.epochs < 1 || cfg.max_rounds < 1) throw DomainError("epochs and rounds must be >= 1");
  bool has0 = false, has1 = false;
  for (const auto& ex : data) {
    detail::check_measurements(ex.x, K);
    detail::check_label(ex.y);
    (ex.y ? has1 : has0) = true;
  }
  if (!has0 || !has1) throw DegenerateDataError("training data must contain both action labels");

  const GreedyOptions opts{cfg.max_sweeps};
  ActionModel model(K, cfg.normalize_pairs);
  std::vector<LatentAssignment> latent(data.size());
  for (std::size_t i = 0; i < data.size(); ++i) latent[i] = init_latent(data[i].x);

  TrainingTrace local;
  TrainingTrace& tr = trace ? *trace : local;
  tr = TrainingTrace{};
  for (int round = 0; round < cfg.max_rounds; ++round) {
    tr.latent.push_back(latent);
    model.w = detail::solve_ssvm(model, data, latent, cfg, opts);
    ++tr.rounds;

    std::vector<LatentAssignment> next(data.size());
    std::size_t changes = 0;
    for (std::size_t i = 0; i < data.size(); ++i) {
      next[i] = complete_latent(model, data[i].x, data[i].y, latent[i], opts);
      if (next[i] != latent[i]) ++changes;
    }
    const double risk = regularized_risk(model, data, cfg.C, &latent, opts);
    if (!tr.risk.empty() && risk > tr.risk.back() + cfg.risk_tolerance) ++tr.risk_increases;
    tr.risk.push_back(risk);
    tr.latent_changes.push_back(changes);
    if (changes == 0) break;
    latent = std::move(next);
  }

  model.metadata = {{"C", cfg.C},
                    {"epochs", cfg.epochs},
                    {"max_rounds", cfg.max_rounds},
                    {"max_sweeps", cfg.max_sweeps},
                    {"seed", cfg.seed},
                    {"rounds", tr.rounds},
                    {"training_examples", data.size()}};
  return model;
}

inline Json action_model_to_json(const ActionModel& m) {
  Json doc;
  doc["schema_version"] = kSchemaVersion;
  doc["kind"] = "action_model";
  doc["K"] = m.K;
  doc["normalize_pairs"] = m.normalize_pairs;
  auto block = [](std::span<const double> s) { return std::vector<double>(s.begin(), s.end()); };
  doc["blocks"] = {{"measurement", block(m.measurement_block())},
                   {"state", block(m.state_block())},
                   {"class", block(m.class_block())}};
  doc["metadata"] = m.metadata;
  return doc;
}

inline ActionModel action_model_from_json(const Json& doc) {
  check_schema(doc, "action_model");
  ActionModel m(doc.at("K").get<std::size_t>(), doc.value("normalize_pairs", false));
  const auto& b = doc.at("blocks");
  auto load = [&](const char* name, std::span<double> dst) {
    const auto v = b.at(name).get<std::vector<double>>();
    if (v.size() != dst.size()) throw FormatError(std::string("action model block '") + name + "' has wrong length");
    for (double d : v)
      if (!std::isfinite(d)) throw FormatError("action model: non-finite weight");
    std::copy(v.begin(), v.end(), dst.begin());
  };
  load("measurement", m.measurement_block());
  load("state", m.state_block());
  load("class", m.class_block());
  m.metadata = doc.value("metadata", Json::object());
  return m;
}

}  // namespace actionrec
