#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <limits>
#include <numbers>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "actionrec/errors.hpp"
#include "actionrec/imaging.hpp"
#include "actionrec/io.hpp"
#include "actionrec/rng.hpp"
#include "actionrec/segmentation.hpp"

namespace actionrec {

inline constexpr std::size_t kAppearanceDim = 51;
inline constexpr std::size_t kColorChannels = 10;
inline constexpr std::size_t kTextureResponses = 11;
inline constexpr std::size_t kGradientDim = 128;
inline constexpr std::size_t kCodebookSize = 400;
inline constexpr std::size_t kDescriptorDim = kAppearanceDim + kCodebookSize;  // 451

using AppearanceDescriptor = std::array<double, kAppearanceDim>;

// Layout of the 51 appearance slots: for each channel in
// R,G,B,L,A,B*,Y,Cr,Cb,gray the four moments (mean, std, skewness, kurtosis),
// then the superpixel means of box5, gauss{1,2,4,8,16}, log{1,2,4,8,16}.
inline const std::array<double, 5>& texture_sigmas() {
  static const std::array<double, 5> s{1.0, 2.0, 4.0, 8.0, 16.0};
  return s;
}

inline std::vector<std::string> appearance_column_names() {
  static const char* channels[] = {"R", "G", "B", "L", "A", "Bstar", "Y", "Cr", "Cb", "gray"};
  static const char* moments[] = {"mean", "std", "skew", "kurt"};
  std::vector<std::string> names;
  for (const char* c : channels)
    for (const char* m : moments) names.push_back(std::string(c) + "_" + m);
  names.emplace_back("box5");
  for (double s : texture_sigmas()) names.push_back("gauss" + std::to_string(static_cast<int>(s)));
  for (double s : texture_sigmas()) names.push_back("log" + std::to_string(static_cast<int>(s)));
  return names;
}

// Streaming population moments (single pass, numerically stable update of
// the 2nd..4th central moment sums).
class MomentAccumulator {
 public:
  void add(double x) {
    const double n1 = static_cast<double>(n_);
    ++n_;
    const double n = static_cast<double>(n_);
    const double delta = x - mean_;
    const double delta_n = delta / n;
    const double delta_n2 = delta_n * delta_n;
    const double term1 = delta * delta_n * n1;
    mean_ += delta_n;
    m4_ += term1 * delta_n2 * (n * n - 3 * n + 3) + 6 * delta_n2 * m2_ - 4 * delta_n * m3_;
    m3_ += term1 * delta_n * (n - 2) - 3 * delta_n * m2_;
    m2_ += term1;
  }

  std::size_t count() const noexcept { return n_; }
  double mean() const noexcept { return mean_; }
  double variance() const noexcept { return n_ ? m2_ / static_cast<double>(n_) : 0.0; }
  double stddev() const noexcept { return std::sqrt(variance()); }

  // Zero-variance samples have skewness and kurtosis defined as 0.
  double skewness() const noexcept {
    if (n_ == 0 || m2_ <= 0) return 0.0;
    const double n = static_cast<double>(n_);
    return std::sqrt(n) * m3_ / std::pow(m2_, 1.5);
  }
  // Pearson (non-excess) kurtosis m4 / m2^2.
  double kurtosis() const noexcept {
    if (n_ == 0 || m2_ <= 0) return 0.0;
    const double n = static_cast<double>(n_);
    return n * m4_ / (m2_ * m2_);
  }

 private:
  std::size_t n_ = 0;
  double mean_ = 0, m2_ = 0, m3_ = 0, m4_ = 0;
};

inline ImageBuffer ensure_rgb(const ImageBuffer& img) {
  if (img.channels() == 3) return img;
  ImageBuffer out(img.width(), img.height(), 3);
  for (int y = 0; y < img.height(); ++y)
    for (int x = 0; x < img.width(); ++x)
      for (int c = 0; c < 3; ++c) out.at(x, y, c) = img.at(x, y);
  return out;
}

inline void check_segmentation_matches(const ImageBuffer& img, const SegmentLabelMap& seg) {
  if (img.width() != seg.width || img.height() != seg.height)
    throw ShapeError("segmentation size does not match image size");
}

// Precomputes the ten color planes and eleven filter responses of one image
// so every superpixel of that image reuses them.
class AppearanceExtractor {
 public:
  explicit AppearanceExtractor(const ImageBuffer& image) {
    const ImageBuffer rgb = ensure_rgb(image);
    const ImageBuffer lab = convert_colorspace(rgb, ColorSpace::LAB);
    const ImageBuffer ycc = convert_colorspace(rgb, ColorSpace::YCrCb);
    gray_ = convert_colorspace(rgb, ColorSpace::GRAY);
    for (int c = 0; c < 3; ++c) planes_.push_back(rgb.channel(c));
    for (int c = 0; c < 3; ++c) planes_.push_back(lab.channel(c));
    for (int c = 0; c < 3; ++c) planes_.push_back(ycc.channel(c));
    planes_.push_back(gray_);

    responses_.push_back(filter2d(gray_, Kernel2D::box(5)));
    for (double s : texture_sigmas()) responses_.push_back(gaussian_blur(gray_, s));
    for (double s : texture_sigmas()) responses_.push_back(laplacian_of_gaussian(gray_, s));
  }

  const ImageBuffer& gray() const noexcept { return gray_; }

  std::vector<AppearanceDescriptor> compute(const SegmentLabelMap& seg) const {
    check_segmentation_matches(gray_, seg);
    const auto count = static_cast<std::size_t>(seg.count);
    std::vector<std::array<MomentAccumulator, kColorChannels>> moments(count);
    std::vector<std::array<double, kTextureResponses>> sums(count);
    std::vector<std::size_t> sizes(count, 0);
    for (auto& s : sums) s.fill(0.0);

    for (std::size_t p = 0; p < gray_.pixel_count(); ++p) {
      const auto l = static_cast<std::size_t>(seg.labels[p]);
      ++sizes[l];
      for (std::size_t c = 0; c < kColorChannels; ++c) moments[l][c].add(planes_[c].data()[p]);
      for (std::size_t r = 0; r < kTextureResponses; ++r) sums[l][r] += responses_[r].data()[p];
    }

    std::vector<AppearanceDescriptor> out(count);
    for (std::size_t l = 0; l < count; ++l) {
      auto& d = out[l];
      for (std::size_t c = 0; c < kColorChannels; ++c) {
        const auto& m = moments[l][c];
        d[4 * c] = m.mean();
        d[4 * c + 1] = m.stddev();
        d[4 * c + 2] = m.skewness();
        d[4 * c + 3] = m.kurtosis();
      }
      for (std::size_t r = 0; r < kTextureResponses; ++r)
        d[4 * kColorChannels + r] = sizes[l] ? sums[l][r] / static_cast<double>(sizes[l]) : 0.0;
    }
    return out;
  }

 private:
  ImageBuffer gray_;
  std::vector<ImageBuffer> planes_;
  std::vector<ImageBuffer> responses_;
};

inline AppearanceDescriptor appearance(const ImageBuffer& img, const SegmentLabelMap& seg,
                                       int label) {
  if (label < 0 || label >= seg.count) throw DomainError("superpixel label out of range");
  return AppearanceExtractor(img).compute(seg)[static_cast<std::size_t>(label)];
}

struct DenseGradientDescriptor {
  std::array<double, kGradientDim> values{};
  int center_x = 0;
  int center_y = 0;
  int cell_size = 0;

  bool is_zero() const {
    return std::all_of(values.begin(), values.end(), [](double v) { return v == 0.0; });
  }
};

// 4x4 spatial cells x 8 orientations; bin index (row * 4 + col) * 8 + orientation.
struct DenseParams {
  int step = 4;
  std::vector<int> cell_sizes{4, 6, 8};
};

// Number of grid positions along one axis of length `extent`.
inline int dense_grid_count(int extent, int cell_size, int step) {
  const int footprint = 4 * cell_size;
  return extent < footprint ? 0 : (extent - footprint) / step + 1;
}

// Dense SIFT-style descriptors over the gray image. Scales whose footprint
// does not fit in the image contribute nothing.
inline std::vector<DenseGradientDescriptor> dense_descriptors(const ImageBuffer& img,
                                                              const DenseParams& params = {}) {
  const ImageBuffer gray = img.channels() == 1 ? img : convert_colorspace(img, ColorSpace::GRAY);
  const int w = gray.width(), h = gray.height();
  std::vector<double> mag(gray.pixel_count()), ori(gray.pixel_count());
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      const double gx = 0.5 * (gray.clamped(x + 1, y) - gray.clamped(x - 1, y));
      const double gy = 0.5 * (gray.clamped(x, y + 1) - gray.clamped(x, y - 1));
      const auto p = static_cast<std::size_t>(y) * w + x;
      mag[p] = std::hypot(gx, gy);
      double theta = std::atan2(gy, gx);
      if (theta < 0) theta += 2 * std::numbers::pi;
      ori[p] = theta * 8.0 / (2 * std::numbers::pi);
    }
  }

  std::vector<DenseGradientDescriptor> out;
  for (int cell : params.cell_sizes) {
    const int footprint = 4 * cell;
    const int nx = dense_grid_count(w, cell, params.step);
    const int ny = dense_grid_count(h, cell, params.step);
    for (int gy = 0; gy < ny; ++gy) {
      for (int gx = 0; gx < nx; ++gx) {
        const int x0 = gx * params.step, y0 = gy * params.step;
        DenseGradientDescriptor d;
        d.center_x = x0 + footprint / 2;
        d.center_y = y0 + footprint / 2;
        d.cell_size = cell;
        for (int py = 0; py < footprint; ++py) {
          const double fy = (py + 0.5) / cell - 0.5;
          const int cy0 = static_cast<int>(std::floor(fy));
          const double wy1 = fy - cy0;
          for (int px = 0; px < footprint; ++px) {
            const auto p = static_cast<std::size_t>(y0 + py) * w + (x0 + px);
            if (mag[p] == 0.0) continue;
            const double fx = (px + 0.5) / cell - 0.5;
            const int cx0 = static_cast<int>(std::floor(fx));
            const double wx1 = fx - cx0;
            const int o0 = static_cast<int>(std::floor(ori[p]));
            const double wo1 = ori[p] - o0;
            for (int dy = 0; dy < 2; ++dy) {
              const int cy = cy0 + dy;
              if (cy < 0 || cy > 3) continue;
              const double wy = dy ? wy1 : 1 - wy1;
              for (int dx = 0; dx < 2; ++dx) {
                const int cx = cx0 + dx;
                if (cx < 0 || cx > 3) continue;
                const double wxy = wy * (dx ? wx1 : 1 - wx1) * mag[p];
                const std::size_t base = static_cast<std::size_t>(cy * 4 + cx) * 8;
                d.values[base + static_cast<std::size_t>(o0 % 8)] += wxy * (1 - wo1);
                d.values[base + static_cast<std::size_t>((o0 + 1) % 8)] += wxy * wo1;
              }
            }
          }
        }
        // L2 normalize, clip at 0.2, renormalize.
        auto normalize = [&d] {
          double n = 0.0;
          for (double v : d.values) n += v * v;
          n = std::sqrt(n);
          if (n > 0)
            for (double& v : d.values) v /= n;
        };
        normalize();
        for (double& v : d.values) v = std::min(v, 0.2);
        normalize();
        out.push_back(d);
      }
    }
  }
  return out;
}

struct KMeansResult {
  std::size_t k = 0;
  std::size_t dim = 0;
  std::vector<double> centroids;            // k x dim, row-major
  std::vector<std::size_t> assignments;
  std::vector<double> objective_history;    // sum of squared distances per assignment step
  int iterations = 0;
};

namespace detail {

inline double squared_distance(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = a[i] - b[i];
    s += d * d;
  }
  return s;
}

inline std::size_t count_distinct_rows(std::span<const double> data, std::size_t dim) {
  const std::size_t n = data.size() / dim;
  std::vector<std::size_t> idx(n);
  for (std::size_t i = 0; i < n; ++i) idx[i] = i;
  auto row = [&](std::size_t i) { return data.subspan(i * dim, dim); };
  std::sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) {
    auto ra = row(a), rb = row(b);
    return std::lexicographical_compare(ra.begin(), ra.end(), rb.begin(), rb.end());
  });
  std::size_t distinct = n ? 1 : 0;
  for (std::size_t i = 1; i < n; ++i) {
    auto ra = row(idx[i - 1]), rb = row(idx[i]);
    if (!std::equal(ra.begin(), ra.end(), rb.begin())) ++distinct;
  }
  return distinct;
}

}  // namespace detail

// Lloyd's algorithm with k-means++ seeding. Stops when no assignment changes
// or after max_iterations assignment steps. Empty clusters are re-seeded from
// the point farthest from its current centroid.
inline KMeansResult kmeans(std::span<const double> data, std::size_t dim, std::size_t k,
                           std::uint64_t seed, int max_iterations = 100) {
  if (dim == 0 || data.size() % dim != 0) throw ShapeError("k-means data is not n x dim");
  const std::size_t n = data.size() / dim;
  if (k == 0) throw DomainError("k-means needs k >= 1");
  if (detail::count_distinct_rows(data, dim) < k)
    throw InsufficientDataError("k-means needs at least " + std::to_string(k) +
                                " distinct points");
  auto point = [&](std::size_t i) { return data.subspan(i * dim, dim); };

  KMeansResult res;
  res.k = k;
  res.dim = dim;
  res.centroids.resize(k * dim);
  auto centroid = [&](std::size_t c) { return std::span<double>(res.centroids).subspan(c * dim, dim); };

  Rng rng(seed);
  std::vector<double> d2(n, std::numeric_limits<double>::infinity());
  std::size_t chosen = uniform_index(rng, n);
  for (std::size_t c = 0; c < k; ++c) {
    std::copy_n(point(chosen).begin(), dim, centroid(c).begin());
    double total = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      d2[i] = std::min(d2[i], detail::squared_distance(point(i), centroid(c)));
      total += d2[i];
    }
    if (c + 1 == k) break;
    double r = uniform01(rng) * total;
    chosen = n;
    std::size_t last_positive = 0;
    for (std::size_t i = 0; i < n; ++i) {
      if (d2[i] <= 0) continue;
      last_positive = i;
      if (r < d2[i]) {
        chosen = i;
        break;
      }
      r -= d2[i];
    }
    if (chosen == n) chosen = last_positive;
  }

  res.assignments.assign(n, k);
  std::vector<double> dist(n, 0.0);
  std::vector<std::size_t> counts(k);
  for (int iter = 0; iter < max_iterations; ++iter) {
    bool changed = false;
    double objective = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      std::size_t best = 0;
      double best_d = detail::squared_distance(point(i), centroid(0));
      for (std::size_t c = 1; c < k; ++c) {
        const double d = detail::squared_distance(point(i), centroid(c));
        if (d < best_d) {
          best_d = d;
          best = c;
        }
      }
      if (best != res.assignments[i]) changed = true;
      res.assignments[i] = best;
      dist[i] = best_d;
      objective += best_d;
    }
    res.objective_history.push_back(objective);
    res.iterations = iter + 1;
    if (!changed) break;

    std::fill(res.centroids.begin(), res.centroids.end(), 0.0);
    std::fill(counts.begin(), counts.end(), 0);
    for (std::size_t i = 0; i < n; ++i) {
      auto c = centroid(res.assignments[i]);
      auto p = point(i);
      for (std::size_t j = 0; j < dim; ++j) c[j] += p[j];
      ++counts[res.assignments[i]];
    }
    for (std::size_t c = 0; c < k; ++c) {
      if (counts[c] == 0) continue;
      for (double& v : centroid(c)) v /= static_cast<double>(counts[c]);
    }
    for (std::size_t c = 0; c < k; ++c) {
      if (counts[c] != 0) continue;
      const auto far = static_cast<std::size_t>(
          std::max_element(dist.begin(), dist.end()) - dist.begin());
      std::copy_n(point(far).begin(), dim, centroid(c).begin());
      dist[far] = 0.0;
      counts[c] = 1;
    }
  }
  return res;
}

struct Codebook {
  std::vector<std::array<double, kGradientDim>> centroids;
  std::string trained_on;  // fingerprint of the training descriptors

  std::size_t size() const noexcept { return centroids.size(); }

  // Nearest centroid by Euclidean distance, ties to the lowest index.
  std::size_t nearest(std::span<const double> v) const {
    std::size_t best = 0;
    double best_d = std::numeric_limits<double>::infinity();
    for (std::size_t c = 0; c < centroids.size(); ++c) {
      const double d = detail::squared_distance(v, centroids[c]);
      if (d < best_d) {
        best_d = d;
        best = c;
      }
    }
    return best;
  }
};

inline std::string descriptor_fingerprint(std::span<const DenseGradientDescriptor> descs) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (const auto& d : descs)
    h = fnv1a64(std::string_view(reinterpret_cast<const char*>(d.values.data()),
                                 d.values.size() * sizeof(double)),
                h);
  std::ostringstream ss;
  ss << "fnv1a64:" << std::hex << h << ":n=" << std::dec << descs.size();
  return ss.str();
}

// Zero descriptors are dropped before clustering.
inline Codebook train_codebook(std::span<const DenseGradientDescriptor> descs, std::uint64_t seed,
                               std::size_t size = kCodebookSize, int max_iterations = 100) {
  std::vector<double> flat;
  flat.reserve(descs.size() * kGradientDim);
  std::vector<DenseGradientDescriptor> used;
  for (const auto& d : descs) {
    if (d.is_zero()) continue;
    flat.insert(flat.end(), d.values.begin(), d.values.end());
    used.push_back(d);
  }
  if (used.size() < size)
    throw InsufficientDataError("codebook training needs at least " + std::to_string(size) +
                                " non-zero descriptors, got " + std::to_string(used.size()));
  const KMeansResult km = kmeans(flat, kGradientDim, size, seed, max_iterations);
  Codebook book;
  book.centroids.resize(size);
  for (std::size_t c = 0; c < size; ++c)
    std::copy_n(km.centroids.begin() + static_cast<std::ptrdiff_t>(c * kGradientDim), kGradientDim,
                book.centroids[c].begin());
  book.trained_on = descriptor_fingerprint(used);
  return book;
}

// Hard assignment, L1 normalized; zero descriptors are skipped and an empty
// region gives the zero histogram.
inline std::vector<double> bof_histogram(std::span<const DenseGradientDescriptor> descs,
                                         const Codebook& book) {
  if (book.size() == 0) throw DomainError("empty codebook");
  std::vector<double> hist(book.size(), 0.0);
  std::size_t total = 0;
  for (const auto& d : descs) {
    if (d.is_zero()) continue;
    hist[book.nearest(d.values)] += 1.0;
    ++total;
  }
  if (total)
    for (double& v : hist) v /= static_cast<double>(total);
  return hist;
}

inline Json codebook_to_json(const Codebook& book) {
  Json doc;
  doc["schema_version"] = kSchemaVersion;
  doc["kind"] = "codebook";
  doc["size"] = book.size();
  doc["dim"] = kGradientDim;
  doc["trained_on"] = book.trained_on;
  doc["centroids"] = Json::array();
  for (const auto& c : book.centroids) doc["centroids"].push_back(c);
  return doc;
}

inline Codebook codebook_from_json(const Json& doc) {
  check_schema(doc, "codebook");
  Codebook book;
  book.trained_on = doc.value("trained_on", "");
  for (const auto& row : doc.at("centroids")) {
    if (row.size() != kGradientDim) throw FormatError("codebook centroid has wrong length");
    book.centroids.push_back(row.get<std::array<double, kGradientDim>>());
  }
  if (book.size() == 0) throw FormatError("codebook has no centroids");
  return book;
}

// Appearance in slots 0..50, bag-of-features block after it (400 bins for the
// standard codebook, so 451 values in total).
using SuperpixelDescriptor = std::vector<double>;

// Computes descriptors for every superpixel of one image in a single pass.
inline std::vector<SuperpixelDescriptor> superpixel_descriptors(const ImageBuffer& img,
                                                                const SegmentLabelMap& seg,
                                                                const Codebook& book,
                                                                const DenseParams& dense = {}) {
  check_segmentation_matches(img, seg);
  const auto appearance_all = AppearanceExtractor(img).compute(seg);
  const auto descs = dense_descriptors(img, dense);
  std::vector<std::vector<DenseGradientDescriptor>> by_label(static_cast<std::size_t>(seg.count));
  for (const auto& d : descs)
    by_label[static_cast<std::size_t>(seg.at(d.center_x, d.center_y))].push_back(d);

  std::vector<SuperpixelDescriptor> out(static_cast<std::size_t>(seg.count));
  for (std::size_t l = 0; l < out.size(); ++l) {
    auto& v = out[l];
    v.assign(appearance_all[l].begin(), appearance_all[l].end());
    const auto hist = bof_histogram(by_label[l], book);
    v.insert(v.end(), hist.begin(), hist.end());
  }
  return out;
}

inline SuperpixelDescriptor superpixel_descriptor(const ImageBuffer& img,
                                                  const SegmentLabelMap& seg, int label,
                                                  const Codebook& book) {
  if (label < 0 || label >= seg.count) throw DomainError("superpixel label out of range");
  return superpixel_descriptors(img, seg, book)[static_cast<std::size_t>(label)];
}

inline std::vector<std::string> descriptor_column_names(std::size_t codebook_size = kCodebookSize) {
  auto names = appearance_column_names();
  for (std::size_t i = 0; i < codebook_size; ++i) {
    std::string idx = std::to_string(i);
    names.push_back("bof" + std::string(3 - std::min<std::size_t>(3, idx.size()), '0') + idx);
  }
  return names;
}

}  // namespace actionrec
