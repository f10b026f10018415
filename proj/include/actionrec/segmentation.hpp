#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <vector>

#include "actionrec/errors.hpp"
#include "actionrec/imaging.hpp"

namespace actionrec {

struct SegmentationParams {
  double sigma = 0.8;   // Gaussian pre-smoothing, pixels
  double k = 300.0;     // threshold scale, on a [0,255] color scale
  int min_size = 100;   // pixels

  void validate() const {
    if (!(sigma >= 0)) throw DomainError("segmentation sigma must be >= 0");
    if (!(k > 0)) throw DomainError("segmentation k must be > 0");
    if (min_size < 1) throw DomainError("segmentation min_size must be >= 1");
  }
};

// Per-pixel superpixel id, labels contiguous in 0..count-1 and numbered in
// row-major order of first appearance.
struct SegmentLabelMap {
  int width = 0;
  int height = 0;
  int count = 0;
  std::vector<int> labels;

  int at(int x, int y) const { return labels[static_cast<std::size_t>(y) * width + x]; }

  friend bool operator==(const SegmentLabelMap&, const SegmentLabelMap&) = default;
};

namespace detail {

// Union-find carrying component size and the largest MST edge inside the
// component ("internal difference").
class DisjointSets {
 public:
  explicit DisjointSets(std::size_t n) : parent_(n), rank_(n, 0), size_(n, 1), internal_(n, 0.0) {
    std::iota(parent_.begin(), parent_.end(), std::size_t{0});
  }

  std::size_t find(std::size_t x) {
    std::size_t root = x;
    while (parent_[root] != root) root = parent_[root];
    while (parent_[x] != root) {
      const std::size_t next = parent_[x];
      parent_[x] = root;
      x = next;
    }
    return root;
  }

  // Joins two roots; returns the new root.
  std::size_t join(std::size_t a, std::size_t b, double weight) {
    if (rank_[a] < rank_[b]) std::swap(a, b);
    parent_[b] = a;
    size_[a] += size_[b];
    if (rank_[a] == rank_[b]) ++rank_[a];
    internal_[a] = std::max({internal_[a], internal_[b], weight});
    return a;
  }

  std::size_t size(std::size_t root) const { return size_[root]; }
  double internal(std::size_t root) const { return internal_[root]; }

 private:
  std::vector<std::size_t> parent_;
  std::vector<int> rank_;
  std::vector<std::size_t> size_;
  std::vector<double> internal_;
};

struct GridEdge {
  std::uint32_t a;
  std::uint32_t b;
  double weight;
};

}  // namespace detail

// Graph-based over-segmentation on the 4-neighbour grid. Edges are processed
// in ascending weight (ties by edge index); two components merge when the
// edge weight does not exceed either component's internal difference plus
// k/|C|. A second pass merges any component smaller than min_size along the
// cheapest remaining edge.
inline SegmentLabelMap segment(const ImageBuffer& img, const SegmentationParams& params) {
  params.validate();
  if (img.channels() != 3) throw ShapeError("segment expects a 3-channel image");
  const int w = img.width(), h = img.height();
  const std::size_t n = img.pixel_count();

  ImageBuffer smooth = gaussian_blur(img, params.sigma);
  for (double& v : smooth.data()) v *= 255.0;

  auto dist = [&](int x0, int y0, int x1, int y1) {
    double s = 0.0;
    for (int c = 0; c < 3; ++c) {
      const double d = smooth.at(x0, y0, c) - smooth.at(x1, y1, c);
      s += d * d;
    }
    return std::sqrt(s);
  };

  // Edge index order: for each pixel in row-major order, its right then its
  // down neighbour.
  std::vector<detail::GridEdge> edges;
  edges.reserve(2 * n);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      const auto p = static_cast<std::uint32_t>(y * w + x);
      if (x + 1 < w) edges.push_back({p, p + 1, dist(x, y, x + 1, y)});
      if (y + 1 < h) edges.push_back({p, static_cast<std::uint32_t>(p + w), dist(x, y, x, y + 1)});
    }
  }
  std::stable_sort(edges.begin(), edges.end(),
                   [](const auto& l, const auto& r) { return l.weight < r.weight; });

  detail::DisjointSets sets(n);
  for (const auto& e : edges) {
    const auto a = sets.find(e.a);
    const auto b = sets.find(e.b);
    if (a == b) continue;
    const double ta = sets.internal(a) + params.k / static_cast<double>(sets.size(a));
    const double tb = sets.internal(b) + params.k / static_cast<double>(sets.size(b));
    if (e.weight <= std::min(ta, tb)) sets.join(a, b, e.weight);
  }

  const auto min_size = static_cast<std::size_t>(params.min_size);
  for (const auto& e : edges) {
    const auto a = sets.find(e.a);
    const auto b = sets.find(e.b);
    if (a != b && (sets.size(a) < min_size || sets.size(b) < min_size)) sets.join(a, b, e.weight);
  }

  SegmentLabelMap seg;
  seg.width = w;
  seg.height = h;
  seg.labels.assign(n, -1);
  std::vector<int> root_label(n, -1);
  for (std::size_t p = 0; p < n; ++p) {
    const auto r = sets.find(p);
    if (root_label[r] < 0) root_label[r] = seg.count++;
    seg.labels[p] = root_label[r];
  }
  return seg;
}

struct BoundingBox {
  int x0 = 0, y0 = 0, x1 = 0, y1 = 0;  // inclusive corners

  friend bool operator==(const BoundingBox&, const BoundingBox&) = default;
};

struct SuperpixelStats {
  int label = 0;
  std::size_t pixel_count = 0;
  BoundingBox box;
};

inline std::vector<SuperpixelStats> superpixel_stats(const SegmentLabelMap& seg) {
  std::vector<SuperpixelStats> stats(static_cast<std::size_t>(seg.count));
  for (int i = 0; i < seg.count; ++i) {
    stats[i].label = i;
    stats[i].box = {seg.width, seg.height, -1, -1};
  }
  for (int y = 0; y < seg.height; ++y) {
    for (int x = 0; x < seg.width; ++x) {
      auto& s = stats[static_cast<std::size_t>(seg.at(x, y))];
      ++s.pixel_count;
      s.box.x0 = std::min(s.box.x0, x);
      s.box.y0 = std::min(s.box.y0, y);
      s.box.x1 = std::max(s.box.x1, x);
      s.box.y1 = std::max(s.box.y1, y);
    }
  }
  return stats;
}

// Label maps are stored as P5 PGM: maxval 255 (8-bit) when count <= 256,
// otherwise maxval 65535 with big-endian 16-bit samples.
inline void save_label_pgm(const SegmentLabelMap& seg, const std::filesystem::path& path) {
  if (seg.count > 65536) throw CapacityError("too many labels for a 16-bit PGM");
  const bool wide = seg.count > 256;
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out << "P5\n" << seg.width << ' ' << seg.height << '\n' << (wide ? 65535 : 255) << '\n';
  std::vector<unsigned char> raw;
  raw.reserve(seg.labels.size() * (wide ? 2 : 1));
  for (int l : seg.labels) {
    if (wide) raw.push_back(static_cast<unsigned char>(l >> 8));
    raw.push_back(static_cast<unsigned char>(l & 0xff));
  }
  out.write(reinterpret_cast<const char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
  if (!out) throw IoError("write failed for " + path.string());
}

inline SegmentLabelMap load_label_pgm(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  const PnmHeader h = read_pnm_header(in);
  if (h.kind != '5') throw FormatError(path.string() + ": label map must be P5");
  if (h.maxval != 255 && h.maxval != 65535)
    throw FormatError(path.string() + ": label map maxval must be 255 or 65535");
  const bool wide = h.maxval == 65535;
  const std::size_t n = static_cast<std::size_t>(h.width) * h.height;
  std::vector<unsigned char> raw(n * (wide ? 2 : 1));
  in.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
  if (static_cast<std::size_t>(in.gcount()) != raw.size())
    throw IoError(path.string() + ": truncated label payload");
  SegmentLabelMap seg;
  seg.width = h.width;
  seg.height = h.height;
  seg.labels.resize(n);
  int max_label = -1;
  for (std::size_t i = 0; i < n; ++i) {
    seg.labels[i] = wide ? (raw[2 * i] << 8) | raw[2 * i + 1] : raw[i];
    max_label = std::max(max_label, seg.labels[i]);
  }
  seg.count = max_label + 1;
  std::vector<char> seen(static_cast<std::size_t>(seg.count), 0);
  for (int l : seg.labels) seen[static_cast<std::size_t>(l)] = 1;
  if (std::find(seen.begin(), seen.end(), 0) != seen.end())
    throw FormatError(path.string() + ": labels are not contiguous");
  return seg;
}

}  // namespace actionrec
