#include <cmath>
#include <numeric>

#include <gtest/gtest.h>

#include "actionrec/descriptors.hpp"
#include "segmentation_oracle.hpp"

using namespace actionrec;

namespace {

struct NaiveMoments {
  double mean, std, skew, kurt;
};

// Two-pass population moments.
NaiveMoments naive_moments(const std::vector<double>& v) {
  const double n = static_cast<double>(v.size());
  double mean = 0;
  for (double x : v) mean += x;
  mean /= n;
  double m2 = 0, m3 = 0, m4 = 0;
  for (double x : v) {
    const double d = x - mean;
    m2 += d * d;
    m3 += d * d * d;
    m4 += d * d * d * d;
  }
  m2 /= n;
  m3 /= n;
  m4 /= n;
  if (m2 == 0) return {mean, 0, 0, 0};
  return {mean, std::sqrt(m2), m3 / std::pow(m2, 1.5), m4 / (m2 * m2)};
}

void expect_rel(double got, double want, double rel) {
  EXPECT_LE(std::abs(got - want), rel * std::max(1.0, std::abs(want))) << got << " vs " << want;
}

Codebook random_codebook(std::size_t size, Rng& rng) {
  Codebook book;
  book.centroids.resize(size);
  for (auto& c : book.centroids)
    for (double& v : c) v = uniform01(rng);
  return book;
}

ImageBuffer step_image(int w, int h, int col) {
  ImageBuffer img(w, h, 1, 0.2);
  for (int y = 0; y < h; ++y)
    for (int x = col; x < w; ++x) img.at(x, y) = 0.8;
  return img;
}

}  // namespace

TEST(Moments, StreamingMatchesTwoPass) {
  Rng rng(12);
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<double> v(2 + uniform_index(rng, 300));
    const double offset = uniform01(rng) * 10;
    for (double& x : v) x = offset + std::pow(uniform01(rng), 3.0);
    MomentAccumulator acc;
    for (double x : v) acc.add(x);
    const auto ref = naive_moments(v);
    expect_rel(acc.mean(), ref.mean, 1e-9);
    expect_rel(acc.stddev(), ref.std, 1e-9);
    expect_rel(acc.skewness(), ref.skew, 1e-9);
    expect_rel(acc.kurtosis(), ref.kurt, 1e-9);
  }
}

TEST(Appearance, ConstantMidGrayRegion) {
  ImageBuffer img(24, 24, 3, 0.5);
  SegmentLabelMap seg{24, 24, 1, std::vector<int>(576, 0)};
  const auto a = appearance(img, seg, 0);
  ImageBuffer px(1, 1, 3, 0.5);
  const auto lab = convert_colorspace(px, ColorSpace::LAB);
  const auto ycc = convert_colorspace(px, ColorSpace::YCrCb);
  const double expected_means[10] = {0.5, 0.5, 0.5, lab.at(0, 0, 0), lab.at(0, 0, 1), lab.at(0, 0, 2),
                                     ycc.at(0, 0, 0), ycc.at(0, 0, 1), ycc.at(0, 0, 2), 0.5};
  for (int c = 0; c < 10; ++c) {
    EXPECT_NEAR(a[4 * c], expected_means[c], 1e-12) << "channel " << c;
    EXPECT_EQ(a[4 * c + 1], 0.0);
    EXPECT_EQ(a[4 * c + 2], 0.0);
    EXPECT_EQ(a[4 * c + 3], 0.0);
  }
  EXPECT_NEAR(a[40], 0.5, 1e-12);                          // box
  for (int i = 41; i < 46; ++i) EXPECT_NEAR(a[i], 0.5, 1e-12);  // gaussians
  for (int i = 46; i < 51; ++i) EXPECT_NEAR(a[i], 0.0, 1e-12);  // LoG
}

TEST(Appearance, SinglePixelRegionHasZeroHigherMoments) {
  Rng rng(6);
  const auto img = oracle::random_image(3, 3, rng);
  SegmentLabelMap seg{3, 3, 2, {0, 0, 0, 0, 1, 0, 0, 0, 0}};
  const auto a = appearance(img, seg, 1);
  for (int c = 0; c < 10; ++c) {
    EXPECT_EQ(a[4 * c + 1], 0.0);
    EXPECT_EQ(a[4 * c + 2], 0.0);
    EXPECT_EQ(a[4 * c + 3], 0.0);
  }
  EXPECT_DOUBLE_EQ(a[0], img.at(1, 1, 0));
}

TEST(Appearance, TwoPixelGray) {
  // gray values {0, 1}: mean 0.5, population variance 0.25 -> std 0.5.
  ImageBuffer img(2, 1, 3, std::vector<double>{0, 0, 0, 1, 1, 1});
  SegmentLabelMap seg{2, 1, 1, {0, 0}};
  const auto a = appearance(img, seg, 0);
  EXPECT_NEAR(a[36], 0.5, 1e-12);
  EXPECT_NEAR(a[37], 0.5, 1e-12);
  EXPECT_NEAR(a[38], 0.0, 1e-12);
  EXPECT_NEAR(a[39], 1.0, 1e-12);
}

TEST(Appearance, MatchesNaiveMomentsOnSegmentedImage) {
  Rng rng(31);
  const auto img = oracle::blocky_image(20, 18, rng);
  const auto seg = segment(img, {0.5, 150.0, 5});
  const auto all = AppearanceExtractor(img).compute(seg);
  const ImageBuffer planes[4] = {img, convert_colorspace(img, ColorSpace::LAB),
                                 convert_colorspace(img, ColorSpace::YCrCb),
                                 convert_colorspace(img, ColorSpace::GRAY)};
  for (int l = 0; l < seg.count; ++l) {
    for (int c = 0; c < 10; ++c) {
      std::vector<double> v;
      for (int y = 0; y < seg.height; ++y)
        for (int x = 0; x < seg.width; ++x)
          if (seg.at(x, y) == l) v.push_back(c < 9 ? planes[c / 3].at(x, y, c % 3) : planes[3].at(x, y));
      const auto ref = naive_moments(v);
      expect_rel(all[l][4 * c], ref.mean, 1e-9);
      expect_rel(all[l][4 * c + 1], ref.std, 1e-9);
      expect_rel(all[l][4 * c + 2], ref.skew, 1e-9);
      expect_rel(all[l][4 * c + 3], ref.kurt, 1e-9);
    }
  }
  EXPECT_THROW(appearance(img, seg, seg.count), DomainError);
}

TEST(DenseDescriptors, ConstantImageGivesZeroVectors) {
  ImageBuffer img(40, 40, 1, 0.3);
  const auto d = dense_descriptors(img);
  ASSERT_FALSE(d.empty());
  for (const auto& x : d) EXPECT_TRUE(x.is_zero());
}

TEST(DenseDescriptors, VerticalStepEdgeUsesHorizontalGradientBins) {
  // Left 0.2, right 0.8: gx > 0, gy = 0 everywhere the gradient is non-zero,
  // so orientation is exactly 0 and all mass lands in orientation bin 0
  // (bin 4 would be the opposite polarity).
  const auto img = step_image(32, 32, 16);
  const auto descs = dense_descriptors(img, {4, {4}});
  bool any = false;
  for (const auto& d : descs) {
    double total = 0, horizontal = 0;
    for (std::size_t i = 0; i < kGradientDim; ++i) {
      total += d.values[i];
      if (i % 8 == 0 || i % 8 == 4) horizontal += d.values[i];
    }
    if (total > 0) any = true;
    EXPECT_NEAR(horizontal, total, 1e-12);
  }
  EXPECT_TRUE(any);
}

TEST(DenseDescriptors, GridCountAndLattice) {
  ImageBuffer img(64, 64, 1, 0.0);
  const auto d = dense_descriptors(img, {4, {4}});
  const int per_axis = (64 - 16) / 4 + 1;
  ASSERT_EQ(d.size(), static_cast<std::size_t>(per_axis * per_axis));
  EXPECT_EQ(d.front().center_x, 8);
  EXPECT_EQ(d.front().center_y, 8);
  EXPECT_EQ(d.back().center_x, 8 + 4 * (per_axis - 1));
  EXPECT_EQ(dense_grid_count(64, 6, 4), (64 - 24) / 4 + 1);
  EXPECT_EQ(dense_descriptors(img).size(), 169u + 121u + 81u);
}

TEST(DenseDescriptors, TooSmallForAnyScaleIsEmpty) {
  EXPECT_TRUE(dense_descriptors(ImageBuffer(15, 40, 1)).empty());
  // 20x20 fits only the 16-pixel footprint.
  EXPECT_EQ(dense_descriptors(ImageBuffer(20, 20, 1)).size(), 4u);
}

TEST(DenseDescriptors, NormalizedAndNonNegative) {
  Rng rng(3);
  const auto img = oracle::random_image(40, 36, rng);
  for (const auto& d : dense_descriptors(img)) {
    double n2 = 0;
    for (double v : d.values) {
      EXPECT_GE(v, 0.0);
      n2 += v * v;
    }
    EXPECT_LE(std::sqrt(n2), 1.0 + 1e-12);
    EXPECT_NEAR(std::sqrt(n2), 1.0, 1e-9);
  }
}

TEST(KMeans, KEqualsNGivesZeroError) {
  Rng rng(21);
  std::vector<DenseGradientDescriptor> descs(400);
  for (auto& d : descs)
    for (double& v : d.values) v = uniform01(rng);
  const auto book = train_codebook(descs, 5);
  ASSERT_EQ(book.size(), 400u);
  double err = 0;
  for (const auto& d : descs) err += detail::squared_distance(d.values, book.centroids[book.nearest(d.values)]);
  EXPECT_EQ(err, 0.0);
}

TEST(KMeans, TwoBlobsConvergeToBlobMeans) {
  Rng rng(8);
  std::vector<double> data;
  double mean_a[2] = {0, 0}, mean_b[2] = {0, 0};
  for (int i = 0; i < 60; ++i) {
    const bool b = i % 2;
    const double x = (b ? 10.0 : -10.0) + (uniform01(rng) - 0.5);
    const double y = (b ? 5.0 : 0.0) + (uniform01(rng) - 0.5);
    data.push_back(x);
    data.push_back(y);
    (b ? mean_b : mean_a)[0] += x / 30;
    (b ? mean_b : mean_a)[1] += y / 30;
  }
  const auto res = kmeans(data, 2, 2, 17);
  const bool first_is_a = res.centroids[0] < 0;
  const double* ca = first_is_a ? &res.centroids[0] : &res.centroids[2];
  const double* cb = first_is_a ? &res.centroids[2] : &res.centroids[0];
  EXPECT_NEAR(ca[0], mean_a[0], 1e-12);
  EXPECT_NEAR(ca[1], mean_a[1], 1e-12);
  EXPECT_NEAR(cb[0], mean_b[0], 1e-12);
  EXPECT_NEAR(cb[1], mean_b[1], 1e-12);
}

TEST(KMeans, ObjectiveNonIncreasingAndDeterministic) {
  Rng rng(2);
  std::vector<double> data(600 * 4);
  for (double& v : data) v = uniform01(rng);
  const auto a = kmeans(data, 4, 25, 99);
  const auto b = kmeans(data, 4, 25, 99);
  EXPECT_EQ(a.centroids, b.centroids);
  EXPECT_GT(a.objective_history.size(), 1u);
  for (std::size_t i = 1; i < a.objective_history.size(); ++i)
    EXPECT_LE(a.objective_history[i], a.objective_history[i - 1] + 1e-9);
}

TEST(KMeans, EveryClusterOwnsAPoint) {
  std::vector<double> data = {0, 0, 0, 0, 0, 0.001, 100, 100, -100, 50};
  const auto res = kmeans(data, 2, 3, 4);
  std::vector<int> counts(3, 0);
  for (auto a : res.assignments) ++counts[a];
  for (int c : counts) EXPECT_GT(c, 0);
}

TEST(KMeans, InsufficientDistinctPoints) {
  std::vector<DenseGradientDescriptor> descs(500);
  for (std::size_t i = 0; i < descs.size(); ++i) descs[i].values[i % 7] = 1.0;  // only 7 distinct
  EXPECT_THROW(train_codebook(descs, 1), InsufficientDataError);
  EXPECT_THROW(train_codebook(descs, 1, 8), InsufficientDataError);
  EXPECT_NO_THROW(train_codebook(descs, 1, 7));
}

TEST(BofHistogram, EmptyAndSingle) {
  Rng rng(1);
  const auto book = random_codebook(kCodebookSize, rng);
  const auto empty = bof_histogram({}, book);
  EXPECT_EQ(empty.size(), kCodebookSize);
  EXPECT_EQ(std::accumulate(empty.begin(), empty.end(), 0.0), 0.0);

  DenseGradientDescriptor d;
  d.values = book.centroids[123];
  const std::vector<DenseGradientDescriptor> one{d};
  const auto h = bof_histogram(one, book);
  EXPECT_EQ(h[123], 1.0);
  EXPECT_EQ(std::accumulate(h.begin(), h.end(), 0.0), 1.0);
}

TEST(BofHistogram, TieGoesToLowestIndex) {
  Codebook book;
  book.centroids.resize(10);
  for (std::size_t c = 0; c < 10; ++c) book.centroids[c].fill(10.0 + static_cast<double>(c));
  book.centroids[3].fill(0.0);
  book.centroids[3][0] = 1.0;
  book.centroids[7].fill(0.0);
  book.centroids[7][1] = 1.0;
  DenseGradientDescriptor d;
  d.values[0] = d.values[1] = 0.5;  // equidistant from centroids 3 and 7
  const std::vector<DenseGradientDescriptor> v{d};
  const auto h = bof_histogram(v, book);
  EXPECT_EQ(h[3], 1.0);
  EXPECT_EQ(h[7], 0.0);
}

TEST(SuperpixelDescriptor, LengthAndHistogramSums) {
  Rng rng(40);
  const auto book = random_codebook(kCodebookSize, rng);
  const auto img = oracle::blocky_image(48, 40, rng);
  const auto seg = segment(img, {0.8, 200.0, 30});
  const auto all = superpixel_descriptors(img, seg, book);
  ASSERT_EQ(all.size(), static_cast<std::size_t>(seg.count));
  for (const auto& d : all) {
    ASSERT_EQ(d.size(), kDescriptorDim);
    const double s = std::accumulate(d.begin() + kAppearanceDim, d.end(), 0.0);
    EXPECT_TRUE(std::abs(s - 1.0) < 1e-12 || s == 0.0) << s;
  }
  EXPECT_EQ(superpixel_descriptor(img, seg, 0, book), all[0]);
}

TEST(SuperpixelDescriptor, ConstantImageHasEmptyHistogram) {
  Rng rng(41);
  const auto book = random_codebook(kCodebookSize, rng);
  ImageBuffer img(40, 40, 3, 0.6);
  SegmentLabelMap seg{40, 40, 1, std::vector<int>(1600, 0)};
  const auto d = superpixel_descriptor(img, seg, 0, book);
  EXPECT_EQ(std::accumulate(d.begin() + kAppearanceDim, d.end(), 0.0), 0.0);
}

TEST(SuperpixelDescriptor, TwoRegionsPartitionDescriptors) {
  Rng rng(42);
  const auto book = random_codebook(kCodebookSize, rng);
  const auto img = oracle::random_image(48, 48, rng);
  SegmentLabelMap seg{48, 48, 2, {}};
  for (int y = 0; y < 48; ++y)
    for (int x = 0; x < 48; ++x) seg.labels.push_back(x < 21 ? 0 : 1);
  const auto descs = dense_descriptors(img);
  std::size_t n0 = 0, n1 = 0;
  for (const auto& d : descs) (d.center_x < 21 ? n0 : n1)++;
  const auto all = superpixel_descriptors(img, seg, book);
  const auto whole = bof_histogram(descs, book);
  for (std::size_t b = 0; b < kCodebookSize; ++b) {
    const double counted = all[0][kAppearanceDim + b] * static_cast<double>(n0) +
                           all[1][kAppearanceDim + b] * static_cast<double>(n1);
    EXPECT_NEAR(counted, whole[b] * static_cast<double>(descs.size()), 1e-9);
  }
}

TEST(Codebook, JsonRoundTripAndSeedDeterminism) {
  Rng rng(50);
  std::vector<DenseGradientDescriptor> descs(450);
  for (auto& d : descs)
    for (double& v : d.values) v = uniform01(rng);
  const auto a = train_codebook(descs, 3, 20);
  const auto b = train_codebook(descs, 3, 20);
  EXPECT_EQ(a.centroids, b.centroids);
  EXPECT_EQ(a.trained_on, b.trained_on);
  const auto back = codebook_from_json(Json::parse(codebook_to_json(a).dump()));
  EXPECT_EQ(back.centroids, a.centroids);
  EXPECT_THROW(codebook_from_json(Json{{"kind", "detector"}, {"schema_version", 1}}), FormatError);
}
