#pragma once

// Dataset manipulations (augmentations with strength lambda, likelihood-based
// instance selection with quantile psi) and connectivity scans that record the
// estimated xi_min of each transformed dataset.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <optional>
#include <random>
#include <string>
#include <variant>
#include <vector>

#include "json.hpp"
#include "pdegan/error.hpp"
#include "pdegan/measure.hpp"
#include "pdegan/poincare.hpp"
#include "pdegan/seed.hpp"

namespace pdegan {

// N x C x H x W images, row-major, values in [0, 1].
struct ImageTensorSet {
  std::size_t n = 0, c = 0, h = 0, w = 0;
  std::vector<float> data;

  ImageTensorSet() = default;
  ImageTensorSet(std::size_t n_, std::size_t c_, std::size_t h_, std::size_t w_, float fill = 0.0f)
      : n(n_), c(c_), h(h_), w(w_), data(n_ * c_ * h_ * w_, fill) {}

  std::size_t image_size() const { return c * h * w; }

  float &at(std::size_t i, std::size_t ch, std::size_t y, std::size_t x) {
    return data[((i * c + ch) * h + y) * w + x];
  }
  float at(std::size_t i, std::size_t ch, std::size_t y, std::size_t x) const {
    return data[((i * c + ch) * h + y) * w + x];
  }

  void validate() const {
    if (n < 1 || c < 1 || h < 1 || w < 1)
      fail("InvalidImages", "image tensor needs N, C, H, W >= 1");
    if (data.size() != n * image_size())
      fail("InvalidImages", "image data size does not match N x C x H x W");
    for (float v : data)
      if (!(v >= 0.0f && v <= 1.0f))
        fail("InvalidImages", "image values must lie in [0, 1]");
  }

  // Images as points in R^{C H W}.
  SampleSet flatten() const {
    SampleSet s;
    s.points.resize(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(image_size()));
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < image_size(); ++j)
        s.points(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) =
            data[i * image_size() + j];
    return s;
  }

  ImageTensorSet subset(const std::vector<std::size_t> &keep) const {
    ImageTensorSet out(keep.size(), c, h, w);
    for (std::size_t k = 0; k < keep.size(); ++k)
      std::copy_n(data.begin() + static_cast<std::ptrdiff_t>(keep[k] * image_size()),
                  image_size(),
                  out.data.begin() + static_cast<std::ptrdiff_t>(k * image_size()));
    return out;
  }
};

enum class AugmentKind { translation, zoomin, zoomout, cutout, brightness, colorshift };

inline AugmentKind parse_augment_kind(const std::string &name) {
  if (name == "translation")
    return AugmentKind::translation;
  if (name == "zoomin")
    return AugmentKind::zoomin;
  if (name == "zoomout")
    return AugmentKind::zoomout;
  if (name == "cutout")
    return AugmentKind::cutout;
  if (name == "brightness")
    return AugmentKind::brightness;
  if (name == "colorshift")
    return AugmentKind::colorshift;
  fail("UnknownKind", "unknown augmentation kind '" + name + "'");
}

inline std::string to_string(AugmentKind k) {
  switch (k) {
  case AugmentKind::translation:
    return "translation";
  case AugmentKind::zoomin:
    return "zoomin";
  case AugmentKind::zoomout:
    return "zoomout";
  case AugmentKind::cutout:
    return "cutout";
  case AugmentKind::brightness:
    return "brightness";
  case AugmentKind::colorshift:
    return "colorshift";
  }
  return "translation";
}

// Per-item strength: uniform on [0, lambda], or exactly lambda.
enum class StrengthRule { uniform, fixed };

struct AugmentationConfig {
  AugmentKind kind = AugmentKind::translation;
  double strength = 0.0;
  StrengthRule rule = StrengthRule::uniform;
  std::uint64_t seed = 0;

  void validate() const {
    if (!(strength >= 0.0 && strength <= 1.0))
      fail("InvalidArgument", "augmentation strength must lie in [0, 1]");
  }
};

namespace detail {

// Bilinear resample of one channel (half-pixel centres, edge clamped).
inline std::vector<float> resize_bilinear(const float *src, std::size_t sh, std::size_t sw,
                                          std::size_t dh, std::size_t dw) {
  std::vector<float> out(dh * dw);
  const double fy = static_cast<double>(sh) / static_cast<double>(dh);
  const double fx = static_cast<double>(sw) / static_cast<double>(dw);
  for (std::size_t y = 0; y < dh; ++y) {
    const double sy = std::clamp((static_cast<double>(y) + 0.5) * fy - 0.5, 0.0,
                                 static_cast<double>(sh - 1));
    const auto y0 = static_cast<std::size_t>(sy);
    const std::size_t y1 = std::min(y0 + 1, sh - 1);
    const double ty = sy - static_cast<double>(y0);
    for (std::size_t x = 0; x < dw; ++x) {
      const double sx = std::clamp((static_cast<double>(x) + 0.5) * fx - 0.5, 0.0,
                                   static_cast<double>(sw - 1));
      const auto x0 = static_cast<std::size_t>(sx);
      const std::size_t x1 = std::min(x0 + 1, sw - 1);
      const double tx = sx - static_cast<double>(x0);
      const double v = (1 - ty) * ((1 - tx) * src[y0 * sw + x0] + tx * src[y0 * sw + x1]) +
                       ty * ((1 - tx) * src[y1 * sw + x0] + tx * src[y1 * sw + x1]);
      out[y * dw + x] = static_cast<float>(v);
    }
  }
  return out;
}

inline float clamp01(double v) { return static_cast<float>(std::clamp(v, 0.0, 1.0)); }

inline std::size_t scaled_size(std::size_t size, double factor) {
  return std::max<std::size_t>(1, static_cast<std::size_t>(std::lround(factor * static_cast<double>(size))));
}

// Applies one transform with strength s to image i of `img` in place.
inline void augment_one(ImageTensorSet &img, std::size_t i, AugmentKind kind, double s,
                        std::mt19937_64 &rng) {
  const std::size_t c = img.c, h = img.h, w = img.w;
  float *base = img.data.data() + i * img.image_size();
  auto channel = [&](std::size_t ch) { return base + ch * h * w; };
  switch (kind) {
  case AugmentKind::translation: {
    const auto max_shift = static_cast<long>(std::floor(s * static_cast<double>(std::min(h, w)) / 2.0));
    std::uniform_int_distribution<long> shift(-max_shift, max_shift);
    const long dy = shift(rng), dx = shift(rng);
    for (std::size_t ch = 0; ch < c; ++ch) {
      std::vector<float> src(channel(ch), channel(ch) + h * w);
      for (std::size_t y = 0; y < h; ++y)
        for (std::size_t x = 0; x < w; ++x) {
          const long sy = static_cast<long>(y) - dy, sx = static_cast<long>(x) - dx;
          const bool inside = sy >= 0 && sx >= 0 && sy < static_cast<long>(h) && sx < static_cast<long>(w);
          channel(ch)[y * w + x] =
              inside ? src[static_cast<std::size_t>(sy) * w + static_cast<std::size_t>(sx)] : 0.0f;
        }
    }
    break;
  }
  case AugmentKind::zoomin: {
    // Centred crop of (1 - s) of each side, resized back.
    const std::size_t ch_ = scaled_size(h, 1.0 - s), cw = scaled_size(w, 1.0 - s);
    const std::size_t oy = (h - ch_) / 2, ox = (w - cw) / 2;
    for (std::size_t ch = 0; ch < c; ++ch) {
      std::vector<float> crop(ch_ * cw);
      for (std::size_t y = 0; y < ch_; ++y)
        for (std::size_t x = 0; x < cw; ++x)
          crop[y * cw + x] = channel(ch)[(oy + y) * w + ox + x];
      const auto out = resize_bilinear(crop.data(), ch_, cw, h, w);
      for (std::size_t j = 0; j < h * w; ++j)
        channel(ch)[j] = clamp01(out[j]);
    }
    break;
  }
  case AugmentKind::zoomout: {
    // Shrink to (1 - s) of each side, centred on a zero canvas.
    const std::size_t sh = scaled_size(h, 1.0 - s), sw = scaled_size(w, 1.0 - s);
    const std::size_t oy = (h - sh) / 2, ox = (w - sw) / 2;
    for (std::size_t ch = 0; ch < c; ++ch) {
      const auto small = resize_bilinear(channel(ch), h, w, sh, sw);
      std::fill(channel(ch), channel(ch) + h * w, 0.0f);
      for (std::size_t y = 0; y < sh; ++y)
        for (std::size_t x = 0; x < sw; ++x)
          channel(ch)[(oy + y) * w + ox + x] = clamp01(small[y * sw + x]);
    }
    break;
  }
  case AugmentKind::cutout: {
    const auto side = std::min<std::size_t>(
        std::min(h, w), static_cast<std::size_t>(std::lround(s * static_cast<double>(std::min(h, w)))));
    if (side == 0)
      break;
    std::uniform_int_distribution<std::size_t> py(0, h - side), px(0, w - side);
    const std::size_t y0 = py(rng), x0 = px(rng);
    for (std::size_t ch = 0; ch < c; ++ch)
      for (std::size_t y = y0; y < y0 + side; ++y)
        std::fill(channel(ch) + y * w + x0, channel(ch) + y * w + x0 + side, 0.0f);
    break;
  }
  case AugmentKind::brightness: {
    std::bernoulli_distribution sign(0.5);
    const double delta = sign(rng) ? s : -s;
    for (std::size_t j = 0; j < img.image_size(); ++j)
      base[j] = clamp01(base[j] + delta);
    break;
  }
  case AugmentKind::colorshift: {
    std::uniform_real_distribution<double> shift(-s, s);
    for (std::size_t ch = 0; ch < c; ++ch) {
      const double delta = shift(rng);
      for (std::size_t j = 0; j < h * w; ++j)
        channel(ch)[j] = clamp01(channel(ch)[j] + delta);
    }
    break;
  }
  }
}

} // namespace detail

// Each image gets its own generator derive_seed(seed, i), so results do not
// depend on how many images precede it.
inline ImageTensorSet augment(const ImageTensorSet &images, const AugmentationConfig &config) {
  images.validate();
  config.validate();
  ImageTensorSet out = images;
  if (config.strength == 0.0)
    return out;
  for (std::size_t i = 0; i < images.n; ++i) {
    std::mt19937_64 rng(derive_seed(config.seed, i));
    std::uniform_real_distribution<double> u(0.0, 1.0);
    const double s = config.rule == StrengthRule::fixed ? config.strength : config.strength * u(rng);
    if (s > 0.0)
      detail::augment_one(out, i, config.kind, s, rng);
  }
  return out;
}

enum class FeatureSource { raw_flatten, external };

struct InstanceSelectionConfig {
  double psi = 0.0;
  FeatureSource feature_source = FeatureSource::raw_flatten;
  std::uint64_t seed = 0;

  void validate() const {
    if (!(psi >= 0.0 && psi < 1.0))
      fail("InvalidArgument", "quantile psi must lie in [0, 1)");
  }
};

// ceil(N (1 - psi)), guarded against rounding of the product.
inline std::size_t retained_count(std::size_t n, double psi) {
  const double exact = static_cast<double>(n) * (1.0 - psi);
  const auto keep = static_cast<std::size_t>(std::ceil(exact - 1e-9 * std::max(1.0, exact)));
  return std::clamp<std::size_t>(keep, 1, n);
}

// Log-likelihood of each row under a Gaussian fit with diagonal loading
// 1e-6 trace / d (up to the common normalizing constant).
inline Eigen::VectorXd gaussian_log_likelihood(const Eigen::MatrixXd &x) {
  const Eigen::Index n = x.rows(), d = x.cols();
  const Eigen::RowVectorXd mean = x.colwise().mean();
  const Eigen::MatrixXd xc = x.rowwise() - mean;
  Eigen::MatrixXd cov = (xc.transpose() * xc) / static_cast<double>(n);
  const double loading = std::max(1e-6 * cov.trace() / static_cast<double>(d), 1e-12);
  cov.diagonal().array() += loading;
  Eigen::LLT<Eigen::MatrixXd> llt(cov);
  if (llt.info() != Eigen::Success)
    fail("SingularCovariance", "feature covariance is not positive definite after loading");
  const Eigen::MatrixXd z = llt.matrixL().solve(xc.transpose());
  const double logdet = 2.0 * llt.matrixL().toDenseMatrix().diagonal().array().log().sum();
  return (-0.5 * (z.colwise().squaredNorm().array() + logdet)).transpose();
}

// Indices (ascending) of the items kept after dropping the bottom psi
// quantile of the likelihood; ties are broken by index.
inline std::vector<std::size_t> instance_select_indices(const SampleSet &features,
                                                        const InstanceSelectionConfig &config) {
  config.validate();
  features.validate();
  const std::size_t n = features.size();
  std::vector<std::size_t> keep(n);
  std::iota(keep.begin(), keep.end(), 0);
  if (config.psi == 0.0)
    return keep;
  const Eigen::VectorXd ll = gaussian_log_likelihood(features.points);
  std::vector<std::size_t> order = keep;
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return ll[static_cast<Eigen::Index>(a)] > ll[static_cast<Eigen::Index>(b)];
  });
  order.resize(retained_count(n, config.psi));
  std::sort(order.begin(), order.end());
  return order;
}

inline ImageTensorSet instance_select(const SampleSet &features, const ImageTensorSet &images,
                                      const InstanceSelectionConfig &config) {
  images.validate();
  if (features.size() != images.n)
    fail("InvalidArgument", "feature rows must match the image count");
  if (config.psi == 0.0)
    return images;
  return images.subset(instance_select_indices(features, config));
}

using ScanConfig = std::variant<AugmentationConfig, InstanceSelectionConfig>;

struct ScanRow {
  std::string kind;
  double param = 0.0;
  double xi_hat = std::numeric_limits<double>::quiet_NaN();
  double xi_norm = std::numeric_limits<double>::quiet_NaN();
  std::size_t n = 0;
  bool converged = true;
  std::string error; // empty on success
};

struct ScanReport {
  std::vector<ScanRow> rows;
  double baseline_xi = 0.0;
  std::optional<double> rank_correlation;
};

// Average ranks (1-based) with ties sharing the mean rank.
inline std::vector<double> average_ranks(const std::vector<double> &v) {
  std::vector<std::size_t> idx(v.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return v[a] < v[b]; });
  std::vector<double> r(v.size());
  for (std::size_t i = 0; i < idx.size();) {
    std::size_t j = i;
    while (j + 1 < idx.size() && v[idx[j + 1]] == v[idx[i]])
      ++j;
    const double avg = 0.5 * static_cast<double>(i + j) + 1.0;
    for (std::size_t t = i; t <= j; ++t)
      r[idx[t]] = avg;
    i = j + 1;
  }
  return r;
}

// Spearman correlation: Pearson correlation of average ranks.
inline double spearman(const std::vector<double> &a, const std::vector<double> &b) {
  if (a.size() != b.size())
    fail("InvalidArgument", "rank correlation needs equal-length inputs");
  if (a.size() < 2)
    fail("InvalidArgument", "rank correlation needs at least 2 pairs");
  for (std::size_t i = 0; i < a.size(); ++i)
    if (!std::isfinite(a[i]) || !std::isfinite(b[i]))
      fail("InvalidArgument", "rank correlation inputs must be finite");
  const auto ra = average_ranks(a), rb = average_ranks(b);
  const Eigen::Map<const Eigen::VectorXd> x(ra.data(), static_cast<Eigen::Index>(ra.size()));
  const Eigen::Map<const Eigen::VectorXd> y(rb.data(), static_cast<Eigen::Index>(rb.size()));
  const Eigen::VectorXd xc = x.array() - x.mean(), yc = y.array() - y.mean();
  const double den = xc.norm() * yc.norm();
  if (!(den > 0.0))
    fail("DegenerateRanks", "rank correlation undefined for constant input");
  return xc.dot(yc) / den;
}

namespace detail {

inline void fill_row(ScanRow &row, const SampleSet &samples, const EstimatorSpec &est,
                     double baseline) {
  row.n = samples.size();
  try {
    const auto e = estimate(samples, est);
    row.xi_hat = e.xi_hat;
    row.xi_norm = e.xi_hat / baseline;
    row.converged = e.converged;
  } catch (const Error &err) {
    row.error = std::string(err.code()) + ": " + err.what();
  }
}

} // namespace detail

// Baseline xi of the untransformed images, then one row per config. Row r
// uses the transform seed derive_seed(seed, r + 1); the estimator settings
// are shared, so an identity row reproduces the baseline exactly.
inline ScanReport connectivity_scan(const ImageTensorSet &images,
                                    const std::vector<ScanConfig> &configs,
                                    const EstimatorSpec &estimator, std::uint64_t seed = 0,
                                    const std::optional<SampleSet> &external_features = {}) {
  images.validate();
  if (configs.empty())
    fail("InvalidArgument", "scan needs at least one config");
  ScanReport report;
  report.baseline_xi = estimate(images.flatten(), estimator).xi_hat;
  if (!(report.baseline_xi > 0.0))
    fail("InvalidBaseline", "baseline xi must be positive");
  for (std::size_t r = 0; r < configs.size(); ++r) {
    ScanRow row;
    const std::uint64_t row_seed = derive_seed(seed, r + 1);
    try {
      if (const auto *aug = std::get_if<AugmentationConfig>(&configs[r])) {
        row.kind = to_string(aug->kind);
        row.param = aug->strength;
        AugmentationConfig cfg = *aug;
        cfg.seed = row_seed;
        detail::fill_row(row, augment(images, cfg).flatten(), estimator, report.baseline_xi);
      } else {
        const auto &sel = std::get<InstanceSelectionConfig>(configs[r]);
        row.kind = "instance_selection";
        row.param = sel.psi;
        SampleSet features;
        if (sel.feature_source == FeatureSource::external) {
          if (!external_features)
            fail("MissingFeatures", "instance selection requested external features");
          features = *external_features;
        } else {
          features = images.flatten();
        }
        detail::fill_row(row, instance_select(features, images, sel).flatten(), estimator,
                         report.baseline_xi);
      }
    } catch (const Error &err) {
      row.error = std::string(err.code()) + ": " + err.what();
    }
    report.rows.push_back(std::move(row));
  }
  return report;
}

// Vector-data scan over the two-Gaussian separation; normalized by the first
// separation in the list.
inline ScanReport separation_scan(const std::vector<double> &separations, std::size_t n,
                                  const EstimatorSpec &estimator, std::uint64_t seed = 0) {
  if (separations.empty())
    fail("InvalidArgument", "scan needs at least one separation");
  ScanReport report;
  for (std::size_t r = 0; r < separations.size(); ++r) {
    ScanRow row;
    row.kind = "separation";
    row.param = separations[r];
    const auto samples =
        sample_mixture(MixtureSpec::two_gaussians(separations[r]), n, derive_seed(seed, r + 1));
    if (r == 0) {
      report.baseline_xi = estimate(samples, estimator).xi_hat;
      if (!(report.baseline_xi > 0.0))
        fail("InvalidBaseline", "baseline xi must be positive");
    }
    detail::fill_row(row, samples, estimator, report.baseline_xi);
    report.rows.push_back(std::move(row));
  }
  return report;
}

// Spearman correlation of xi_hat against external scores (one per row,
// failed rows skipped); stored in the report.
inline double correlate_scores(ScanReport &report, const std::vector<double> &scores) {
  if (scores.size() != report.rows.size())
    fail("InvalidArgument", "need one score per scan row");
  std::vector<double> xi, sc;
  for (std::size_t i = 0; i < scores.size(); ++i)
    if (report.rows[i].error.empty()) {
      xi.push_back(report.rows[i].xi_hat);
      sc.push_back(scores[i]);
    }
  report.rank_correlation = spearman(xi, sc);
  return *report.rank_correlation;
}

// Tight cluster around a mid-grey pattern plus a fraction of far outliers
// (uniform pixels); the outliers are the last round(fraction N) images.
inline ImageTensorSet synthetic_outlier_images(std::size_t n, std::size_t c, std::size_t h,
                                               std::size_t w, double outlier_fraction,
                                               std::uint64_t seed, double spread = 0.05) {
  if (!(outlier_fraction >= 0.0 && outlier_fraction < 1.0))
    fail("InvalidArgument", "outlier fraction must lie in [0, 1)");
  ImageTensorSet img(n, c, h, w);
  const auto outliers = static_cast<std::size_t>(std::lround(outlier_fraction * static_cast<double>(n)));
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal;
  std::uniform_real_distribution<double> uniform(0.0, 1.0);
  std::vector<double> pattern(img.image_size());
  for (auto &p : pattern)
    p = 0.35 + 0.3 * uniform(rng);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < img.image_size(); ++j) {
      const double v = i + outliers < n ? pattern[j] + spread * normal(rng) : uniform(rng);
      img.data[i * img.image_size() + j] = detail::clamp01(v);
    }
  return img;
}

inline nlohmann::json to_json(const ScanReport &r) {
  nlohmann::json rows = nlohmann::json::array();
  for (const auto &row : r.rows) {
    nlohmann::json j = {{"kind", row.kind}, {"param", row.param}, {"n", row.n},
                        {"converged", row.converged}};
    if (row.error.empty()) {
      j["xi_hat"] = row.xi_hat;
      j["xi_norm"] = row.xi_norm;
    } else {
      j["error"] = row.error;
    }
    rows.push_back(j);
  }
  nlohmann::json out = {{"baseline_xi", r.baseline_xi}, {"rows", rows}};
  if (r.rank_correlation)
    out["rank_correlation"] = *r.rank_correlation;
  return out;
}

} // namespace pdegan
