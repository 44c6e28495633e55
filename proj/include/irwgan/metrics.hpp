#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "irwgan/dataset.hpp"

namespace irwgan {

// m feature vectors of dimension d. The default extractor is the raw-pixel
// flatten; any ImageTensor -> vector map can be plugged in instead.
struct FeatureSet {
  Eigen::MatrixXd features;  // m x d
  std::string extractor = "raw-pixels";

  int count() const { return static_cast<int>(features.rows()); }
  int dim() const { return static_cast<int>(features.cols()); }
};

using FeatureExtractor = std::function<std::vector<double>(const ImageTensor&)>;

inline FeatureExtractor raw_pixel_extractor() {
  return [](const ImageTensor& img) { return img.data; };
}

inline FeatureSet extract_features(const std::vector<ImageTensor>& images, const FeatureExtractor& f,
                                   const std::string& tag = "raw-pixels") {
  require(!images.empty(), "no images to extract features from");
  std::vector<double> first = f(images[0]);
  FeatureSet out;
  out.extractor = tag;
  out.features.resize(static_cast<Eigen::Index>(images.size()), static_cast<Eigen::Index>(first.size()));
  for (std::size_t i = 0; i < images.size(); ++i) {
    std::vector<double> v = i == 0 ? first : f(images[i]);
    require(v.size() == first.size(), "feature dimension mismatch");
    for (std::size_t j = 0; j < v.size(); ++j)
      out.features(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = v[j];
  }
  return out;
}

inline FeatureSet raw_features(const std::vector<ImageTensor>& images) {
  return extract_features(images, raw_pixel_extractor());
}

namespace detail {

inline Eigen::MatrixXd covariance(const Eigen::MatrixXd& x) {
  const Eigen::Index m = x.rows();
  Eigen::RowVectorXd mu = x.colwise().mean();
  Eigen::MatrixXd centered = x.rowwise() - mu;
  return centered.transpose() * centered / static_cast<double>(m - 1);
}

// eigenvalues of a symmetric matrix, clamped at -tol (error below)
inline Eigen::VectorXd psd_eigenvalues(const Eigen::MatrixXd& sym, double tol, const char* what) {
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(0.5 * (sym + sym.transpose()));
  require(es.info() == Eigen::Success, "eigendecomposition failed");
  Eigen::VectorXd ev = es.eigenvalues();
  for (Eigen::Index i = 0; i < ev.size(); ++i) {
    if (ev(i) < -tol) throw Error(std::string(what) + ": matrix is not PSD within tolerance");
    if (ev(i) < 0) ev(i) = 0;
  }
  return ev;
}

}  // namespace detail

// Frechet distance between Gaussian fits:
// |mu_a - mu_b|^2 + tr(Sa + Sb - 2 (Sa Sb)^(1/2)), with the trace term from
// the eigenvalues of the symmetric product Sa^(1/2) Sb Sa^(1/2).
inline double fid(const FeatureSet& a, const FeatureSet& b) {
  require(a.dim() == b.dim(), "feature dimension mismatch");
  require(a.count() >= 2 && b.count() >= 2, "fid needs at least 2 samples per set");
  constexpr double tol = 1e-8;

  Eigen::RowVectorXd mu_a = a.features.colwise().mean();
  Eigen::RowVectorXd mu_b = b.features.colwise().mean();
  Eigen::MatrixXd sa = detail::covariance(a.features);
  Eigen::MatrixXd sb = detail::covariance(b.features);

  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(sa);
  require(es.info() == Eigen::Success, "eigendecomposition failed");
  Eigen::VectorXd ev = es.eigenvalues();
  for (Eigen::Index i = 0; i < ev.size(); ++i) {
    if (ev(i) < -tol) throw Error("fid: covariance is not PSD within tolerance");
    ev(i) = std::sqrt(std::max(0.0, ev(i)));
  }
  Eigen::MatrixXd sa_half = es.eigenvectors() * ev.asDiagonal() * es.eigenvectors().transpose();

  Eigen::VectorXd prod_ev = detail::psd_eigenvalues(sa_half * sb * sa_half, tol, "fid");
  double tr_sqrt = 0.0;
  for (Eigen::Index i = 0; i < prod_ev.size(); ++i) tr_sqrt += std::sqrt(prod_ev(i));

  const double mean_term = (mu_a - mu_b).squaredNorm();
  return mean_term + sa.trace() + sb.trace() - 2.0 * tr_sqrt;
}

// Unbiased squared MMD with the cubic polynomial kernel
// k(u, v) = (u.v / d + 1)^3: off-diagonal within-set means minus twice the
// cross mean.
inline double kid(const FeatureSet& a, const FeatureSet& b) {
  require(a.dim() == b.dim(), "feature dimension mismatch");
  const int m = a.count(), q = b.count();
  require(m >= 2 && q >= 2, "kid needs at least 2 samples per set");
  const double d = static_cast<double>(a.dim());
  auto kernel = [d](const Eigen::RowVectorXd& u, const Eigen::RowVectorXd& v) {
    const double t = u.dot(v) / d + 1.0;
    return t * t * t;
  };

  double within_a = 0.0;
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < m; ++j)
      if (i != j) within_a += kernel(a.features.row(i), a.features.row(j));
  within_a /= static_cast<double>(m) * (m - 1);

  double within_b = 0.0;
  for (int i = 0; i < q; ++i)
    for (int j = 0; j < q; ++j)
      if (i != j) within_b += kernel(b.features.row(i), b.features.row(j));
  within_b /= static_cast<double>(q) * (q - 1);

  double cross = 0.0;
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < q; ++j) cross += kernel(a.features.row(i), b.features.row(j));
  cross /= static_cast<double>(m) * q;

  return within_a + within_b - 2.0 * cross;
}

struct BetaReport {
  std::optional<double> precision;
  std::optional<double> recall;
  double accuracy = 0.0;
  int true_positive = 0, false_positive = 0, true_negative = 0, false_negative = 0;
};

// Threshold classification of learned weights against alignment labels;
// positive class = aligned, prediction positive iff weight >= threshold.
// With single-class labels only accuracy is defined.
inline BetaReport beta_report(const std::vector<double>& weights, const std::vector<Label>& labels,
                              double threshold = 0.5) {
  require(weights.size() == labels.size() && !weights.empty(), "weights/labels length mismatch");
  BetaReport r;
  for (std::size_t i = 0; i < weights.size(); ++i) {
    const bool pred = weights[i] >= threshold;
    const bool truth = labels[i] == Label::aligned;
    if (pred && truth) r.true_positive++;
    if (pred && !truth) r.false_positive++;
    if (!pred && !truth) r.true_negative++;
    if (!pred && truth) r.false_negative++;
  }
  r.accuracy = static_cast<double>(r.true_positive + r.true_negative) / static_cast<double>(weights.size());
  const bool both_classes = (r.true_positive + r.false_negative) > 0 && (r.false_positive + r.true_negative) > 0;
  if (both_classes) {
    if (r.true_positive + r.false_positive > 0)
      r.precision = static_cast<double>(r.true_positive) / (r.true_positive + r.false_positive);
    r.recall = static_cast<double>(r.true_positive) / (r.true_positive + r.false_negative);
  }
  return r;
}

// Kish effective sample size (sum w)^2 / sum w^2, in [1, N] for weights
// summing to N.
inline double ess_statistic(const std::vector<double>& weights) {
  require(!weights.empty(), "empty weight vector");
  double s = 0.0, s2 = 0.0;
  for (double w : weights) {
    require(w >= 0.0, "negative weight");
    s += w;
    s2 += w * w;
  }
  require(s2 > 0.0, "all-zero weight vector");
  return s * s / s2;
}

// The cited n / |beta|^2 form, recorded alongside the Kish value.
inline double ess_ratio_form(const std::vector<double>& weights) {
  double s2 = 0.0;
  for (double w : weights) s2 += w * w;
  require(s2 > 0.0, "all-zero weight vector");
  return static_cast<double>(weights.size()) / s2;
}

struct HistogramBin {
  double lo = 0, hi = 0;
  int count = 0;
  int count_aligned = 0;
  int count_unaligned = 0;
};

// Uniform bins over [0, max(2, max w)], split by label when labels exist.
inline std::vector<HistogramBin> weight_histogram(const std::vector<double>& weights,
                                                  const std::vector<Label>* labels, int bins) {
  require(bins >= 2, "need at least 2 bins");
  if (labels) require(labels->size() == weights.size(), "weights/labels length mismatch");
  double wmax = 2.0;
  for (double w : weights) wmax = std::max(wmax, w);
  std::vector<HistogramBin> out(static_cast<std::size_t>(bins));
  for (int b = 0; b < bins; ++b) {
    out[static_cast<std::size_t>(b)].lo = wmax * b / bins;
    out[static_cast<std::size_t>(b)].hi = wmax * (b + 1) / bins;
  }
  for (std::size_t i = 0; i < weights.size(); ++i) {
    int b = static_cast<int>(weights[i] / wmax * bins);
    b = std::clamp(b, 0, bins - 1);
    out[static_cast<std::size_t>(b)].count++;
    if (labels) {
      if ((*labels)[i] == Label::aligned)
        out[static_cast<std::size_t>(b)].count_aligned++;
      else
        out[static_cast<std::size_t>(b)].count_unaligned++;
    }
  }
  return out;
}

inline void write_histogram_csv(const std::vector<HistogramBin>& bins, const std::string& path) {
  std::ofstream f(path);
  require(f.good(), "cannot write " + path);
  f << "bin_low,bin_high,count_aligned,count_unaligned\n";
  char buf[96];
  for (const auto& b : bins) {
    std::snprintf(buf, sizeof(buf), "%.17g,%.17g,%d,%d\n", b.lo, b.hi, b.count_aligned, b.count_unaligned);
    f << buf;
  }
}

}  // namespace irwgan
