#pragma once

#include <algorithm>
#include <cmath>
#include <fstream>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "irwgan/dataset.hpp"
#include "irwgan/nets.hpp"

namespace irwgan {

// Per-sample importance weights beta for one batch: non-negative, summing
// to their length (softmax times batch size).
template <class S>
struct WeightVector {
  std::vector<S> weights;
  std::vector<int> indices;  // positions in the source dataset; may be empty

  std::size_t size() const { return weights.size(); }

  void validate() const {
    require(weights.size() >= 2, "weight vector needs at least 2 entries");
    S sum = S(0);
    for (S w : weights) {
      require(w >= S(0), "importance weight is negative");
      sum += w;
    }
    require(std::abs(static_cast<double>(sum) - static_cast<double>(weights.size())) <= 1e-5,
            "importance weights do not sum to n");
  }
};

template <class S>
WeightVector<S> unit_weights(std::size_t n, std::vector<int> indices = {}) {
  WeightVector<S> w;
  w.weights.assign(n, S(1));
  w.indices = std::move(indices);
  return w;
}

// beta_i = n * exp(s_i) / sum_j exp(s_j), computed with max subtraction.
template <class S>
WeightVector<S> batch_weights(const std::vector<S>& scores, std::vector<int> indices = {}) {
  require(scores.size() >= 2, "batch_weights needs at least 2 scores");
  for (S s : scores) require(std::isfinite(static_cast<double>(s)), "non-finite importance score");
  S mx = scores[0];
  for (S s : scores) mx = std::max(mx, s);
  WeightVector<S> out;
  out.indices = std::move(indices);
  out.weights.resize(scores.size());
  S z = S(0);
  for (std::size_t i = 0; i < scores.size(); ++i) {
    out.weights[i] = std::exp(scores[i] - mx);
    z += out.weights[i];
  }
  const S scale = static_cast<S>(scores.size()) / z;
  for (S& w : out.weights) w *= scale;
  return out;
}

// Unnormalized scores for a batch block, no gradient recorded.
template <class S>
std::vector<S> raw_scores(Network<S>& net, const Tensor<S>& batch) {
  require(batch.shape.size() == 4 && batch.dim(0) >= 2, "raw_scores needs a batch of at least 2 samples");
  Tensor<S> s = net.eval(batch);
  return std::vector<S>(s.data.begin(), s.data.end());
}

struct WeightReportRow {
  int index = 0;
  std::string filename;
  double weight = 0.0;
  std::optional<Label> label;
};

struct WeightReport {
  std::vector<WeightReportRow> rows;
  double ess_kish = 0.0;        // (sum beta)^2 / sum beta^2, dataset-global
  double ess_batch_mean = 0.0;  // mean Kish ESS of per-batch softmax weights

  std::vector<double> weights() const {
    std::vector<double> w;
    w.reserve(rows.size());
    for (const auto& r : rows) w.push_back(r.weight);
    return w;
  }
};

namespace detail {

inline double kish_ess(const std::vector<double>& w) {
  double s = 0.0, s2 = 0.0;
  for (double x : w) {
    s += x;
    s2 += x * x;
  }
  require(s2 > 0.0, "all-zero weight vector");
  return s * s / s2;
}

}  // namespace detail

// Scores every sample (in chunks), then applies one softmax over the whole
// dataset scaled by N. The summary also records the batch-level convention:
// softmax per consecutive block of `batch_size` samples.
template <class S>
WeightReport dataset_weights(Network<S>& net, const DomainDataset& dataset, int chunk = 64, int batch_size = 20) {
  require(dataset.size() >= 2, "dataset_weights needs at least 2 samples");
  require(chunk >= 1, "chunk must be positive");
  TrainView view = train_view(dataset);

  std::vector<double> scores;
  scores.reserve(dataset.size());
  for (std::size_t start = 0; start < dataset.size(); start += static_cast<std::size_t>(chunk)) {
    const std::size_t stop = std::min(dataset.size(), start + static_cast<std::size_t>(chunk));
    std::vector<int> idx;
    for (std::size_t i = start; i < stop; ++i) idx.push_back(static_cast<int>(i));
    Batch b = make_batch(view, idx);
    Tensor<S> block = b.tensors.template cast<S>();
    Tensor<S> s = net.eval(block);
    for (std::size_t i = 0; i < s.size(); ++i) scores.push_back(static_cast<double>(s[i]));
  }

  WeightVector<double> global = batch_weights(scores);

  WeightReport rep;
  rep.rows.resize(dataset.size());
  for (std::size_t i = 0; i < dataset.size(); ++i) {
    rep.rows[i].index = static_cast<int>(i);
    rep.rows[i].filename = i < dataset.filenames.size() ? dataset.filenames[i] : "";
    rep.rows[i].weight = global.weights[i];
    if (dataset.labels) rep.rows[i].label = (*dataset.labels)[i];
  }
  rep.ess_kish = detail::kish_ess(global.weights);

  double batch_ess_sum = 0.0;
  int batches = 0;
  const std::size_t bs = static_cast<std::size_t>(std::max(2, batch_size));
  for (std::size_t start = 0; start + 1 < dataset.size(); start += bs) {
    const std::size_t stop = std::min(dataset.size(), start + bs);
    if (stop - start < 2) break;
    std::vector<double> block(scores.begin() + static_cast<std::ptrdiff_t>(start),
                              scores.begin() + static_cast<std::ptrdiff_t>(stop));
    batch_ess_sum += detail::kish_ess(batch_weights(block).weights);
    ++batches;
  }
  rep.ess_batch_mean = batches > 0 ? batch_ess_sum / batches : rep.ess_kish;
  return rep;
}

// CSV: <index>,<filename>,<weight>,<label-if-any>
inline void write_weight_report_csv(const WeightReport& rep, const std::string& path) {
  std::ofstream out(path);
  require(out.good(), "cannot write " + path);
  out << "index,filename,weight,label\n";
  char buf[64];
  for (const auto& r : rep.rows) {
    std::snprintf(buf, sizeof(buf), "%.17g", r.weight);
    out << r.index << ',' << r.filename << ',' << buf << ',';
    if (r.label) out << (*r.label == Label::aligned ? 1 : 0);
    out << '\n';
  }
}

// JSON summary with 20 uniform histogram bins over [0, max(2, max beta)].
inline nlohmann::json weight_report_summary(const WeightReport& rep, int bins = 20) {
  double wmax = 2.0;
  for (const auto& r : rep.rows) wmax = std::max(wmax, r.weight);
  std::vector<int> count(static_cast<std::size_t>(bins), 0);
  std::vector<int> count_aligned(static_cast<std::size_t>(bins), 0);
  std::vector<int> count_unaligned(static_cast<std::size_t>(bins), 0);
  for (const auto& r : rep.rows) {
    int b = static_cast<int>(r.weight / wmax * bins);
    b = std::clamp(b, 0, bins - 1);
    count[static_cast<std::size_t>(b)]++;
    if (r.label) {
      if (*r.label == Label::aligned)
        count_aligned[static_cast<std::size_t>(b)]++;
      else
        count_unaligned[static_cast<std::size_t>(b)]++;
    }
  }
  nlohmann::json j;
  j["normalization"] = "dataset-global";
  j["bins"] = bins;
  j["range"] = {0.0, wmax};
  j["count"] = count;
  j["count_aligned"] = count_aligned;
  j["count_unaligned"] = count_unaligned;
  j["ess_kish"] = rep.ess_kish;
  j["ess_batch_mean"] = rep.ess_batch_mean;
  return j;
}

}  // namespace irwgan
