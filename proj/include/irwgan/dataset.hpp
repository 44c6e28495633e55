#pragma once

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "irwgan/image.hpp"
#include "irwgan/rng.hpp"
#include "irwgan/tensor.hpp"

namespace irwgan {

enum class Label : int { unaligned = 0, aligned = 1 };

// An ordered image collection. Labels, when present, mark the alignment
// ground truth and are read only by evaluation/diagnostic code; the
// training path receives a TrainView that cannot see them.
struct DomainDataset {
  std::string name;
  std::vector<ImageTensor> samples;
  std::vector<std::string> filenames;           // empty for synthetic data
  std::optional<std::vector<Label>> labels;

  std::size_t size() const { return samples.size(); }

  void validate() const {
    require(!samples.empty(), "dataset has no samples");
    const auto& s0 = samples.front();
    for (const auto& s : samples)
      require(s.height == s0.height && s.width == s0.width && s.channels == s0.channels,
              "dataset samples disagree in shape");
    if (labels) require(labels->size() == samples.size(), "label count mismatch");
  }

  int height() const { return samples.front().height; }
  int width() const { return samples.front().width; }
  int channels() const { return samples.front().channels; }
};

// Label-stripped, read-only view handed to the training loop.
struct TrainView {
  const std::vector<ImageTensor>* samples = nullptr;
  std::size_t size() const { return samples->size(); }
  const ImageTensor& operator[](std::size_t i) const { return (*samples)[i]; }
};

inline TrainView train_view(const DomainDataset& d) { return TrainView{&d.samples}; }

struct Batch {
  std::vector<int> indices;
  Tensor<double> tensors;  // {n, c, h, w}
  int size() const { return static_cast<int>(indices.size()); }
};

inline Batch make_batch(const TrainView& view, const std::vector<int>& indices) {
  require(!indices.empty(), "empty batch");
  const ImageTensor& s0 = view[0];
  Batch b;
  b.indices = indices;
  b.tensors = Tensor<double>::uninit({static_cast<int>(indices.size()), s0.channels, s0.height, s0.width});
  std::size_t per = s0.size();
  for (std::size_t i = 0; i < indices.size(); ++i) {
    const ImageTensor& img = view[static_cast<std::size_t>(indices[i])];
    std::copy(img.data.begin(), img.data.end(), b.tensors.data.begin() + i * per);
  }
  return b;
}

inline Batch make_batch(const DomainDataset& d, const std::vector<int>& indices) {
  TrainView v{&d.samples};
  return make_batch(v, indices);
}

// Labels file: one line per image, "<filename>,<0|1>", 1 = aligned.
inline std::vector<Label> read_labels_file(const std::string& path, const std::vector<std::string>& filenames) {
  std::ifstream in(path);
  require(in.good(), "cannot open labels file: " + path);
  std::map<std::string, Label> by_name;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    auto comma = line.find_last_of(',');
    require(comma != std::string::npos, "malformed labels line: " + line);
    std::string fname = line.substr(0, comma);
    std::string flag = line.substr(comma + 1);
    require(flag == "0" || flag == "1", "label flag must be 0 or 1: " + line);
    by_name[fname] = flag == "1" ? Label::aligned : Label::unaligned;
  }
  if (by_name.size() != filenames.size()) throw Error("label count mismatch");
  std::vector<Label> out;
  out.reserve(filenames.size());
  for (const auto& f : filenames) {
    auto it = by_name.find(f);
    if (it == by_name.end()) throw Error("label count mismatch");
    out.push_back(it->second);
  }
  return out;
}

// Loads every PNG in a directory (lexicographic filename order), resized to
// resolution x resolution with pixel values mapped linearly to [-1, 1].
inline DomainDataset load_dataset(const std::string& directory, int resolution,
                                  const std::optional<std::string>& labels_file = std::nullopt) {
  require(resolution >= 4, "resolution must be >= 4");
  namespace fs = std::filesystem;
  require(fs::is_directory(directory), "not a directory: " + directory);

  std::vector<std::string> names;
  for (const auto& e : fs::directory_iterator(directory)) {
    if (!e.is_regular_file()) continue;
    std::string ext = e.path().extension().string();
    std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
    if (ext == ".png") names.push_back(e.path().filename().string());
  }
  std::sort(names.begin(), names.end());
  if (names.empty()) throw Error("no samples");

  DomainDataset ds;
  ds.name = fs::path(directory).filename().string();
  ds.filenames = names;
  ds.samples.reserve(names.size());
  for (const auto& n : names) {
    ImageTensor img = read_png((fs::path(directory) / n).string());
    ds.samples.push_back(resize_area(img, resolution, resolution));
  }
  if (labels_file) ds.labels = read_labels_file(*labels_file, names);
  ds.validate();
  return ds;
}

// Appends round(ratio * |aligned|) contaminant samples (labeled unaligned)
// to a copy of `aligned` (labeled aligned) and shuffles the order by seed.
// Contaminants are drawn without replacement unless the pool is too small.
inline DomainDataset compose_unaligned(const DomainDataset& aligned, const DomainDataset& contaminant, double ratio,
                                       std::uint64_t seed) {
  require(ratio >= 0.0, "ratio must be non-negative");
  aligned.validate();
  contaminant.validate();
  require(aligned.height() == contaminant.height() && aligned.width() == contaminant.width() &&
              aligned.channels() == contaminant.channels(),
          "dataset shape mismatch");

  const std::size_t k = static_cast<std::size_t>(std::llround(ratio * static_cast<double>(aligned.size())));
  Rng rng(seed, "compose_unaligned");

  std::vector<std::size_t> picks;
  picks.reserve(k);
  if (k <= contaminant.size()) {
    std::vector<std::size_t> pool(contaminant.size());
    for (std::size_t i = 0; i < pool.size(); ++i) pool[i] = i;
    for (std::size_t i = 0; i < k; ++i) {
      std::size_t j = i + rng.uniform_index(pool.size() - i);
      std::swap(pool[i], pool[j]);
      picks.push_back(pool[i]);
    }
  } else {
    for (std::size_t i = 0; i < k; ++i) picks.push_back(rng.uniform_index(contaminant.size()));
  }

  DomainDataset out;
  out.name = aligned.name;
  out.samples.reserve(aligned.size() + k);
  out.filenames.reserve(aligned.size() + k);
  std::vector<Label> labels;
  labels.reserve(aligned.size() + k);
  const bool have_names = !aligned.filenames.empty() && !contaminant.filenames.empty();
  for (std::size_t i = 0; i < aligned.size(); ++i) {
    out.samples.push_back(aligned.samples[i]);
    if (have_names) out.filenames.push_back(aligned.filenames[i]);
    labels.push_back(Label::aligned);
  }
  for (std::size_t p : picks) {
    out.samples.push_back(contaminant.samples[p]);
    if (have_names) out.filenames.push_back(contaminant.filenames[p]);
    labels.push_back(Label::unaligned);
  }

  std::vector<std::size_t> order(out.samples.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  for (std::size_t i = 0; i + 1 < order.size(); ++i) {
    std::size_t j = i + rng.uniform_index(order.size() - i);
    std::swap(order[i], order[j]);
  }
  DomainDataset shuffled;
  shuffled.name = out.name;
  shuffled.samples.reserve(out.samples.size());
  std::vector<Label> shuffled_labels;
  shuffled_labels.reserve(labels.size());
  for (std::size_t i : order) {
    shuffled.samples.push_back(std::move(out.samples[i]));
    if (have_names) shuffled.filenames.push_back(std::move(out.filenames[i]));
    shuffled_labels.push_back(labels[i]);
  }
  shuffled.labels = std::move(shuffled_labels);
  shuffled.validate();
  return shuffled;
}

// Samples n indices: without replacement via partial Fisher-Yates (n draws)
// when the dataset is large enough, otherwise with replacement (n draws).
inline std::vector<int> sample_indices(std::size_t dataset_size, int n, Rng& rng) {
  require(dataset_size > 0, "dataset is empty");
  require(n >= 2, "batch size must be >= 2");
  std::vector<int> out;
  out.reserve(static_cast<std::size_t>(n));
  if (static_cast<std::size_t>(n) <= dataset_size) {
    std::vector<int> pool(dataset_size);
    for (std::size_t i = 0; i < dataset_size; ++i) pool[i] = static_cast<int>(i);
    for (int i = 0; i < n; ++i) {
      std::size_t j = static_cast<std::size_t>(i) + rng.uniform_index(dataset_size - static_cast<std::size_t>(i));
      std::swap(pool[static_cast<std::size_t>(i)], pool[j]);
      out.push_back(pool[static_cast<std::size_t>(i)]);
    }
  } else {
    for (int i = 0; i < n; ++i) out.push_back(static_cast<int>(rng.uniform_index(dataset_size)));
  }
  return out;
}

inline Batch sample_batch(const DomainDataset& dataset, int n, Rng& rng) {
  dataset.validate();
  return make_batch(dataset, sample_indices(dataset.size(), n, rng));
}

}  // namespace irwgan
