#include <catch2/catch_amalgamated.hpp>

#include <filesystem>
#include <fstream>

#include "irwgan/dataset.hpp"

namespace fs = std::filesystem;
using namespace irwgan;

namespace {

fs::path fresh_dir(const std::string& tag) {
  fs::path p = fs::temp_directory_path() / ("irwgan_test_" + tag);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

ImageTensor ramp_image(int res, int channels, int offset) {
  ImageTensor img(res, res, channels);
  for (int c = 0; c < channels; ++c)
    for (int y = 0; y < res; ++y)
      for (int x = 0; x < res; ++x) img.at(c, y, x) = pixel_to_real((offset + 31 * c + 7 * y + x) % 256);
  return img;
}

}  // namespace

TEST_CASE("pixel mapping endpoints and midpoint") {
  REQUIRE(pixel_to_real(255) == 1.0);
  REQUIRE(pixel_to_real(0) == -1.0);
  REQUIRE(pixel_to_real(128) == Catch::Approx(2.0 * 128 / 255 - 1.0).epsilon(0));
  REQUIRE(pixel_to_real(128) == Catch::Approx(0.00392156862745097).margin(1e-15));
}

TEST_CASE("load_dataset resizes and keeps values in range") {
  auto dir = fresh_dir("load");
  for (int i = 0; i < 5; ++i) write_png((dir / ("img" + std::to_string(i) + ".png")).string(), ramp_image(64, 1, i));
  DomainDataset ds = load_dataset(dir.string(), 16);
  REQUIRE(ds.size() == 5);
  REQUIRE(ds.height() == 16);
  REQUIRE(ds.width() == 16);
  for (const auto& s : ds.samples) REQUIRE(s.in_range());
}

TEST_CASE("load_dataset orders files lexicographically") {
  auto dir = fresh_dir("order");
  write_png((dir / "b.png").string(), ramp_image(8, 1, 3));
  write_png((dir / "a.png").string(), ramp_image(8, 1, 9));
  DomainDataset ds = load_dataset(dir.string(), 8);
  REQUIRE(ds.filenames == std::vector<std::string>{"a.png", "b.png"});
}

TEST_CASE("empty directory reports no samples") {
  auto dir = fresh_dir("empty");
  REQUIRE_THROWS_WITH(load_dataset(dir.string(), 16), "no samples");
}

TEST_CASE("undecodable file is named in the error") {
  auto dir = fresh_dir("bad");
  std::ofstream((dir / "broken.png").string()) << "this is not a png";
  try {
    load_dataset(dir.string(), 16);
    FAIL("expected an error");
  } catch (const Error& e) {
    REQUIRE(std::string(e.what()).find("broken.png") != std::string::npos);
  }
}

TEST_CASE("png round-trip is exact within one quantization step") {
  auto dir = fresh_dir("roundtrip");
  write_png((dir / "x.png").string(), ramp_image(16, 3, 5));
  DomainDataset first = load_dataset(dir.string(), 16);
  auto dir2 = fresh_dir("roundtrip2");
  write_png((dir2 / "x.png").string(), first.samples[0]);
  DomainDataset second = load_dataset(dir2.string(), 16);
  REQUIRE(first.samples[0].size() == second.samples[0].size());
  for (std::size_t i = 0; i < first.samples[0].size(); ++i)
    REQUIRE(std::abs(first.samples[0].data[i] - second.samples[0].data[i]) <= 2.0 / 255.0);
}

TEST_CASE("labels file mismatch is rejected") {
  auto dir = fresh_dir("labels");
  write_png((dir / "a.png").string(), ramp_image(8, 1, 0));
  write_png((dir / "b.png").string(), ramp_image(8, 1, 1));
  auto labels = dir / "labels.csv";
  std::ofstream(labels.string()) << "a.png,1\n";
  REQUIRE_THROWS_WITH(load_dataset(dir.string(), 8, labels.string()), "label count mismatch");
  std::ofstream(labels.string()) << "a.png,1\nb.png,0\n";
  DomainDataset ds = load_dataset(dir.string(), 8, labels.string());
  REQUIRE(ds.labels.has_value());
  REQUIRE((*ds.labels)[0] == Label::aligned);
  REQUIRE((*ds.labels)[1] == Label::unaligned);
}

namespace {

DomainDataset synthetic_set(int n, int res, int base) {
  DomainDataset d;
  d.name = "synthetic";
  for (int i = 0; i < n; ++i) d.samples.push_back(ramp_image(res, 1, base + i));
  return d;
}

}  // namespace

TEST_CASE("compose_unaligned label counts are exact") {
  DomainDataset aligned = synthetic_set(100, 8, 0);
  DomainDataset extra = synthetic_set(60, 8, 100);
  DomainDataset out = compose_unaligned(aligned, extra, 0.3, 5);
  REQUIRE(out.size() == 130);
  int unaligned = 0;
  for (Label l : *out.labels)
    if (l == Label::unaligned) ++unaligned;
  REQUIRE(unaligned == 30);
}

TEST_CASE("compose_unaligned with ratio zero is the aligned set") {
  DomainDataset aligned = synthetic_set(10, 8, 0);
  DomainDataset extra = synthetic_set(4, 8, 50);
  DomainDataset out = compose_unaligned(aligned, extra, 0.0, 1);
  REQUIRE(out.size() == 10);
  for (Label l : *out.labels) REQUIRE(l == Label::aligned);
}

TEST_CASE("compose_unaligned rejects shape mismatch") {
  DomainDataset aligned = synthetic_set(4, 8, 0);
  DomainDataset extra = synthetic_set(4, 16, 0);
  REQUIRE_THROWS_AS(compose_unaligned(aligned, extra, 1.0, 1), Error);
}

TEST_CASE("compose_unaligned draws with replacement when the pool is small") {
  DomainDataset aligned = synthetic_set(50, 8, 0);
  DomainDataset extra = synthetic_set(5, 8, 100);
  DomainDataset out = compose_unaligned(aligned, extra, 1.0, 9);
  REQUIRE(out.size() == 100);
}

TEST_CASE("sample_batch is deterministic per seed") {
  DomainDataset ds = synthetic_set(40, 8, 0);
  Rng a(123, "batch");
  Rng b(123, "batch");
  Batch ba = sample_batch(ds, 8, a);
  Batch bb = sample_batch(ds, 8, b);
  REQUIRE(ba.indices == bb.indices);
}

TEST_CASE("sample_batch with n equal to the dataset is a permutation") {
  DomainDataset ds = synthetic_set(12, 8, 0);
  Rng r(3, "batch");
  Batch b = sample_batch(ds, 12, r);
  std::vector<int> sorted = b.indices;
  std::sort(sorted.begin(), sorted.end());
  for (int i = 0; i < 12; ++i) REQUIRE(sorted[static_cast<std::size_t>(i)] == i);
}

TEST_CASE("a batch of 20 from a large dataset has distinct indices") {
  DomainDataset ds = synthetic_set(3400, 4, 0);
  Rng r(99, "batch");
  Batch b = sample_batch(ds, 20, r);
  std::vector<int> sorted = b.indices;
  std::sort(sorted.begin(), sorted.end());
  REQUIRE(std::adjacent_find(sorted.begin(), sorted.end()) == sorted.end());
}

TEST_CASE("small datasets fall back to replacement") {
  DomainDataset ds = synthetic_set(3, 8, 0);
  Rng r(1, "batch");
  Batch b = sample_batch(ds, 8, r);
  REQUIRE(b.size() == 8);
}
