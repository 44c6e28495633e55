#pragma once

#include <cmath>
#include <filesystem>
#include <fstream>
#include <string>
#include <utility>

#include <json.hpp>

#include "irwgan/dataset.hpp"

namespace irwgan {

enum class Content { ellipse, cross, stripes, blob };
enum class Style { style_x, style_y };

inline std::string to_string(Content c) {
  switch (c) {
    case Content::ellipse: return "ellipse";
    case Content::cross: return "cross";
    case Content::stripes: return "stripes";
    default: return "blob";
  }
}

inline Content content_from(const std::string& s) {
  if (s == "ellipse") return Content::ellipse;
  if (s == "cross") return Content::cross;
  if (s == "stripes") return Content::stripes;
  if (s == "blob") return Content::blob;
  throw Error("unknown content category: " + s);
}

// One rendering configuration of the generating process: content category,
// style, and the pose-noise ranges of the random input. Rendering is a pure
// function of (content, style, e_seed); the style acts only as a pixel-wise
// post-map, so renders with equal (content, e_seed) are exact style
// counterparts of each other.
struct GenSpec {
  Content content = Content::ellipse;
  Style style = Style::style_x;
  int resolution = 16;
  double jitter = 0.12;      // center offset range, fraction of half-extent
  double scale_min = 0.85;
  double scale_max = 1.15;
  double rotation = 0.5;     // radians, symmetric range
  double overlay = 0.2;      // texture strength applied by style_y; 0 disables
};

namespace detail {

struct Pose {
  double dx, dy, scale, rot, p1, p2;
};

inline Pose draw_pose(const GenSpec& spec, std::uint64_t e_seed) {
  Rng rng(e_seed, "synth-e");
  Pose p;
  p.dx = spec.jitter * (2.0 * rng.uniform01() - 1.0);
  p.dy = spec.jitter * (2.0 * rng.uniform01() - 1.0);
  p.scale = spec.scale_min + (spec.scale_max - spec.scale_min) * rng.uniform01();
  p.rot = spec.rotation * (2.0 * rng.uniform01() - 1.0);
  p.p1 = 6.283185307179586 * rng.uniform01();
  p.p2 = 6.283185307179586 * rng.uniform01();
  return p;
}

inline bool inside_shape(Content c, double u, double v, const Pose& p) {
  switch (c) {
    case Content::ellipse: {
      const double a = 0.72, b = 0.45;
      return (u / a) * (u / a) + (v / b) * (v / b) <= 1.0;
    }
    case Content::cross: {
      const double t = 0.17, l = 0.78;
      return (std::abs(u) <= t && std::abs(v) <= l) || (std::abs(v) <= t && std::abs(u) <= l);
    }
    case Content::stripes:
      return std::sin(3.0 * 3.141592653589793 * v + p.p1) > 0.0;
    case Content::blob: {
      const double r = std::sqrt(u * u + v * v);
      const double phi = std::atan2(v, u);
      const double rim = 0.38 * (1.0 + 0.45 * std::sin(3.0 * phi + p.p1) + 0.28 * std::sin(5.0 * phi + p.p2));
      return r <= rim;
    }
  }
  return false;
}

inline double texture_at(int x, int y, int res) {
  const double fx = 6.283185307179586 * 3.0 * (x + 0.5) / res;
  const double fy = 6.283185307179586 * 3.0 * (y + 0.5) / res;
  return std::sin(fx) * std::sin(fy);
}

}  // namespace detail

// Rasterizes the content shape with e_seed-driven pose into a [-1,1]
// grayscale image (background -1, shape +1, 3x3 supersampled edges).
// style_y output is the negation of the style_x output plus the texture
// overlay, clamped; with overlay 0 it is exactly the negation.
inline ImageTensor render(const GenSpec& spec, std::uint64_t e_seed) {
  require(spec.resolution >= 4, "synthetic resolution must be >= 4");
  const detail::Pose pose = detail::draw_pose(spec, e_seed);
  const int res = spec.resolution;
  ImageTensor img(res, res, 1);
  const double cr = std::cos(pose.rot), sr = std::sin(pose.rot);
  constexpr int ss = 3;
  for (int y = 0; y < res; ++y)
    for (int x = 0; x < res; ++x) {
      int hits = 0;
      for (int sy = 0; sy < ss; ++sy)
        for (int sx = 0; sx < ss; ++sx) {
          const double px = 2.0 * (x + (sx + 0.5) / ss) / res - 1.0 - pose.dx;
          const double py = 2.0 * (y + (sy + 0.5) / ss) / res - 1.0 - pose.dy;
          const double u = (cr * px + sr * py) / pose.scale;
          const double v = (-sr * px + cr * py) / pose.scale;
          if (detail::inside_shape(spec.content, u, v, pose)) ++hits;
        }
      img.at(0, y, x) = -1.0 + 2.0 * static_cast<double>(hits) / (ss * ss);
    }

  if (spec.style == Style::style_y) {
    for (int y = 0; y < res; ++y)
      for (int x = 0; x < res; ++x)
        img.at(0, y, x) = std::clamp(-img.at(0, y, x) + spec.overlay * detail::texture_at(x, y, res), -1.0, 1.0);
  }
  return img;
}

// Description of one unaligned synthetic domain pair (the synth.json file).
struct SynthSpec {
  Content aligned = Content::ellipse;
  Content contaminant_x = Content::cross;
  Content contaminant_y = Content::stripes;
  int n_aligned_x = 200;
  int n_aligned_y = 200;
  double ratio_x = 0.5;
  double ratio_y = 0.5;
  std::uint64_t seed = 1;
  GenSpec base;  // content/style fields ignored; pose ranges + resolution used
};

inline nlohmann::json to_json(const SynthSpec& s) {
  return {{"aligned", to_string(s.aligned)},
          {"contaminant_x", to_string(s.contaminant_x)},
          {"contaminant_y", to_string(s.contaminant_y)},
          {"n_aligned_x", s.n_aligned_x},
          {"n_aligned_y", s.n_aligned_y},
          {"ratio_x", s.ratio_x},
          {"ratio_y", s.ratio_y},
          {"seed", s.seed},
          {"resolution", s.base.resolution},
          {"jitter", s.base.jitter},
          {"scale_min", s.base.scale_min},
          {"scale_max", s.base.scale_max},
          {"rotation", s.base.rotation},
          {"overlay", s.base.overlay}};
}

inline SynthSpec synth_spec_from_json(const nlohmann::json& j) {
  SynthSpec s;
  if (j.contains("aligned")) s.aligned = content_from(j.at("aligned"));
  if (j.contains("contaminant_x")) s.contaminant_x = content_from(j.at("contaminant_x"));
  if (j.contains("contaminant_y")) s.contaminant_y = content_from(j.at("contaminant_y"));
  if (j.contains("n_aligned_x")) s.n_aligned_x = j.at("n_aligned_x");
  if (j.contains("n_aligned_y")) s.n_aligned_y = j.at("n_aligned_y");
  if (j.contains("ratio_x")) s.ratio_x = j.at("ratio_x");
  if (j.contains("ratio_y")) s.ratio_y = j.at("ratio_y");
  if (j.contains("seed")) s.seed = j.at("seed");
  if (j.contains("resolution")) s.base.resolution = j.at("resolution");
  if (j.contains("jitter")) s.base.jitter = j.at("jitter");
  if (j.contains("scale_min")) s.base.scale_min = j.at("scale_min");
  if (j.contains("scale_max")) s.base.scale_max = j.at("scale_max");
  if (j.contains("rotation")) s.base.rotation = j.at("rotation");
  if (j.contains("overlay")) s.base.overlay = j.at("overlay");
  return s;
}

namespace detail {

inline DomainDataset synth_domain(const SynthSpec& spec, Content aligned, Content contaminant, Style style,
                                  int n_aligned, double ratio, const std::string& name, Rng& seeds, Rng& shuffle) {
  const int k = static_cast<int>(std::llround(ratio * n_aligned));
  DomainDataset d;
  d.name = name;
  std::vector<Label> labels;
  GenSpec g = spec.base;
  g.style = style;
  g.content = aligned;
  for (int i = 0; i < n_aligned; ++i) {
    d.samples.push_back(render(g, seeds.next_u64()));
    labels.push_back(Label::aligned);
  }
  g.content = contaminant;
  for (int i = 0; i < k; ++i) {
    d.samples.push_back(render(g, seeds.next_u64()));
    labels.push_back(Label::unaligned);
  }
  std::vector<std::size_t> order(d.samples.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  for (std::size_t i = 0; i + 1 < order.size(); ++i) {
    std::size_t j = i + shuffle.uniform_index(order.size() - i);
    std::swap(order[i], order[j]);
  }
  DomainDataset out;
  out.name = name;
  std::vector<Label> out_labels;
  char buf[32];
  for (std::size_t i = 0; i < order.size(); ++i) {
    out.samples.push_back(std::move(d.samples[order[i]]));
    out_labels.push_back(labels[order[i]]);
    std::snprintf(buf, sizeof(buf), "%05zu.png", i);
    out.filenames.push_back(buf);
  }
  out.labels = std::move(out_labels);
  out.validate();
  return out;
}

}  // namespace detail

// Domain X = aligned content + contaminant_x, both at style_x;
// domain Y = aligned content + contaminant_y, both at style_y.
// Aligned renders use fresh e-seeds per domain, so the domains are
// unpaired samples of the same generating process.
inline std::pair<DomainDataset, DomainDataset> make_unaligned_pair(const SynthSpec& spec) {
  require(spec.contaminant_x != spec.aligned && spec.contaminant_y != spec.aligned,
          "contaminant content must differ from the aligned content");
  require(spec.n_aligned_x > 0 && spec.n_aligned_y > 0, "aligned sample counts must be positive");
  require(spec.ratio_x >= 0 && spec.ratio_y >= 0, "ratios must be non-negative");
  Rng seeds(spec.seed, "synth-eseeds");
  Rng shuffle(spec.seed, "synth-shuffle");
  DomainDataset x = detail::synth_domain(spec, spec.aligned, spec.contaminant_x, Style::style_x, spec.n_aligned_x,
                                         spec.ratio_x, "synthX", seeds, shuffle);
  DomainDataset y = detail::synth_domain(spec, spec.aligned, spec.contaminant_y, Style::style_y, spec.n_aligned_y,
                                         spec.ratio_y, "synthY", seeds, shuffle);
  return {std::move(x), std::move(y)};
}

// Writes a domain as PNG files plus a labels CSV consumable by load_dataset.
inline void materialize_domain(const DomainDataset& d, const std::string& directory) {
  namespace fs = std::filesystem;
  fs::create_directories(directory);
  std::ofstream labels(fs::path(directory) / "labels.csv");
  for (std::size_t i = 0; i < d.size(); ++i) {
    const std::string name = d.filenames.empty() ? (std::to_string(i) + ".png") : d.filenames[i];
    write_png((fs::path(directory) / name).string(), d.samples[i]);
    if (d.labels) labels << name << ',' << ((*d.labels)[i] == Label::aligned ? 1 : 0) << '\n';
  }
}

}  // namespace irwgan
