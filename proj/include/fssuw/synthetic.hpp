#pragma once

// Procedural corpora: one coloured geometric target per image on a textured,
// water-toned background. Used by the sanity experiments and fixtures.

#include <cmath>
#include <numbers>
#include <string>
#include <vector>

#include "dataset.hpp"

namespace fssuw {

enum class ShapeKind { Disk, Square, Triangle, Cross, Ring, Diamond, Bar };

struct SyntheticClass {
  int id;
  std::string name;
  ShapeKind shape;
  std::array<double, 3> color;  // RGB in [0,1]
};

inline std::vector<SyntheticClass> synthetic_classes(std::size_t n) {
  static const std::vector<SyntheticClass> all{
      {1, "disk", ShapeKind::Disk, {0.95, 0.20, 0.15}},     {2, "square", ShapeKind::Square, {0.95, 0.85, 0.10}},
      {3, "triangle", ShapeKind::Triangle, {0.90, 0.30, 0.90}}, {4, "cross", ShapeKind::Cross, {1.00, 0.55, 0.05}},
      {5, "ring", ShapeKind::Ring, {0.95, 0.95, 0.95}},     {6, "diamond", ShapeKind::Diamond, {0.55, 0.95, 0.20}},
      {7, "bar", ShapeKind::Bar, {0.10, 0.10, 0.10}},
  };
  require(n >= 1 && n <= all.size(), ErrorCode::InvalidArgument,
          "synthetic corpora support 1.." + std::to_string(all.size()) + " classes");
  return {all.begin(), all.begin() + static_cast<std::ptrdiff_t>(n)};
}

/// Class map with the SUIM mask colours assigned in id order.
inline ClassMap synthetic_class_map(std::size_t n) {
  const auto suim = ClassMap::suim().entries();
  std::vector<ClassEntry> entries;
  for (const auto& c : synthetic_classes(n)) entries.push_back({c.id, c.name, suim[static_cast<std::size_t>(c.id - 1)].color});
  return ClassMap(std::move(entries));
}

struct SyntheticSpec {
  std::size_t classes = 5;
  std::size_t images_per_class = 6;
  std::size_t size = 64;
  std::uint64_t seed = 0;
  double min_scale = 0.30;  // target extent relative to the image side
  double max_scale = 0.55;
};

namespace detail {

/// Signed inside test in normalised target coordinates (u, v in [-1,1]).
inline bool inside_shape(ShapeKind s, double u, double v) {
  const double r = std::hypot(u, v);
  switch (s) {
    case ShapeKind::Disk: return r <= 1.0;
    case ShapeKind::Square: return std::abs(u) <= 0.85 && std::abs(v) <= 0.85;
    case ShapeKind::Triangle: return v <= 0.9 && v >= -0.9 + 2.0 * std::abs(u);
    case ShapeKind::Cross: return (std::abs(u) <= 0.33 && std::abs(v) <= 1.0) || (std::abs(v) <= 0.33 && std::abs(u) <= 1.0);
    case ShapeKind::Ring: return r <= 1.0 && r >= 0.5;
    case ShapeKind::Diamond: return std::abs(u) + std::abs(v) <= 1.0;
    case ShapeKind::Bar: return std::abs(u) <= 1.0 && std::abs(v) <= 0.45;
  }
  return false;
}

}  // namespace detail

/// Render one sample: image [3,S,S] in [0,1] and a label map with the target.
inline std::pair<Tensor<float>, LabelMap> render_synthetic(const SyntheticClass& cls, std::size_t size, Rng& rng,
                                                           double min_scale, double max_scale) {
  const std::size_t s = size;
  Tensor<float> img({3, s, s});
  LabelMap labels({s, s}, 0);

  // Background: two random plane waves over a blue-green base plus grain.
  const std::array<double, 3> base{0.05 + 0.10 * rng.uniform(), 0.30 + 0.20 * rng.uniform(), 0.40 + 0.20 * rng.uniform()};
  const double f1 = 2.0 + 6.0 * rng.uniform(), f2 = 2.0 + 6.0 * rng.uniform();
  const double a1 = 2.0 * std::numbers::pi * rng.uniform(), a2 = 2.0 * std::numbers::pi * rng.uniform();
  const double p1 = 2.0 * std::numbers::pi * rng.uniform(), p2 = 2.0 * std::numbers::pi * rng.uniform();
  for (std::size_t y = 0; y < s; ++y) {
    for (std::size_t x = 0; x < s; ++x) {
      const double u = static_cast<double>(x) / static_cast<double>(s), v = static_cast<double>(y) / static_cast<double>(s);
      const double w1 = std::sin(2.0 * std::numbers::pi * f1 * (u * std::cos(a1) + v * std::sin(a1)) + p1);
      const double w2 = std::sin(2.0 * std::numbers::pi * f2 * (u * std::cos(a2) + v * std::sin(a2)) + p2);
      const double tex = 0.08 * w1 + 0.05 * w2;
      for (std::size_t c = 0; c < 3; ++c)
        img.at(c, y, x) = static_cast<float>(std::clamp(base[c] + tex + 0.03 * rng.normal(), 0.0, 1.0));
    }
  }

  // Target: class shape at a random scale and position, colour jittered.
  const double extent = (min_scale + (max_scale - min_scale) * rng.uniform()) * static_cast<double>(s);
  const double half = extent / 2.0;
  const double cx = half + rng.uniform() * (static_cast<double>(s) - extent);
  const double cy = half + rng.uniform() * (static_cast<double>(s) - extent);
  std::array<double, 3> color = cls.color;
  for (auto& c : color) c = std::clamp(c + 0.06 * rng.normal(), 0.0, 1.0);
  for (std::size_t y = 0; y < s; ++y) {
    for (std::size_t x = 0; x < s; ++x) {
      const double u = (static_cast<double>(x) + 0.5 - cx) / half, v = (static_cast<double>(y) + 0.5 - cy) / half;
      if (!detail::inside_shape(cls.shape, u, v)) continue;
      labels.at(y, x) = cls.id;
      for (std::size_t c = 0; c < 3; ++c)
        img.at(c, y, x) = static_cast<float>(std::clamp(color[c] + 0.03 * rng.normal(), 0.0, 1.0));
    }
  }
  return {std::move(img), std::move(labels)};
}

/// In-memory corpus with ids "<name>_<i>".
inline DatasetIndex make_synthetic_index(const SyntheticSpec& spec) {
  require(spec.size >= 32 && spec.size % 8 == 0, ErrorCode::InvalidArgument, "synthetic size must be >= 32 and divisible by 8");
  DatasetIndex index(synthetic_class_map(spec.classes));
  Rng rng(spec.seed);
  for (const auto& cls : synthetic_classes(spec.classes)) {
    for (std::size_t i = 0; i < spec.images_per_class; ++i) {
      auto [img, labels] = render_synthetic(cls, spec.size, rng, spec.min_scale, spec.max_scale);
      char id[64];
      std::snprintf(id, sizeof id, "%s_%03zu", cls.name.c_str(), i);
      index.add(ImageSample::in_memory(id, std::move(img), std::move(labels)));
    }
  }
  return index;
}

/// Colour-coded mask bytes [H,W,3] for a label map.
inline Tensor<std::uint8_t> color_mask(const LabelMap& labels, const ClassMap& classes) {
  Tensor<std::uint8_t> out({labels.dim(0), labels.dim(1), 3}, 0);
  for (std::size_t y = 0; y < labels.dim(0); ++y)
    for (std::size_t x = 0; x < labels.dim(1); ++x)
      if (const int l = labels.at(y, x); l != 0) {
        const auto& c = classes.by_id(l).color;
        for (std::size_t k = 0; k < 3; ++k) out.at(y, x, k) = c[k];
      }
  return out;
}

/// Write an index in the on-disk layout: images/, masks/ and classes.csv.
inline void write_corpus(const DatasetIndex& index, const fs::path& root) {
  fs::create_directories(root / "images");
  fs::create_directories(root / "masks");
  index.classes().write_csv(root / "classes.csv");
  for (const auto& s : index.samples()) {
    io::write_png(root / "images" / (s.source_id + ".png"), io::to_bytes(s.image()));
    io::write_png(root / "masks" / (s.source_id + ".png"), color_mask(s.raw_mask(index.classes()), index.classes()));
  }
}

}  // namespace fssuw
