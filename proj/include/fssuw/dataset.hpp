#pragma once

#include <algorithm>
#include <array>
#include <filesystem>
#include <fstream>
#include <map>
#include <memory>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "image_io.hpp"
#include "random.hpp"

namespace fssuw {

namespace fs = std::filesystem;

using Rgb = std::array<std::uint8_t, 3>;

struct ClassEntry {
  int id = 0;
  std::string name;
  Rgb color{0, 0, 0};
};

/// Registered foreground classes. Label 0 (black in colour masks) is
/// background and never appears here.
class ClassMap {
 public:
  ClassMap() = default;
  explicit ClassMap(std::vector<ClassEntry> entries) : entries_(std::move(entries)) { validate(); }

  /// CSV rows `class_id,name,R,G,B`; blank lines and lines starting with '#'
  /// are skipped, as is a header row whose first field is not numeric.
  static ClassMap from_csv(const fs::path& path) {
    std::ifstream is(path);
    require(static_cast<bool>(is), ErrorCode::IoError, "cannot open class map " + path.string());
    std::vector<ClassEntry> entries;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(is, line)) {
      ++lineno;
      if (!line.empty() && line.back() == '\r') line.pop_back();
      if (line.empty() || line[0] == '#') continue;
      std::vector<std::string> f;
      std::stringstream ss(line);
      std::string cell;
      while (std::getline(ss, cell, ',')) f.push_back(cell);
      if (lineno == 1 && !f.empty() && (f[0].empty() || !std::isdigit(static_cast<unsigned char>(f[0][0])))) continue;
      require(f.size() == 5, ErrorCode::InvalidArgument,
              path.string() + ":" + std::to_string(lineno) + ": expected class_id,name,R,G,B");
      try {
        ClassEntry e{std::stoi(f[0]), f[1], {}};
        for (int c = 0; c < 3; ++c) {
          const int v = std::stoi(f[static_cast<std::size_t>(2 + c)]);
          require(v >= 0 && v <= 255, ErrorCode::InvalidArgument, "colour component out of range");
          e.color[static_cast<std::size_t>(c)] = static_cast<std::uint8_t>(v);
        }
        entries.push_back(std::move(e));
      } catch (const std::logic_error&) {
        fail(ErrorCode::InvalidArgument, path.string() + ":" + std::to_string(lineno) + ": malformed row");
      }
    }
    return ClassMap(std::move(entries));
  }

  /// The seven foreground categories of SUIM with their mask colours.
  static ClassMap suim() {
    return ClassMap({{1, "HD", {0, 0, 255}},
                     {2, "PF", {0, 255, 0}},
                     {3, "WR", {0, 255, 255}},
                     {4, "RO", {255, 0, 0}},
                     {5, "RI", {255, 0, 255}},
                     {6, "FV", {255, 255, 0}},
                     {7, "SR", {255, 255, 255}}});
  }

  void write_csv(const fs::path& path) const {
    std::ofstream os(path);
    require(static_cast<bool>(os), ErrorCode::IoError, "cannot write " + path.string());
    os << "class_id,name,R,G,B\n";
    for (const auto& e : entries_)
      os << e.id << ',' << e.name << ',' << int(e.color[0]) << ',' << int(e.color[1]) << ',' << int(e.color[2]) << '\n';
  }

  const std::vector<ClassEntry>& entries() const { return entries_; }
  std::vector<int> ids() const {
    std::vector<int> out;
    for (const auto& e : entries_) out.push_back(e.id);
    std::sort(out.begin(), out.end());
    return out;
  }
  bool contains(int id) const {
    return std::any_of(entries_.begin(), entries_.end(), [id](const auto& e) { return e.id == id; });
  }
  const ClassEntry& by_id(int id) const {
    for (const auto& e : entries_)
      if (e.id == id) return e;
    fail(ErrorCode::UnknownClass, "class id " + std::to_string(id));
  }
  const ClassEntry& by_name(const std::string& name) const {
    for (const auto& e : entries_)
      if (e.name == name) return e;
    fail(ErrorCode::UnknownClass, "class name " + name);
  }
  /// Label for a colour: 0 for black background, nullopt if unregistered.
  std::optional<int> label_of(const Rgb& c) const {
    if (c == Rgb{0, 0, 0}) return 0;
    for (const auto& e : entries_)
      if (e.color == c) return e.id;
    return std::nullopt;
  }

  void validate() const {
    std::set<int> ids;
    std::set<Rgb> colors;
    for (const auto& e : entries_) {
      require(e.id > 0, ErrorCode::InvalidArgument, "class ids must be positive: " + e.name);
      require(e.id < 256, ErrorCode::InvalidArgument, "class ids must fit a byte label: " + e.name);
      require(ids.insert(e.id).second, ErrorCode::InvalidArgument, "duplicate class id " + std::to_string(e.id));
      require(e.color != Rgb{0, 0, 0}, ErrorCode::InvalidArgument, "black is reserved for background: " + e.name);
      require(colors.insert(e.color).second, ErrorCode::InvalidArgument, "duplicate mask colour for " + e.name);
    }
  }

 private:
  std::vector<ClassEntry> entries_;
};

/// One annotated image. Pixels are loaded on demand from disk unless the
/// sample was built in memory; per-class pixel counts are always resident.
struct ImageSample {
  std::string source_id;
  fs::path image_path;
  fs::path mask_path;
  std::size_t height = 0;
  std::size_t width = 0;
  std::map<int, std::size_t> class_pixels;  // foreground label -> pixel count
  std::set<int> classes_present;
  bool snap_colors = false;
  std::shared_ptr<const Tensor<float>> image_cache;
  std::shared_ptr<const LabelMap> mask_cache;

  Tensor<float> image() const {
    if (image_cache) return *image_cache;
    return io::read_rgb(image_path);
  }

  LabelMap raw_mask(const ClassMap& classes) const;

  static ImageSample in_memory(std::string id, Tensor<float> image, LabelMap mask) {
    require(image.rank() == 3 && image.dim(0) == 3 && mask.rank() == 2 && image.dim(1) == mask.dim(0) &&
                image.dim(2) == mask.dim(1),
            ErrorCode::ShapeMismatch, id + ": image " + shape_str(image.shape()) + " vs mask " + shape_str(mask.shape()));
    ImageSample s;
    s.source_id = std::move(id);
    s.height = mask.dim(0);
    s.width = mask.dim(1);
    for (auto v : mask.values())
      if (v != 0) ++s.class_pixels[v];
    for (const auto& [c, _] : s.class_pixels) s.classes_present.insert(c);
    s.image_cache = std::make_shared<const Tensor<float>>(std::move(image));
    s.mask_cache = std::make_shared<const LabelMap>(std::move(mask));
    return s;
  }
};

/// Translate a decoded mask image into integer labels.
inline LabelMap decode_mask(const io::RawImage& raw, const ClassMap& classes, const std::string& name,
                            bool snap_colors = false) {
  const std::size_t h = raw.height(), w = raw.width();
  LabelMap out({h, w});
  for (std::size_t y = 0; y < h; ++y) {
    for (std::size_t x = 0; x < w; ++x) {
      int label;
      if (raw.channels == 1) {
        label = raw.pixels.at(y, x, 0);
        require(label == 0 || classes.contains(label), ErrorCode::UnmappableMaskColor,
                name + ": label " + std::to_string(label) + " at (" + std::to_string(y) + "," + std::to_string(x) +
                    ") is not registered");
      } else {
        Rgb c{raw.pixels.at(y, x, 0), raw.pixels.at(y, x, 1), raw.pixels.at(y, x, 2)};
        if (snap_colors)
          for (auto& v : c) v = v >= 128 ? 255 : 0;
        auto l = classes.label_of(c);
        require(l.has_value(), ErrorCode::UnmappableMaskColor,
                name + ": colour (" + std::to_string(c[0]) + "," + std::to_string(c[1]) + "," + std::to_string(c[2]) +
                    ") at (" + std::to_string(y) + "," + std::to_string(x) + ") is not in the class map");
        label = *l;
      }
      out.at(y, x) = label;
    }
  }
  return out;
}

inline LabelMap ImageSample::raw_mask(const ClassMap& classes) const {
  if (mask_cache) return *mask_cache;
  return decode_mask(io::read_raw(mask_path), classes, mask_path.string(), snap_colors);
}

class DatasetIndex {
 public:
  DatasetIndex() = default;
  explicit DatasetIndex(ClassMap classes) : classes_(std::move(classes)) {}

  const ClassMap& classes() const { return classes_; }
  const std::vector<ImageSample>& samples() const { return samples_; }
  std::vector<ImageSample>& samples() { return samples_; }
  std::size_t size() const { return samples_.size(); }
  const std::vector<std::string>& skipped() const { return skipped_; }

  void add(ImageSample s) {
    for (int c : s.classes_present)
      require(classes_.contains(c), ErrorCode::UnknownClass, s.source_id + ": label " + std::to_string(c));
    require(!by_id_.count(s.source_id), ErrorCode::InvalidArgument, "duplicate sample id " + s.source_id);
    by_id_[s.source_id] = samples_.size();
    samples_.push_back(std::move(s));
  }
  void report_skipped(std::string why) { skipped_.push_back(std::move(why)); }

  bool contains(const std::string& id) const { return by_id_.count(id) != 0; }
  const ImageSample& get(const std::string& id) const {
    auto it = by_id_.find(id);
    require(it != by_id_.end(), ErrorCode::InvalidArgument, "unknown sample " + id);
    return samples_[it->second];
  }
  ImageSample& get_mutable(const std::string& id) {
    auto it = by_id_.find(id);
    require(it != by_id_.end(), ErrorCode::InvalidArgument, "unknown sample " + id);
    return samples_[it->second];
  }

  /// Ids of samples that count as instances of class_id, in index order.
  std::vector<std::string> instances(int class_id) const {
    std::vector<std::string> out;
    for (const auto& s : samples_)
      if (s.classes_present.count(class_id)) out.push_back(s.source_id);
    return out;
  }

  std::map<int, std::size_t> instance_counts() const {
    std::map<int, std::size_t> out;
    for (int c : classes_.ids()) out[c] = 0;
    for (const auto& s : samples_)
      for (int c : s.classes_present) ++out[c];
    return out;
  }

  /// Fingerprint of ids, sizes, per-class pixel counts and instance sets.
  std::uint64_t corpus_hash() const {
    std::vector<const ImageSample*> sorted;
    for (const auto& s : samples_) sorted.push_back(&s);
    std::sort(sorted.begin(), sorted.end(), [](auto* a, auto* b) { return a->source_id < b->source_id; });
    Fnv1a h;
    for (const auto& e : classes_.entries()) {
      h.update_value<std::int32_t>(e.id);
      h.update(e.name);
    }
    for (const auto* s : sorted) {
      h.update(s->source_id);
      h.update_value<std::uint64_t>(s->height);
      h.update_value<std::uint64_t>(s->width);
      for (const auto& [c, n] : s->class_pixels) {
        h.update_value<std::int32_t>(c);
        h.update_value<std::uint64_t>(n);
      }
      for (int c : s->classes_present) h.update_value<std::int32_t>(c);
    }
    return h.digest();
  }

 private:
  ClassMap classes_;
  std::vector<ImageSample> samples_;
  std::map<std::string, std::size_t> by_id_;
  std::vector<std::string> skipped_;
};

struct LoadOptions {
  bool keep_in_memory = false;
  bool snap_colors = false;  // threshold each mask channel at 128 before lookup
  std::size_t min_side = 32;
};

/// Index `root/images/*` against name-matched `root/masks/<stem>.png|bmp`.
inline DatasetIndex load_dataset(const fs::path& root, const ClassMap& classes, const LoadOptions& opts = {}) {
  const fs::path images = root / "images", masks = root / "masks";
  require(fs::is_directory(images), ErrorCode::MissingDirectory, images.string());
  require(fs::is_directory(masks), ErrorCode::MissingDirectory, masks.string());

  auto lower_ext = [](const fs::path& p) {
    std::string e = p.extension().string();
    std::transform(e.begin(), e.end(), e.begin(), [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
    return e;
  };
  std::vector<fs::path> files;
  for (const auto& entry : fs::directory_iterator(images)) {
    const auto e = lower_ext(entry.path());
    if (entry.is_regular_file() && (e == ".png" || e == ".jpg" || e == ".jpeg")) files.push_back(entry.path());
  }
  std::sort(files.begin(), files.end());

  DatasetIndex index(classes);
  for (const auto& img : files) {
    const std::string stem = img.stem().string();
    fs::path mask;
    for (const char* ext : {".png", ".bmp"}) {
      if (fs::exists(masks / (stem + ext))) {
        mask = masks / (stem + ext);
        break;
      }
    }
    if (mask.empty()) {
      index.report_skipped(stem + ": no matching mask");
      continue;
    }
    const io::RawImage raw_mask = io::read_raw(mask);
    LabelMap labels = decode_mask(raw_mask, classes, mask.string(), opts.snap_colors);
    Tensor<float> rgb = io::read_rgb(img);
    if (rgb.dim(1) != labels.dim(0) || rgb.dim(2) != labels.dim(1)) {
      index.report_skipped(stem + ": image and mask sizes differ");
      continue;
    }
    if (labels.dim(0) < opts.min_side || labels.dim(1) < opts.min_side) {
      index.report_skipped(stem + ": smaller than " + std::to_string(opts.min_side) + " pixels");
      continue;
    }
    ImageSample s = ImageSample::in_memory(stem, std::move(rgb), std::move(labels));
    s.image_path = img;
    s.mask_path = mask;
    s.snap_colors = opts.snap_colors;
    if (!opts.keep_in_memory) {
      s.image_cache.reset();
      s.mask_cache.reset();
    }
    index.add(std::move(s));
  }
  return index;
}

/// Drop (sample, class_id) instances whose foreground covers strictly less
/// than min_fraction of the image. Samples themselves are kept.
inline DatasetIndex filter_small_targets(const DatasetIndex& index, int class_id, double min_fraction = 0.10) {
  require(min_fraction > 0.0 && min_fraction < 1.0, ErrorCode::InvalidArgument, "min_fraction must be in (0,1)");
  require(index.classes().contains(class_id), ErrorCode::UnknownClass, "class id " + std::to_string(class_id));
  DatasetIndex out = index;
  for (auto& s : out.samples()) {
    auto it = s.class_pixels.find(class_id);
    if (it == s.class_pixels.end()) continue;
    const double area = static_cast<double>(s.height * s.width);
    // Relative slack so an exact-threshold count is never lost to rounding.
    if (static_cast<double>(it->second) < min_fraction * area * (1.0 - 1e-12)) s.classes_present.erase(class_id);
  }
  return out;
}

inline DatasetIndex filter_small_targets_all(const DatasetIndex& index, double min_fraction = 0.10) {
  DatasetIndex out = index;
  for (int c : index.classes().ids()) out = filter_small_targets(out, c, min_fraction);
  return out;
}

// ---------------------------------------------------------------------------
// Folds

enum class FoldScheme { UWS4, SUIM2, CUSTOM };

inline std::string to_string(FoldScheme s) {
  switch (s) {
    case FoldScheme::UWS4: return "uws4";
    case FoldScheme::SUIM2: return "suim2";
    case FoldScheme::CUSTOM: return "custom";
  }
  return "?";
}

inline FoldScheme parse_fold_scheme(const std::string& s) {
  if (s == "uws4") return FoldScheme::UWS4;
  if (s == "suim2") return FoldScheme::SUIM2;
  if (s == "custom") return FoldScheme::CUSTOM;
  fail(ErrorCode::InvalidArgument, "unknown fold scheme " + s);
}

struct FoldConfig {
  int fold_id = 0;
  std::set<int> train_classes;
  std::set<int> test_classes;
  FoldScheme scheme = FoldScheme::CUSTOM;
};

/// SUIM-FSS split: test classes by abbreviation for fold 0 and fold 1.
inline const std::array<std::vector<std::string>, 2>& suim_fss_splits() {
  static const std::array<std::vector<std::string>, 2> splits{
      std::vector<std::string>{"HD", "PF", "RI", "RO"}, std::vector<std::string>{"FV", "SR", "WR"}};
  return splits;
}

/// Published per-class instance counts of SUIM-FSS after the 10% filter.
inline const std::map<std::string, std::size_t>& suim_fss_reference_counts() {
  static const std::map<std::string, std::size_t> counts{{"HD", 142}, {"PF", 117}, {"RI", 160}, {"RO", 99},
                                                         {"FV", 160}, {"SR", 160}, {"WR", 160}};
  return counts;
}

/// One line per fold listing its test class ids, comma separated.
inline std::vector<std::vector<int>> read_grouping_file(const fs::path& path) {
  std::ifstream is(path);
  require(static_cast<bool>(is), ErrorCode::IoError, "cannot open grouping file " + path.string());
  std::vector<std::vector<int>> groups;
  std::string line;
  while (std::getline(is, line)) {
    if (line.empty() || line[0] == '#') continue;
    std::vector<int> g;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ','))
      if (!cell.empty()) g.push_back(std::stoi(cell));
    groups.push_back(std::move(g));
  }
  return groups;
}

inline std::vector<FoldConfig> folds_from_groups(const ClassMap& classes, const std::vector<std::vector<int>>& groups,
                                                 FoldScheme scheme) {
  const auto ids = classes.ids();
  const std::set<int> all(ids.begin(), ids.end());
  std::set<int> seen;
  std::vector<FoldConfig> out;
  for (std::size_t f = 0; f < groups.size(); ++f) {
    FoldConfig fold{static_cast<int>(f), {}, {}, scheme};
    for (int c : groups[f]) {
      require(all.count(c), ErrorCode::UnknownClass, "class id " + std::to_string(c) + " in fold grouping");
      require(seen.insert(c).second, ErrorCode::InvalidArgument, "class " + std::to_string(c) + " in two folds");
      fold.test_classes.insert(c);
    }
    for (int c : all)
      if (!fold.test_classes.count(c)) fold.train_classes.insert(c);
    out.push_back(std::move(fold));
  }
  require(seen == all, ErrorCode::InvalidArgument, "fold grouping does not cover every class");
  return out;
}

inline std::vector<FoldConfig> build_folds(const DatasetIndex& index, FoldScheme scheme,
                                           const std::optional<std::vector<std::vector<int>>>& grouping = std::nullopt) {
  const ClassMap& classes = index.classes();
  const auto ids = classes.ids();
  if (grouping) {
    require(ids.size() >= grouping->size(), ErrorCode::InsufficientClasses, "fewer classes than folds");
    return folds_from_groups(classes, *grouping, scheme);
  }
  switch (scheme) {
    case FoldScheme::SUIM2: {
      require(ids.size() >= 2, ErrorCode::InsufficientClasses, "SUIM2 needs at least 2 classes");
      std::vector<std::vector<int>> groups(2);
      for (std::size_t f = 0; f < 2; ++f)
        for (const auto& name : suim_fss_splits()[f]) groups[f].push_back(classes.by_name(name).id);
      return folds_from_groups(classes, groups, scheme);
    }
    case FoldScheme::UWS4: {
      require(ids.size() >= 4, ErrorCode::InsufficientClasses,
              "UWS4 needs at least 4 classes, have " + std::to_string(ids.size()));
      std::vector<std::vector<int>> groups(4);
      for (std::size_t i = 0; i < ids.size(); ++i) groups[i % 4].push_back(ids[i]);
      return folds_from_groups(classes, groups, scheme);
    }
    case FoldScheme::CUSTOM:
      fail(ErrorCode::InvalidArgument, "custom fold scheme requires a grouping file");
  }
  return {};
}

// ---------------------------------------------------------------------------
// Episodes

struct EpisodeSpec {
  int class_id = 0;
  std::vector<std::string> support_ids;
  std::string query_id;
  std::string seed_tag;  // provenance only; not serialised, not compared

  std::size_t k() const { return support_ids.size(); }

  friend bool operator==(const EpisodeSpec& a, const EpisodeSpec& b) {
    return a.class_id == b.class_id && a.support_ids == b.support_ids && a.query_id == b.query_id;
  }
};

inline void check_shot_count(std::size_t k) {
  require(k == 1 || k == 5, ErrorCode::InvalidArgument, "k must be 1 or 5, got " + std::to_string(k));
}

/// Draw n episodes: class uniform over `classes`, then K+1 distinct instances
/// uniform within the class (the last one is the query).
inline std::vector<EpisodeSpec> sample_episodes(const std::set<int>& classes, const DatasetIndex& index, std::size_t n,
                                                std::uint64_t seed, std::size_t k, const std::string& tag_prefix) {
  check_shot_count(k);
  require(!classes.empty(), ErrorCode::InsufficientClasses, "no classes to sample from");
  std::vector<int> cls(classes.begin(), classes.end());
  std::vector<std::vector<std::string>> pools;
  for (int c : cls) {
    auto inst = index.instances(c);
    require(inst.size() >= k + 1, ErrorCode::ClassTooSmall,
            "class " + std::to_string(c) + " has " + std::to_string(inst.size()) + " instances, need " +
                std::to_string(k + 1));
    pools.push_back(std::move(inst));
  }
  Rng rng(seed);
  std::vector<EpisodeSpec> out;
  out.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    const auto ci = static_cast<std::size_t>(rng.below(cls.size()));
    const auto& pool = pools[ci];
    const auto pick = rng.choose(pool.size(), k + 1);
    EpisodeSpec e;
    e.class_id = cls[ci];
    for (std::size_t j = 0; j < k; ++j) e.support_ids.push_back(pool[pick[j]]);
    e.query_id = pool[pick[k]];
    e.seed_tag = tag_prefix + "-" + std::to_string(i);
    out.push_back(std::move(e));
  }
  return out;
}

inline std::vector<EpisodeSpec> sample_training_pairs(const FoldConfig& fold, const DatasetIndex& index,
                                                      std::size_t n = 1000, std::uint64_t seed = 0, std::size_t k = 1) {
  return sample_episodes(fold.train_classes, index, n, seed, k,
                         "train-f" + std::to_string(fold.fold_id) + "-s" + std::to_string(seed));
}

inline std::string episode_line(const EpisodeSpec& e) {
  nlohmann::ordered_json j;
  j["class"] = e.class_id;
  j["support"] = e.support_ids;
  j["query"] = e.query_id;
  j["k"] = e.k();
  return j.dump();
}

inline void write_episode_list(const fs::path& path, const std::vector<EpisodeSpec>& specs) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  require(static_cast<bool>(os), ErrorCode::IoError, "cannot write " + path.string());
  for (const auto& e : specs) os << episode_line(e) << '\n';
}

inline std::vector<EpisodeSpec> read_episode_list(const fs::path& path) {
  std::ifstream is(path);
  require(static_cast<bool>(is), ErrorCode::IoError, "cannot open episode list " + path.string());
  std::vector<EpisodeSpec> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      const auto j = nlohmann::json::parse(line);
      EpisodeSpec e;
      e.class_id = j.at("class").get<int>();
      e.support_ids = j.at("support").get<std::vector<std::string>>();
      e.query_id = j.at("query").get<std::string>();
      require(j.at("k").get<std::size_t>() == e.support_ids.size(), ErrorCode::CorruptFile,
              path.string() + ":" + std::to_string(lineno) + ": k disagrees with support list");
      e.seed_tag = path.filename().string() + ":" + std::to_string(lineno);
      out.push_back(std::move(e));
    } catch (const nlohmann::json::exception& ex) {
      fail(ErrorCode::CorruptFile, path.string() + ":" + std::to_string(lineno) + ": " + ex.what());
    }
  }
  return out;
}

/// Sample over the fold's test classes and write the list; evaluation only
/// ever consumes such frozen files.
inline std::vector<EpisodeSpec> freeze_test_pairs(const FoldConfig& fold, const DatasetIndex& index, std::size_t n,
                                                  std::uint64_t seed, const fs::path& out, std::size_t k = 1) {
  auto specs = sample_episodes(fold.test_classes, index, n, seed, k,
                               "test-f" + std::to_string(fold.fold_id) + "-s" + std::to_string(seed));
  write_episode_list(out, specs);
  return specs;
}

// ---------------------------------------------------------------------------
// Materialisation

struct Preprocess {
  std::size_t resolution = 256;
  std::array<double, 3> mean{0.485, 0.456, 0.406};
  std::array<double, 3> stddev{0.229, 0.224, 0.225};
};

template <typename T>
struct Episode {
  std::vector<Tensor<T>> support_images;  // K x [3,R,R]
  std::vector<Mask> support_masks;        // K x [R,R]
  Tensor<T> query_image;                  // [3,R,R]
  Mask query_gt;                          // [R,R]
  Mask query_gt_full;                     // at the query's original resolution
  int class_id = 0;

  std::size_t k() const { return support_images.size(); }
};

template <typename T>
Tensor<T> preprocess_image(const Tensor<float>& rgb, const Preprocess& pre) {
  const Tensor<float> r = resize_bilinear(rgb, pre.resolution, pre.resolution);
  Tensor<T> out(r.shape());
  const std::size_t hw = pre.resolution * pre.resolution;
  for (std::size_t c = 0; c < 3; ++c)
    for (std::size_t i = 0; i < hw; ++i)
      out[c * hw + i] = static_cast<T>((static_cast<double>(r[c * hw + i]) - pre.mean[c]) / pre.stddev[c]);
  return out;
}

inline Mask binarize(const LabelMap& labels, int class_id) {
  Mask m(labels.shape());
  for (std::size_t i = 0; i < labels.size(); ++i) m[i] = labels[i] == class_id ? 1 : 0;
  return m;
}

template <typename T>
Episode<T> materialize_episode(const EpisodeSpec& spec, const DatasetIndex& index, const Preprocess& pre,
                               std::size_t k) {
  require(spec.k() == k, ErrorCode::InvalidArgument,
          "episode has " + std::to_string(spec.k()) + " supports, expected " + std::to_string(k));
  require(pre.resolution % 8 == 0 && pre.resolution > 0, ErrorCode::IndivisibleInput, "resolution must be divisible by 8");
  for (const auto& id : spec.support_ids)
    require(index.contains(id), ErrorCode::InvalidArgument, "episode references unknown sample " + id);
  require(index.contains(spec.query_id), ErrorCode::InvalidArgument, "episode references unknown sample " + spec.query_id);
  require(std::find(spec.support_ids.begin(), spec.support_ids.end(), spec.query_id) == spec.support_ids.end(),
          ErrorCode::InvalidArgument, "query " + spec.query_id + " is also a support");

  Episode<T> ep;
  ep.class_id = spec.class_id;
  for (const auto& id : spec.support_ids) {
    const ImageSample& s = index.get(id);
    ep.support_images.push_back(preprocess_image<T>(s.image(), pre));
    Mask m = binarize(resize_nearest(s.raw_mask(index.classes()), pre.resolution, pre.resolution), spec.class_id);
    require(count_nonzero(m) > 0, ErrorCode::EmptyMaskAfterResize,
            id + ": class " + std::to_string(spec.class_id) + " vanished at resolution " +
                std::to_string(pre.resolution));
    ep.support_masks.push_back(std::move(m));
  }
  const ImageSample& q = index.get(spec.query_id);
  ep.query_image = preprocess_image<T>(q.image(), pre);
  const LabelMap qmask = q.raw_mask(index.classes());
  ep.query_gt_full = binarize(qmask, spec.class_id);
  ep.query_gt = binarize(resize_nearest(qmask, pre.resolution, pre.resolution), spec.class_id);
  return ep;
}

}  // namespace fssuw
