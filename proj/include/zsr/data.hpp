#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "zsr/binary_io.hpp"
#include "zsr/errors.hpp"
#include "zsr/losses.hpp"
#include "zsr/numerics/tensor.hpp"

namespace zsr {

// A block of embedding rows with one category label per row.
struct FeatureSet {
  std::uint32_t dim = 1;
  Matrix<float> values = Matrix<float>(0, 1);  // [rows, dim]
  std::vector<std::uint32_t> labels;
  std::vector<std::string> manifest;  // category index -> name

  std::size_t rows() const { return labels.size(); }

  std::optional<std::uint32_t> category_index(std::string_view name) const {
    for (std::size_t i = 0; i < manifest.size(); ++i) {
      if (manifest[i] == name) return static_cast<std::uint32_t>(i);
    }
    return std::nullopt;
  }

  const std::string& label_name(std::size_t row) const { return manifest.at(labels.at(row)); }

  void validate() const {
    if (dim == 0) throw ValidationError("feature set: dim must be positive");
    if (values.cols() != static_cast<Eigen::Index>(dim) ||
        values.rows() != static_cast<Eigen::Index>(labels.size())) {
      throw ValidationError("feature set: values are " + std::to_string(values.rows()) + "x" +
                            std::to_string(values.cols()) + " but dim=" + std::to_string(dim) +
                            " and " + std::to_string(labels.size()) + " labels");
    }
    for (std::size_t r = 0; r < labels.size(); ++r) {
      if (labels[r] >= manifest.size()) {
        throw ValidationError("feature set: row " + std::to_string(r) + " has label " +
                              std::to_string(labels[r]) + " outside a manifest of " +
                              std::to_string(manifest.size()));
      }
    }
    std::set<std::string_view> names(manifest.begin(), manifest.end());
    if (names.size() != manifest.size()) throw ValidationError("feature set: duplicate category name");
    if (!values.allFinite()) throw ValidationError("feature set: non-finite value");
  }

  // Rows whose indices are listed, keeping the manifest unchanged.
  FeatureSet subset(const std::vector<std::uint32_t>& rows_to_keep) const {
    FeatureSet out;
    out.dim = dim;
    out.manifest = manifest;
    out.values.resize(static_cast<Eigen::Index>(rows_to_keep.size()), dim);
    out.labels.reserve(rows_to_keep.size());
    for (std::size_t i = 0; i < rows_to_keep.size(); ++i) {
      out.values.row(static_cast<Eigen::Index>(i)) = values.row(rows_to_keep[i]);
      out.labels.push_back(labels[rows_to_keep[i]]);
    }
    return out;
  }
};

// ---------------------------------------------------------------------------
// SFV1: "SFV1", u32 dim, u32 rows, u32 reserved (0), rows*dim f32 row-major,
// rows u32 labels, u32 category count, then per category u32 length + bytes.
// All integers and floats little-endian.

inline constexpr std::string_view kFeatureMagic = "SFV1";

inline std::vector<char> encode_features(const FeatureSet& set) {
  set.validate();
  io::ByteWriter w;
  w.bytes(kFeatureMagic);
  w.u32(set.dim);
  w.u32(static_cast<std::uint32_t>(set.rows()));
  w.u32(0);
  w.f32s(std::span<const float>(set.values.data(), static_cast<std::size_t>(set.values.size())));
  for (auto l : set.labels) w.u32(l);
  w.u32(static_cast<std::uint32_t>(set.manifest.size()));
  for (const auto& name : set.manifest) w.str(name);
  return w.buffer();
}

inline FeatureSet decode_features(std::vector<char> bytes) {
  io::ByteReader r(std::move(bytes));
  if (r.bytes(4, "magic") != kFeatureMagic) {
    throw FormatError("bad magic: not an SFV1 feature file", 0);
  }
  FeatureSet set;
  set.dim = r.u32("dim");
  const std::uint32_t rows = r.u32("row count");
  if (r.u32("reserved field") != 0) throw FormatError("reserved field must be 0", r.offset() - 4);
  if (set.dim == 0) throw FormatError("dim must be positive", 4);
  const std::uint64_t payload = std::uint64_t{rows} * set.dim * 4 + std::uint64_t{rows} * 4;
  r.need(payload, "feature values and labels");
  set.values.resize(rows, set.dim);
  for (Eigen::Index i = 0; i < set.values.size(); ++i) {
    const auto at = r.offset();
    const float v = r.f32("feature values");
    if (!std::isfinite(v)) throw FormatError("non-finite feature value", at);
    set.values.data()[i] = v;
  }
  set.labels.resize(rows);
  const auto labels_at = r.offset();
  for (auto& l : set.labels) l = r.u32("labels");
  const std::uint32_t categories = r.u32("category count");
  set.manifest.reserve(std::min<std::uint64_t>(categories, r.remaining() / 4));
  for (std::uint32_t c = 0; c < categories; ++c) {
    const auto at = r.offset();
    std::string name = r.str("manifest entry");
    if (std::find(set.manifest.begin(), set.manifest.end(), name) != set.manifest.end()) {
      throw FormatError("duplicate category name '" + name + "'", at);
    }
    set.manifest.push_back(std::move(name));
  }
  for (std::size_t i = 0; i < set.labels.size(); ++i) {
    if (set.labels[i] >= categories) {
      throw FormatError("label " + std::to_string(set.labels[i]) + " exceeds category count " +
                            std::to_string(categories),
                        labels_at + 4 * i);
    }
  }
  if (!r.at_end()) r.fail("trailing bytes after manifest");
  return set;
}

inline void write_features(const FeatureSet& set, const std::filesystem::path& path) {
  io::write_file(path, encode_features(set));
}

inline FeatureSet read_features(const std::filesystem::path& path) {
  try {
    return decode_features(io::read_file(path));
  } catch (const FormatError& e) {
    throw FormatError(path.string() + ": " + e.what(), e.offset());
  }
}

// ---------------------------------------------------------------------------
// Seen/unseen split.

struct SplitSpec {
  std::vector<std::string> seen;
  std::vector<std::string> unseen;

  void validate() const {
    if (seen.empty()) throw ValidationError("split: no seen categories");
    if (unseen.empty()) throw ValidationError("split: no unseen categories");
    std::set<std::string_view> all;
    for (const auto& n : seen) {
      if (!all.insert(n).second) throw ValidationError("split: '" + n + "' listed twice");
    }
    for (const auto& n : unseen) {
      if (!all.insert(n).second) {
        throw ValidationError("split: '" + n + "' is both seen and unseen (or listed twice)");
      }
    }
  }

  void validate_against(const FeatureSet& set, std::string_view which) const {
    for (const auto* names : {&seen, &unseen}) {
      for (const auto& n : *names) {
        if (!set.category_index(n)) {
          throw ValidationError("split: unknown category '" + n + "' (not in the " +
                                std::string(which) + " manifest)");
        }
      }
    }
  }
};

inline std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

// Text format: "#" comments, "[seen]" / "[unseen]" headers, one name per line.
inline SplitSpec parse_split(std::string_view text) {
  SplitSpec split;
  std::vector<std::string>* section = nullptr;
  std::size_t offset = 0;
  while (offset <= text.size()) {
    auto end = text.find('\n', offset);
    if (end == std::string_view::npos) end = text.size();
    std::string line = trim(text.substr(offset, end - offset));
    if (!line.empty() && line[0] != '#') {
      if (line == "[seen]") {
        section = &split.seen;
      } else if (line == "[unseen]") {
        section = &split.unseen;
      } else if (line.front() == '[') {
        throw FormatError("split: unknown section " + line, offset);
      } else if (section == nullptr) {
        throw FormatError("split: category '" + line + "' before any section header", offset);
      } else {
        section->push_back(line);
      }
    }
    offset = end + 1;
  }
  split.validate();
  return split;
}

inline std::string format_split(const SplitSpec& split) {
  std::string out = "[seen]\n";
  for (const auto& n : split.seen) out += n + "\n";
  out += "[unseen]\n";
  for (const auto& n : split.unseen) out += n + "\n";
  return out;
}

inline SplitSpec read_split(const std::filesystem::path& path) {
  try {
    return parse_split(io::read_text(path));
  } catch (const FormatError& e) {
    throw FormatError(path.string() + ": " + e.what(), e.offset());
  }
}

inline void write_split(const SplitSpec& split, const std::filesystem::path& path) {
  io::write_text(path, format_split(split));
}

// ---------------------------------------------------------------------------
// Applying a split.

// Seen-category rows of both domains. Class indices follow the order of the
// split's seen list and index the structure classifier's outputs.
struct TrainPool {
  FeatureSet images;
  FeatureSet sketches;
  std::vector<int> image_classes;
  std::vector<int> sketch_classes;
  std::vector<std::string> classes;
};

struct ZeroShotSplit {
  TrainPool train;
  FeatureSet queries;  // unseen-category sketches
  FeatureSet gallery;  // unseen-category images
  std::vector<std::uint32_t> query_rows;    // row in the source sketch set
  std::vector<std::uint32_t> gallery_rows;  // row in the source image set
};

namespace detail {

inline std::vector<std::uint32_t> rows_in(const FeatureSet& set,
                                          const std::vector<std::string>& names) {
  std::set<std::uint32_t> wanted;
  for (const auto& n : names) wanted.insert(*set.category_index(n));
  std::vector<std::uint32_t> rows;
  for (std::size_t r = 0; r < set.rows(); ++r) {
    if (wanted.contains(set.labels[r])) rows.push_back(static_cast<std::uint32_t>(r));
  }
  return rows;
}

inline std::vector<int> class_indices(const FeatureSet& set,
                                      const std::vector<std::string>& classes) {
  std::unordered_map<std::string, int> lookup;
  for (std::size_t i = 0; i < classes.size(); ++i) lookup[classes[i]] = static_cast<int>(i);
  std::vector<int> out;
  out.reserve(set.rows());
  for (std::size_t r = 0; r < set.rows(); ++r) out.push_back(lookup.at(set.label_name(r)));
  return out;
}

}  // namespace detail

inline TrainPool make_train_pool(const FeatureSet& images, const FeatureSet& sketches,
                                 const std::vector<std::string>& classes) {
  for (const auto& n : classes) {
    if (!images.category_index(n) || !sketches.category_index(n)) {
      throw ValidationError("unknown category '" + n + "'");
    }
  }
  TrainPool pool;
  pool.classes = classes;
  pool.images = images.subset(detail::rows_in(images, classes));
  pool.sketches = sketches.subset(detail::rows_in(sketches, classes));
  pool.image_classes = detail::class_indices(pool.images, classes);
  pool.sketch_classes = detail::class_indices(pool.sketches, classes);
  return pool;
}

inline ZeroShotSplit apply_split(const FeatureSet& images, const FeatureSet& sketches,
                                 const SplitSpec& split) {
  split.validate();
  split.validate_against(images, "image");
  split.validate_against(sketches, "sketch");
  ZeroShotSplit out;
  out.train = make_train_pool(images, sketches, split.seen);
  out.query_rows = detail::rows_in(sketches, split.unseen);
  out.gallery_rows = detail::rows_in(images, split.unseen);
  out.queries = sketches.subset(out.query_rows);
  out.gallery = images.subset(out.gallery_rows);
  if (out.train.images.rows() == 0 || out.train.sketches.rows() == 0) {
    throw DataError("split: training pool is empty after filtering");
  }
  if (out.queries.rows() == 0) throw DataError("split: no unseen-category sketch queries");
  if (out.gallery.rows() == 0) throw DataError("split: no unseen-category gallery images");
  return out;
}

// ---------------------------------------------------------------------------
// Same-category pair sampling.

struct PairIndices {
  std::vector<std::uint32_t> image_rows;
  std::vector<std::uint32_t> sketch_rows;
  std::vector<int> classes;

  std::size_t size() const { return classes.size(); }
};

// Each epoch visits every sketch once in a seeded shuffled order and pairs it
// with a uniformly drawn image of the same class.
class PairSampler {
 public:
  PairSampler(const TrainPool& pool, std::uint32_t batch_size, std::uint64_t seed)
      : pool_(pool), batch_size_(batch_size), rng_(seed) {
    if (batch_size == 0) throw ValidationError("batch size must be positive");
    images_by_class_.resize(pool.classes.size());
    std::vector<std::size_t> sketch_count(pool.classes.size(), 0);
    for (std::size_t r = 0; r < pool.image_classes.size(); ++r) {
      images_by_class_[static_cast<std::size_t>(pool.image_classes[r])].push_back(
          static_cast<std::uint32_t>(r));
    }
    for (int c : pool.sketch_classes) ++sketch_count[static_cast<std::size_t>(c)];
    std::string missing;
    for (std::size_t c = 0; c < pool.classes.size(); ++c) {
      if (images_by_class_[c].empty() || sketch_count[c] == 0) {
        missing += (missing.empty() ? "" : ", ") + pool.classes[c] +
                   (images_by_class_[c].empty() ? " (no images)" : " (no sketches)");
      }
    }
    if (!missing.empty()) throw DataError("seen categories missing a domain: " + missing);
    order_.resize(pool.sketches.rows());
    for (std::size_t i = 0; i < order_.size(); ++i) order_[i] = static_cast<std::uint32_t>(i);
  }

  std::vector<PairIndices> next_epoch() {
    std::shuffle(order_.begin(), order_.end(), rng_);
    std::vector<PairIndices> batches;
    for (std::size_t start = 0; start < order_.size(); start += batch_size_) {
      const std::size_t stop = std::min(order_.size(), start + batch_size_);
      PairIndices b;
      for (std::size_t i = start; i < stop; ++i) {
        const std::uint32_t sk = order_[i];
        const int c = pool_.sketch_classes[sk];
        const auto& candidates = images_by_class_[static_cast<std::size_t>(c)];
        std::uniform_int_distribution<std::size_t> pick(0, candidates.size() - 1);
        b.sketch_rows.push_back(sk);
        b.image_rows.push_back(candidates[pick(rng_)]);
        b.classes.push_back(c);
      }
      batches.push_back(std::move(b));
    }
    return batches;
  }

  PairBatch<float> gather(const PairIndices& idx) const {
    PairBatch<float> batch;
    const auto n = static_cast<Eigen::Index>(idx.size());
    batch.images.resize(n, pool_.images.dim);
    batch.sketches.resize(n, pool_.sketches.dim);
    for (Eigen::Index i = 0; i < n; ++i) {
      batch.images.row(i) = pool_.images.values.row(idx.image_rows[static_cast<std::size_t>(i)]);
      batch.sketches.row(i) =
          pool_.sketches.values.row(idx.sketch_rows[static_cast<std::size_t>(i)]);
    }
    batch.labels = idx.classes;
    return batch;
  }

 private:
  const TrainPool& pool_;
  std::uint32_t batch_size_;
  std::mt19937_64 rng_;
  std::vector<std::vector<std::uint32_t>> images_by_class_;
  std::vector<std::uint32_t> order_;
};

// ---------------------------------------------------------------------------
// Synthetic data with known structure/appearance factors.
//
// Category c has a structure latent s_c. An image is relu(A [s_c + n; a])
// with a fresh appearance latent a; a sketch is relu(B (s_c + n')). A and B
// are shared by all categories, so sketches carry no appearance signal.

struct SyntheticSpec {
  std::uint32_t seen_categories = 15;
  std::uint32_t unseen_categories = 5;
  std::uint32_t images_per_category = 100;
  std::uint32_t sketches_per_category = 100;
  std::uint32_t structure_dim = 8;
  std::uint32_t appearance_dim = 8;
  std::uint32_t image_dim = 64;
  std::uint32_t sketch_dim = 64;
  double noise = 0.1;
  std::uint64_t seed = 1;
  // Extra seen-category images drawn from an independent stream, for
  // evaluating on images the trainer never saw.
  std::uint32_t holdout_images_per_category = 0;

  void validate() const {
    if (seen_categories == 0 || unseen_categories == 0 || images_per_category == 0 ||
        sketches_per_category == 0 || structure_dim == 0 || appearance_dim == 0 ||
        image_dim == 0 || sketch_dim == 0) {
      throw ValidationError("synthetic spec: all counts and dimensions must be positive");
    }
    if (!(noise >= 0.0) || !std::isfinite(noise)) {
      throw ValidationError("synthetic spec: noise scale must be finite and >= 0");
    }
  }
};

struct SyntheticData {
  FeatureSet images;
  FeatureSet sketches;
  SplitSpec split;
  FeatureSet holdout_images;
};

inline std::string synthetic_category_name(std::uint32_t c) {
  std::string digits = std::to_string(c);
  return "category_" + std::string(digits.size() < 3 ? 3 - digits.size() : 0, '0') + digits;
}

inline SyntheticData generate_synthetic(const SyntheticSpec& spec) {
  spec.validate();
  const std::uint32_t categories = spec.seen_categories + spec.unseen_categories;
  const std::uint32_t ds = spec.structure_dim;
  const std::uint32_t da = spec.appearance_dim;
  std::mt19937_64 rng(spec.seed);

  auto gaussian = [](Eigen::Index rows, Eigen::Index cols, double scale, std::mt19937_64& g) {
    std::normal_distribution<double> normal(0.0, 1.0);
    Eigen::MatrixXd m(rows, cols);
    for (Eigen::Index i = 0; i < rows; ++i) {
      for (Eigen::Index j = 0; j < cols; ++j) m(i, j) = scale * normal(g);
    }
    return m;
  };

  const Eigen::MatrixXd image_mix = gaussian(spec.image_dim, ds + da, 1.0 / std::sqrt(ds + da), rng);
  const Eigen::MatrixXd sketch_mix = gaussian(spec.sketch_dim, ds, 1.0 / std::sqrt(ds), rng);
  const Eigen::MatrixXd structure = gaussian(categories, ds, 1.0, rng);

  SyntheticData out;
  std::vector<std::string> manifest;
  for (std::uint32_t c = 0; c < categories; ++c) {
    manifest.push_back(synthetic_category_name(c));
    (c < spec.seen_categories ? out.split.seen : out.split.unseen).push_back(manifest.back());
  }

  auto image_row = [&](std::uint32_t c, std::mt19937_64& g) {
    Eigen::VectorXd latent(ds + da);
    latent.head(ds) = structure.row(c).transpose() + gaussian(ds, 1, spec.noise, g);
    latent.tail(da) = gaussian(da, 1, 1.0, g);
    return (image_mix * latent).cwiseMax(0.0).cast<float>().eval();
  };
  auto sketch_row = [&](std::uint32_t c, std::mt19937_64& g) {
    Eigen::VectorXd latent = structure.row(c).transpose() + gaussian(ds, 1, spec.noise, g);
    return (sketch_mix * latent).cwiseMax(0.0).cast<float>().eval();
  };
  auto init_set = [&](FeatureSet& s, std::uint32_t dim, std::size_t rows) {
    s.dim = dim;
    s.manifest = manifest;
    s.values.resize(static_cast<Eigen::Index>(rows), dim);
    s.labels.reserve(rows);
  };

  init_set(out.images, spec.image_dim, std::size_t{categories} * spec.images_per_category);
  init_set(out.sketches, spec.sketch_dim, std::size_t{categories} * spec.sketches_per_category);
  for (std::uint32_t c = 0; c < categories; ++c) {
    for (std::uint32_t i = 0; i < spec.images_per_category; ++i) {
      out.images.values.row(static_cast<Eigen::Index>(out.images.labels.size())) =
          image_row(c, rng).transpose();
      out.images.labels.push_back(c);
    }
    for (std::uint32_t i = 0; i < spec.sketches_per_category; ++i) {
      out.sketches.values.row(static_cast<Eigen::Index>(out.sketches.labels.size())) =
          sketch_row(c, rng).transpose();
      out.sketches.labels.push_back(c);
    }
  }

  std::seed_seq holdout_seed{static_cast<std::uint32_t>(spec.seed),
                             static_cast<std::uint32_t>(spec.seed >> 32), 0x686f6c64u};
  std::mt19937_64 holdout_rng(holdout_seed);
  init_set(out.holdout_images, spec.image_dim,
           std::size_t{spec.seen_categories} * spec.holdout_images_per_category);
  for (std::uint32_t c = 0; c < spec.seen_categories; ++c) {
    for (std::uint32_t i = 0; i < spec.holdout_images_per_category; ++i) {
      out.holdout_images.values.row(static_cast<Eigen::Index>(out.holdout_images.labels.size())) =
          image_row(c, holdout_rng).transpose();
      out.holdout_images.labels.push_back(c);
    }
  }
  return out;
}

}  // namespace zsr
