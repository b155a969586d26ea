#pragma once

#include <algorithm>
#include <atomic>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <random>
#include <span>
#include <string>
#include <thread>
#include <vector>

#include "zsr/data.hpp"
#include "zsr/errors.hpp"
#include "zsr/model.hpp"

namespace zsr {

struct FusionWeights {
  double lambda1 = 1.0;  // on D_im + D_sk
  double lambda2 = 1.0;  // on D_st
  std::uint32_t n_samples = 16;

  void validate() const {
    if (!(lambda1 >= 0.0) || !(lambda2 >= 0.0) || !std::isfinite(lambda1) ||
        !std::isfinite(lambda2)) {
      throw ValidationError("fusion weights must be finite and >= 0");
    }
    if (lambda1 == 0.0 && lambda2 == 0.0) throw ValidationError("fusion weights are both zero");
    if (n_samples == 0) throw ValidationError("n_samples must be >= 1");
  }
};

// Which distance orders the gallery.
enum class RankSpace { kFusion, kStructure, kSketch, kImage };

struct RankedEntry {
  std::uint32_t gallery_index = 0;
  double d_st = 0.0;
  double d_sk = 0.0;
  double d_im = 0.0;
  double d_fusion = 0.0;

  double in(RankSpace s) const {
    switch (s) {
      case RankSpace::kStructure: return d_st;
      case RankSpace::kSketch: return d_sk;
      case RankSpace::kImage: return d_im;
      case RankSpace::kFusion: break;
    }
    return d_fusion;
  }
};

struct RankedList {
  std::uint32_t query_index = 0;
  std::vector<RankedEntry> entries;  // ascending distance, ties by gallery index
};

// 1 - a.b / (|a||b| + 1e-12); a zero vector is at distance 1 from anything.
template <typename T>
double cosine_distance(std::span<const T> a, std::span<const T> b) {
  if (a.size() != b.size()) {
    throw DimensionError("cosine_distance: lengths " + std::to_string(a.size()) + " and " +
                         std::to_string(b.size()));
  }
  double dot = 0.0, na = 0.0, nb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double x = static_cast<double>(a[i]);
    const double y = static_cast<double>(b[i]);
    dot += x * y;
    na += x * x;
    nb += y * y;
  }
  return 1.0 - dot / (std::sqrt(na) * std::sqrt(nb) + 1e-12);
}

template <typename T>
double cosine_distance(const Matrix<T>& a, const Matrix<T>& b) {
  return cosine_distance(std::span<const T>(a.data(), static_cast<std::size_t>(a.size())),
                         std::span<const T>(b.data(), static_cast<std::size_t>(b.size())));
}

inline double fused_distance(double d_im, double d_sk, double d_st, const FusionWeights& w) {
  return w.lambda1 * (d_im + d_sk) + w.lambda2 * d_st;
}

template <typename T>
double structure_distance(const DisentangleModel<T>& model, const Matrix<T>& f_im,
                          const Matrix<T>& f_sk) {
  return cosine_distance<T>(encode_image(model, f_im).structure, encode_sketch(model, f_sk));
}

template <typename T>
double sketch_space_distance(const DisentangleModel<T>& model, const Matrix<T>& f_im,
                             const Matrix<T>& f_sk) {
  detail::require_cols(f_sk, model.dims.sketch_dim, "sketch_space_distance");
  const Matrix<T> generated = decode_sketch(model, encode_image(model, f_im).structure);
  return cosine_distance<T>(generated, f_sk);
}

// Mean of N decodes G_im([z_i, f_sk_st]) with z_i ~ N(0, I).
template <typename T>
Matrix<T> generate_image_feature(const DisentangleModel<T>& model, const Matrix<T>& f_sk_st,
                                 std::uint32_t n_samples, std::mt19937_64& rng) {
  if (n_samples == 0) throw ValidationError("generate_image_feature: n_samples must be >= 1");
  detail::require_cols(f_sk_st, model.dims.structure_dim, "generate_image_feature");
  if (f_sk_st.rows() != 1) throw DimensionError("generate_image_feature: expects one sketch");
  std::normal_distribution<double> normal(0.0, 1.0);
  Matrix<T> z(n_samples, model.dims.latent_dim);
  for (Eigen::Index i = 0; i < z.size(); ++i) z.data()[i] = static_cast<T>(normal(rng));
  const Matrix<T> structure = f_sk_st.replicate(n_samples, 1);
  const Matrix<T> decoded = decode_image(model, z, structure);
  return decoded.colwise().mean();
}

template <typename T>
double image_space_distance(const DisentangleModel<T>& model, const Matrix<T>& f_im,
                            const Matrix<T>& f_sk, std::uint32_t n_samples,
                            std::mt19937_64& rng) {
  detail::require_cols(f_im, model.dims.image_dim, "image_space_distance");
  const Matrix<T> generated =
      generate_image_feature(model, encode_sketch(model, f_sk), n_samples, rng);
  return cosine_distance<T>(f_im, generated);
}

// Gallery-side quantities, computed once per gallery.
struct PreparedGallery {
  Matrix<float> features;
  Matrix<float> structure;         // E_im_st(f_im)
  Matrix<float> generated_sketch;  // G_sk(E_im_st(f_im))
  std::vector<std::uint32_t> indices;  // reported gallery index per row

  std::size_t size() const { return indices.size(); }
};

inline PreparedGallery prepare_gallery(const DisentangleModel<float>& model,
                                       const FeatureSet& gallery,
                                       std::vector<std::uint32_t> indices = {}) {
  if (gallery.rows() == 0) throw ValidationError("empty gallery");
  if (indices.empty()) {
    for (std::size_t i = 0; i < gallery.rows(); ++i) indices.push_back(static_cast<std::uint32_t>(i));
  }
  if (indices.size() != gallery.rows()) throw DimensionError("gallery index map has wrong length");
  PreparedGallery p;
  p.features = gallery.values;
  p.structure = encode_image(model, gallery.values).structure;
  p.generated_sketch = decode_sketch(model, p.structure);
  p.indices = std::move(indices);
  return p;
}

inline void sort_ranked(std::vector<RankedEntry>& entries, RankSpace space) {
  std::sort(entries.begin(), entries.end(), [space](const RankedEntry& a, const RankedEntry& b) {
    const double da = a.in(space);
    const double db = b.in(space);
    if (da != db) return da < db;
    return a.gallery_index < b.gallery_index;
  });
}

// Scores one sketch query against every gallery item. The query is encoded
// once and one generated image feature is shared by all comparisons.
inline RankedList rank_gallery(const DisentangleModel<float>& model, const Matrix<float>& query,
                               const PreparedGallery& gallery, const FusionWeights& w,
                               std::mt19937_64& rng, RankSpace space = RankSpace::kFusion,
                               std::uint32_t query_index = 0) {
  w.validate();
  if (gallery.size() == 0) throw ValidationError("empty gallery");
  const Matrix<float> sk_st = encode_sketch(model, query);
  const Matrix<float> generated = generate_image_feature(model, sk_st, w.n_samples, rng);
  RankedList out;
  out.query_index = query_index;
  out.entries.resize(gallery.size());
  const auto row = [](const Matrix<float>& m, std::size_t r) {
    return std::span<const float>(m.data() + r * static_cast<std::size_t>(m.cols()),
                                  static_cast<std::size_t>(m.cols()));
  };
  const std::span<const float> sk_st_v(sk_st.data(), static_cast<std::size_t>(sk_st.size()));
  const std::span<const float> query_v(query.data(), static_cast<std::size_t>(query.size()));
  const std::span<const float> gen_v(generated.data(), static_cast<std::size_t>(generated.size()));
  for (std::size_t i = 0; i < gallery.size(); ++i) {
    RankedEntry& e = out.entries[i];
    e.gallery_index = gallery.indices[i];
    e.d_st = cosine_distance(row(gallery.structure, i), sk_st_v);
    e.d_sk = cosine_distance(row(gallery.generated_sketch, i), query_v);
    e.d_im = cosine_distance(row(gallery.features, i), gen_v);
    e.d_fusion = fused_distance(e.d_im, e.d_sk, e.d_st, w);
  }
  sort_ranked(out.entries, space);
  return out;
}

inline RankedList rank_gallery(const DisentangleModel<float>& model, const Matrix<float>& query,
                               const FeatureSet& gallery, const FusionWeights& w,
                               std::mt19937_64& rng, RankSpace space = RankSpace::kFusion) {
  if (gallery.rows() == 0) throw ValidationError("empty gallery");
  return rank_gallery(model, query, prepare_gallery(model, gallery), w, rng, space);
}

// Per-query stream so results do not depend on scheduling.
inline std::mt19937_64 query_rng(std::uint64_t seed, std::uint32_t query_index) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    query_index, 0x71u};
  return std::mt19937_64(seq);
}

struct RetrievalOptions {
  FusionWeights weights;
  RankSpace space = RankSpace::kFusion;
  std::uint64_t seed = 1;
  unsigned threads = 1;
  std::size_t top_k = 0;  // 0 keeps the full ranking
};

// Ranks every query row. `query_indices` names each query in the output
// (defaults to row order).
inline std::vector<RankedList> rank_queries(const DisentangleModel<float>& model,
                                            const FeatureSet& queries,
                                            const PreparedGallery& gallery,
                                            const RetrievalOptions& opt,
                                            std::vector<std::uint32_t> query_indices = {}) {
  opt.weights.validate();
  if (query_indices.empty()) {
    for (std::size_t i = 0; i < queries.rows(); ++i) query_indices.push_back(static_cast<std::uint32_t>(i));
  }
  if (query_indices.size() != queries.rows()) throw DimensionError("query index map has wrong length");
  std::vector<RankedList> out(queries.rows());
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t q = next++; q < queries.rows(); q = next++) {
      std::mt19937_64 rng = query_rng(opt.seed, query_indices[q]);
      const Matrix<float> query = queries.values.row(static_cast<Eigen::Index>(q));
      RankedList list =
          rank_gallery(model, query, gallery, opt.weights, rng, opt.space, query_indices[q]);
      if (opt.top_k != 0 && list.entries.size() > opt.top_k) list.entries.resize(opt.top_k);
      out[q] = std::move(list);
    }
  };
  const unsigned threads = std::max(1u, opt.threads);
  if (threads == 1) {
    worker();
  } else {
    std::vector<std::jthread> pool;
    for (unsigned t = 0; t < threads; ++t) pool.emplace_back(worker);
  }
  return out;
}

// Text form: one line per query, "query<TAB>gallery:distance<TAB>...", where
// distance is the one the list was sorted by.
inline std::string format_rankings(const std::vector<RankedList>& lists, RankSpace space) {
  std::string out;
  char buf[64];
  for (const auto& list : lists) {
    out += std::to_string(list.query_index);
    for (const auto& e : list.entries) {
      out += '\t';
      out += std::to_string(e.gallery_index);
      out += ':';
      const auto res = std::to_chars(buf, buf + sizeof(buf), e.in(space));
      out.append(buf, res.ptr);
    }
    out += '\n';
  }
  return out;
}

// Inverse of format_rankings; distances land in d_fusion.
inline std::vector<RankedList> parse_rankings(std::string_view text) {
  std::vector<RankedList> lists;
  std::size_t offset = 0;
  while (offset < text.size()) {
    auto end = text.find('\n', offset);
    if (end == std::string_view::npos) end = text.size();
    std::string_view line = text.substr(offset, end - offset);
    const std::size_t line_at = offset;
    offset = end + 1;
    if (line.empty()) continue;
    auto bad = [&](const std::string& why) -> FormatError {
      return FormatError("rankings: " + why, line_at);
    };
    std::vector<std::string_view> fields;
    for (std::size_t p = 0;;) {
      const auto tab = line.find('\t', p);
      fields.push_back(line.substr(p, tab == std::string_view::npos ? std::string_view::npos : tab - p));
      if (tab == std::string_view::npos) break;
      p = tab + 1;
    }
    RankedList list;
    auto parse_u32 = [&](std::string_view s) {
      std::uint32_t v = 0;
      const auto res = std::from_chars(s.data(), s.data() + s.size(), v);
      if (res.ec != std::errc() || res.ptr != s.data() + s.size()) throw bad("bad index '" + std::string(s) + "'");
      return v;
    };
    list.query_index = parse_u32(fields[0]);
    for (std::size_t f = 1; f < fields.size(); ++f) {
      const auto colon = fields[f].find(':');
      if (colon == std::string_view::npos) throw bad("expected gallery:distance");
      RankedEntry e;
      e.gallery_index = parse_u32(fields[f].substr(0, colon));
      const std::string_view d = fields[f].substr(colon + 1);
      const auto res = std::from_chars(d.data(), d.data() + d.size(), e.d_fusion);
      if (res.ec != std::errc() || res.ptr != d.data() + d.size()) throw bad("bad distance");
      list.entries.push_back(e);
    }
    lists.push_back(std::move(list));
  }
  return lists;
}

}  // namespace zsr
