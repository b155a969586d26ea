#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "gtest/gtest.h"
#include "zsr/retrieval.hpp"

namespace zsr {
namespace {

ModelDims small_dims() {
  ModelDims d;
  d.image_dim = 10;
  d.sketch_dim = 7;
  d.hidden = 12;
  d.structure_dim = 6;
  d.appearance_dim = 6;
  d.latent_dim = 3;
  d.num_classes = 3;
  return d;
}

DisentangleModel<float> small_model(std::uint64_t seed = 3) {
  auto m = DisentangleModel<float>::initialize(small_dims(), seed);
  // Positive biases keep ReLU outputs away from all-zero rows.
  std::mt19937_64 rng(seed + 100);
  std::uniform_real_distribution<float> u(0.0f, 0.2f);
  for (auto& [name, t] : m.params) {
    if (name.ends_with(".bias")) {
      for (Eigen::Index i = 0; i < t.values.size(); ++i) t.values.data()[i] = u(rng);
    }
  }
  return m;
}

FeatureSet random_features(std::size_t rows, std::uint32_t dim, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<float> u(0.0f, 1.0f);
  FeatureSet s;
  s.dim = dim;
  s.manifest = {"a", "b"};
  s.values.resize(static_cast<Eigen::Index>(rows), dim);
  for (Eigen::Index i = 0; i < s.values.size(); ++i) s.values.data()[i] = u(rng);
  for (std::size_t r = 0; r < rows; ++r) s.labels.push_back(static_cast<std::uint32_t>(r % 2));
  return s;
}

Matrix<float> row_of(const FeatureSet& s, std::size_t r) {
  return s.values.row(static_cast<Eigen::Index>(r));
}

TEST(CosineDistanceTest, HandValues) {
  const std::vector<double> a{1.0, 2.0, 3.0};
  EXPECT_NEAR(cosine_distance<double>(a, a), 0.0, 1e-12);
  const std::vector<double> e1{1.0, 0.0}, e2{0.0, 1.0}, d{1.0, 1.0};
  EXPECT_DOUBLE_EQ(cosine_distance<double>(e1, e2), 1.0);
  EXPECT_NEAR(cosine_distance<double>(d, e1), 1.0 - 1.0 / std::sqrt(2.0), 1e-12);
  EXPECT_NEAR(cosine_distance<double>(d, e1), 0.29289, 1e-5);
  const std::vector<double> zero{0.0, 0.0};
  EXPECT_DOUBLE_EQ(cosine_distance<double>(zero, e1), 1.0);
  const std::vector<double> three{1.0, 0.0, 0.0};
  EXPECT_THROW(cosine_distance<double>(e1, three), DimensionError);
}

TEST(FusedDistanceTest, Substitution) {
  EXPECT_NEAR(fused_distance(0.2, 0.4, 0.3, FusionWeights{1.0, 1.0}), 0.9, 1e-12);
  EXPECT_DOUBLE_EQ(fused_distance(0.2, 0.4, 0.3, FusionWeights{0.0, 1.0}), 0.3);
  EXPECT_NEAR(fused_distance(0.2, 0.4, 0.3, FusionWeights{0.5, 2.0}), 0.9, 1e-12);
}

TEST(FusionWeightsTest, Validation) {
  EXPECT_THROW((FusionWeights{0.0, 0.0}.validate()), ValidationError);
  EXPECT_THROW((FusionWeights{-1.0, 1.0}.validate()), ValidationError);
  EXPECT_THROW((FusionWeights{1.0, 1.0, 0}.validate()), ValidationError);
  EXPECT_NO_THROW((FusionWeights{0.0, 1.0}.validate()));
}

TEST(SpaceDistanceTest, ZeroModelGivesOne) {
  const auto zero = DisentangleModel<float>::zeros(small_dims());
  const auto im = random_features(1, 10, 1).values;
  const auto sk = random_features(1, 7, 2).values;
  std::mt19937_64 rng(1);
  EXPECT_DOUBLE_EQ(structure_distance(zero, im, sk), 1.0);
  EXPECT_DOUBLE_EQ(sketch_space_distance(zero, im, sk), 1.0);
  EXPECT_DOUBLE_EQ(image_space_distance(zero, im, sk, 16, rng), 1.0);
}

TEST(SpaceDistanceTest, RangeAndReproducibility) {
  const auto model = small_model();
  const auto ims = random_features(20, 10, 4);
  const auto sks = random_features(20, 7, 5);
  for (std::size_t i = 0; i < 20; ++i) {
    const auto im = row_of(ims, i);
    const auto sk = row_of(sks, i);
    std::mt19937_64 r1(i), r2(i);
    const double di = image_space_distance(model, im, sk, 4, r1);
    EXPECT_EQ(di, image_space_distance(model, im, sk, 4, r2));
    for (double v : {structure_distance(model, im, sk), sketch_space_distance(model, im, sk), di}) {
      EXPECT_GE(v, 0.0);
      EXPECT_LE(v, 1.0);
    }
  }
  EXPECT_THROW(structure_distance(model, row_of(sks, 0), row_of(sks, 0)), DimensionError);
}

TEST(GenerateImageFeatureTest, SingleSampleIsOneDecode) {
  const auto model = small_model();
  const Matrix<float> st = encode_sketch(model, row_of(random_features(1, 7, 8), 0));
  std::mt19937_64 rng(42), copy(42);
  const Matrix<float> g = generate_image_feature(model, st, 1, rng);
  std::normal_distribution<double> normal(0.0, 1.0);
  Matrix<float> z(1, 3);
  for (Eigen::Index i = 0; i < 3; ++i) z(0, i) = static_cast<float>(normal(copy));
  EXPECT_EQ(g, decode_image(model, z, st));
  EXPECT_GE(g.minCoeff(), 0.0f);
  EXPECT_THROW(generate_image_feature(model, st, 0, rng), ValidationError);
}

TEST(GenerateImageFeatureTest, AverageConverges) {
  const auto model = small_model();
  const Matrix<float> st = encode_sketch(model, row_of(random_features(1, 7, 9), 0));
  std::mt19937_64 a(1), b(2);
  const Matrix<double> g4 = generate_image_feature(model, st, 10000, a).cast<double>();
  const Matrix<double> g5 = generate_image_feature(model, st, 100000, b).cast<double>();
  const double rel = (g4 - g5).norm() / g5.norm();
  EXPECT_LT(rel, 0.02);
  EXPECT_LT(cosine_distance<double>(g4, g5), 1e-3);
}

TEST(RankGalleryTest, SelfMatchHasZeroImageDistance) {
  const auto model = small_model();
  const Matrix<float> query = row_of(random_features(1, 7, 10), 0);
  std::mt19937_64 rng(5), copy(5);
  const Matrix<float> generated = generate_image_feature(model, encode_sketch(model, query), 16, copy);
  FeatureSet gallery = random_features(4, 10, 11);
  gallery.values.row(2) = generated;
  const RankedList list = rank_gallery(model, query, gallery, FusionWeights{}, rng, RankSpace::kImage);
  EXPECT_EQ(list.entries.front().gallery_index, 2u);
  EXPECT_NEAR(list.entries.front().d_im, 0.0, 1e-9);
}

TEST(RankGalleryTest, TiesFollowIndexOrder) {
  const auto zero = DisentangleModel<float>::zeros(small_dims());
  const FeatureSet gallery = random_features(9, 10, 12);
  std::mt19937_64 rng(1);
  const RankedList list =
      rank_gallery(zero, row_of(random_features(1, 7, 13), 0), gallery, FusionWeights{}, rng);
  ASSERT_EQ(list.entries.size(), 9u);
  for (std::uint32_t i = 0; i < 9; ++i) {
    EXPECT_EQ(list.entries[i].gallery_index, i);
    EXPECT_DOUBLE_EQ(list.entries[i].d_fusion, 3.0);
  }
}

TEST(RankGalleryTest, MatchesBruteForceOracle) {
  const auto model = small_model(21);
  for (std::uint64_t trial = 0; trial < 10; ++trial) {
    const FeatureSet gallery = random_features(5, 10, 100 + trial);
    const Matrix<float> query = row_of(random_features(1, 7, 200 + trial), 0);
    const FusionWeights w{0.7, 1.3, 8};
    std::mt19937_64 rng(trial);
    const RankedList list = rank_gallery(model, query, gallery, w, rng);

    // Score every item from scratch, then pick the order among all 5! permutations
    // that is lexicographically smallest in (distance, index).
    std::vector<double> fused(5);
    for (std::size_t i = 0; i < 5; ++i) {
      std::mt19937_64 item_rng(trial);
      const Matrix<float> im = row_of(gallery, i);
      fused[i] = fused_distance(image_space_distance(model, im, query, 8, item_rng),
                                sketch_space_distance(model, im, query),
                                structure_distance(model, im, query), w);
    }
    std::vector<std::uint32_t> perm{0, 1, 2, 3, 4}, best;
    do {
      bool sorted = true;
      for (std::size_t k = 1; k < 5; ++k) {
        const double a = fused[perm[k - 1]], b = fused[perm[k]];
        sorted &= a < b - 1e-9 || (std::abs(a - b) <= 1e-9 && perm[k - 1] < perm[k]);
      }
      if (sorted) best = perm;
    } while (std::next_permutation(perm.begin(), perm.end()));
    ASSERT_EQ(best.size(), 5u);
    for (std::size_t k = 0; k < 5; ++k) {
      EXPECT_EQ(list.entries[k].gallery_index, best[k]);
      EXPECT_NEAR(list.entries[k].d_fusion, fused[best[k]], 1e-6);
    }
  }
}

TEST(RankGalleryTest, PermutationInvariant) {
  const auto model = small_model(31);
  const FeatureSet gallery = random_features(30, 10, 40);
  const Matrix<float> query = row_of(random_features(1, 7, 41), 0);
  std::vector<std::uint32_t> order(30);
  std::iota(order.begin(), order.end(), 0u);
  std::shuffle(order.begin(), order.end(), std::mt19937_64(9));
  FeatureSet shuffled = gallery.subset(order);

  std::mt19937_64 r1(3), r2(3);
  const RankedList a = rank_gallery(model, query, gallery, FusionWeights{}, r1);
  const RankedList b = rank_gallery(model, query, shuffled, FusionWeights{}, r2);
  for (std::size_t k = 0; k < 30; ++k) {
    EXPECT_EQ(a.entries[k].gallery_index, order[b.entries[k].gallery_index]);
    EXPECT_NEAR(a.entries[k].d_fusion, b.entries[k].d_fusion, 1e-6);
  }
}

TEST(RankGalleryTest, LambdaScalingKeepsOrder) {
  const auto model = small_model(32);
  const FeatureSet gallery = random_features(25, 10, 50);
  const Matrix<float> query = row_of(random_features(1, 7, 51), 0);
  std::mt19937_64 r1(4), r2(4);
  const RankedList a = rank_gallery(model, query, gallery, FusionWeights{0.6, 1.1}, r1);
  const RankedList b = rank_gallery(model, query, gallery, FusionWeights{0.6 * 3.5, 1.1 * 3.5}, r2);
  for (std::size_t k = 0; k < 25; ++k) EXPECT_EQ(a.entries[k].gallery_index, b.entries[k].gallery_index);
}

TEST(RankGalleryTest, DistancesBoundedAndSpaceSelectsOrder) {
  const auto model = small_model(33);
  const FeatureSet gallery = random_features(25, 10, 60);
  const Matrix<float> query = row_of(random_features(1, 7, 61), 0);
  const FusionWeights w{0.5, 2.0};
  for (RankSpace s : {RankSpace::kFusion, RankSpace::kStructure, RankSpace::kSketch, RankSpace::kImage}) {
    std::mt19937_64 rng(6);
    const RankedList list = rank_gallery(model, query, gallery, w, rng, s);
    for (std::size_t k = 0; k < list.entries.size(); ++k) {
      const auto& e = list.entries[k];
      for (double d : {e.d_st, e.d_sk, e.d_im}) {
        EXPECT_GE(d, 0.0);
        EXPECT_LE(d, 1.0);
      }
      EXPECT_LE(e.d_fusion, 2 * w.lambda1 + w.lambda2);
      if (k > 0) {
        EXPECT_LE(list.entries[k - 1].in(s), e.in(s));
      }
    }
  }
}

TEST(RankGalleryTest, EmptyGalleryRejected) {
  const auto model = small_model();
  FeatureSet empty;
  empty.dim = 10;
  std::mt19937_64 rng(1);
  EXPECT_THROW(rank_gallery(model, row_of(random_features(1, 7, 1), 0), empty, FusionWeights{}, rng),
               ValidationError);
}

TEST(RankQueriesTest, ThreadCountDoesNotChangeOutput) {
  const auto model = small_model(34);
  const FeatureSet gallery = random_features(40, 10, 70);
  const FeatureSet queries = random_features(23, 7, 71);
  const PreparedGallery prepared = prepare_gallery(model, gallery);
  RetrievalOptions opt;
  opt.seed = 12;
  opt.threads = 1;
  const std::string one = format_rankings(rank_queries(model, queries, prepared, opt), opt.space);
  opt.threads = 8;
  const std::string eight = format_rankings(rank_queries(model, queries, prepared, opt), opt.space);
  EXPECT_EQ(one, eight);
  opt.top_k = 5;
  for (const auto& list : rank_queries(model, queries, prepared, opt)) EXPECT_EQ(list.entries.size(), 5u);
}

TEST(RankingsFormatTest, RoundTrip) {
  const auto model = small_model(35);
  const PreparedGallery prepared = prepare_gallery(model, random_features(6, 10, 80), {10, 11, 12, 13, 14, 15});
  RetrievalOptions opt;
  const auto lists = rank_queries(model, random_features(3, 7, 81), prepared, opt, {7, 8, 9});
  const std::string text = format_rankings(lists, RankSpace::kFusion);
  const auto back = parse_rankings(text);
  ASSERT_EQ(back.size(), 3u);
  for (std::size_t q = 0; q < 3; ++q) {
    EXPECT_EQ(back[q].query_index, lists[q].query_index);
    for (std::size_t k = 0; k < 6; ++k) {
      EXPECT_EQ(back[q].entries[k].gallery_index, lists[q].entries[k].gallery_index);
      EXPECT_EQ(back[q].entries[k].d_fusion, lists[q].entries[k].d_fusion);
    }
  }
  EXPECT_EQ(format_rankings(back, RankSpace::kFusion), text);
  EXPECT_THROW(parse_rankings("x\t1:0.5\n"), FormatError);
  EXPECT_THROW(parse_rankings("0\t1-0.5\n"), FormatError);
  EXPECT_THROW(parse_rankings("0\t1:abc\n"), FormatError);
}

}  // namespace
}  // namespace zsr
