#include <gtest/gtest.h>

#include <cmath>
#include <numeric>

#include "hallu/fewshot.hpp"
#include "hallu/rng.hpp"
#include "support/synthetic.hpp"

namespace {

using namespace hallu;
using nn::Mode;
using nn::Tensor;

BackboneSpec tiny_spec() {
  BackboneSpec s;
  s.channels = {3, 4, 5};
  s.height = 64;
  s.width = 64;
  return s;
}

Tensor<double> random_batch(std::size_t b, std::uint64_t seed, std::size_t h = 64, std::size_t w = 64) {
  Rng rng(seed);
  Tensor<double> t({b, 1, h, w});
  for (double& v : t.values()) v = rng.normal();
  return t;
}

Tensor<double> rows(std::size_t n, std::size_t d, std::vector<double> v) { return Tensor<double>({n, d}, std::move(v)); }

// ---- masks ----

TEST(Masks, FrequencyMidpoint) {
  const MaskSet m = make_frequency_masks(128, 64);
  ASSERT_EQ(m.size(), 2u);
  EXPECT_EQ(m[0].name, "low");
  EXPECT_EQ(m[1].name, "high");
  EXPECT_EQ(m[0].axis, MaskAxis::kFrequency);
  for (std::size_t i = 0; i < 128; ++i) {
    EXPECT_EQ(m[0].bits[i], i < 64 ? 1 : 0);
    EXPECT_EQ(m[1].bits[i], i < 64 ? 0 : 1);
  }
}

TEST(Masks, MinimalAndOddCases) {
  const MaskSet f = make_frequency_masks(2, 1);
  EXPECT_EQ(f[0].bits, (std::vector<std::uint8_t>{1, 0}));
  EXPECT_EQ(f[1].bits, (std::vector<std::uint8_t>{0, 1}));
  const MaskSet t = make_time_masks(3);
  EXPECT_EQ(t[0].bits, (std::vector<std::uint8_t>{1, 1, 0}));
  EXPECT_EQ(t[1].bits, (std::vector<std::uint8_t>{0, 0, 1}));
  EXPECT_EQ(t[0].name, "first-half");
  EXPECT_EQ(t[1].name, "second-half");
}

TEST(Masks, TimeHalvesAt160) {
  const MaskSet t = make_time_masks(160);
  EXPECT_EQ(t[0].ones(), 80u);
  EXPECT_EQ(t[0].bits[79], 1);
  EXPECT_EQ(t[1].bits[80], 1);
  EXPECT_EQ(t[0].axis, MaskAxis::kTime);
}

TEST(Masks, PartitionPropertyForAllConstructors) {
  for (std::size_t n = 2; n < 70; ++n) {
    for (std::size_t split = 1; split < n; split += 7) {
      const MaskSet m = make_frequency_masks(n, split);
      for (std::size_t i = 0; i < n; ++i) {
        EXPECT_EQ((m[0].bits[i] | m[1].bits[i]), 1);
        EXPECT_EQ((m[0].bits[i] & m[1].bits[i]), 0);
      }
    }
    const MaskSet t = make_time_masks(n);
    for (std::size_t i = 0; i < n; ++i) EXPECT_EQ(t[0].bits[i] + t[1].bits[i], 1);
  }
}

TEST(Masks, Errors) {
  EXPECT_THROW(make_frequency_masks(128, 0), std::invalid_argument);
  EXPECT_THROW(make_frequency_masks(128, 128), std::invalid_argument);
  EXPECT_THROW(make_time_masks(1), std::invalid_argument);
  ConceptMask a{MaskAxis::kFrequency, {1, 1, 0}, "a"};
  ConceptMask b{MaskAxis::kFrequency, {0, 1, 1}, "b"};
  EXPECT_THROW(MaskSet({a, b}), std::invalid_argument);
  ConceptMask c{MaskAxis::kTime, {0, 0, 1}, "c"};
  EXPECT_THROW(MaskSet({a, c}), std::invalid_argument);
  EXPECT_THROW(parse_mask_mode("sideways"), std::exception);
  EXPECT_TRUE(MaskSet().empty());
}

TEST(ApplyMask, HandCase) {
  audio::LogMelSpectrogram x;
  x.frames = 2;
  x.bands = 2;
  x.values = {1, 2, 3, 4};
  const ConceptMask m{MaskAxis::kFrequency, {1, 0}, "low"};
  EXPECT_EQ(apply_mask(x, m).values, (std::vector<float>{1, 0, 3, 0}));
  const ConceptMask t{MaskAxis::kTime, {0, 1}, "second-half"};
  EXPECT_EQ(apply_mask(x, t).values, (std::vector<float>{0, 0, 3, 4}));
  const ConceptMask ones{MaskAxis::kFrequency, {1, 1}, "all"};
  EXPECT_EQ(apply_mask(x, ones).values, x.values);
  const ConceptMask wrong{MaskAxis::kFrequency, {1, 0, 1}, "bad"};
  EXPECT_THROW(apply_mask(x, wrong), std::invalid_argument);
}

TEST(ApplyMask, PartitionLinearityOnBatches) {
  const Tensor<double> x = random_batch(2, 4, 6, 10);
  for (const MaskSet& set : {make_frequency_masks(10, 3), make_time_masks(6)}) {
    const Tensor<double> a = apply_mask(x, set[0]);
    const Tensor<double> b = apply_mask(x, set[1]);
    for (std::size_t i = 0; i < x.size(); ++i) EXPECT_EQ(a[i] + b[i], x[i]);
  }
}

// ---- distances and softmax ----

TEST(Distance, Basics) {
  const std::vector<double> a{0, 0}, b{3, 4};
  EXPECT_DOUBLE_EQ(euclidean_distance<double>(a, b), 5.0);
  EXPECT_DOUBLE_EQ(euclidean_distance<double>(a, a), 0.0);
  EXPECT_DOUBLE_EQ(distance<double>(a, b, Distance::kSquaredEuclidean), 25.0);
  const std::vector<double> c{1, 2, 3};
  EXPECT_THROW(euclidean_distance<double>(a, c), std::invalid_argument);
  Rng rng(4);
  for (int i = 0; i < 20; ++i) {
    std::vector<double> u(9), v(9);
    for (auto& x : u) x = rng.normal();
    for (auto& x : v) x = rng.normal();
    EXPECT_EQ(euclidean_distance<double>(u, v), euclidean_distance<double>(v, u));
  }
}

TEST(Softmax, SumsToOneAndShiftInvariant) {
  Rng rng(5);
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<double> l(2 + rng.uniform_index(9));
    for (auto& x : l) x = 20 * rng.normal();
    const auto p = softmax(l);
    EXPECT_NEAR(std::accumulate(p.begin(), p.end(), 0.0), 1.0, 1e-9);
    for (double v : p) {
      EXPECT_GE(v, 0.0);
      EXPECT_LE(v, 1.0);
    }
    std::vector<double> shifted = l;
    for (auto& x : shifted) x += 123.5;
    const auto q = softmax(shifted);
    for (std::size_t i = 0; i < p.size(); ++i) EXPECT_NEAR(p[i], q[i], 1e-9);
    const auto lp = log_softmax(l);
    for (std::size_t i = 0; i < p.size(); ++i) EXPECT_NEAR(std::exp(lp[i]), p[i], 1e-12);
  }
  const std::vector<double> ties{1.0, 3.0, 3.0};
  EXPECT_EQ(argmax(ties), 1u);
}

// ---- scoring ----

TEST(Score, HandCaseWithoutMasks) {
  const ViewEmbeddings<double> query{rows(1, 2, {0, 0})};
  const std::vector<std::size_t> labels{0, 1};
  const PrototypeSet<double> protos = compute_prototypes<double>({rows(2, 2, {1, 0, 0, 2})}, labels, 2);
  const auto logits = score(query, 0, protos);
  ASSERT_EQ(logits.size(), 2u);
  EXPECT_DOUBLE_EQ(logits[0], -1.0);
  EXPECT_DOUBLE_EQ(logits[1], -2.0);
  const auto p = softmax(logits);
  EXPECT_NEAR(p[0], 0.7311, 5e-5);
  EXPECT_NEAR(p[1], 0.2689, 5e-5);
}

TEST(Score, SumsWholeAndConceptDistances) {
  // view 0: distances (1, 2); view 1: (5, 0); view 2: (0, 1)
  const ViewEmbeddings<double> query{rows(1, 2, {0, 0}), rows(1, 1, {0}), rows(1, 1, {0})};
  PrototypeSet<double> protos;
  protos.views = {rows(2, 2, {1, 0, 0, 2}), rows(2, 1, {5, 0}), rows(2, 1, {0, -1})};
  const auto l = score(query, 0, protos);
  EXPECT_DOUBLE_EQ(l[0], -6.0);
  EXPECT_DOUBLE_EQ(l[1], -3.0);
  EXPECT_EQ(concept_only_score(query, 0, protos, 0), (std::vector<double>{-5.0, 0.0}));
  EXPECT_EQ(concept_only_score(query, 0, protos, 1), (std::vector<double>{0.0, -1.0}));
  EXPECT_THROW(concept_only_score(query, 0, protos, 2), std::out_of_range);
}

TEST(Score, EqualDistancesGiveUniformProbabilities) {
  const ViewEmbeddings<double> query{rows(1, 2, {0, 0})};
  PrototypeSet<double> protos;
  protos.views = {rows(4, 2, {1, 0, 0, 1, -1, 0, 0, -1})};
  const auto p = softmax(score(query, 0, protos));
  for (double v : p) EXPECT_NEAR(v, 0.25, 1e-12);
}

TEST(Score, LargeGapSaturates) {
  const ViewEmbeddings<double> query{rows(1, 1, {0})};
  PrototypeSet<double> protos;
  protos.views = {rows(2, 1, {0, 1000})};
  EXPECT_NEAR(softmax(score(query, 0, protos))[0], 1.0, 1e-12);
}

TEST(Score, ViewMismatchThrows) {
  const ViewEmbeddings<double> query{rows(1, 2, {0, 0}), rows(1, 2, {0, 0})};
  PrototypeSet<double> protos;
  protos.views = {rows(2, 2, {1, 0, 0, 2})};
  EXPECT_THROW(score(query, 0, protos), std::invalid_argument);
}

TEST(Score, EmptyMaskSetIsPlainPrototypicalNetwork) {
  const auto bank = make_extractor_bank<double>(tiny_spec(), 0, 3);
  const MaskSet none;
  const Tensor<double> support = random_batch(6, 1);
  const std::vector<std::size_t> labels{0, 1, 2, 0, 1, 2};
  const PrototypeSet<double> protos = compute_prototypes<double>(support, labels, 3, bank, none);
  const Tensor<double> q = random_batch(1, 2);
  const auto got = score(q, protos, bank, none);
  const Tensor<double> z = bank.whole.infer(q);
  const auto want = protonet_logits<double>(z.row(0), protos.views[0]);
  ASSERT_EQ(got.size(), want.size());
  for (std::size_t k = 0; k < got.size(); ++k) EXPECT_EQ(got[k], want[k]);  // bit-identical
}

TEST(Score, InitTimeTieScalesBaselineLogits) {
  const auto bank = make_extractor_bank<double>(tiny_spec(), 0, 4);
  const Tensor<double> support = random_batch(4, 7);
  const std::vector<std::size_t> labels{0, 1, 0, 1};
  const Tensor<double> queries = random_batch(5, 8);
  const Tensor<double> zs = bank.whole.infer(support);
  const Tensor<double> zq = bank.whole.infer(queries);
  const std::size_t n_masks = 2;
  // every concept extractor equals f and every mask is all-ones, so each view repeats f(x)
  const ViewEmbeddings<double> sviews(1 + n_masks, zs), qviews(1 + n_masks, zq);
  const PrototypeSet<double> tied = compute_prototypes<double>(sviews, labels, 2);
  const PrototypeSet<double> base = compute_prototypes<double>(ViewEmbeddings<double>{zs}, labels, 2);
  for (std::size_t r = 0; r < 5; ++r) {
    const auto lt = score(qviews, r, tied);
    const auto lb = score(ViewEmbeddings<double>{zq}, r, base);
    for (std::size_t k = 0; k < 2; ++k) EXPECT_NEAR(lt[k], (1 + n_masks) * lb[k], 1e-9);
    EXPECT_EQ(argmax(lt), argmax(lb));
  }

  // Same through the full spectrogram path with one all-ones mask and a copied extractor.
  auto copy = make_extractor_bank<double>(tiny_spec(), 1, 4);
  copy.per_mask[0].copy_from(copy.whole);
  const MaskSet all_ones({ConceptMask{MaskAxis::kFrequency, std::vector<std::uint8_t>(64, 1), "all"}});
  const PrototypeSet<double> p1 = compute_prototypes<double>(support, labels, 2, copy, all_ones);
  const auto plain = make_extractor_bank<double>(tiny_spec(), 0, 4);
  const PrototypeSet<double> p0 = compute_prototypes<double>(support, labels, 2, plain, MaskSet());
  Tensor<double> q({1, 1, 64, 64});
  std::copy(queries.row(0).begin(), queries.row(0).end(), q.values().begin());
  const auto l1 = score(q, p1, copy, all_ones);
  const auto l0 = score(q, p0, plain, MaskSet());
  for (std::size_t k = 0; k < 2; ++k) EXPECT_NEAR(l1[k], 2 * l0[k], 1e-9);
}

TEST(Score, SingleMaskDecomposition) {
  auto bank = make_extractor_bank<double>(tiny_spec(), 1, 6);
  const MaskSet m({ConceptMask{MaskAxis::kTime, std::vector<std::uint8_t>(64, 1), "all"}});
  const Tensor<double> support = random_batch(2, 3);
  const std::vector<std::size_t> labels{0, 1};
  const PrototypeSet<double> p = compute_prototypes<double>(support, labels, 2, bank, m);
  const ViewEmbeddings<double> q = embed_views(bank, m, random_batch(1, 4));
  const auto full = score(q, 0, p);
  const auto conc = concept_only_score(q, 0, p, 0);
  const auto whole = protonet_logits<double>(q[0].row(0), p.views[0]);
  for (std::size_t k = 0; k < 2; ++k) EXPECT_NEAR(full[k], conc[k] + whole[k], 1e-12);
}

TEST(Score, CoincidentConceptPrototypesGiveUniformConceptLogits) {
  const ViewEmbeddings<double> query{rows(1, 2, {0, 0}), rows(1, 2, {3, 1})};
  PrototypeSet<double> protos;
  protos.views = {rows(2, 2, {1, 0, 0, 2}), rows(2, 2, {1, 1, 1, 1})};
  const auto c = concept_only_score(query, 0, protos, 0);
  EXPECT_EQ(c[0], c[1]);
}

TEST(Score, HighOnlyConceptSeparatesHighBandClasses) {
  // Two classes share low-band noise and differ only in which high bands carry energy.
  Rng rng(12);
  auto clip = [&](std::size_t cls) {
    Tensor<double> t({1, 1, 64, 64});
    for (std::size_t f = 0; f < 64; ++f) {
      const bool loud = f >= 32 && ((f - 32) / 8) % 2 == cls;
      for (std::size_t r = 0; r < 64; ++r) t.at(0, 0, r, f) = (loud ? 3.0 : 0.0) + rng.normal();
    }
    return t;
  };
  auto stack = [](const std::vector<Tensor<double>>& parts) {
    std::vector<const Tensor<double>*> ptrs;
    for (const auto& p : parts) ptrs.push_back(&p);
    return nn::concat_rows<double>(ptrs);
  };
  auto bank = make_extractor_bank<double>(tiny_spec(), 2, 13);
  const MaskSet masks = make_frequency_masks(64, 32);
  const Tensor<double> support = stack({clip(0), clip(0), clip(1), clip(1)});
  const std::vector<std::size_t> labels{0, 0, 1, 1};
  const PrototypeSet<double> p = compute_prototypes<double>(support, labels, 2, bank, masks);
  const Tensor<double> queries = stack({clip(0), clip(1), clip(0), clip(1), clip(0), clip(1)});
  const ViewEmbeddings<double> q = embed_views(bank, masks, queries);
  for (std::size_t r = 0; r < 6; ++r) EXPECT_EQ(argmax(concept_only_score(q, r, p, 1)), r % 2) << "query " << r;
}

// ---- prototypes ----

TEST(Prototypes, MeansAndErrors) {
  const std::vector<std::size_t> labels{0, 0};
  const PrototypeSet<double> p = compute_prototypes<double>({rows(2, 2, {1, 3, 3, 5})}, labels, 1);
  EXPECT_EQ(p.views[0].storage(), (std::vector<double>{2, 4}));
  const std::vector<std::size_t> single{0};
  EXPECT_EQ(compute_prototypes<double>({rows(1, 2, {7, -1})}, single, 1).views[0].storage(),
            (std::vector<double>{7, -1}));
  const std::vector<std::size_t> missing{0, 0};
  EXPECT_THROW(compute_prototypes<double>({rows(2, 2, {1, 3, 3, 5})}, missing, 2), std::invalid_argument);
}

TEST(Prototypes, BruteForceAndPermutationInvariance) {
  const auto bank = make_extractor_bank<double>(tiny_spec(), 2, 21);
  const MaskSet masks = make_frequency_masks(64, 32);
  const std::size_t ways = 3, shots = 5;
  const Tensor<double> support = random_batch(ways * shots, 22);
  std::vector<std::size_t> labels;
  for (std::size_t i = 0; i < ways * shots; ++i) labels.push_back(i % ways);
  const PrototypeSet<double> p = compute_prototypes<double>(support, labels, ways, bank, masks);
  ASSERT_EQ(p.n_views(), 3u);

  // independent recomputation one clip at a time
  for (std::size_t v = 0; v < 3; ++v) {
    std::vector<double> sum(p.views[v].dim(1) * ways, 0.0);
    for (std::size_t i = 0; i < ways * shots; ++i) {
      Tensor<double> x({1, 1, 64, 64});
      std::copy(support.row(i).begin(), support.row(i).end(), x.values().begin());
      if (v > 0) x = apply_mask(x, masks[v - 1]);
      const Tensor<double> z = bank.view(v).infer(x);
      for (std::size_t d = 0; d < z.dim(1); ++d) sum[labels[i] * z.dim(1) + d] += z[d] / shots;
    }
    for (std::size_t i = 0; i < sum.size(); ++i) EXPECT_NEAR(p.views[v][i], sum[i], 1e-6);
  }

  std::vector<std::size_t> perm(ways * shots);
  std::iota(perm.begin(), perm.end(), 0);
  Rng rng(23);
  rng.shuffle(std::span<std::size_t>(perm));
  Tensor<double> shuffled(support.shape());
  std::vector<std::size_t> shuffled_labels;
  for (std::size_t i = 0; i < perm.size(); ++i) {
    std::copy(support.row(perm[i]).begin(), support.row(perm[i]).end(), shuffled.row(i).begin());
    shuffled_labels.push_back(labels[perm[i]]);
  }
  const PrototypeSet<double> q = compute_prototypes<double>(shuffled, shuffled_labels, ways, bank, masks);
  for (std::size_t v = 0; v < 3; ++v) {
    for (std::size_t i = 0; i < p.views[v].size(); ++i) EXPECT_NEAR(p.views[v][i], q.views[v][i], 1e-6);
  }
}

// ---- loss ----

EpisodeBatch<double> make_episode(std::size_t ways, std::size_t shots, std::size_t queries, std::uint64_t seed) {
  EpisodeBatch<double> e;
  e.n_way = ways;
  e.support = random_batch(ways * shots, seed);
  e.query = random_batch(ways * queries, seed + 1);
  for (std::size_t i = 0; i < ways * shots; ++i) e.support_labels.push_back(i % ways);
  for (std::size_t i = 0; i < ways * queries; ++i) e.query_labels.push_back(i % ways);
  return e;
}

TEST(EpisodeLoss, MatchesIndependentComposition) {
  auto bank = make_extractor_bank<double>(tiny_spec(), 2, 31);
  const MaskSet masks = make_frequency_masks(64, 32);
  EpisodeBatch<double> e = make_episode(3, 2, 1, 32);
  e.query = random_batch(1, 33);
  e.query_labels = {2};
  const LossResult r = episode_loss(bank, masks, e, Distance::kEuclidean, Mode::kEval, false);
  const PrototypeSet<double> p = compute_prototypes<double>(e.support, e.support_labels, 3, bank, masks);
  const auto logits = score(e.query, p, bank, masks);
  EXPECT_NEAR(r.loss, -log_softmax(logits)[2], 1e-6);
  EXPECT_GE(r.loss, 0.0);
}

TEST(EpisodeLoss, UniformLogitsGiveLogNWay) {
  // a zero-input episode in eval mode embeds everything to the same point
  auto bank = make_extractor_bank<double>(tiny_spec(), 0, 1);
  EpisodeBatch<double> e = make_episode(4, 1, 1, 2);
  e.support.fill(0.0);
  e.query.fill(0.0);
  const LossResult r = episode_loss(bank, MaskSet(), e, Distance::kEuclidean, Mode::kEval, false);
  EXPECT_NEAR(r.loss, std::log(4.0), 1e-12);
}

TEST(EpisodeLoss, MalformedEpisodesRejected) {
  auto bank = make_extractor_bank<double>(tiny_spec(), 0, 1);
  EpisodeBatch<double> e = make_episode(2, 1, 1, 3);
  e.query_labels = {0, 5};
  EXPECT_THROW(episode_loss(bank, MaskSet(), e), std::invalid_argument);
  e = make_episode(2, 1, 1, 3);
  e.support_labels = {0, 0};
  EXPECT_THROW(episode_loss(bank, MaskSet(), e), std::invalid_argument);
}

TEST(EpisodeLoss, OverfitsAFixedEpisode) {
  auto bank = make_extractor_bank<double>(tiny_spec(), 2, 41);
  const MaskSet masks = make_frequency_masks(64, 32);
  const EpisodeBatch<double> e = make_episode(3, 2, 2, 42);
  nn::Sgd<double> opt(nn::SgdConfig{0.05, 0.0, 0.0});
  double first = 0, last = 0;
  for (int step = 0; step < 50; ++step) {
    bank.zero_grad();
    const LossResult r = episode_loss(bank, masks, e);
    if (step == 0) first = r.loss;
    last = r.loss;
    auto params = bank.parameters();
    opt.step(params, 0.05);
  }
  EXPECT_LT(last, 0.5 * first);
}

}  // namespace
