#include "hallu/fewshot.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <utility>

#include "hallu/errors.hpp"
#include "hallu/rng.hpp"

namespace hallu {

using nn::Mode;
using nn::Tensor;

// ---- masks ----

std::size_t ConceptMask::ones() const {
  return static_cast<std::size_t>(std::count(bits.begin(), bits.end(), std::uint8_t{1}));
}

MaskSet::MaskSet(std::vector<ConceptMask> masks) : masks_(std::move(masks)) {
  if (masks_.empty()) return;
  const MaskAxis axis = masks_.front().axis;
  const std::size_t len = masks_.front().bits.size();
  std::vector<int> cover(len, 0);
  for (const ConceptMask& m : masks_) {
    if (m.axis != axis) throw std::invalid_argument("mask set: masks must share one axis");
    if (m.bits.size() != len) throw std::invalid_argument("mask set: masks must have equal length");
    if (m.ones() == 0) throw std::invalid_argument("mask set: mask '" + m.name + "' selects nothing");
    for (std::size_t i = 0; i < len; ++i) {
      if (m.bits[i] > 1) throw std::invalid_argument("mask set: mask '" + m.name + "' is not binary");
      cover[i] += m.bits[i];
    }
  }
  for (std::size_t i = 0; i < len; ++i) {
    if (cover[i] != 1) {
      throw std::invalid_argument("mask set: masks do not partition the axis (index " + std::to_string(i) +
                                  " covered " + std::to_string(cover[i]) + " times)");
    }
  }
}

std::string to_string(MaskMode mode) {
  switch (mode) {
    case MaskMode::kNone: return "none";
    case MaskMode::kFrequency: return "frequency";
    case MaskMode::kTime: return "time";
  }
  return "none";
}

MaskMode parse_mask_mode(const std::string& s) {
  if (s == "none" || s == "baseline") return MaskMode::kNone;
  if (s == "frequency" || s == "freq") return MaskMode::kFrequency;
  if (s == "time") return MaskMode::kTime;
  throw ConfigError("unknown mask mode '" + s + "' (expected none|frequency|time)");
}

MaskSet make_frequency_masks(std::size_t bands, std::size_t split) {
  if (split == 0 || split >= bands) {
    throw std::invalid_argument("make_frequency_masks: split " + std::to_string(split) + " outside (0, " +
                                std::to_string(bands) + ")");
  }
  ConceptMask low{MaskAxis::kFrequency, std::vector<std::uint8_t>(bands, 0), "low"};
  ConceptMask high{MaskAxis::kFrequency, std::vector<std::uint8_t>(bands, 0), "high"};
  for (std::size_t i = 0; i < bands; ++i) (i < split ? low : high).bits[i] = 1;
  return MaskSet({std::move(low), std::move(high)});
}

MaskSet make_time_masks(std::size_t frames) {
  if (frames < 2) throw std::invalid_argument("make_time_masks: need at least 2 frames");
  const std::size_t split = frames - frames / 2;
  ConceptMask first{MaskAxis::kTime, std::vector<std::uint8_t>(frames, 0), "first-half"};
  ConceptMask second{MaskAxis::kTime, std::vector<std::uint8_t>(frames, 0), "second-half"};
  for (std::size_t i = 0; i < frames; ++i) (i < split ? first : second).bits[i] = 1;
  return MaskSet({std::move(first), std::move(second)});
}

MaskSet make_mask_set(MaskMode mode, std::size_t frames, std::size_t bands, std::size_t split) {
  switch (mode) {
    case MaskMode::kNone: return MaskSet{};
    case MaskMode::kFrequency: return make_frequency_masks(bands, split);
    case MaskMode::kTime: return make_time_masks(frames);
  }
  return MaskSet{};
}

audio::LogMelSpectrogram apply_mask(const audio::LogMelSpectrogram& x, const ConceptMask& m) {
  const std::size_t expected = m.axis == MaskAxis::kFrequency ? x.bands : x.frames;
  if (m.bits.size() != expected) {
    throw std::invalid_argument("apply_mask: mask length " + std::to_string(m.bits.size()) + " but axis has " +
                                std::to_string(expected));
  }
  audio::LogMelSpectrogram out = x;
  for (std::size_t t = 0; t < x.frames; ++t) {
    for (std::size_t f = 0; f < x.bands; ++f) {
      const std::uint8_t keep = m.axis == MaskAxis::kFrequency ? m.bits[f] : m.bits[t];
      if (!keep) out.at(t, f) = 0.0f;
    }
  }
  return out;
}

template <typename T>
Tensor<T> apply_mask(const Tensor<T>& batch, const ConceptMask& m) {
  if (batch.rank() != 4) throw std::invalid_argument("apply_mask: expected [B,C,T,F] batch");
  const std::size_t frames = batch.dim(2), bands = batch.dim(3);
  const std::size_t expected = m.axis == MaskAxis::kFrequency ? bands : frames;
  if (m.bits.size() != expected) {
    throw std::invalid_argument("apply_mask: mask length " + std::to_string(m.bits.size()) + " but axis has " +
                                std::to_string(expected));
  }
  Tensor<T> out = batch;
  const std::size_t planes = batch.dim(0) * batch.dim(1);
  for (std::size_t p = 0; p < planes; ++p) {
    T* plane = out.data() + p * frames * bands;
    for (std::size_t t = 0; t < frames; ++t) {
      for (std::size_t f = 0; f < bands; ++f) {
        const std::uint8_t keep = m.axis == MaskAxis::kFrequency ? m.bits[f] : m.bits[t];
        if (!keep) plane[t * bands + f] = T{0};
      }
    }
  }
  return out;
}

// ---- distances ----

std::string to_string(Distance d) { return d == Distance::kEuclidean ? "euclidean" : "squared"; }

Distance parse_distance(const std::string& s) {
  if (s == "euclidean") return Distance::kEuclidean;
  if (s == "squared" || s == "squared-euclidean") return Distance::kSquaredEuclidean;
  throw ConfigError("unknown distance '" + s + "' (expected euclidean|squared)");
}

namespace {

template <typename T>
double squared_distance(std::span<const T> a, std::span<const T> b) {
  if (a.size() != b.size()) {
    throw std::invalid_argument("distance: length mismatch " + std::to_string(a.size()) + " vs " +
                                std::to_string(b.size()));
  }
  double acc = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = static_cast<double>(a[i]) - static_cast<double>(b[i]);
    acc += d * d;
  }
  return acc;
}

}  // namespace

template <typename T>
double euclidean_distance(std::span<const T> a, std::span<const T> b) {
  return std::sqrt(squared_distance(a, b));
}

template <typename T>
double distance(std::span<const T> a, std::span<const T> b, Distance kind) {
  const double sq = squared_distance(a, b);
  return kind == Distance::kEuclidean ? std::sqrt(sq) : sq;
}

std::vector<double> log_softmax(std::span<const double> logits) {
  if (logits.empty()) throw std::invalid_argument("softmax: empty logits");
  const double top = *std::max_element(logits.begin(), logits.end());
  double sum = 0.0;
  for (const double l : logits) sum += std::exp(l - top);
  const double lse = top + std::log(sum);
  std::vector<double> out(logits.size());
  for (std::size_t i = 0; i < logits.size(); ++i) out[i] = logits[i] - lse;
  return out;
}

std::vector<double> softmax(std::span<const double> logits) {
  std::vector<double> out = log_softmax(logits);
  for (double& v : out) v = std::exp(v);
  return out;
}

std::size_t argmax(std::span<const double> values) {
  if (values.empty()) throw std::invalid_argument("argmax: empty input");
  std::size_t best = 0;
  for (std::size_t i = 1; i < values.size(); ++i) {
    if (values[i] > values[best]) best = i;
  }
  return best;
}

// ---- extractor bank ----

template <typename T>
std::vector<nn::Parameter<T>*> ExtractorBank<T>::parameters() {
  std::vector<nn::Parameter<T>*> out = whole.parameters();
  for (Backbone<T>& b : per_mask) {
    const auto more = b.parameters();
    out.insert(out.end(), more.begin(), more.end());
  }
  return out;
}

template <typename T>
void ExtractorBank<T>::zero_grad() {
  whole.zero_grad();
  for (Backbone<T>& b : per_mask) b.zero_grad();
}

template <typename T>
ExtractorBank<T> make_extractor_bank(const BackboneSpec& spec, std::size_t n_masks, std::uint64_t seed) {
  ExtractorBank<T> bank;
  bank.whole = init_backbone<T>(spec, derive_seed(seed, 0), "whole");
  for (std::size_t n = 0; n < n_masks; ++n) {
    bank.per_mask.push_back(init_backbone<T>(spec, derive_seed(seed, n + 1), "concept" + std::to_string(n + 1)));
  }
  return bank;
}

template <typename T>
std::size_t param_count(const ExtractorBank<T>& bank) {
  std::size_t n = param_count(bank.whole);
  for (const Backbone<T>& b : bank.per_mask) n += param_count(b);
  return n;
}

namespace {

template <typename T>
void check_bank(const ExtractorBank<T>& bank, const MaskSet& masks) {
  if (bank.per_mask.size() != masks.size()) {
    throw std::invalid_argument("extractor bank has " + std::to_string(bank.per_mask.size()) +
                                " concept extractors but the mask set has " + std::to_string(masks.size()));
  }
}

}  // namespace

template <typename T>
ViewEmbeddings<T> embed_views(const ExtractorBank<T>& bank, const MaskSet& masks, const Tensor<T>& batch) {
  check_bank(bank, masks);
  ViewEmbeddings<T> out;
  out.reserve(bank.views());
  out.push_back(bank.whole.infer(batch));
  for (std::size_t n = 0; n < masks.size(); ++n) out.push_back(bank.per_mask[n].infer(apply_mask(batch, masks[n])));
  return out;
}

template <typename T>
ViewEmbeddings<T> forward_views(ExtractorBank<T>& bank, const MaskSet& masks, const Tensor<T>& batch, Mode mode) {
  check_bank(bank, masks);
  ViewEmbeddings<T> out;
  out.reserve(bank.views());
  out.push_back(bank.whole.forward(batch, mode));
  for (std::size_t n = 0; n < masks.size(); ++n) {
    out.push_back(bank.per_mask[n].forward(apply_mask(batch, masks[n]), mode));
  }
  return out;
}

template <typename T>
void backward_views(ExtractorBank<T>& bank, const ViewEmbeddings<T>& grads) {
  if (grads.size() != bank.views()) throw std::invalid_argument("backward_views: view count mismatch");
  for (std::size_t v = 0; v < grads.size(); ++v) bank.view(v).backward(grads[v]);
}

// ---- prototypes and scores ----

template <typename T>
PrototypeSet<T> compute_prototypes(const ViewEmbeddings<T>& support, std::span<const std::size_t> labels,
                                   std::size_t n_classes) {
  if (support.empty()) throw std::invalid_argument("compute_prototypes: no views");
  std::vector<std::size_t> counts(n_classes, 0);
  for (const std::size_t y : labels) {
    if (y >= n_classes) throw std::invalid_argument("compute_prototypes: label out of range");
    ++counts[y];
  }
  for (std::size_t k = 0; k < n_classes; ++k) {
    if (counts[k] == 0) throw std::invalid_argument("compute_prototypes: class " + std::to_string(k) + " has no support");
  }
  PrototypeSet<T> protos;
  for (const Tensor<T>& emb : support) {
    if (emb.rank() != 2 || emb.dim(0) != labels.size()) {
      throw std::invalid_argument("compute_prototypes: embedding rows do not match labels");
    }
    const std::size_t dim = emb.dim(1);
    std::vector<double> acc(n_classes * dim, 0.0);
    for (std::size_t i = 0; i < labels.size(); ++i) {
      const auto row = emb.row(i);
      double* dst = acc.data() + labels[i] * dim;
      for (std::size_t d = 0; d < dim; ++d) dst[d] += row[d];
    }
    Tensor<T> p({n_classes, dim});
    for (std::size_t k = 0; k < n_classes; ++k) {
      for (std::size_t d = 0; d < dim; ++d) p[k * dim + d] = static_cast<T>(acc[k * dim + d] / counts[k]);
    }
    protos.views.push_back(std::move(p));
  }
  return protos;
}

template <typename T>
PrototypeSet<T> compute_prototypes(const Tensor<T>& support_batch, std::span<const std::size_t> labels,
                                   std::size_t n_classes, const ExtractorBank<T>& bank, const MaskSet& masks) {
  return compute_prototypes(embed_views(bank, masks, support_batch), labels, n_classes);
}

template <typename T>
std::vector<double> score(const ViewEmbeddings<T>& query, std::size_t row, const PrototypeSet<T>& protos,
                          Distance kind) {
  if (query.size() != protos.n_views()) {
    throw std::invalid_argument("score: query has " + std::to_string(query.size()) + " views, prototypes have " +
                                std::to_string(protos.n_views()));
  }
  const std::size_t n_classes = protos.n_classes();
  std::vector<double> logits(n_classes);
  for (std::size_t k = 0; k < n_classes; ++k) {
    logits[k] = -distance(query[0].row(row), protos.views[0].row(k), kind);
    for (std::size_t v = 1; v < query.size(); ++v) {
      logits[k] -= distance(query[v].row(row), protos.views[v].row(k), kind);
    }
  }
  return logits;
}

template <typename T>
std::vector<double> score(const Tensor<T>& query, const PrototypeSet<T>& protos, const ExtractorBank<T>& bank,
                          const MaskSet& masks, Distance kind) {
  if (query.rank() != 4 || query.dim(0) != 1) throw std::invalid_argument("score: expected a [1,1,T,F] query");
  return score(embed_views(bank, masks, query), 0, protos, kind);
}

template <typename T>
std::vector<double> concept_only_score(const ViewEmbeddings<T>& query, std::size_t row, const PrototypeSet<T>& protos,
                                       std::size_t mask_index, Distance kind) {
  const std::size_t v = mask_index + 1;
  if (v >= protos.n_views() || v >= query.size()) {
    throw std::out_of_range("concept_only_score: mask index " + std::to_string(mask_index) + " out of range");
  }
  std::vector<double> logits(protos.n_classes());
  for (std::size_t k = 0; k < logits.size(); ++k) {
    logits[k] = -distance(query[v].row(row), protos.views[v].row(k), kind);
  }
  return logits;
}

template <typename T>
std::vector<double> protonet_logits(std::span<const T> query_embedding, const Tensor<T>& prototypes, Distance kind) {
  std::vector<double> logits(prototypes.dim(0));
  for (std::size_t k = 0; k < logits.size(); ++k) logits[k] = -distance(query_embedding, prototypes.row(k), kind);
  return logits;
}

// ---- episode loss ----

template <typename T>
void EpisodeBatch<T>::validate() const {
  if (n_way < 2) throw std::invalid_argument("episode: n_way must be >= 2");
  if (support.rank() != 4 || query.rank() != 4) throw std::invalid_argument("episode: tensors must be [B,1,T,F]");
  if (support.dim(0) != support_labels.size()) throw std::invalid_argument("episode: support labels/rows mismatch");
  if (query.dim(0) != query_labels.size()) throw std::invalid_argument("episode: query labels/rows mismatch");
  if (query_labels.empty()) throw std::invalid_argument("episode: no queries");
  if (!std::equal(support.shape().begin() + 1, support.shape().end(), query.shape().begin() + 1)) {
    throw std::invalid_argument("episode: support and query spectrogram shapes differ");
  }
  std::vector<std::size_t> counts(n_way, 0);
  for (const std::size_t y : support_labels) {
    if (y >= n_way) throw std::invalid_argument("episode: support label out of range");
    ++counts[y];
  }
  for (std::size_t k = 0; k < n_way; ++k) {
    if (counts[k] == 0) throw std::invalid_argument("episode: class " + std::to_string(k) + " has no support");
  }
  for (const std::size_t y : query_labels) {
    if (y >= n_way) throw std::invalid_argument("episode: query label out of range");
  }
}

template <typename T>
LossResult episode_loss(ExtractorBank<T>& bank, const MaskSet& masks, const EpisodeBatch<T>& episode, Distance kind,
                        Mode mode, bool backward) {
  episode.validate();
  const std::size_t n_support = episode.support.dim(0);
  const std::size_t n_query = episode.query.dim(0);
  const std::size_t n_way = episode.n_way;

  const Tensor<T>* parts[] = {&episode.support, &episode.query};
  const Tensor<T> batch = nn::concat_rows<T>(parts);
  ViewEmbeddings<T> emb = forward_views(bank, masks, batch, mode);
  const std::size_t n_views = emb.size();

  // Split support rows out as their own view tensors for prototype means.
  ViewEmbeddings<T> support_emb;
  ViewEmbeddings<T> query_emb;
  for (const Tensor<T>& e : emb) {
    const std::size_t dim = e.dim(1);
    support_emb.emplace_back(nn::Shape{n_support, dim},
                             std::vector<T>(e.values().begin(), e.values().begin() + n_support * dim));
    query_emb.emplace_back(nn::Shape{n_query, dim},
                           std::vector<T>(e.values().begin() + n_support * dim, e.values().end()));
  }
  const PrototypeSet<T> protos = compute_prototypes(support_emb, episode.support_labels, n_way);
  std::vector<std::size_t> shots(n_way, 0);
  for (const std::size_t y : episode.support_labels) ++shots[y];

  LossResult result;
  result.logits.reserve(n_query);
  ViewEmbeddings<T> grads;
  std::vector<std::vector<double>> proto_grads(n_views);
  if (backward) {
    for (const Tensor<T>& e : emb) grads.emplace_back(e.shape());
    for (std::size_t v = 0; v < n_views; ++v) proto_grads[v].assign(protos.views[v].size(), 0.0);
  }

  for (std::size_t q = 0; q < n_query; ++q) {
    std::vector<double> logits = score(query_emb, q, protos, kind);
    const std::vector<double> logp = log_softmax(logits);
    const std::size_t y = episode.query_labels[q];
    result.loss -= logp[y];
    if (argmax(logits) == y) ++result.correct;
    if (backward) {
      for (std::size_t k = 0; k < n_way; ++k) {
        // d loss / d logit_k, with the 1/Q of the mean folded in.
        const double c = (std::exp(logp[k]) - (k == y ? 1.0 : 0.0)) / static_cast<double>(n_query);
        for (std::size_t v = 0; v < n_views; ++v) {
          const auto z = std::as_const(query_emb[v]).row(q);
          const auto p = protos.views[v].row(k);
          const std::size_t dim = z.size();
          double scale = 0.0;  // d distance / d z = scale * (z - p)
          if (kind == Distance::kSquaredEuclidean) {
            scale = 2.0;
          } else {
            const double d = distance(z, p, kind);
            if (d > 0.0) scale = 1.0 / d;
          }
          T* gz = grads[v].data() + (n_support + q) * dim;
          double* gp = proto_grads[v].data() + k * dim;
          for (std::size_t i = 0; i < dim; ++i) {
            const double dd = scale * (static_cast<double>(z[i]) - static_cast<double>(p[i]));
            gz[i] += static_cast<T>(-c * dd);
            gp[i] += c * dd;
          }
        }
      }
    }
    result.logits.push_back(std::move(logits));
  }
  result.loss /= static_cast<double>(n_query);

  if (backward) {
    for (std::size_t v = 0; v < n_views; ++v) {
      const std::size_t dim = grads[v].dim(1);
      for (std::size_t s = 0; s < n_support; ++s) {
        const std::size_t k = episode.support_labels[s];
        const double inv = 1.0 / static_cast<double>(shots[k]);
        T* gs = grads[v].data() + s * dim;
        const double* gp = proto_grads[v].data() + k * dim;
        for (std::size_t i = 0; i < dim; ++i) gs[i] += static_cast<T>(gp[i] * inv);
      }
    }
    backward_views(bank, grads);
  }
  return result;
}

#define HALLU_INSTANTIATE_FEWSHOT(T)                                                                          \
  template Tensor<T> apply_mask(const Tensor<T>&, const ConceptMask&);                                        \
  template double euclidean_distance(std::span<const T>, std::span<const T>);                                 \
  template double distance(std::span<const T>, std::span<const T>, Distance);                                 \
  template struct ExtractorBank<T>;                                                                           \
  template ExtractorBank<T> make_extractor_bank(const BackboneSpec&, std::size_t, std::uint64_t);             \
  template std::size_t param_count(const ExtractorBank<T>&);                                                  \
  template ViewEmbeddings<T> embed_views(const ExtractorBank<T>&, const MaskSet&, const Tensor<T>&);          \
  template ViewEmbeddings<T> forward_views(ExtractorBank<T>&, const MaskSet&, const Tensor<T>&, Mode);        \
  template void backward_views(ExtractorBank<T>&, const ViewEmbeddings<T>&);                                  \
  template PrototypeSet<T> compute_prototypes(const ViewEmbeddings<T>&, std::span<const std::size_t>,         \
                                              std::size_t);                                                   \
  template PrototypeSet<T> compute_prototypes(const Tensor<T>&, std::span<const std::size_t>, std::size_t,    \
                                              const ExtractorBank<T>&, const MaskSet&);                       \
  template std::vector<double> score(const ViewEmbeddings<T>&, std::size_t, const PrototypeSet<T>&, Distance); \
  template std::vector<double> score(const Tensor<T>&, const PrototypeSet<T>&, const ExtractorBank<T>&,        \
                                     const MaskSet&, Distance);                                               \
  template std::vector<double> concept_only_score(const ViewEmbeddings<T>&, std::size_t,                      \
                                                  const PrototypeSet<T>&, std::size_t, Distance);             \
  template std::vector<double> protonet_logits(std::span<const T>, const Tensor<T>&, Distance);               \
  template struct EpisodeBatch<T>;                                                                            \
  template LossResult episode_loss(ExtractorBank<T>&, const MaskSet&, const EpisodeBatch<T>&, Distance, Mode, \
                                   bool);

HALLU_INSTANTIATE_FEWSHOT(float)
HALLU_INSTANTIATE_FEWSHOT(double)

#undef HALLU_INSTANTIATE_FEWSHOT

}  // namespace hallu
