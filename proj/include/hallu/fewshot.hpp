#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "hallu/audio/spectrogram.hpp"
#include "hallu/backbone.hpp"
#include "hallu/nn/optim.hpp"
#include "hallu/nn/tensor.hpp"

namespace hallu {

// ---------------------------------------------------------------------------
// Concept masks
// ---------------------------------------------------------------------------

enum class MaskAxis { kFrequency, kTime };

/// Binary selector over one spectrogram axis (mel bands or frames).
struct ConceptMask {
  MaskAxis axis = MaskAxis::kFrequency;
  std::vector<std::uint8_t> bits;
  std::string name;

  std::size_t ones() const;
};

/// Ordered masks sharing one axis whose bitwise sum is all-ones. An empty set
/// turns the classifier into a plain prototypical network.
class MaskSet {
 public:
  MaskSet() = default;
  explicit MaskSet(std::vector<ConceptMask> masks);

  std::size_t size() const { return masks_.size(); }
  bool empty() const { return masks_.empty(); }
  const ConceptMask& operator[](std::size_t i) const { return masks_[i]; }
  auto begin() const { return masks_.begin(); }
  auto end() const { return masks_.end(); }

 private:
  std::vector<ConceptMask> masks_;
};

enum class MaskMode { kNone, kFrequency, kTime };

std::string to_string(MaskMode mode);
MaskMode parse_mask_mode(const std::string& s);

/// "low" = bands [0, split), "high" = bands [split, bands).
MaskSet make_frequency_masks(std::size_t bands, std::size_t split);
/// "second-half" = the last floor(T/2) frames, "first-half" = the rest
/// (T=3 gives 110 / 001).
MaskSet make_time_masks(std::size_t frames);
MaskSet make_mask_set(MaskMode mode, std::size_t frames, std::size_t bands, std::size_t split);

audio::LogMelSpectrogram apply_mask(const audio::LogMelSpectrogram& x, const ConceptMask& m);

/// Masks a [B,1,T,F] batch (time = height, frequency = width).
template <typename T>
nn::Tensor<T> apply_mask(const nn::Tensor<T>& batch, const ConceptMask& m);

// ---------------------------------------------------------------------------
// Distances and probabilities
// ---------------------------------------------------------------------------

enum class Distance { kEuclidean, kSquaredEuclidean };

std::string to_string(Distance d);
Distance parse_distance(const std::string& s);

/// sqrt(sum (a_i - b_i)^2)
template <typename T>
double euclidean_distance(std::span<const T> a, std::span<const T> b);

template <typename T>
double distance(std::span<const T> a, std::span<const T> b, Distance kind);

std::vector<double> softmax(std::span<const double> logits);
std::vector<double> log_softmax(std::span<const double> logits);
/// Lowest index among maximal entries.
std::size_t argmax(std::span<const double> values);

// ---------------------------------------------------------------------------
// Extractors and prototypes
// ---------------------------------------------------------------------------

/// f for the whole spectrogram plus one independently initialized f^(n) per
/// mask, all with the same architecture.
template <typename T>
struct ExtractorBank {
  Backbone<T> whole;
  std::vector<Backbone<T>> per_mask;

  std::size_t views() const { return 1 + per_mask.size(); }
  Backbone<T>& view(std::size_t v) { return v == 0 ? whole : per_mask[v - 1]; }
  const Backbone<T>& view(std::size_t v) const { return v == 0 ? whole : per_mask[v - 1]; }
  const BackboneSpec& spec() const { return whole.spec(); }

  std::vector<nn::Parameter<T>*> parameters();
  void zero_grad();
};

template <typename T>
ExtractorBank<T> make_extractor_bank(const BackboneSpec& spec, std::size_t n_masks, std::uint64_t seed);

template <typename T>
std::size_t param_count(const ExtractorBank<T>& bank);

/// Per-view embeddings of a batch: [0] from f, [1+n] from f^(n) on x * m^(n).
/// Each tensor is [B, D].
template <typename T>
using ViewEmbeddings = std::vector<nn::Tensor<T>>;

/// Eval-mode, non-mutating.
template <typename T>
ViewEmbeddings<T> embed_views(const ExtractorBank<T>& bank, const MaskSet& masks, const nn::Tensor<T>& batch);

/// Recording forward for training; pair with backward_views.
template <typename T>
ViewEmbeddings<T> forward_views(ExtractorBank<T>& bank, const MaskSet& masks, const nn::Tensor<T>& batch,
                                nn::Mode mode);

template <typename T>
void backward_views(ExtractorBank<T>& bank, const ViewEmbeddings<T>& grads);

/// Per class k and view v: prototype = mean of that view's support embeddings.
template <typename T>
struct PrototypeSet {
  std::vector<nn::Tensor<T>> views;  // each [n_classes, D]

  std::size_t n_classes() const { return views.empty() ? 0 : views.front().dim(0); }
  std::size_t n_views() const { return views.size(); }
};

/// `labels[i]` in [0, n_classes) is the class of support row i.
template <typename T>
PrototypeSet<T> compute_prototypes(const ViewEmbeddings<T>& support, std::span<const std::size_t> labels,
                                   std::size_t n_classes);

template <typename T>
PrototypeSet<T> compute_prototypes(const nn::Tensor<T>& support_batch, std::span<const std::size_t> labels,
                                   std::size_t n_classes, const ExtractorBank<T>& bank, const MaskSet& masks);

/// logit_k = -d(f(x), p_k) - sum_n d(f^(n)(x*m^(n)), p_k^(n)) for row `row`.
template <typename T>
std::vector<double> score(const ViewEmbeddings<T>& query, std::size_t row, const PrototypeSet<T>& protos,
                          Distance kind = Distance::kEuclidean);

/// Spectrogram-level convenience: query is [1,1,T,F] (already standardized).
template <typename T>
std::vector<double> score(const nn::Tensor<T>& query, const PrototypeSet<T>& protos, const ExtractorBank<T>& bank,
                          const MaskSet& masks, Distance kind = Distance::kEuclidean);

/// Logits from concept n alone: -d(f^(n)(x*m^(n)), p_k^(n)).
template <typename T>
std::vector<double> concept_only_score(const ViewEmbeddings<T>& query, std::size_t row,
                                       const PrototypeSet<T>& protos, std::size_t mask_index,
                                       Distance kind = Distance::kEuclidean);

/// Plain prototypical network: -d(z, p_k). Kept separate from score() as the
/// reference the empty-mask configuration must reproduce.
template <typename T>
std::vector<double> protonet_logits(std::span<const T> query_embedding, const nn::Tensor<T>& prototypes,
                                    Distance kind = Distance::kEuclidean);

// ---------------------------------------------------------------------------
// Episodic loss
// ---------------------------------------------------------------------------

template <typename T>
struct EpisodeBatch {
  nn::Tensor<T> support;  // [S,1,T,F]
  std::vector<std::size_t> support_labels;
  nn::Tensor<T> query;  // [Q,1,T,F]
  std::vector<std::size_t> query_labels;
  std::size_t n_way = 0;

  /// Throws std::invalid_argument describing the first inconsistency.
  void validate() const;
};

struct LossResult {
  double loss = 0.0;
  std::vector<std::vector<double>> logits;  // per query
  std::size_t correct = 0;
};

/// Mean -log p(y_q | x_q) over queries. With `backward` set, gradients from
/// both support and query paths are accumulated into every extractor.
template <typename T>
LossResult episode_loss(ExtractorBank<T>& bank, const MaskSet& masks, const EpisodeBatch<T>& episode,
                        Distance kind = Distance::kEuclidean, nn::Mode mode = nn::Mode::kTrain,
                        bool backward = true);

}  // namespace hallu
