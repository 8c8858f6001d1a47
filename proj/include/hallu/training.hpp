#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

#include "hallu/episodes.hpp"
#include "hallu/eval.hpp"
#include "hallu/fewshot.hpp"

namespace hallu {

/// Standardized T*F spectrograms held in memory, loaded once per clip.
class ClipStore {
 public:
  ClipStore(eval::ClipLoader loader, std::size_t values_per_clip);

  /// Loads every clip of `clips` not yet present.
  void preload(std::span<const std::size_t> clips);
  const std::vector<float>& get(std::size_t clip);
  /// Thread-safe only for clips already preloaded.
  const std::vector<float>& cached(std::size_t clip) const;
  eval::ClipLoader loader() const;

 private:
  eval::ClipLoader loader_;
  std::size_t values_per_clip_;
  std::unordered_map<std::size_t, std::vector<float>> clips_;
};

/// [items, 1, T, F] batch plus episode-local labels.
nn::Tensor<float> gather_batch(ClipStore& store, std::span<const data::EpisodeItem> items, std::size_t frames,
                               std::size_t bands, std::vector<std::size_t>* labels);

struct TrainOptions {
  std::size_t epochs = 60;
  double lr = 0.01;
  double weight_decay = 1e-4;
  double momentum = 0.0;
  std::size_t lr_step = 20;
  data::EpisodeSpec episode{5, 5, 5, 1};
  std::size_t episodes_per_epoch = 100;
  Distance distance = Distance::kEuclidean;
  std::uint64_t seed = 0;
  /// Validation evaluation only; the update loop is single-threaded.
  std::size_t threads = 1;
  /// Test-style episodes per validation clip.
  std::size_t val_repetitions = 1;
};

struct EpochLog {
  std::size_t epoch = 0;  // 1-based
  double lr = 0.0;
  double loss = 0.0;
  double train_accuracy = 0.0;            // percent, over training queries
  std::optional<double> val_accuracy;      // percent
  double seconds = 0.0;
};

/// Raised when an episode produces a non-finite loss.
class TrainingDiverged : public std::runtime_error {
 public:
  TrainingDiverged(std::uint64_t episode_id, std::string diagnostic)
      : std::runtime_error("non-finite loss at training episode " + std::to_string(episode_id)),
        episode_id_(episode_id), diagnostic_(std::move(diagnostic)) {}
  std::uint64_t episode_id() const { return episode_id_; }
  const std::string& diagnostic() const { return diagnostic_; }

 private:
  std::uint64_t episode_id_;
  std::string diagnostic_;
};

using EpochCallback = std::function<void(const EpochLog&, const ExtractorBank<float>&)>;

/// Episodic SGD over the base classes of `split`, with step-decayed learning
/// rate. Validation accuracy uses the split's validation classes when there
/// are at least n_way of them.
std::vector<EpochLog> train_bank(ExtractorBank<float>& bank, const MaskSet& masks, const data::DatasetIndex& index,
                                 const data::SplitSpec& split, ClipStore& store, const TrainOptions& options,
                                 const EpochCallback& on_epoch = {});

/// Eval-mode accuracy over a test stream of `classes`.
eval::AccuracySummary evaluate_classes(const ExtractorBank<float>& bank, const MaskSet& masks,
                                       const data::DatasetIndex& index, std::span<const std::size_t> classes,
                                       ClipStore& store, const data::EpisodeSpec& spec, std::uint64_t seed,
                                       Distance distance, std::size_t threads);

}  // namespace hallu
