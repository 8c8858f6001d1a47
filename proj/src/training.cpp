#include "hallu/training.hpp"

#include <chrono>
#include <cmath>
#include <sstream>

#include "hallu/nn/optim.hpp"

namespace hallu {

using nn::Tensor;

ClipStore::ClipStore(eval::ClipLoader loader, std::size_t values_per_clip)
    : loader_(std::move(loader)), values_per_clip_(values_per_clip) {}

void ClipStore::preload(std::span<const std::size_t> clips) {
  for (const std::size_t c : clips) get(c);
}

const std::vector<float>& ClipStore::get(std::size_t clip) {
  auto it = clips_.find(clip);
  if (it != clips_.end()) return it->second;
  std::vector<float> values = loader_(clip);
  if (values.size() != values_per_clip_) {
    throw std::runtime_error("clip " + std::to_string(clip) + ": " + std::to_string(values.size()) +
                             " values, expected " + std::to_string(values_per_clip_));
  }
  return clips_.emplace(clip, std::move(values)).first->second;
}

const std::vector<float>& ClipStore::cached(std::size_t clip) const {
  const auto it = clips_.find(clip);
  if (it == clips_.end()) throw std::out_of_range("clip " + std::to_string(clip) + " not preloaded");
  return it->second;
}

eval::ClipLoader ClipStore::loader() const {
  return [this](std::size_t clip) { return cached(clip); };
}

Tensor<float> gather_batch(ClipStore& store, std::span<const data::EpisodeItem> items, std::size_t frames,
                           std::size_t bands, std::vector<std::size_t>* labels) {
  const std::size_t plane = frames * bands;
  Tensor<float> batch({items.size(), 1, frames, bands});
  if (labels) labels->clear();
  for (std::size_t i = 0; i < items.size(); ++i) {
    const std::vector<float>& v = store.get(items[i].clip);
    std::copy(v.begin(), v.end(), batch.data() + i * plane);
    if (labels) labels->push_back(items[i].label);
  }
  return batch;
}

namespace {

std::string describe(const data::Episode& ep, const data::DatasetIndex& index) {
  std::ostringstream out;
  out << "episode " << ep.id << "\n  classes:";
  for (const std::size_t c : ep.classes) out << ' ' << c << '(' << index.class_names.at(c) << ')';
  out << "\n  support:";
  for (const auto& s : ep.support) out << ' ' << index.entries.at(s.clip).clip_id;
  out << "\n  queries:";
  for (const auto& q : ep.queries) out << ' ' << index.entries.at(q.clip).clip_id;
  out << '\n';
  return out.str();
}

}  // namespace

eval::AccuracySummary evaluate_classes(const ExtractorBank<float>& bank, const MaskSet& masks,
                                       const data::DatasetIndex& index, std::span<const std::size_t> classes,
                                       ClipStore& store, const data::EpisodeSpec& spec, std::uint64_t seed,
                                       Distance distance, std::size_t threads) {
  const data::ClassPool pool(index, classes);
  const data::TestEpisodeStream stream(pool, spec, seed);
  std::vector<std::size_t> clips;
  for (std::size_t c = 0; c < pool.n_classes(); ++c) {
    clips.insert(clips.end(), pool.clips(c).begin(), pool.clips(c).end());
  }
  store.preload(clips);
  const eval::EmbeddingTable<float> table = eval::build_embedding_table(bank, masks, clips, store.loader(), threads);
  const std::vector<eval::EvalRecord> records = eval::evaluate_stream(table, stream, index, distance, threads);
  return eval::accuracy_summary(records);
}

std::vector<EpochLog> train_bank(ExtractorBank<float>& bank, const MaskSet& masks, const data::DatasetIndex& index,
                                 const data::SplitSpec& split, ClipStore& store, const TrainOptions& options,
                                 const EpochCallback& on_epoch) {
  options.episode.validate();
  if (options.epochs == 0) throw std::invalid_argument("train: epochs must be >= 1");
  if (options.episodes_per_epoch == 0) throw std::invalid_argument("train: episodes_per_epoch must be >= 1");
  const BackboneSpec& spec = bank.spec();
  const data::ClassPool base(index, split.base_classes);
  const bool validate = split.validation_classes.size() >= options.episode.n_way;

  nn::Sgd<float> sgd({options.lr, options.weight_decay, options.momentum});
  std::vector<nn::Parameter<float>*> params = bank.parameters();
  Rng rng(derive_seed(options.seed, 2));
  std::vector<EpochLog> logs;

  for (std::size_t epoch = 0; epoch < options.epochs; ++epoch) {
    const auto start = std::chrono::steady_clock::now();
    EpochLog log;
    log.epoch = epoch + 1;
    log.lr = nn::lr_schedule(epoch, options.lr, options.lr_step);
    double loss_sum = 0.0;
    std::size_t correct = 0, queries = 0;
    for (std::size_t i = 0; i < options.episodes_per_epoch; ++i) {
      data::Episode ep = data::sample_train_episode(base, options.episode, rng);
      ep.id = epoch * options.episodes_per_epoch + i;
      EpisodeBatch<float> batch;
      batch.n_way = options.episode.n_way;
      batch.support = gather_batch(store, ep.support, spec.height, spec.width, &batch.support_labels);
      batch.query = gather_batch(store, ep.queries, spec.height, spec.width, &batch.query_labels);
      bank.zero_grad();
      const LossResult r = episode_loss(bank, masks, batch, options.distance, nn::Mode::kTrain, true);
      if (!std::isfinite(r.loss)) throw TrainingDiverged(ep.id, describe(ep, index));
      sgd.step(params, log.lr);
      loss_sum += r.loss;
      correct += r.correct;
      queries += batch.query_labels.size();
    }
    log.loss = loss_sum / static_cast<double>(options.episodes_per_epoch);
    log.train_accuracy = 100.0 * static_cast<double>(correct) / static_cast<double>(queries);
    if (validate) {
      const data::EpisodeSpec vspec{options.episode.n_way, options.episode.k_shot, 1, options.val_repetitions};
      log.val_accuracy = evaluate_classes(bank, masks, index, split.validation_classes, store, vspec,
                                          derive_seed(options.seed, 3), options.distance, options.threads)
                             .mean;
    }
    log.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    logs.push_back(log);
    if (on_epoch) on_epoch(log, bank);
  }
  return logs;
}

}  // namespace hallu
