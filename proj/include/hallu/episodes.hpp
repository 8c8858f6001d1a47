#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "hallu/rng.hpp"

namespace hallu::data {

struct ClipEntry {
  std::string clip_id;
  std::filesystem::path path;
  std::string label;
  std::size_t class_id = 0;
  int fold = 0;
};

struct DatasetIndex {
  std::vector<ClipEntry> entries;
  std::vector<std::string> class_names;  // indexed by class id

  std::size_t n_classes() const { return class_names.size(); }
  /// Entry indices grouped by class id, in index order.
  std::vector<std::vector<std::size_t>> clips_by_class() const;
  /// Dense class ids, unique clip ids; throws LoadError.
  void validate() const;
};

/// ESC-50 metadata (filename,fold,target,category,...). With `strict`, the
/// published 50 x 40 layout is enforced. Missing audio files are reported by
/// path and CSV row.
DatasetIndex load_esc50_index(const std::filesystem::path& meta_csv, const std::filesystem::path& audio_root,
                              bool strict = true);

/// Generic corpus manifest with columns path,label; relative paths resolve
/// against `root`. Class ids follow sorted label order.
DatasetIndex load_manifest(const std::filesystem::path& manifest_csv, const std::filesystem::path& root);

struct SplitSpec {
  std::uint64_t seed = 0;
  std::vector<std::size_t> base_classes;        // training classes (validation excluded)
  std::vector<std::size_t> validation_classes;  // held out from base for monitoring
  std::vector<std::size_t> novel_classes;

  /// Disjointness and range check against `n_classes`.
  void validate(std::size_t n_classes) const;
};

/// Seeded shuffle of class ids; the last `n_novel` become novel and the
/// `n_validation` before them are held out from base.
SplitSpec make_split(const DatasetIndex& index, std::size_t n_novel, std::uint64_t seed,
                     std::size_t n_validation = 0);

/// Classes dealt round-robin (after a seeded shuffle) into `n_folds` groups;
/// group `fold` is novel.
SplitSpec make_fold_split(const DatasetIndex& index, std::size_t n_folds, std::size_t fold, std::uint64_t seed,
                          std::size_t n_validation = 0);

void write_split(const std::filesystem::path& path, const SplitSpec& split);
SplitSpec read_split(const std::filesystem::path& path);

struct EpisodeSpec {
  std::size_t n_way = 5;
  std::size_t k_shot = 1;
  std::size_t n_query = 5;      // per class, training episodes
  std::size_t repetitions = 50;  // support resamplings per query, test episodes

  void validate() const;
};

struct EpisodeItem {
  std::size_t clip = 0;   // index into DatasetIndex::entries
  std::size_t label = 0;  // episode-local class in [0, n_way)
};

struct Episode {
  std::uint64_t id = 0;
  std::vector<std::size_t> classes;  // global class id of each local label
  std::vector<EpisodeItem> support;
  std::vector<EpisodeItem> queries;
};

/// Clips of a subset of classes.
class ClassPool {
 public:
  ClassPool(const DatasetIndex& index, std::span<const std::size_t> classes);

  std::size_t n_classes() const { return classes_.size(); }
  std::size_t class_id(std::size_t i) const { return classes_[i]; }
  const std::vector<std::size_t>& clips(std::size_t i) const { return clips_[i]; }
  std::size_t n_clips() const;
  std::size_t min_clips() const;
  /// Position of a global class id within the pool.
  std::size_t position_of(std::size_t class_id) const;

 private:
  std::vector<std::size_t> classes_;
  std::vector<std::vector<std::size_t>> clips_;
};

/// n_way classes uniformly without replacement, then k_shot + n_query clips
/// per class without replacement; the first k_shot are supports.
Episode sample_train_episode(const ClassPool& base, const EpisodeSpec& spec, Rng& rng);

/// Query-centric test protocol: every clip of the pool serves as the single
/// query of `repetitions` episodes; each time the supports are k_shot clips
/// of its own class (never the query itself) plus k_shot clips from each of
/// n_way - 1 other uniformly drawn classes. Episodes are generated on demand
/// and depend only on (seed, episode index), so any partition of the index
/// range yields the same episodes.
class TestEpisodeStream {
 public:
  TestEpisodeStream(const ClassPool& pool, const EpisodeSpec& spec, std::uint64_t seed);

  std::size_t size() const { return queries_.size() * spec_.repetitions; }
  Episode at(std::size_t episode_index) const;
  const EpisodeSpec& spec() const { return spec_; }

 private:
  const ClassPool* pool_;
  EpisodeSpec spec_;
  std::uint64_t seed_;
  std::vector<std::pair<std::size_t, std::size_t>> queries_;  // (pool class position, clip)
};

}  // namespace hallu::data
