#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "hallu/audio/spectrogram.hpp"
#include "hallu/backbone.hpp"
#include "hallu/eval.hpp"
#include "hallu/fewshot.hpp"

namespace hallu::cli {

namespace fs = std::filesystem;

/// Environment variable that overrides [data] root.
inline constexpr const char* kDataRootEnv = "HALLU_DATA_ROOT";

/// `key = value` lines grouped under `[section]` headers; `#` and `;` start
/// comments. Keys before any header land in section "".
struct IniFile {
  std::map<std::string, std::map<std::string, std::string>> sections;

  std::optional<std::string> get(const std::string& section, const std::string& key) const;
};

IniFile parse_ini(const std::string& text, const std::string& source = "<config>");

struct GridCell {
  std::size_t n_way = 5;
  std::size_t k_shot = 1;

  std::string name() const;  // "5way-1shot"
  friend bool operator==(const GridCell&, const GridCell&) = default;
};

/// "5x1,5x5,10x1,10x5"
std::vector<GridCell> parse_grid(const std::string& text);

struct DataConfig {
  std::string format = "esc50";  // esc50 | manifest
  fs::path root;
  fs::path meta;  // ESC-50 metadata CSV or manifest; relative to root
  fs::path cache_dir;
  bool strict = true;
};

struct SplitConfig {
  std::size_t n_novel = 15;
  std::size_t n_validation = 5;
  std::size_t n_folds = 0;  // > 0 selects a fold split
  std::size_t fold = 0;
  fs::path file;
};

struct ModelConfig {
  std::vector<std::size_t> channels{64, 64, 64};
  MaskMode mask_mode = MaskMode::kFrequency;
  Distance distance = Distance::kEuclidean;
  std::size_t freq_split = 64;
};

struct TrainConfig {
  std::size_t epochs = 60;
  double lr = 0.01;
  double weight_decay = 1e-4;
  double momentum = 0.0;
  std::size_t lr_step = 20;
  std::size_t n_way = 5;
  std::size_t k_shot = 5;
  std::size_t n_query = 5;
  std::size_t episodes_per_epoch = 100;
  std::size_t val_repetitions = 1;
};

struct EvalConfig {
  std::vector<GridCell> grid{{5, 1}, {5, 5}, {10, 1}, {10, 5}};
  std::size_t repetitions = 50;
  eval::CiUnit ci_unit = eval::CiUnit::kEpisode;
  bool concept_predictions = false;
};

struct ImportanceConfig {
  std::vector<std::string> classes;  // names or ids; empty = all novel classes
  std::size_t n_way = 5;
  std::size_t k_shot = 5;
};

struct RunConfig {
  DataConfig data;
  audio::SpectrogramConfig spectrogram;
  ModelConfig model;
  SplitConfig split;
  TrainConfig train;
  EvalConfig eval;
  ImportanceConfig importance;
  std::uint64_t seed = 0;
  std::size_t threads = 1;
  fs::path out = "runs";
  fs::path checkpoint;  // defaults to <out>/checkpoint.bin

  BackboneSpec backbone_spec() const;
  MaskSet masks() const;
  /// Backbone + mask configuration; stored in checkpoints.
  std::uint64_t model_hash() const;
  fs::path meta_path() const;
  fs::path cache_dir() const;
  fs::path split_file() const;
  fs::path checkpoint_path() const;
};

/// Command-line overrides; unset fields keep the file's values.
struct Overrides {
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> threads;
  std::optional<fs::path> out;
  std::optional<fs::path> checkpoint;
  std::optional<std::string> grid;
  std::optional<std::size_t> repetitions;
  std::optional<std::string> mask_mode;
  std::optional<fs::path> split_file;
};

/// Parses the file (if any), then applies the environment and `overrides`.
/// Throws ConfigError for unknown keys or malformed values.
RunConfig load_config(const std::optional<fs::path>& file, const Overrides& overrides);
RunConfig config_from_ini(const IniFile& ini);

/// Value checks that need no filesystem access.
void validate_values(const RunConfig& config);

enum class Need : unsigned {
  kDataset = 1,     // metadata/manifest must exist
  kSplit = 2,       // split file must exist
  kCheckpoint = 4,  // checkpoint must exist
};
constexpr unsigned operator|(Need a, Need b) { return static_cast<unsigned>(a) | static_cast<unsigned>(b); }
constexpr unsigned operator|(unsigned a, Need b) { return a | static_cast<unsigned>(b); }

/// validate_values plus existence of the paths the command reads.
void validate_config(const RunConfig& config, unsigned needs);

}  // namespace hallu::cli
