#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "hallu/episodes.hpp"
#include "hallu/fewshot.hpp"

namespace hallu::eval {

/// One classified test episode. Class ids are global; `logits[i]` belongs to
/// `classes[i]`.
struct EvalRecord {
  std::uint64_t episode_id = 0;
  std::string query_id;
  std::size_t true_class = 0;
  std::size_t predicted_class = 0;
  std::vector<std::size_t> classes;
  std::vector<double> logits;
  /// Optional: prediction from each concept alone (global class ids).
  std::vector<std::size_t> concept_predictions;

  bool correct() const { return true_class == predicted_class; }
  friend bool operator==(const EvalRecord&, const EvalRecord&) = default;
};

struct AccuracySummary {
  double mean = 0.0;  // percent
  double ci95 = 0.0;  // half-width, percent
  std::size_t episodes = 0;
};

/// Mergeable partial sums (count, sum, sum of squares) of 0/1 outcomes, so
/// parallel workers can be combined in any order.
class AccuracyAccumulator {
 public:
  void add(double outcome);
  void merge(const AccuracyAccumulator& other);
  std::size_t count() const { return n_; }
  /// mean * 100 and 1.96 * sample_std / sqrt(n) * 100. Needs n >= 2.
  AccuracySummary summary() const;

 private:
  std::size_t n_ = 0;
  double sum_ = 0.0;
  double sum_sq_ = 0.0;
};

enum class CiUnit {
  kEpisode,     // every episode is one observation
  kQueryClip,   // repetitions of a query are averaged first
};

AccuracySummary accuracy_summary(std::span<const EvalRecord> records, CiUnit unit = CiUnit::kEpisode);

// ---------------------------------------------------------------------------

struct MethodResults {
  std::string name;
  std::map<std::string, AccuracySummary> cells;  // e.g. "5way-1shot"
};

struct GainTable {
  std::vector<std::string> cells;
  std::string baseline;
  std::vector<MethodResults> methods;
  std::map<std::string, std::vector<double>> gains;  // method -> per-cell gain over baseline

  std::string format() const;
};

/// Gains of every method over `baseline` per cell; all methods must cover the
/// same cells.
GainTable gain_table(std::span<const MethodResults> runs, const std::string& baseline);

// ---------------------------------------------------------------------------

/// Eval-mode embeddings of a set of clips under every view of a bank.
template <typename T>
struct EmbeddingTable {
  ViewEmbeddings<T> views;
  std::map<std::size_t, std::size_t> row_of;  // clip index -> row

  std::size_t row(std::size_t clip) const;
};

/// Standardized T*F spectrogram of a clip.
using ClipLoader = std::function<std::vector<float>(std::size_t clip)>;

EmbeddingTable<float> build_embedding_table(const ExtractorBank<float>& bank, const MaskSet& masks,
                                            std::span<const std::size_t> clips, const ClipLoader& load,
                                            std::size_t threads = 1, std::size_t batch = 32);

template <typename T>
PrototypeSet<T> episode_prototypes(const EmbeddingTable<T>& table, const data::Episode& episode);

template <typename T>
EvalRecord evaluate_episode(const EmbeddingTable<T>& table, const data::Episode& episode,
                            const data::DatasetIndex& index, Distance kind, bool with_concepts = false);

/// Records for every episode of the stream, in episode order. Work is split
/// into contiguous index ranges, one per thread.
std::vector<EvalRecord> evaluate_stream(const EmbeddingTable<float>& table, const data::TestEpisodeStream& stream,
                                        const data::DatasetIndex& index, Distance kind, std::size_t threads = 1,
                                        bool with_concepts = false);

// ---------------------------------------------------------------------------

struct ImportanceRow {
  std::size_t class_id = 0;
  std::string name;
  std::size_t episodes = 0;
  std::size_t q_high = 0;
  std::size_t q_low = 0;
  /// q_high / q_low; empty when q_low == 0.
  std::optional<double> ratio;
};

struct ImportanceCounts {
  std::vector<ImportanceRow> rows;
};

inline constexpr const char* kUndefinedRatio = "undefined";

/// Over all stream episodes whose query is in `classes` (empty = all pool
/// classes), counts queries classified correctly by the high-only and the
/// low-only concept distance.
ImportanceCounts frequency_importance(const EmbeddingTable<float>& table, const data::TestEpisodeStream& stream,
                                      const data::DatasetIndex& index, std::span<const std::size_t> classes,
                                      std::size_t high_mask, std::size_t low_mask, Distance kind);

void write_importance_csv(const std::filesystem::path& path, const ImportanceCounts& counts);

// ---------------------------------------------------------------------------

inline constexpr const char* kResultsSchema = "halluaudio-results/1";

struct RunInfo {
  std::string cell;
  std::size_t n_way = 0;
  std::size_t k_shot = 0;
  std::size_t repetitions = 0;
  std::string mask_mode;
  std::string distance;
  std::uint64_t seed = 0;
  std::string split_file;
  std::vector<std::size_t> novel_classes;
  std::uint64_t spectrogram_fingerprint = 0;
  std::uint64_t backbone_hash = 0;
  double runtime_seconds = 0.0;
};

/// Writes <stem>.csv (one line per episode) and <stem>.json (summary).
void export_results(std::span<const EvalRecord> records, const AccuracySummary& summary, const RunInfo& info,
                    const std::filesystem::path& dir, const std::string& stem);

void write_records_csv(const std::filesystem::path& path, std::span<const EvalRecord> records);
std::vector<EvalRecord> read_records_csv(const std::filesystem::path& path);

}  // namespace hallu::eval
