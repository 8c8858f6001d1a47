#include "hallu/cli/commands.hpp"

#include <algorithm>
#include <cctype>
#include <chrono>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <mutex>
#include <set>
#include <thread>

#include "hallu/audio/cache.hpp"
#include "hallu/audio/wav.hpp"
#include "hallu/errors.hpp"
#include "hallu/hash.hpp"
#include "hallu/training.hpp"

namespace hallu::cli {

namespace {

std::string format(const char* fmt, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof(buf), fmt, args...);
  return buf;
}

double seconds_since(std::chrono::steady_clock::time_point start) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
}

std::string sanitize(const std::string& id) {
  std::string s = id;
  for (char& ch : s) {
    const bool ok = std::isalnum(static_cast<unsigned char>(ch)) || ch == '-' || ch == '_' || ch == '.';
    if (!ok) ch = '_';
  }
  return s;
}

void make_dirs(const fs::path& dir) {
  if (dir.empty()) return;
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw std::runtime_error("cannot create directory " + dir.string() + ": " + ec.message());
}

data::SplitSpec load_split(const RunConfig& c, const data::DatasetIndex& index) {
  data::SplitSpec split = data::read_split(c.split_file());
  try {
    split.validate(index.n_classes());
  } catch (const std::exception& e) {
    throw ConfigError(c.split_file().string() + ": " + e.what());
  }
  return split;
}

std::vector<std::size_t> clips_of(const data::ClassPool& pool) {
  std::vector<std::size_t> clips;
  for (std::size_t i = 0; i < pool.n_classes(); ++i) {
    clips.insert(clips.end(), pool.clips(i).begin(), pool.clips(i).end());
  }
  return clips;
}

ClipStore make_store(const RunConfig& c, const data::DatasetIndex& index) {
  const BackboneSpec spec = c.backbone_spec();
  return ClipStore([&c, &index](std::size_t clip) { return load_clip(c, index.entries.at(clip)); },
                   spec.height * spec.width);
}

void check_cells(const std::vector<GridCell>& grid, const data::ClassPool& novel, std::size_t repetitions) {
  for (const GridCell& g : grid) {
    // Constructing the stream runs every protocol check.
    const data::TestEpisodeStream probe(novel, {g.n_way, g.k_shot, 1, repetitions}, 0);
    (void)probe;
  }
}

std::uint64_t cell_seed(std::uint64_t seed, const std::string& name) { return derive_seed(seed, fnv1a64(name)); }

}  // namespace

// ---------------------------------------------------------------------------

data::DatasetIndex load_index(const RunConfig& c) {
  if (c.data.format == "esc50") return data::load_esc50_index(c.meta_path(), c.data.root / "audio", c.data.strict);
  return data::load_manifest(c.meta_path(), c.data.root);
}

fs::path cache_path(const RunConfig& c, const data::ClipEntry& entry) {
  return c.cache_dir() / (sanitize(entry.clip_id) + ".halc");
}

std::vector<float> load_clip(const RunConfig& c, const data::ClipEntry& entry) {
  const fs::path path = cache_path(c, entry);
  if (!fs::exists(path)) throw LoadError("no cached spectrogram for " + entry.clip_id + " (run prepare): " + path.string());
  const audio::LogMelSpectrogram s = audio::read_cache(path);
  if (s.config_hash != c.spectrogram.fingerprint()) {
    throw LoadError("stale spectrogram cache " + path.string() + " (config changed; re-run prepare)");
  }
  const BackboneSpec spec = c.backbone_spec();
  if (s.frames != spec.height || s.bands != spec.width) {
    throw LoadError(path.string() + ": spectrogram is " + std::to_string(s.frames) + "x" + std::to_string(s.bands) +
                    ", model expects " + std::to_string(spec.height) + "x" + std::to_string(spec.width));
  }
  return audio::standardize(s.values);
}

nn::Checkpoint make_checkpoint(const RunConfig& c, const ExtractorBank<float>& bank, std::size_t epoch) {
  nn::Checkpoint ckpt;
  ckpt.spec_hash = c.model_hash();
  ckpt.mask_mode = to_string(c.model.mask_mode);
  ckpt.epoch = epoch;
  ckpt.seed = c.seed;
  for (std::size_t v = 0; v < bank.views(); ++v) bank.view(v).export_to(ckpt);
  return ckpt;
}

ExtractorBank<float> load_bank(const RunConfig& c, const nn::Checkpoint& ckpt) {
  if (ckpt.spec_hash != c.model_hash()) {
    throw ConfigError(format("checkpoint was built for a different model (mask mode '%s', spec hash %016llx); "
                             "configuration expects mask mode '%s', spec hash %016llx",
                             ckpt.mask_mode.c_str(), static_cast<unsigned long long>(ckpt.spec_hash),
                             to_string(c.model.mask_mode).c_str(),
                             static_cast<unsigned long long>(c.model_hash())));
  }
  ExtractorBank<float> bank = make_extractor_bank<float>(c.backbone_spec(), c.masks().size(), 0);
  for (std::size_t v = 0; v < bank.views(); ++v) bank.view(v).import_from(ckpt);
  return bank;
}

// ---------------------------------------------------------------------------

int cmd_prepare(const RunConfig& c, std::ostream& out) {
  validate_config(c, 0u | Need::kDataset);
  const auto start = std::chrono::steady_clock::now();
  const data::DatasetIndex index = load_index(c);
  data::SplitSpec split;
  const bool have_split = fs::exists(c.split_file());
  if (have_split) {
    split = load_split(c, index);
  } else if (c.split.n_folds > 0) {
    split = data::make_fold_split(index, c.split.n_folds, c.split.fold, c.seed, c.split.n_validation);
  } else {
    if (c.split.n_novel + c.split.n_validation >= index.n_classes()) {
      throw ConfigError(format("split: %zu novel + %zu validation classes leave no base classes out of %zu",
                               c.split.n_novel, c.split.n_validation, index.n_classes()));
    }
    split = data::make_split(index, c.split.n_novel, c.seed, c.split.n_validation);
  }

  make_dirs(c.cache_dir());
  make_dirs(c.out);
  if (!c.split_file().parent_path().empty()) make_dirs(c.split_file().parent_path());

  const std::uint64_t fp = c.spectrogram.fingerprint();
  std::vector<std::string> failures(index.entries.size());
  std::vector<char> computed(index.entries.size(), 0);
  auto work = [&](std::size_t lo, std::size_t hi) {
    for (std::size_t i = lo; i < hi; ++i) {
      const data::ClipEntry& e = index.entries[i];
      const fs::path dst = cache_path(c, e);
      if (audio::cached_fingerprint(dst) == fp) continue;
      try {
        audio::write_cache(dst, audio::extract(audio::read_wav(e.path), c.spectrogram));
        computed[i] = 1;
      } catch (const std::exception& ex) {
        failures[i] = e.path.string() + ": " + ex.what();
      }
    }
  };
  const std::size_t n = index.entries.size();
  const std::size_t threads = std::max<std::size_t>(1, std::min(c.threads, n));
  std::vector<std::thread> pool;
  for (std::size_t t = 1; t < threads; ++t) pool.emplace_back(work, n * t / threads, n * (t + 1) / threads);
  work(0, n / threads);
  for (std::thread& th : pool) th.join();

  if (!have_split) data::write_split(c.split_file(), split);
  {
    std::ofstream idx(c.out / "index.csv", std::ios::trunc);
    idx << "clip,clip_id,class_id,label,fold,cache\n";
    for (std::size_t i = 0; i < n; ++i) {
      const data::ClipEntry& e = index.entries[i];
      idx << i << ',' << e.clip_id << ',' << e.class_id << ',' << e.label << ',' << e.fold << ','
          << cache_path(c, e).string() << '\n';
    }
  }

  std::size_t n_failed = 0, n_computed = 0;
  for (std::size_t i = 0; i < n; ++i) {
    if (!failures[i].empty()) {
      ++n_failed;
      std::cerr << "prepare: " << failures[i] << '\n';
    }
    n_computed += computed[i];
  }
  out << format("prepare: %zu clips, %zu computed, %zu reused, %zu failed (%.1f s)\n", n, n_computed,
                n - n_computed - n_failed, n_failed, seconds_since(start));
  out << format("split: %zu base, %zu validation, %zu novel classes -> %s\n", split.base_classes.size(),
                split.validation_classes.size(), split.novel_classes.size(), c.split_file().string().c_str());
  return n_failed == 0 ? kOk : kOperationalError;
}

// ---------------------------------------------------------------------------

int cmd_train(const RunConfig& c, std::ostream& out) {
  validate_config(c, Need::kDataset | Need::kSplit);
  const data::DatasetIndex index = load_index(c);
  const data::SplitSpec split = load_split(c, index);
  const data::EpisodeSpec espec{c.train.n_way, c.train.k_shot, c.train.n_query, 1};
  const data::ClassPool base(index, split.base_classes);
  if (base.n_classes() < espec.n_way) {
    throw ConfigError(format("train: %zu-way episodes need %zu base classes, split has %zu", espec.n_way, espec.n_way,
                             base.n_classes()));
  }
  if (base.min_clips() < espec.k_shot + espec.n_query) {
    throw ConfigError(format("train: every base class needs k_shot + n_query = %zu clips", espec.k_shot + espec.n_query));
  }

  const MaskSet masks = c.masks();
  ExtractorBank<float> bank = make_extractor_bank<float>(c.backbone_spec(), masks.size(), derive_seed(c.seed, 1));
  ClipStore store = make_store(c, index);
  store.preload(clips_of(base));

  make_dirs(c.out);
  const fs::path ckpt_path = c.checkpoint_path();
  if (!ckpt_path.parent_path().empty()) make_dirs(ckpt_path.parent_path());
  std::ofstream log(c.out / "train_log.csv", std::ios::trunc);
  log << "epoch,lr,loss,train_acc,val_acc,seconds\n";

  out << format("train: mask mode %s, %zu extractors, %zu parameters, %zu base / %zu validation classes\n",
                to_string(c.model.mask_mode).c_str(), bank.views(), param_count(bank), split.base_classes.size(),
                split.validation_classes.size());

  TrainOptions opt;
  opt.epochs = c.train.epochs;
  opt.lr = c.train.lr;
  opt.weight_decay = c.train.weight_decay;
  opt.momentum = c.train.momentum;
  opt.lr_step = c.train.lr_step;
  opt.episode = espec;
  opt.episodes_per_epoch = c.train.episodes_per_epoch;
  opt.distance = c.model.distance;
  opt.seed = c.seed;
  opt.threads = c.threads;
  opt.val_repetitions = c.train.val_repetitions;

  auto on_epoch = [&](const EpochLog& e, const ExtractorBank<float>& b) {
    const std::string val = e.val_accuracy ? format("%.2f", *e.val_accuracy) : std::string("n/a");
    out << format("epoch %3zu/%zu  lr %.6g  loss %.4f  train_acc %.2f  val_acc %s  (%.1f s)\n", e.epoch, opt.epochs,
                  e.lr, e.loss, e.train_accuracy, val.c_str(), e.seconds)
        << std::flush;
    log << format("%zu,%.6g,%.6f,%.4f,%s,%.3f\n", e.epoch, e.lr, e.loss, e.train_accuracy, val.c_str(), e.seconds)
        << std::flush;
    nn::write_checkpoint(make_checkpoint(c, b, e.epoch), ckpt_path);
  };
  try {
    train_bank(bank, masks, index, split, store, opt, on_epoch);
  } catch (const TrainingDiverged& d) {
    const fs::path dump = c.out / "diverged_episode.txt";
    std::ofstream(dump, std::ios::trunc) << d.what() << '\n' << d.diagnostic();
    std::cerr << "train: " << d.what() << "; aborting\n" << d.diagnostic() << "details written to " << dump.string()
              << '\n';
    return kOperationalError;
  }
  out << "checkpoint: " << ckpt_path.string() << '\n';
  return kOk;
}

// ---------------------------------------------------------------------------

int cmd_eval(const RunConfig& c, std::ostream& out) {
  validate_config(c, Need::kDataset | Need::kSplit | Need::kCheckpoint);
  const data::DatasetIndex index = load_index(c);
  const data::SplitSpec split = load_split(c, index);
  const data::ClassPool novel(index, split.novel_classes);
  check_cells(c.eval.grid, novel, c.eval.repetitions);
  const nn::Checkpoint ckpt = nn::read_checkpoint(c.checkpoint_path());
  const ExtractorBank<float> bank = load_bank(c, ckpt);
  const MaskSet masks = c.masks();

  const auto start = std::chrono::steady_clock::now();
  ClipStore store = make_store(c, index);
  const std::vector<std::size_t> clips = clips_of(novel);
  store.preload(clips);
  const eval::EmbeddingTable<float> table =
      eval::build_embedding_table(bank, masks, clips, store.loader(), c.threads);
  const double embed_seconds = seconds_since(start);

  make_dirs(c.out);
  std::ofstream summary(c.out / "eval_summary.csv", std::ios::trunc);
  summary << "cell,mask_mode,distance,accuracy,ci95,episodes\n";
  out << format("eval: %s, %s distance, %zu novel clips, repetitions %zu\n", to_string(c.model.mask_mode).c_str(),
                to_string(c.model.distance).c_str(), clips.size(), c.eval.repetitions);
  for (const GridCell& g : c.eval.grid) {
    const auto cell_start = std::chrono::steady_clock::now();
    const data::TestEpisodeStream stream(novel, {g.n_way, g.k_shot, 1, c.eval.repetitions},
                                         cell_seed(c.seed, g.name()));
    const std::vector<eval::EvalRecord> records =
        eval::evaluate_stream(table, stream, index, c.model.distance, c.threads, c.eval.concept_predictions);
    const eval::AccuracySummary s = eval::accuracy_summary(records, c.eval.ci_unit);
    eval::RunInfo info;
    info.cell = g.name();
    info.n_way = g.n_way;
    info.k_shot = g.k_shot;
    info.repetitions = c.eval.repetitions;
    info.mask_mode = to_string(c.model.mask_mode);
    info.distance = to_string(c.model.distance);
    info.seed = c.seed;
    info.split_file = c.split_file().string();
    info.novel_classes = split.novel_classes;
    info.spectrogram_fingerprint = c.spectrogram.fingerprint();
    info.backbone_hash = c.model_hash();
    info.runtime_seconds = embed_seconds + seconds_since(cell_start);
    eval::export_results(records, s, info, c.out, "eval-" + g.name());
    summary << format("%s,%s,%s,%.4f,%.4f,%zu\n", g.name().c_str(), info.mask_mode.c_str(), info.distance.c_str(),
                      s.mean, s.ci95, s.episodes);
    out << format("  %-12s %6.2f +- %.2f  (%zu episodes)\n", g.name().c_str(), s.mean, s.ci95, s.episodes)
        << std::flush;
  }
  return kOk;
}

int cmd_ablate_time(RunConfig c, std::ostream& out) {
  c.model.mask_mode = MaskMode::kTime;
  validate_config(c, Need::kDataset | Need::kSplit);
  const int rc = cmd_train(c, out);
  if (rc != kOk) return rc;
  return cmd_eval(c, out);
}

// ---------------------------------------------------------------------------

int cmd_importance(const RunConfig& c, std::ostream& out) {
  validate_config(c, Need::kDataset | Need::kSplit | Need::kCheckpoint);
  if (c.model.mask_mode != MaskMode::kFrequency) {
    throw ConfigError("importance is defined for frequency concepts; configured mask mode is '" +
                      to_string(c.model.mask_mode) + "'");
  }
  const nn::Checkpoint ckpt = nn::read_checkpoint(c.checkpoint_path());
  if (ckpt.mask_mode != to_string(MaskMode::kFrequency)) {
    throw ConfigError("importance needs a frequency-concept checkpoint; " + c.checkpoint_path().string() +
                      " has mask mode '" + ckpt.mask_mode + "'");
  }
  const data::DatasetIndex index = load_index(c);
  const data::SplitSpec split = load_split(c, index);
  const data::ClassPool novel(index, split.novel_classes);

  std::vector<std::size_t> classes;
  for (const std::string& want : c.importance.classes) {
    std::optional<std::size_t> id;
    for (std::size_t k = 0; k < index.n_classes(); ++k) {
      if (index.class_names[k] == want || std::to_string(k) == want) id = k;
    }
    if (!id) throw ConfigError("importance: unknown class '" + want + "'");
    if (std::find(split.novel_classes.begin(), split.novel_classes.end(), *id) == split.novel_classes.end()) {
      throw ConfigError("importance: class '" + want + "' is not a novel class of the split");
    }
    classes.push_back(*id);
  }
  if (classes.empty()) classes = split.novel_classes;
  const data::EpisodeSpec espec{c.importance.n_way, c.importance.k_shot, 1, c.eval.repetitions};
  const data::TestEpisodeStream stream(novel, espec, cell_seed(c.seed, "importance"));
  const ExtractorBank<float> bank = load_bank(c, ckpt);
  const MaskSet masks = c.masks();
  std::size_t high = masks.size(), low = masks.size();
  for (std::size_t i = 0; i < masks.size(); ++i) {
    if (masks[i].name == "high") high = i;
    if (masks[i].name == "low") low = i;
  }

  ClipStore store = make_store(c, index);
  const std::vector<std::size_t> clips = clips_of(novel);
  store.preload(clips);
  const eval::EmbeddingTable<float> table =
      eval::build_embedding_table(bank, masks, clips, store.loader(), c.threads);
  const eval::ImportanceCounts counts =
      eval::frequency_importance(table, stream, index, classes, high, low, c.model.distance);

  make_dirs(c.out);
  const fs::path csv = c.out / "importance.csv";
  eval::write_importance_csv(csv, counts);
  out << format("importance (%zu-way %zu-shot, repetitions %zu):\n", espec.n_way, espec.k_shot, espec.repetitions);
  for (const eval::ImportanceRow& r : counts.rows) {
    const std::string ratio = r.ratio ? format("%.3f", *r.ratio) : std::string(eval::kUndefinedRatio);
    out << format("  %-20s Q_high %5zu  Q_low %5zu  ratio %s\n", r.name.c_str(), r.q_high, r.q_low, ratio.c_str());
  }
  out << "written " << csv.string() << '\n';
  return kOk;
}

// ---------------------------------------------------------------------------

int cmd_gradcheck(const GradcheckOptions& options, std::ostream& out) {
  const GradcheckReport report = run_gradcheck(options);
  out << report.format();
  if (!report.passed()) {
    out << "failing components: " << report.failures() << '\n';
    return kOperationalError;
  }
  return kOk;
}

}  // namespace hallu::cli
