#include "hallu/eval.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>
#include <thread>

#include "json.hpp"

namespace hallu::eval {

using nn::Tensor;

// ---- accuracy ----

void AccuracyAccumulator::add(double outcome) {
  ++n_;
  sum_ += outcome;
  sum_sq_ += outcome * outcome;
}

void AccuracyAccumulator::merge(const AccuracyAccumulator& other) {
  n_ += other.n_;
  sum_ += other.sum_;
  sum_sq_ += other.sum_sq_;
}

AccuracySummary AccuracyAccumulator::summary() const {
  if (n_ < 2) throw std::invalid_argument("accuracy summary needs at least 2 observations");
  const double n = static_cast<double>(n_);
  const double mean = sum_ / n;
  const double var = std::max(0.0, (sum_sq_ - n * mean * mean) / (n - 1.0));
  return {mean * 100.0, 1.96 * std::sqrt(var) / std::sqrt(n) * 100.0, n_};
}

AccuracySummary accuracy_summary(std::span<const EvalRecord> records, CiUnit unit) {
  if (records.size() < 2) throw std::invalid_argument("accuracy_summary: need at least 2 records");
  AccuracyAccumulator acc;
  if (unit == CiUnit::kEpisode) {
    for (const EvalRecord& r : records) acc.add(r.correct() ? 1.0 : 0.0);
    return acc.summary();
  }
  std::map<std::string, std::pair<double, std::size_t>> per_query;
  for (const EvalRecord& r : records) {
    auto& [hits, count] = per_query[r.query_id];
    hits += r.correct() ? 1.0 : 0.0;
    ++count;
  }
  for (const auto& [id, hc] : per_query) acc.add(hc.first / static_cast<double>(hc.second));
  AccuracySummary s = acc.summary();
  s.episodes = records.size();
  return s;
}

// ---- gain table ----

GainTable gain_table(std::span<const MethodResults> runs, const std::string& baseline) {
  const auto base = std::find_if(runs.begin(), runs.end(), [&](const MethodResults& m) { return m.name == baseline; });
  if (base == runs.end()) throw std::invalid_argument("gain_table: no baseline run named '" + baseline + "'");
  GainTable t;
  t.baseline = baseline;
  for (const auto& [cell, s] : base->cells) t.cells.push_back(cell);
  for (const MethodResults& m : runs) {
    if (m.cells.size() != base->cells.size() ||
        !std::equal(m.cells.begin(), m.cells.end(), base->cells.begin(),
                    [](const auto& a, const auto& b) { return a.first == b.first; })) {
      throw std::invalid_argument("gain_table: run '" + m.name + "' covers a different grid than the baseline");
    }
    t.methods.push_back(m);
    std::vector<double> g;
    for (const std::string& cell : t.cells) g.push_back(m.cells.at(cell).mean - base->cells.at(cell).mean);
    t.gains[m.name] = std::move(g);
  }
  return t;
}

std::string GainTable::format() const {
  std::ostringstream out;
  char buf[64];
  out << "method";
  for (const std::string& c : cells) out << " | " << c;
  out << '\n';
  for (const MethodResults& m : methods) {
    out << m.name;
    for (const std::string& c : cells) {
      const AccuracySummary& s = m.cells.at(c);
      std::snprintf(buf, sizeof(buf), " | %.2f +- %.2f", s.mean, s.ci95);
      out << buf;
    }
    out << '\n';
  }
  for (const MethodResults& m : methods) {
    if (m.name == baseline) continue;
    out << "gain(" << m.name << ")";
    for (const double g : gains.at(m.name)) {
      std::snprintf(buf, sizeof(buf), " | %.2f", g);
      out << buf;
    }
    out << '\n';
  }
  return out.str();
}

// ---- embedding tables and episode evaluation ----

template <typename T>
std::size_t EmbeddingTable<T>::row(std::size_t clip) const {
  const auto it = row_of.find(clip);
  if (it == row_of.end()) throw std::out_of_range("embedding table: clip " + std::to_string(clip) + " not embedded");
  return it->second;
}

namespace {

template <typename F>
void parallel_ranges(std::size_t n, std::size_t threads, F&& body) {
  threads = std::max<std::size_t>(1, std::min(threads, n));
  if (threads == 1) {
    body(std::size_t{0}, n);
    return;
  }
  std::vector<std::thread> pool;
  std::vector<std::exception_ptr> errors(threads);
  for (std::size_t t = 0; t < threads; ++t) {
    const std::size_t lo = n * t / threads, hi = n * (t + 1) / threads;
    pool.emplace_back([&, t, lo, hi] {
      try {
        body(lo, hi);
      } catch (...) {
        errors[t] = std::current_exception();
      }
    });
  }
  for (std::thread& th : pool) th.join();
  for (const auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
}

}  // namespace

EmbeddingTable<float> build_embedding_table(const ExtractorBank<float>& bank, const MaskSet& masks,
                                            std::span<const std::size_t> clips, const ClipLoader& load,
                                            std::size_t threads, std::size_t batch) {
  const BackboneSpec& spec = bank.spec();
  const std::size_t plane = spec.height * spec.width;
  const std::size_t dim = spec.embedding_dim();
  EmbeddingTable<float> table;
  for (std::size_t v = 0; v < bank.views(); ++v) table.views.emplace_back(nn::Shape{clips.size(), dim});
  for (std::size_t i = 0; i < clips.size(); ++i) {
    if (!table.row_of.emplace(clips[i], i).second) throw std::invalid_argument("embedding table: duplicate clip");
  }
  batch = std::max<std::size_t>(1, batch);
  const std::size_t n_batches = (clips.size() + batch - 1) / batch;
  parallel_ranges(n_batches, threads, [&](std::size_t lo, std::size_t hi) {
    for (std::size_t b = lo; b < hi; ++b) {
      const std::size_t first = b * batch, count = std::min(batch, clips.size() - first);
      Tensor<float> x({count, 1, spec.height, spec.width});
      for (std::size_t i = 0; i < count; ++i) {
        const std::vector<float> values = load(clips[first + i]);
        if (values.size() != plane) {
          throw std::invalid_argument("embedding table: clip " + std::to_string(clips[first + i]) + " has " +
                                      std::to_string(values.size()) + " values, expected " + std::to_string(plane));
        }
        std::copy(values.begin(), values.end(), x.data() + i * plane);
      }
      const ViewEmbeddings<float> emb = embed_views(bank, masks, x);
      for (std::size_t v = 0; v < emb.size(); ++v) {
        std::copy(emb[v].values().begin(), emb[v].values().end(), table.views[v].data() + first * dim);
      }
    }
  });
  return table;
}

template <typename T>
PrototypeSet<T> episode_prototypes(const EmbeddingTable<T>& table, const data::Episode& episode) {
  ViewEmbeddings<T> support;
  std::vector<std::size_t> labels;
  for (const data::EpisodeItem& s : episode.support) labels.push_back(s.label);
  for (const Tensor<T>& view : table.views) {
    const std::size_t dim = view.dim(1);
    Tensor<T> rows({episode.support.size(), dim});
    for (std::size_t i = 0; i < episode.support.size(); ++i) {
      const auto src = view.row(table.row(episode.support[i].clip));
      std::copy(src.begin(), src.end(), rows.data() + i * dim);
    }
    support.push_back(std::move(rows));
  }
  return compute_prototypes(support, labels, episode.classes.size());
}

namespace {

template <typename T>
ViewEmbeddings<T> query_views(const EmbeddingTable<T>& table, std::size_t clip) {
  ViewEmbeddings<T> q;
  const std::size_t r = table.row(clip);
  for (const Tensor<T>& view : table.views) {
    const auto src = view.row(r);
    q.emplace_back(nn::Shape{1, src.size()}, std::vector<T>(src.begin(), src.end()));
  }
  return q;
}

}  // namespace

template <typename T>
EvalRecord evaluate_episode(const EmbeddingTable<T>& table, const data::Episode& episode,
                            const data::DatasetIndex& index, Distance kind, bool with_concepts) {
  if (episode.queries.size() != 1) throw std::invalid_argument("evaluate_episode: expected exactly one query");
  const PrototypeSet<T> protos = episode_prototypes(table, episode);
  const data::EpisodeItem& q = episode.queries.front();
  const ViewEmbeddings<T> qv = query_views(table, q.clip);

  EvalRecord r;
  r.episode_id = episode.id;
  r.query_id = index.entries.at(q.clip).clip_id;
  r.true_class = episode.classes.at(q.label);
  r.classes = episode.classes;
  r.logits = score(qv, 0, protos, kind);
  r.predicted_class = episode.classes[argmax(r.logits)];
  if (with_concepts) {
    for (std::size_t n = 0; n + 1 < protos.n_views(); ++n) {
      r.concept_predictions.push_back(episode.classes[argmax(concept_only_score(qv, 0, protos, n, kind))]);
    }
  }
  return r;
}

std::vector<EvalRecord> evaluate_stream(const EmbeddingTable<float>& table, const data::TestEpisodeStream& stream,
                                        const data::DatasetIndex& index, Distance kind, std::size_t threads,
                                        bool with_concepts) {
  std::vector<EvalRecord> records(stream.size());
  parallel_ranges(stream.size(), threads, [&](std::size_t lo, std::size_t hi) {
    for (std::size_t i = lo; i < hi; ++i) records[i] = evaluate_episode(table, stream.at(i), index, kind, with_concepts);
  });
  return records;
}

// ---- frequency importance ----

ImportanceCounts frequency_importance(const EmbeddingTable<float>& table, const data::TestEpisodeStream& stream,
                                      const data::DatasetIndex& index, std::span<const std::size_t> classes,
                                      std::size_t high_mask, std::size_t low_mask, Distance kind) {
  std::map<std::size_t, ImportanceRow> rows;
  for (const std::size_t k : classes) rows[k] = ImportanceRow{k, index.class_names.at(k), 0, 0, 0, std::nullopt};
  const bool all = classes.empty();
  for (std::size_t i = 0; i < stream.size(); ++i) {
    const data::Episode ep = stream.at(i);
    const data::EpisodeItem& q = ep.queries.front();
    const std::size_t cls = ep.classes[q.label];
    auto it = rows.find(cls);
    if (it == rows.end()) {
      if (!all) continue;
      it = rows.emplace(cls, ImportanceRow{cls, index.class_names.at(cls), 0, 0, 0, std::nullopt}).first;
    }
    const PrototypeSet<float> protos = episode_prototypes(table, ep);
    const ViewEmbeddings<float> qv = query_views(table, q.clip);
    ImportanceRow& row = it->second;
    ++row.episodes;
    if (argmax(concept_only_score(qv, 0, protos, high_mask, kind)) == q.label) ++row.q_high;
    if (argmax(concept_only_score(qv, 0, protos, low_mask, kind)) == q.label) ++row.q_low;
  }
  ImportanceCounts out;
  for (auto& [k, row] : rows) {
    if (row.q_low > 0) row.ratio = static_cast<double>(row.q_high) / static_cast<double>(row.q_low);
    out.rows.push_back(row);
  }
  return out;
}

void write_importance_csv(const std::filesystem::path& path, const ImportanceCounts& counts) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << "class_id,class,episodes,q_high,q_low,ratio\n";
  char buf[64];
  for (const ImportanceRow& r : counts.rows) {
    out << r.class_id << ',' << r.name << ',' << r.episodes << ',' << r.q_high << ',' << r.q_low << ',';
    if (r.ratio) {
      std::snprintf(buf, sizeof(buf), "%.6f", *r.ratio);
      out << buf;
    } else {
      out << kUndefinedRatio;
    }
    out << '\n';
  }
  if (!out) throw std::runtime_error("failed writing " + path.string());
}

// ---- export ----

namespace {

std::string fmt17(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

template <typename V, typename F>
std::string join(const std::vector<V>& values, F&& fmt) {
  std::string s;
  for (std::size_t i = 0; i < values.size(); ++i) {
    if (i) s += ';';
    s += fmt(values[i]);
  }
  return s;
}

std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> out;
  if (s.empty()) return out;
  std::string cur;
  std::istringstream in(s);
  while (std::getline(in, cur, sep)) out.push_back(cur);
  return out;
}

}  // namespace

void write_records_csv(const std::filesystem::path& path, std::span<const EvalRecord> records) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << "episode_id,query_id,true_class,predicted_class,classes,logits,concept_predictions\n";
  auto id = [](std::size_t v) { return std::to_string(v); };
  for (const EvalRecord& r : records) {
    out << r.episode_id << ',' << r.query_id << ',' << r.true_class << ',' << r.predicted_class << ','
        << join(r.classes, id) << ',' << join(r.logits, fmt17) << ',' << join(r.concept_predictions, id) << '\n';
  }
  if (!out) throw std::runtime_error("failed writing " + path.string());
}

std::vector<EvalRecord> read_records_csv(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  std::string line;
  std::getline(in, line);
  std::vector<EvalRecord> records;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    std::vector<std::string> f = split(line, ',');
    if (!line.empty() && line.back() == ',') f.emplace_back();
    if (f.size() != 7) throw std::runtime_error(path.string() + " line " + std::to_string(line_no) + ": expected 7 fields");
    EvalRecord r;
    r.episode_id = std::stoull(f[0]);
    r.query_id = f[1];
    r.true_class = std::stoull(f[2]);
    r.predicted_class = std::stoull(f[3]);
    for (const std::string& s : split(f[4], ';')) r.classes.push_back(std::stoull(s));
    for (const std::string& s : split(f[5], ';')) r.logits.push_back(std::stod(s));
    for (const std::string& s : split(f[6], ';')) r.concept_predictions.push_back(std::stoull(s));
    records.push_back(std::move(r));
  }
  return records;
}

void export_results(std::span<const EvalRecord> records, const AccuracySummary& summary, const RunInfo& info,
                    const std::filesystem::path& dir, const std::string& stem) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw std::runtime_error("cannot create " + dir.string() + ": " + ec.message());
  write_records_csv(dir / (stem + ".csv"), records);

  char fp[32];
  std::snprintf(fp, sizeof(fp), "%016llx", static_cast<unsigned long long>(info.spectrogram_fingerprint));
  char bh[32];
  std::snprintf(bh, sizeof(bh), "%016llx", static_cast<unsigned long long>(info.backbone_hash));
  nlohmann::ordered_json j;
  j["schema"] = kResultsSchema;
  j["cell"] = info.cell;
  j["settings"] = {{"n_way", info.n_way},
                   {"k_shot", info.k_shot},
                   {"repetitions", info.repetitions},
                   {"mask_mode", info.mask_mode},
                   {"distance", info.distance}};
  j["seed"] = info.seed;
  j["split"] = {{"file", info.split_file}, {"novel_classes", info.novel_classes}};
  j["accuracy"] = summary.mean;
  j["ci95"] = summary.ci95;
  j["episodes"] = summary.episodes;
  j["spectrogram_fingerprint"] = fp;
  j["backbone_hash"] = bh;
  j["runtime_seconds"] = info.runtime_seconds;

  const std::filesystem::path json_path = dir / (stem + ".json");
  std::ofstream out(json_path, std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + json_path.string());
  out << j.dump(2) << '\n';
  if (!out) throw std::runtime_error("failed writing " + json_path.string());
}

template struct EmbeddingTable<float>;
template struct EmbeddingTable<double>;
template PrototypeSet<float> episode_prototypes(const EmbeddingTable<float>&, const data::Episode&);
template PrototypeSet<double> episode_prototypes(const EmbeddingTable<double>&, const data::Episode&);
template EvalRecord evaluate_episode(const EmbeddingTable<float>&, const data::Episode&, const data::DatasetIndex&,
                                     Distance, bool);
template EvalRecord evaluate_episode(const EmbeddingTable<double>&, const data::Episode&, const data::DatasetIndex&,
                                     Distance, bool);

}  // namespace hallu::eval
