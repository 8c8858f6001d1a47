#include "hallu/episodes.hpp"

#include <algorithm>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <stdexcept>

#include "hallu/errors.hpp"

namespace hallu::data {

namespace {

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> fields;
  std::string cur;
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char c = line[i];
    if (quoted) {
      if (c == '"' && i + 1 < line.size() && line[i + 1] == '"') {
        cur += '"';
        ++i;
      } else if (c == '"') {
        quoted = false;
      } else {
        cur += c;
      }
    } else if (c == '"') {
      quoted = true;
    } else if (c == ',') {
      fields.push_back(std::move(cur));
      cur.clear();
    } else if (c != '\r') {
      cur += c;
    }
  }
  fields.push_back(std::move(cur));
  return fields;
}

struct CsvTable {
  std::vector<std::string> header;
  std::vector<std::pair<std::size_t, std::vector<std::string>>> rows;  // (1-based line, fields)

  std::size_t column(const std::string& name, const std::filesystem::path& path) const {
    const auto it = std::find(header.begin(), header.end(), name);
    if (it == header.end()) throw LoadError(path.string() + ": missing column '" + name + "'");
    return static_cast<std::size_t>(it - header.begin());
  }
};

CsvTable read_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw LoadError("cannot open " + path.string());
  CsvTable t;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line_no == 1 && line.size() >= 3 && line.compare(0, 3, "\xEF\xBB\xBF") == 0) line.erase(0, 3);
    if (line.empty() || line == "\r") continue;
    if (t.header.empty()) {
      t.header = split_csv_line(line);
      continue;
    }
    t.rows.emplace_back(line_no, split_csv_line(line));
  }
  if (t.rows.empty()) throw LoadError(path.string() + ": no entries");
  return t;
}

std::size_t parse_index(const std::string& s, const std::string& what, std::size_t line,
                        const std::filesystem::path& path) {
  try {
    std::size_t used = 0;
    const long long v = std::stoll(s, &used);
    if (used != s.size() || v < 0) throw std::invalid_argument(s);
    return static_cast<std::size_t>(v);
  } catch (const std::exception&) {
    throw LoadError(path.string() + " row " + std::to_string(line) + ": bad " + what + " '" + s + "'");
  }
}

void throw_collected(const std::string& prefix, const std::vector<std::string>& problems) {
  std::ostringstream msg;
  msg << prefix << " (" << problems.size() << " problem" << (problems.size() == 1 ? "" : "s") << ")";
  for (std::size_t i = 0; i < problems.size() && i < 20; ++i) msg << "\n  " << problems[i];
  if (problems.size() > 20) msg << "\n  ...";
  throw LoadError(msg.str());
}

std::vector<std::size_t> sorted(std::vector<std::size_t> v) {
  std::sort(v.begin(), v.end());
  return v;
}

}  // namespace

std::vector<std::vector<std::size_t>> DatasetIndex::clips_by_class() const {
  std::vector<std::vector<std::size_t>> out(n_classes());
  for (std::size_t i = 0; i < entries.size(); ++i) out.at(entries[i].class_id).push_back(i);
  return out;
}

void DatasetIndex::validate() const {
  if (entries.empty()) throw LoadError("dataset index: no entries");
  std::set<std::string> ids;
  std::vector<bool> seen(n_classes(), false);
  for (const ClipEntry& e : entries) {
    if (!ids.insert(e.clip_id).second) throw LoadError("dataset index: duplicate clip id " + e.clip_id);
    if (e.class_id >= n_classes()) throw LoadError("dataset index: class id out of range for " + e.clip_id);
    seen[e.class_id] = true;
  }
  for (std::size_t k = 0; k < seen.size(); ++k) {
    if (!seen[k]) throw LoadError("dataset index: class ids are not dense (no clip for class " + std::to_string(k) + ")");
  }
}

DatasetIndex load_esc50_index(const std::filesystem::path& meta_csv, const std::filesystem::path& audio_root,
                              bool strict) {
  const CsvTable t = read_csv(meta_csv);
  const std::size_t c_file = t.column("filename", meta_csv), c_fold = t.column("fold", meta_csv),
                    c_target = t.column("target", meta_csv), c_cat = t.column("category", meta_csv);
  const std::size_t need = std::max({c_file, c_fold, c_target, c_cat}) + 1;

  DatasetIndex index;
  std::map<std::size_t, std::string> names;
  std::vector<std::string> problems;
  for (const auto& [line, f] : t.rows) {
    if (f.size() < need) {
      problems.push_back("row " + std::to_string(line) + ": expected at least " + std::to_string(need) + " fields");
      continue;
    }
    ClipEntry e;
    e.clip_id = f[c_file];
    e.path = audio_root / f[c_file];
    e.label = f[c_cat];
    try {
      e.class_id = parse_index(f[c_target], "target", line, meta_csv);
      e.fold = static_cast<int>(parse_index(f[c_fold], "fold", line, meta_csv));
    } catch (const LoadError& err) {
      problems.emplace_back(err.what());
      continue;
    }
    auto [it, inserted] = names.emplace(e.class_id, e.label);
    if (!inserted && it->second != e.label) {
      problems.push_back("row " + std::to_string(line) + ": target " + std::to_string(e.class_id) + " is '" +
                         e.label + "' but earlier rows call it '" + it->second + "'");
    }
    if (!std::filesystem::exists(e.path)) {
      problems.push_back("row " + std::to_string(line) + ": missing audio file " + e.path.string());
    }
    index.entries.push_back(std::move(e));
  }
  if (!problems.empty()) throw_collected("failed to load " + meta_csv.string(), problems);

  const std::size_t n_classes = names.empty() ? 0 : names.rbegin()->first + 1;
  index.class_names.assign(n_classes, "");
  for (const auto& [id, name] : names) index.class_names[id] = name;
  index.validate();

  if (strict) {
    constexpr std::size_t kClasses = 50, kPerClass = 40;
    const auto by_class = index.clips_by_class();
    if (index.entries.size() != kClasses * kPerClass) {
      problems.push_back("expected 2000 entries, found " + std::to_string(index.entries.size()));
    }
    if (n_classes != kClasses) problems.push_back("expected 50 classes, found " + std::to_string(n_classes));
    for (std::size_t k = 0; k < by_class.size(); ++k) {
      if (by_class[k].size() != kPerClass) {
        problems.push_back("class " + std::to_string(k) + " (" + index.class_names[k] + ") has " +
                           std::to_string(by_class[k].size()) + " clips, expected 40");
      }
    }
    if (!problems.empty()) throw_collected(meta_csv.string() + " does not match the ESC-50 layout", problems);
  }
  return index;
}

DatasetIndex load_manifest(const std::filesystem::path& manifest_csv, const std::filesystem::path& root) {
  const CsvTable t = read_csv(manifest_csv);
  const std::size_t c_path = t.column("path", manifest_csv), c_label = t.column("label", manifest_csv);
  const std::size_t need = std::max(c_path, c_label) + 1;
  std::set<std::string> labels;
  std::vector<std::string> problems;
  for (const auto& [line, f] : t.rows) {
    if (f.size() < need) {
      problems.push_back("row " + std::to_string(line) + ": expected path,label");
      continue;
    }
    if (f[c_label].empty()) problems.push_back("row " + std::to_string(line) + ": empty label");
    labels.insert(f[c_label]);
  }
  if (!problems.empty()) throw_collected("failed to load " + manifest_csv.string(), problems);

  DatasetIndex index;
  index.class_names.assign(labels.begin(), labels.end());
  for (const auto& [line, f] : t.rows) {
    ClipEntry e;
    e.clip_id = f[c_path];
    const std::filesystem::path p(f[c_path]);
    e.path = p.is_absolute() ? p : root / p;
    e.label = f[c_label];
    e.class_id = static_cast<std::size_t>(
        std::lower_bound(index.class_names.begin(), index.class_names.end(), e.label) - index.class_names.begin());
    if (!std::filesystem::exists(e.path)) {
      problems.push_back("row " + std::to_string(line) + ": missing audio file " + e.path.string());
    }
    index.entries.push_back(std::move(e));
  }
  if (!problems.empty()) throw_collected("failed to load " + manifest_csv.string(), problems);
  index.validate();
  return index;
}

// ---- splits ----

void SplitSpec::validate(std::size_t n_classes) const {
  std::vector<int> owner(n_classes, 0);
  auto mark = [&](const std::vector<std::size_t>& ids, const char* what) {
    for (const std::size_t k : ids) {
      if (k >= n_classes) throw ConfigError(std::string("split: ") + what + " class " + std::to_string(k) + " out of range");
      if (owner[k]++) throw ConfigError("split: class " + std::to_string(k) + " assigned twice");
    }
  };
  mark(base_classes, "base");
  mark(validation_classes, "validation");
  mark(novel_classes, "novel");
  if (base_classes.empty() || novel_classes.empty()) throw ConfigError("split: base and novel sets must be non-empty");
}

SplitSpec make_split(const DatasetIndex& index, std::size_t n_novel, std::uint64_t seed, std::size_t n_validation) {
  const std::size_t n = index.n_classes();
  if (n_novel == 0 || n_novel >= n) {
    throw std::invalid_argument("make_split: n_novel " + std::to_string(n_novel) + " outside (0, " +
                                std::to_string(n) + ")");
  }
  if (n_validation + n_novel >= n) throw std::invalid_argument("make_split: no base classes left after validation");
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  Rng rng(derive_seed(seed, 0x5b117));
  rng.shuffle(std::span<std::size_t>(order));
  SplitSpec s;
  s.seed = seed;
  const std::size_t n_base = n - n_novel - n_validation;
  s.base_classes = sorted({order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n_base)});
  s.validation_classes = sorted({order.begin() + static_cast<std::ptrdiff_t>(n_base),
                                 order.begin() + static_cast<std::ptrdiff_t>(n - n_novel)});
  s.novel_classes = sorted({order.begin() + static_cast<std::ptrdiff_t>(n - n_novel), order.end()});
  return s;
}

SplitSpec make_fold_split(const DatasetIndex& index, std::size_t n_folds, std::size_t fold, std::uint64_t seed,
                          std::size_t n_validation) {
  const std::size_t n = index.n_classes();
  if (n_folds < 2 || fold >= n_folds || n_folds > n) throw std::invalid_argument("make_fold_split: bad fold arguments");
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  Rng rng(derive_seed(seed, 0xf01d));
  rng.shuffle(std::span<std::size_t>(order));
  SplitSpec s;
  s.seed = seed;
  std::vector<std::size_t> rest;
  for (std::size_t i = 0; i < n; ++i) (i % n_folds == fold ? s.novel_classes : rest).push_back(order[i]);
  if (n_validation >= rest.size()) throw std::invalid_argument("make_fold_split: no base classes left");
  s.validation_classes = sorted({rest.end() - static_cast<std::ptrdiff_t>(n_validation), rest.end()});
  rest.resize(rest.size() - n_validation);
  s.base_classes = sorted(std::move(rest));
  s.novel_classes = sorted(std::move(s.novel_classes));
  return s;
}

void write_split(const std::filesystem::path& path, const SplitSpec& split) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write split file " + path.string());
  auto line = [&](const char* key, const std::vector<std::size_t>& ids) {
    out << key;
    for (const std::size_t k : ids) out << ' ' << k;
    out << '\n';
  };
  out << "halluaudio-split 1\n";
  out << "seed " << split.seed << '\n';
  line("base", split.base_classes);
  line("validation", split.validation_classes);
  line("novel", split.novel_classes);
  if (!out) throw std::runtime_error("failed writing split file " + path.string());
}

SplitSpec read_split(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open split file " + path.string());
  std::string line;
  if (!std::getline(in, line) || line != "halluaudio-split 1") {
    throw ConfigError(path.string() + ": not a version-1 split file");
  }
  SplitSpec s;
  bool have_seed = false;
  while (std::getline(in, line)) {
    std::istringstream ss(line);
    std::string key;
    if (!(ss >> key)) continue;
    if (key == "seed") {
      if (!(ss >> s.seed)) throw ConfigError(path.string() + ": bad seed line");
      have_seed = true;
      continue;
    }
    std::vector<std::size_t>* dst = key == "base"         ? &s.base_classes
                                    : key == "validation" ? &s.validation_classes
                                    : key == "novel"      ? &s.novel_classes
                                                          : nullptr;
    if (dst == nullptr) throw ConfigError(path.string() + ": unknown key '" + key + "'");
    std::size_t k = 0;
    while (ss >> k) dst->push_back(k);
    if (!ss.eof()) throw ConfigError(path.string() + ": bad class id on '" + key + "' line");
  }
  if (!have_seed) throw ConfigError(path.string() + ": missing seed");
  return s;
}

// ---- episodes ----

void EpisodeSpec::validate() const {
  if (n_way < 2) throw ConfigError("episode spec: n_way must be >= 2");
  if (k_shot < 1) throw ConfigError("episode spec: k_shot must be >= 1");
}

ClassPool::ClassPool(const DatasetIndex& index, std::span<const std::size_t> classes)
    : classes_(classes.begin(), classes.end()) {
  const auto by_class = index.clips_by_class();
  for (const std::size_t k : classes_) {
    if (k >= by_class.size()) throw std::invalid_argument("class pool: class id " + std::to_string(k) + " out of range");
    clips_.push_back(by_class[k]);
  }
}

std::size_t ClassPool::n_clips() const {
  std::size_t n = 0;
  for (const auto& c : clips_) n += c.size();
  return n;
}

std::size_t ClassPool::min_clips() const {
  std::size_t n = SIZE_MAX;
  for (const auto& c : clips_) n = std::min(n, c.size());
  return clips_.empty() ? 0 : n;
}

std::size_t ClassPool::position_of(std::size_t class_id) const {
  const auto it = std::find(classes_.begin(), classes_.end(), class_id);
  if (it == classes_.end()) throw std::out_of_range("class pool: class " + std::to_string(class_id) + " not in pool");
  return static_cast<std::size_t>(it - classes_.begin());
}

namespace {

/// k distinct draws from `items` (partial Fisher-Yates on a copy).
std::vector<std::size_t> draw_without_replacement(std::vector<std::size_t> items, std::size_t k, Rng& rng) {
  for (std::size_t i = 0; i < k; ++i) std::swap(items[i], items[i + rng.uniform_index(items.size() - i)]);
  items.resize(k);
  return items;
}

}  // namespace

Episode sample_train_episode(const ClassPool& base, const EpisodeSpec& spec, Rng& rng) {
  spec.validate();
  if (spec.n_way > base.n_classes()) {
    throw std::invalid_argument("sample_train_episode: n_way " + std::to_string(spec.n_way) + " exceeds " +
                                std::to_string(base.n_classes()) + " base classes");
  }
  const std::size_t per_class = spec.k_shot + spec.n_query;
  if (base.min_clips() < per_class) {
    throw std::invalid_argument("sample_train_episode: a base class has fewer than k_shot + n_query = " +
                                std::to_string(per_class) + " clips");
  }
  std::vector<std::size_t> positions(base.n_classes());
  for (std::size_t i = 0; i < positions.size(); ++i) positions[i] = i;
  const std::vector<std::size_t> chosen = draw_without_replacement(std::move(positions), spec.n_way, rng);

  Episode ep;
  for (std::size_t label = 0; label < chosen.size(); ++label) {
    ep.classes.push_back(base.class_id(chosen[label]));
    const auto clips = draw_without_replacement(base.clips(chosen[label]), per_class, rng);
    for (std::size_t j = 0; j < per_class; ++j) {
      (j < spec.k_shot ? ep.support : ep.queries).push_back({clips[j], label});
    }
  }
  return ep;
}

TestEpisodeStream::TestEpisodeStream(const ClassPool& pool, const EpisodeSpec& spec, std::uint64_t seed)
    : pool_(&pool), spec_(spec), seed_(seed) {
  spec_.validate();
  if (spec_.repetitions < 1) throw ConfigError("test episodes: repetitions must be >= 1");
  if (spec_.n_way > pool.n_classes()) {
    throw ConfigError(std::to_string(spec_.n_way) + "-way episodes need at least " + std::to_string(spec_.n_way) +
                      " novel classes, only " + std::to_string(pool.n_classes()) + " available");
  }
  if (pool.min_clips() < spec_.k_shot + 1) {
    throw ConfigError("test episodes: every novel class needs at least k_shot + 1 = " +
                      std::to_string(spec_.k_shot + 1) + " clips");
  }
  for (std::size_t c = 0; c < pool.n_classes(); ++c) {
    for (const std::size_t clip : pool.clips(c)) queries_.emplace_back(c, clip);
  }
}

Episode TestEpisodeStream::at(std::size_t episode_index) const {
  if (episode_index >= size()) throw std::out_of_range("test episode index out of range");
  const auto [query_class, query_clip] = queries_[episode_index / spec_.repetitions];
  Rng rng(derive_seed(seed_, episode_index));

  std::vector<std::size_t> others;
  for (std::size_t c = 0; c < pool_->n_classes(); ++c) {
    if (c != query_class) others.push_back(c);
  }
  std::vector<std::size_t> chosen = draw_without_replacement(std::move(others), spec_.n_way - 1, rng);
  chosen.push_back(query_class);
  rng.shuffle(std::span<std::size_t>(chosen));

  Episode ep;
  ep.id = episode_index;
  for (std::size_t label = 0; label < chosen.size(); ++label) {
    const std::size_t c = chosen[label];
    ep.classes.push_back(pool_->class_id(c));
    std::vector<std::size_t> candidates;
    for (const std::size_t clip : pool_->clips(c)) {
      if (clip != query_clip) candidates.push_back(clip);
    }
    for (const std::size_t clip : draw_without_replacement(std::move(candidates), spec_.k_shot, rng)) {
      ep.support.push_back({clip, label});
    }
    if (c == query_class) ep.queries.push_back({query_clip, label});
  }
  return ep;
}

}  // namespace hallu::data
