#include "hallu/cli/config.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <cstdlib>
#include <fstream>
#include <functional>
#include <set>
#include <sstream>

#include "hallu/errors.hpp"
#include "hallu/hash.hpp"

namespace hallu::cli {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::string item;
  std::istringstream in(s);
  while (std::getline(in, item, ',')) {
    item = trim(item);
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

std::uint64_t parse_u64(const std::string& where, const std::string& v) {
  std::uint64_t out = 0;
  const auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc{} || p != v.data() + v.size()) {
    throw ConfigError(where + ": expected a non-negative integer, got '" + v + "'");
  }
  return out;
}

std::size_t parse_size(const std::string& where, const std::string& v) {
  return static_cast<std::size_t>(parse_u64(where, v));
}

double parse_double(const std::string& where, const std::string& v) {
  char* end = nullptr;
  const double d = std::strtod(v.c_str(), &end);
  if (v.empty() || end != v.c_str() + v.size()) throw ConfigError(where + ": expected a number, got '" + v + "'");
  return d;
}

bool parse_bool(const std::string& where, const std::string& v) {
  if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
  if (v == "false" || v == "0" || v == "no" || v == "off") return false;
  throw ConfigError(where + ": expected true|false, got '" + v + "'");
}

}  // namespace

std::optional<std::string> IniFile::get(const std::string& section, const std::string& key) const {
  const auto s = sections.find(section);
  if (s == sections.end()) return std::nullopt;
  const auto k = s->second.find(key);
  if (k == s->second.end()) return std::nullopt;
  return k->second;
}

IniFile parse_ini(const std::string& text, const std::string& source) {
  IniFile ini;
  std::string section;
  std::istringstream in(text);
  std::string raw;
  std::size_t line_no = 0;
  while (std::getline(in, raw)) {
    ++line_no;
    const auto comment = raw.find_first_of("#;");
    const std::string line = trim(comment == std::string::npos ? raw : raw.substr(0, comment));
    if (line.empty()) continue;
    const std::string where = source + ":" + std::to_string(line_no);
    if (line.front() == '[') {
      if (line.back() != ']') throw ConfigError(where + ": unterminated section header");
      section = trim(line.substr(1, line.size() - 2));
      ini.sections[section];
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ConfigError(where + ": expected 'key = value'");
    const std::string key = trim(line.substr(0, eq));
    if (key.empty()) throw ConfigError(where + ": empty key");
    auto& kv = ini.sections[section];
    if (kv.count(key)) throw ConfigError(where + ": duplicate key '" + key + "'");
    kv[key] = trim(line.substr(eq + 1));
  }
  return ini;
}

std::string GridCell::name() const { return std::to_string(n_way) + "way-" + std::to_string(k_shot) + "shot"; }

std::vector<GridCell> parse_grid(const std::string& text) {
  std::vector<GridCell> grid;
  for (const std::string& item : split_list(text)) {
    const auto x = item.find_first_of("xX");
    if (x == std::string::npos) throw ConfigError("grid: expected cells like 5x1, got '" + item + "'");
    GridCell c{parse_size("grid", trim(item.substr(0, x))), parse_size("grid", trim(item.substr(x + 1)))};
    if (std::find(grid.begin(), grid.end(), c) != grid.end()) throw ConfigError("grid: duplicate cell " + item);
    grid.push_back(c);
  }
  if (grid.empty()) throw ConfigError("grid: no cells");
  return grid;
}

RunConfig config_from_ini(const IniFile& ini) {
  RunConfig c;
  using Setter = std::function<void(const std::string& where, const std::string& value)>;
  std::map<std::string, std::map<std::string, Setter>> keys;
  auto& run = keys["run"];
  run["seed"] = [&](auto& w, auto& v) { c.seed = parse_u64(w, v); };
  run["threads"] = [&](auto& w, auto& v) { c.threads = parse_size(w, v); };
  run["out"] = [&](auto&, auto& v) { c.out = v; };
  run["checkpoint"] = [&](auto&, auto& v) { c.checkpoint = v; };

  auto& data = keys["data"];
  data["format"] = [&](auto&, auto& v) { c.data.format = v; };
  data["root"] = [&](auto&, auto& v) { c.data.root = v; };
  data["meta"] = [&](auto&, auto& v) { c.data.meta = v; };
  data["cache_dir"] = [&](auto&, auto& v) { c.data.cache_dir = v; };
  data["strict"] = [&](auto& w, auto& v) { c.data.strict = parse_bool(w, v); };

  auto& sp = keys["spectrogram"];
  sp["preset"] = [](auto&, auto&) {};  // applied first, below
  sp["sample_rate"] = [&](auto& w, auto& v) { c.spectrogram.sample_rate = parse_double(w, v); };
  sp["n_fft"] = [&](auto& w, auto& v) { c.spectrogram.n_fft = parse_size(w, v); };
  sp["hop"] = [&](auto& w, auto& v) { c.spectrogram.hop = parse_size(w, v); };
  sp["n_mels"] = [&](auto& w, auto& v) { c.spectrogram.n_mels = parse_size(w, v); };
  sp["f_min"] = [&](auto& w, auto& v) { c.spectrogram.f_min = parse_double(w, v); };
  sp["f_max"] = [&](auto& w, auto& v) { c.spectrogram.f_max = parse_double(w, v); };
  sp["top_db"] = [&](auto& w, auto& v) { c.spectrogram.top_db = parse_double(w, v); };
  sp["amin"] = [&](auto& w, auto& v) { c.spectrogram.amin = parse_double(w, v); };
  sp["clip_samples"] = [&](auto& w, auto& v) { c.spectrogram.clip_samples = parse_size(w, v); };
  sp["target_frames"] = [&](auto& w, auto& v) { c.spectrogram.target_frames = parse_size(w, v); };

  auto& model = keys["model"];
  model["channels"] = [&](auto& w, auto& v) {
    c.model.channels.clear();
    for (const std::string& s : split_list(v)) c.model.channels.push_back(parse_size(w, s));
    if (c.model.channels.size() != 3) throw ConfigError(w + ": expected three block widths, got '" + v + "'");
  };
  model["mask_mode"] = [&](auto&, auto& v) { c.model.mask_mode = parse_mask_mode(v); };
  model["distance"] = [&](auto&, auto& v) { c.model.distance = parse_distance(v); };
  model["freq_split"] = [&](auto& w, auto& v) { c.model.freq_split = parse_size(w, v); };

  auto& split = keys["split"];
  split["n_novel"] = [&](auto& w, auto& v) { c.split.n_novel = parse_size(w, v); };
  split["n_validation"] = [&](auto& w, auto& v) { c.split.n_validation = parse_size(w, v); };
  split["n_folds"] = [&](auto& w, auto& v) { c.split.n_folds = parse_size(w, v); };
  split["fold"] = [&](auto& w, auto& v) { c.split.fold = parse_size(w, v); };
  split["file"] = [&](auto&, auto& v) { c.split.file = v; };

  auto& train = keys["train"];
  train["epochs"] = [&](auto& w, auto& v) { c.train.epochs = parse_size(w, v); };
  train["lr"] = [&](auto& w, auto& v) { c.train.lr = parse_double(w, v); };
  train["weight_decay"] = [&](auto& w, auto& v) { c.train.weight_decay = parse_double(w, v); };
  train["momentum"] = [&](auto& w, auto& v) { c.train.momentum = parse_double(w, v); };
  train["lr_step"] = [&](auto& w, auto& v) { c.train.lr_step = parse_size(w, v); };
  train["n_way"] = [&](auto& w, auto& v) { c.train.n_way = parse_size(w, v); };
  train["k_shot"] = [&](auto& w, auto& v) { c.train.k_shot = parse_size(w, v); };
  train["n_query"] = [&](auto& w, auto& v) { c.train.n_query = parse_size(w, v); };
  train["episodes_per_epoch"] = [&](auto& w, auto& v) { c.train.episodes_per_epoch = parse_size(w, v); };
  train["val_repetitions"] = [&](auto& w, auto& v) { c.train.val_repetitions = parse_size(w, v); };

  auto& ev = keys["eval"];
  ev["grid"] = [&](auto&, auto& v) { c.eval.grid = parse_grid(v); };
  ev["repetitions"] = [&](auto& w, auto& v) { c.eval.repetitions = parse_size(w, v); };
  ev["ci_unit"] = [&](auto& w, auto& v) {
    if (v == "episode") {
      c.eval.ci_unit = eval::CiUnit::kEpisode;
    } else if (v == "query") {
      c.eval.ci_unit = eval::CiUnit::kQueryClip;
    } else {
      throw ConfigError(w + ": ci_unit must be episode|query, got '" + v + "'");
    }
  };
  ev["concept_predictions"] = [&](auto& w, auto& v) { c.eval.concept_predictions = parse_bool(w, v); };

  auto& imp = keys["importance"];
  imp["classes"] = [&](auto&, auto& v) { c.importance.classes = split_list(v); };
  imp["n_way"] = [&](auto& w, auto& v) { c.importance.n_way = parse_size(w, v); };
  imp["k_shot"] = [&](auto& w, auto& v) { c.importance.k_shot = parse_size(w, v); };

  if (const auto preset = ini.get("spectrogram", "preset")) {
    if (*preset == "esc50") {
      c.spectrogram = audio::SpectrogramConfig::esc50();
    } else if (*preset == "kaggle18") {
      c.spectrogram = audio::SpectrogramConfig::kaggle18();
    } else {
      throw ConfigError("[spectrogram] preset: expected esc50|kaggle18, got '" + *preset + "'");
    }
  }
  for (const auto& [section, kv] : ini.sections) {
    const auto s = keys.find(section);
    if (s == keys.end()) throw ConfigError("unknown config section [" + section + "]");
    for (const auto& [key, value] : kv) {
      const auto k = s->second.find(key);
      if (k == s->second.end()) throw ConfigError("unknown config key [" + section + "] " + key);
      k->second("[" + section + "] " + key, value);
    }
  }
  return c;
}

RunConfig load_config(const std::optional<fs::path>& file, const Overrides& o) {
  RunConfig c;
  if (file) {
    std::ifstream in(*file, std::ios::binary);
    if (!in) throw ConfigError("cannot read config file " + file->string());
    std::ostringstream text;
    text << in.rdbuf();
    c = config_from_ini(parse_ini(text.str(), file->string()));
  }
  if (const char* root = std::getenv(kDataRootEnv); root && *root) c.data.root = root;
  if (o.seed) c.seed = *o.seed;
  if (o.threads) c.threads = *o.threads;
  if (o.out) c.out = *o.out;
  if (o.checkpoint) c.checkpoint = *o.checkpoint;
  if (o.grid) c.eval.grid = parse_grid(*o.grid);
  if (o.repetitions) c.eval.repetitions = *o.repetitions;
  if (o.mask_mode) c.model.mask_mode = parse_mask_mode(*o.mask_mode);
  if (o.split_file) c.split.file = *o.split_file;
  return c;
}

BackboneSpec RunConfig::backbone_spec() const {
  BackboneSpec s;
  std::copy(model.channels.begin(), model.channels.end(), s.channels.begin());
  s.in_channels = 1;
  s.height = spectrogram.frames();
  s.width = spectrogram.n_mels;
  return s;
}

MaskSet RunConfig::masks() const {
  const BackboneSpec s = backbone_spec();
  return make_mask_set(model.mask_mode, s.height, s.width, model.freq_split);
}

std::uint64_t RunConfig::model_hash() const {
  std::string key = backbone_spec().fingerprint() + "|masks=" + to_string(model.mask_mode);
  if (model.mask_mode == MaskMode::kFrequency) key += "|split=" + std::to_string(model.freq_split);
  return fnv1a64(key);
}

fs::path RunConfig::meta_path() const {
  if (data.meta.empty()) return data.format == "esc50" ? data.root / "meta" / "esc50.csv" : data.root / "manifest.csv";
  return data.meta.is_absolute() ? data.meta : data.root / data.meta;
}

fs::path RunConfig::cache_dir() const { return data.cache_dir.empty() ? out / "cache" : data.cache_dir; }
fs::path RunConfig::split_file() const { return split.file.empty() ? out / "split.txt" : split.file; }
fs::path RunConfig::checkpoint_path() const { return checkpoint.empty() ? out / "checkpoint.bin" : checkpoint; }

void validate_values(const RunConfig& c) {
  c.spectrogram.validate();
  if (c.data.format != "esc50" && c.data.format != "manifest") {
    throw ConfigError("[data] format must be esc50|manifest, got '" + c.data.format + "'");
  }
  if (c.threads < 1) throw ConfigError("threads must be >= 1");
  c.backbone_spec().validate();
  if (c.model.mask_mode == MaskMode::kFrequency &&
      (c.model.freq_split == 0 || c.model.freq_split >= c.spectrogram.n_mels)) {
    throw ConfigError("[model] freq_split must lie in (0, n_mels)");
  }
  if (c.split.n_novel < 1) throw ConfigError("[split] n_novel must be >= 1");
  if (c.split.n_folds > 0 && c.split.fold >= c.split.n_folds) throw ConfigError("[split] fold must be < n_folds");
  const TrainConfig& t = c.train;
  if (t.epochs < 1) throw ConfigError("[train] epochs must be >= 1");
  if (!(t.lr > 0.0)) throw ConfigError("[train] lr must be positive");
  if (t.weight_decay < 0.0) throw ConfigError("[train] weight_decay must be >= 0");
  if (t.momentum < 0.0 || t.momentum >= 1.0) throw ConfigError("[train] momentum must lie in [0, 1)");
  if (t.lr_step < 1) throw ConfigError("[train] lr_step must be >= 1");
  if (t.n_way < 2 || t.k_shot < 1 || t.n_query < 1) throw ConfigError("[train] need n_way >= 2, k_shot >= 1, n_query >= 1");
  if (t.episodes_per_epoch < 1) throw ConfigError("[train] episodes_per_epoch must be >= 1");
  if (t.val_repetitions < 1) throw ConfigError("[train] val_repetitions must be >= 1");
  if (c.eval.repetitions < 1) throw ConfigError("[eval] repetitions must be >= 1");
  for (const GridCell& g : c.eval.grid) {
    if (g.n_way < 2 || g.k_shot < 1) throw ConfigError("grid cell " + g.name() + ": need n_way >= 2 and k_shot >= 1");
    if (g.n_way > c.split.n_novel) {
      throw ConfigError("grid cell " + g.name() + " needs " + std::to_string(g.n_way) + " novel classes, split has " +
                        std::to_string(c.split.n_novel));
    }
  }
  if (c.importance.n_way < 2 || c.importance.k_shot < 1) throw ConfigError("[importance] need n_way >= 2, k_shot >= 1");
}

void validate_config(const RunConfig& c, unsigned needs) {
  validate_values(c);
  auto require = [](const fs::path& p, const std::string& what) {
    if (!fs::exists(p)) throw ConfigError(what + " not found: " + p.string());
  };
  if (needs & static_cast<unsigned>(Need::kDataset)) {
    if (c.data.root.empty()) throw ConfigError(std::string("[data] root is not set (config or ") + kDataRootEnv + ")");
    require(c.data.root, "dataset root");
    require(c.meta_path(), c.data.format == "esc50" ? "ESC-50 metadata" : "manifest");
  }
  if (needs & static_cast<unsigned>(Need::kSplit)) require(c.split_file(), "split file");
  if (needs & static_cast<unsigned>(Need::kCheckpoint)) require(c.checkpoint_path(), "checkpoint");
}

}  // namespace hallu::cli
