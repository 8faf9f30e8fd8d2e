#include "sagate/config.hpp"

#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>

namespace sagate {

namespace {

struct RawEntry {
  std::string value;
  int line;
  bool consumed = false;
};

std::string trim(const std::string& s) {
  size_t a = s.find_first_not_of(" \t\r");
  if (a == std::string::npos) return "";
  size_t b = s.find_last_not_of(" \t\r");
  return s.substr(a, b - a + 1);
}

class KvReader {
 public:
  KvReader(const std::string& text, const std::string& origin) : origin_(origin) {
    std::istringstream is(text);
    std::string line;
    int no = 0;
    while (std::getline(is, line)) {
      ++no;
      const size_t hash = line.find('#');
      if (hash != std::string::npos) line = line.substr(0, hash);
      line = trim(line);
      if (line.empty()) continue;
      const size_t eq = line.find('=');
      if (eq == std::string::npos)
        throw ConfigError(origin_ + ":" + std::to_string(no) + ": expected key=value");
      std::string key = trim(line.substr(0, eq));
      std::string value = trim(line.substr(eq + 1));
      if (key.empty())
        throw ConfigError(origin_ + ":" + std::to_string(no) + ": empty key");
      if (entries_.count(key))
        throw ConfigError(origin_ + ":" + std::to_string(no) + ": duplicate key '" + key + "'");
      entries_[key] = RawEntry{value, no, false};
    }
  }

  bool has(const std::string& key) { return entries_.count(key) > 0; }

  template <typename F>
  void take(const std::string& key, F&& apply) {
    auto it = entries_.find(key);
    if (it == entries_.end()) return;
    it->second.consumed = true;
    try {
      apply(it->second.value);
    } catch (const ConfigError&) {
      throw;
    } catch (const std::exception& e) {
      throw ConfigError(origin_ + ":" + std::to_string(it->second.line) + ": bad value for '" +
                        key + "': " + e.what());
    }
  }

  void reject_unknown() const {
    for (const auto& [key, e] : entries_)
      if (!e.consumed)
        throw ConfigError(origin_ + ":" + std::to_string(e.line) + ": unknown key '" + key + "'");
  }

 private:
  std::string origin_;
  std::map<std::string, RawEntry> entries_;
};

int64_t to_i64(const std::string& s) {
  size_t pos = 0;
  int64_t v = std::stoll(s, &pos);
  if (pos != s.size()) throw Error("trailing characters in integer '" + s + "'");
  return v;
}

uint64_t to_u64(const std::string& s) {
  size_t pos = 0;
  uint64_t v = std::stoull(s, &pos);
  if (pos != s.size()) throw Error("trailing characters in integer '" + s + "'");
  return v;
}

double to_f64(const std::string& s) {
  size_t pos = 0;
  double v = std::stod(s, &pos);
  if (pos != s.size()) throw Error("trailing characters in number '" + s + "'");
  return v;
}

bool to_bool(const std::string& s) {
  if (s == "0" || s == "false") return false;
  if (s == "1" || s == "true") return true;
  throw Error("expected 0/1/true/false, got '" + s + "'");
}

std::vector<std::string> split_csv(const std::string& s) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : s) {
    if (c == ',') {
      out.push_back(trim(cur));
      cur.clear();
    } else {
      cur += c;
    }
  }
  out.push_back(trim(cur));
  return out;
}

std::string fmt_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

}  // namespace

ExperimentConfig ExperimentConfig::from_file(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw ConfigError("cannot open config: " + path);
  std::ostringstream os;
  os << f.rdbuf();
  return from_text(os.str(), path);
}

ExperimentConfig ExperimentConfig::from_text(const std::string& text, const std::string& origin) {
  ExperimentConfig c;
  KvReader kv(text, origin);

  kv.take("seed", [&](const std::string& v) { c.seed = to_u64(v); });
  kv.take("out.dir", [&](const std::string& v) { c.out_dir = v; });
  kv.take("threads", [&](const std::string& v) { c.threads = static_cast<int>(to_i64(v)); });

  kv.take("data.height", [&](const std::string& v) { c.data.height = to_i64(v); });
  kv.take("data.width", [&](const std::string& v) { c.data.width = to_i64(v); });
  kv.take("data.classes", [&](const std::string& v) { c.data.num_classes = to_i64(v); });
  kv.take("data.visibility", [&](const std::string& v) {
    c.data.class_visibility.clear();
    for (const auto& t : split_csv(v)) c.data.class_visibility.push_back(visibility_from_string(t));
  });
  kv.take("data.objects_min", [&](const std::string& v) { c.data.objects_min = to_i64(v); });
  kv.take("data.objects_max", [&](const std::string& v) { c.data.objects_max = to_i64(v); });
  kv.take("data.size_min_frac", [&](const std::string& v) { c.data.size_min_frac = to_f64(v); });
  kv.take("data.size_max_frac", [&](const std::string& v) { c.data.size_max_frac = to_f64(v); });
  kv.take("data.texture_amp", [&](const std::string& v) { c.data.texture_amp = to_f64(v); });
  kv.take("data.color_margin", [&](const std::string& v) { c.data.color_margin = to_f64(v); });
  kv.take("data.depth_step", [&](const std::string& v) { c.data.depth_step = to_f64(v); });
  kv.take("data.depth_range", [&](const std::string& v) { c.data.depth_range = to_f64(v); });
  kv.take("data.depth_noise", [&](const std::string& v) { c.data.depth_noise = to_f64(v); });
  kv.take("data.bg_depth", [&](const std::string& v) { c.data.bg_depth = to_f64(v); });
  kv.take("data.hha_corrupt_prob",
          [&](const std::string& v) { c.data.hha_corrupt_prob = to_f64(v); });
  kv.take("data.hha_corrupt_std",
          [&](const std::string& v) { c.data.hha_corrupt_std = to_f64(v); });
  kv.take("data.rgb_corrupt_prob",
          [&](const std::string& v) { c.data.rgb_corrupt_prob = to_f64(v); });
  kv.take("data.rgb_corrupt_amp",
          [&](const std::string& v) { c.data.rgb_corrupt_amp = to_f64(v); });
  kv.take("data.hha_misalign_prob",
          [&](const std::string& v) { c.data.hha_misalign_prob = to_f64(v); });
  kv.take("data.hha_misalign_px",
          [&](const std::string& v) { c.data.hha_misalign_px = to_i64(v); });
  kv.take("data.hha_dropout_prob",
          [&](const std::string& v) { c.data.hha_dropout_prob = to_f64(v); });
  kv.take("data.train_count", [&](const std::string& v) { c.train_count = to_i64(v); });
  kv.take("data.test_count", [&](const std::string& v) { c.test_count = to_i64(v); });
  kv.take("hha.fixed_scale", [&](const std::string& v) { c.hha_fixed_scale = to_bool(v); });

  kv.take("model.modality", [&](const std::string& v) { c.modality = modality_from_string(v); });
  kv.take("model.stage_channels", [&](const std::string& v) {
    c.stage_channels.clear();
    for (const auto& t : split_csv(v)) c.stage_channels.push_back(to_i64(t));
  });
  kv.take("model.gate_mask", [&](const std::string& v) {
    c.gate_mask.clear();
    for (const auto& t : split_csv(v)) c.gate_mask.push_back(to_bool(t));
  });
  kv.take("model.fusion", [&](const std::string& v) { c.fusion = fusion_kind_from_string(v); });
  kv.take("model.bmp", [&](const std::string& v) { c.bmp = to_bool(v); });
  kv.take("model.head", [&](const std::string& v) { c.head = head_mode_from_string(v); });
  kv.take("model.fs_shared_mlp", [&](const std::string& v) { c.fs_shared_mlp = to_bool(v); });
  kv.take("model.mlp_ratio", [&](const std::string& v) { c.mlp_ratio = to_f64(v); });
  kv.take("model.blend_recalibrated",
          [&](const std::string& v) { c.blend_recalibrated = to_bool(v); });
  kv.take("model.decoder_mid", [&](const std::string& v) { c.decoder_mid = to_i64(v); });
  kv.take("model.aux", [&](const std::string& v) { c.aux_enabled = to_bool(v); });

  kv.take("train.base_lr", [&](const std::string& v) { c.train.base_lr = to_f64(v); });
  kv.take("train.momentum", [&](const std::string& v) { c.train.momentum = to_f64(v); });
  kv.take("train.weight_decay", [&](const std::string& v) { c.train.weight_decay = to_f64(v); });
  kv.take("train.poly_power", [&](const std::string& v) { c.train.poly_power = to_f64(v); });
  kv.take("train.max_iter", [&](const std::string& v) { c.train.max_iter = to_i64(v); });
  kv.take("train.batch", [&](const std::string& v) { c.train.batch_size = to_i64(v); });
  kv.take("train.aux_weight", [&](const std::string& v) { c.train.aux_weight = to_f64(v); });
  kv.take("train.ohem", [&](const std::string& v) { c.train.ohem_enabled = to_bool(v); });
  kv.take("train.ohem_keep", [&](const std::string& v) { c.train.ohem_keep = to_f64(v); });
  kv.take("train.aug_flip", [&](const std::string& v) { c.train.aug_flip = to_bool(v); });
  kv.take("train.aug_scale", [&](const std::string& v) { c.train.aug_scale = to_bool(v); });
  kv.take("train.hha_noise_std",
          [&](const std::string& v) { c.train.hha_noise_std = to_f64(v); });
  kv.take("train.eval_every", [&](const std::string& v) { c.train.eval_every_epochs = to_i64(v); });

  kv.take("eval.flip", [&](const std::string& v) { c.eval_flip = to_bool(v); });
  kv.take("ablate.seeds", [&](const std::string& v) { c.ablate_seeds = to_i64(v); });
  kv.take("noise.stds", [&](const std::string& v) {
    c.noise_stds.clear();
    for (const auto& t : split_csv(v)) c.noise_stds.push_back(to_f64(t));
  });
  kv.take("viz.stage", [&](const std::string& v) { c.viz_stage = to_i64(v); });
  kv.take("viz.count", [&](const std::string& v) { c.viz_count = to_i64(v); });

  kv.reject_unknown();
  return c;
}

SceneRecipe ExperimentConfig::scene_recipe() const {
  SceneRecipe r = data;
  r.seed = seed;
  return r;
}

ModelConfig ExperimentConfig::model_config() const {
  ModelConfig m;
  m.encoder.stage_channels = stage_channels;
  m.encoder.gate_mask.assign(gate_mask.begin(), gate_mask.end());
  m.encoder.fusion = fusion;
  m.encoder.fusion_opts.shared_mlp = fs_shared_mlp;
  m.encoder.fusion_opts.mlp_ratio = mlp_ratio;
  m.encoder.fusion_opts.blend_recalibrated = blend_recalibrated;
  m.encoder.bmp = bmp;
  m.encoder.modality = modality;
  m.decoder.num_classes = data.num_classes;
  m.decoder.mid_channels = decoder_mid;
  m.decoder.aux_enabled = aux_enabled;
  m.head = head;
  return m;
}

TrainConfig ExperimentConfig::train_config() const {
  TrainConfig t = train;
  t.seed = seed;
  return t;
}

std::string ExperimentConfig::resolved_text(bool include_out_dir) const {
  std::ostringstream os;
  os << "seed=" << seed << '\n';
  if (include_out_dir) os << "out.dir=" << out_dir << '\n';
  os << "threads=" << threads << '\n';
  os << "data.height=" << data.height << '\n';
  os << "data.width=" << data.width << '\n';
  os << "data.classes=" << data.num_classes << '\n';
  os << "data.visibility=";
  for (size_t i = 0; i < data.class_visibility.size(); ++i)
    os << (i ? "," : "") << visibility_name(data.class_visibility[i]);
  os << '\n';
  os << "data.objects_min=" << data.objects_min << '\n';
  os << "data.objects_max=" << data.objects_max << '\n';
  os << "data.size_min_frac=" << fmt_double(data.size_min_frac) << '\n';
  os << "data.size_max_frac=" << fmt_double(data.size_max_frac) << '\n';
  os << "data.texture_amp=" << fmt_double(data.texture_amp) << '\n';
  os << "data.color_margin=" << fmt_double(data.color_margin) << '\n';
  os << "data.depth_step=" << fmt_double(data.depth_step) << '\n';
  os << "data.depth_range=" << fmt_double(data.depth_range) << '\n';
  os << "data.depth_noise=" << fmt_double(data.depth_noise) << '\n';
  os << "data.bg_depth=" << fmt_double(data.bg_depth) << '\n';
  os << "data.hha_corrupt_prob=" << fmt_double(data.hha_corrupt_prob) << '\n';
  os << "data.hha_corrupt_std=" << fmt_double(data.hha_corrupt_std) << '\n';
  os << "data.rgb_corrupt_prob=" << fmt_double(data.rgb_corrupt_prob) << '\n';
  os << "data.rgb_corrupt_amp=" << fmt_double(data.rgb_corrupt_amp) << '\n';
  os << "data.hha_misalign_prob=" << fmt_double(data.hha_misalign_prob) << '\n';
  os << "data.hha_misalign_px=" << data.hha_misalign_px << '\n';
  os << "data.hha_dropout_prob=" << fmt_double(data.hha_dropout_prob) << '\n';
  os << "data.train_count=" << train_count << '\n';
  os << "data.test_count=" << test_count << '\n';
  os << "hha.fixed_scale=" << (hha_fixed_scale ? 1 : 0) << '\n';
  os << "model.modality="
     << (modality == Modality::Both ? "both" : modality == Modality::RgbOnly ? "rgb" : "hha")
     << '\n';
  os << "model.stage_channels=";
  for (size_t i = 0; i < stage_channels.size(); ++i) os << (i ? "," : "") << stage_channels[i];
  os << '\n';
  os << "model.gate_mask=";
  for (size_t i = 0; i < gate_mask.size(); ++i) os << (i ? "," : "") << (gate_mask[i] ? 1 : 0);
  os << '\n';
  os << "model.fusion=" << fusion_kind_name(fusion) << '\n';
  os << "model.bmp=" << (bmp ? 1 : 0) << '\n';
  os << "model.head="
     << (head == HeadMode::Auto ? "auto" : head == HeadMode::Fused ? "fused" : "avg") << '\n';
  os << "model.fs_shared_mlp=" << (fs_shared_mlp ? 1 : 0) << '\n';
  os << "model.mlp_ratio=" << fmt_double(mlp_ratio) << '\n';
  os << "model.blend_recalibrated=" << (blend_recalibrated ? 1 : 0) << '\n';
  os << "model.decoder_mid=" << decoder_mid << '\n';
  os << "model.aux=" << (aux_enabled ? 1 : 0) << '\n';
  os << "train.base_lr=" << fmt_double(train.base_lr) << '\n';
  os << "train.momentum=" << fmt_double(train.momentum) << '\n';
  os << "train.weight_decay=" << fmt_double(train.weight_decay) << '\n';
  os << "train.poly_power=" << fmt_double(train.poly_power) << '\n';
  os << "train.max_iter=" << train.max_iter << '\n';
  os << "train.batch=" << train.batch_size << '\n';
  os << "train.aux_weight=" << fmt_double(train.aux_weight) << '\n';
  os << "train.ohem=" << (train.ohem_enabled ? 1 : 0) << '\n';
  os << "train.ohem_keep=" << fmt_double(train.ohem_keep) << '\n';
  os << "train.aug_flip=" << (train.aug_flip ? 1 : 0) << '\n';
  os << "train.aug_scale=" << (train.aug_scale ? 1 : 0) << '\n';
  os << "train.hha_noise_std=" << fmt_double(train.hha_noise_std) << '\n';
  os << "train.eval_every=" << train.eval_every_epochs << '\n';
  os << "eval.flip=" << (eval_flip ? 1 : 0) << '\n';
  os << "ablate.seeds=" << ablate_seeds << '\n';
  os << "noise.stds=";
  for (size_t i = 0; i < noise_stds.size(); ++i) os << (i ? "," : "") << fmt_double(noise_stds[i]);
  os << '\n';
  os << "viz.stage=" << viz_stage << '\n';
  os << "viz.count=" << viz_count << '\n';
  return os.str();
}

uint64_t ExperimentConfig::hash() const { return fnv1a64(resolved_text(false)); }

std::string ExperimentConfig::hash_hex() const {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "0x%016llx", static_cast<unsigned long long>(hash()));
  return buf;
}

}  // namespace sagate
