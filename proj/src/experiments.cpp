#include "sagate/experiments.hpp"

#include <unistd.h>

#include <atomic>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <mutex>
#include <sstream>
#include <thread>

#include "sagate/imageio.hpp"

namespace fs = std::filesystem;

namespace sagate {

namespace {

constexpr uint64_t kBatchStream = 0x6a7c4;
constexpr uint64_t kAugStream = 0xa96e47;
constexpr uint64_t kNoiseEvalStream = 0x401e5;

std::string fmt9(double v) {
  char buf[48];
  std::snprintf(buf, sizeof(buf), "%.9g", v);
  return buf;
}

void write_text_file(const std::string& path, const std::string& content) {
  fs::path p(path);
  if (p.has_parent_path()) fs::create_directories(p.parent_path());
  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open for write: " + path);
  f << content;
  if (!f) throw IoError("write failed: " + path);
}

// -- plain (non-recorded) resampling used by augmentation --------------------

std::vector<float> bilinear_resize_chw(const std::vector<float>& src, int64_t c, int64_t h,
                                       int64_t w, int64_t ho, int64_t wo) {
  std::vector<float> dst(static_cast<size_t>(c * ho * wo));
  const double ry = static_cast<double>(h) / static_cast<double>(ho);
  const double rx = static_cast<double>(w) / static_cast<double>(wo);
  for (int64_t ci = 0; ci < c; ++ci) {
    const float* ps = src.data() + ci * h * w;
    float* pd = dst.data() + ci * ho * wo;
    for (int64_t y = 0; y < ho; ++y) {
      const double sy = (static_cast<double>(y) + 0.5) * ry - 0.5;
      int64_t y0 = static_cast<int64_t>(std::floor(sy));
      const float ty = static_cast<float>(sy - std::floor(sy));
      int64_t y1 = std::clamp<int64_t>(y0 + 1, 0, h - 1);
      y0 = std::clamp<int64_t>(y0, 0, h - 1);
      for (int64_t x = 0; x < wo; ++x) {
        const double sx = (static_cast<double>(x) + 0.5) * rx - 0.5;
        int64_t x0 = static_cast<int64_t>(std::floor(sx));
        const float tx = static_cast<float>(sx - std::floor(sx));
        int64_t x1 = std::clamp<int64_t>(x0 + 1, 0, w - 1);
        x0 = std::clamp<int64_t>(x0, 0, w - 1);
        const float top = ps[y0 * w + x0] + (ps[y0 * w + x1] - ps[y0 * w + x0]) * tx;
        const float bot = ps[y1 * w + x0] + (ps[y1 * w + x1] - ps[y1 * w + x0]) * tx;
        pd[y * wo + x] = top + (bot - top) * ty;
      }
    }
  }
  return dst;
}

std::vector<int32_t> nearest_resize_labels(const std::vector<int32_t>& src, int64_t h, int64_t w,
                                           int64_t ho, int64_t wo) {
  std::vector<int32_t> dst(static_cast<size_t>(ho * wo));
  for (int64_t y = 0; y < ho; ++y) {
    int64_t sy = std::clamp<int64_t>(
        static_cast<int64_t>(std::floor((static_cast<double>(y) + 0.5) * h / ho)), 0, h - 1);
    for (int64_t x = 0; x < wo; ++x) {
      int64_t sx = std::clamp<int64_t>(
          static_cast<int64_t>(std::floor((static_cast<double>(x) + 0.5) * w / wo)), 0, w - 1);
      dst[static_cast<size_t>(y * wo + x)] = src[static_cast<size_t>(sy * w + sx)];
    }
  }
  return dst;
}

void flip_chw_inplace(std::vector<float>& v, int64_t c, int64_t h, int64_t w) {
  for (int64_t ci = 0; ci < c; ++ci)
    for (int64_t y = 0; y < h; ++y) {
      float* row = v.data() + (ci * h + y) * w;
      std::reverse(row, row + w);
    }
}

// -- batching -----------------------------------------------------------------

struct Batch {
  Tensor<float> rgb, hha;
  LabelMap labels;
};

Batch collate(const std::vector<AugmentedSample>& items) {
  const int64_t b = static_cast<int64_t>(items.size());
  const int64_t h = items[0].rgb.dim(1), w = items[0].rgb.dim(2);
  std::vector<float> rgb, hha;
  rgb.reserve(static_cast<size_t>(b * 3 * h * w));
  hha.reserve(static_cast<size_t>(b * 3 * h * w));
  LabelMap labels = LabelMap::filled(b, h, w, 0);
  for (int64_t i = 0; i < b; ++i) {
    const auto& s = items[static_cast<size_t>(i)];
    if (s.rgb.dim(1) != h || s.rgb.dim(2) != w)
      throw ShapeMismatch("all samples in a batch must share the image extent");
    rgb.insert(rgb.end(), s.rgb.value().begin(), s.rgb.value().end());
    hha.insert(hha.end(), s.hha.value().begin(), s.hha.value().end());
    std::copy(s.labels.v.begin(), s.labels.v.end(), labels.v.begin() + i * h * w);
  }
  Batch out;
  out.rgb = Tensor<float>::from_data({b, 3, h, w}, std::move(rgb));
  out.hha = Tensor<float>::from_data({b, 3, h, w}, std::move(hha));
  out.labels = std::move(labels);
  return out;
}

Tensor<float> flip_w(const Tensor<float>& t) {
  std::vector<float> v = t.value();
  const auto& s = t.shape();
  const int64_t w = s.back();
  int64_t rows = t.numel() / w;
  for (int64_t r = 0; r < rows; ++r) std::reverse(v.data() + r * w, v.data() + (r + 1) * w);
  return Tensor<float>::from_data(s, std::move(v));
}

}  // namespace

AugmentedSample augment_sample(const Sample& s, const TrainConfig& cfg, SplitMix64& rng) {
  const int64_t h = s.rgb.dim(1), w = s.rgb.dim(2);
  std::vector<float> rgb = s.rgb.value();
  std::vector<float> hha = s.hha.value();
  std::vector<int32_t> lab = s.labels.v;

  if (cfg.aug_flip && rng.below(2) == 1) {
    flip_chw_inplace(rgb, 3, h, w);
    flip_chw_inplace(hha, 3, h, w);
    for (int64_t y = 0; y < h; ++y)
      std::reverse(lab.begin() + y * w, lab.begin() + (y + 1) * w);
  }

  if (cfg.aug_scale) {
    static const double kScales[6] = {0.5, 0.75, 1.0, 1.25, 1.5, 1.75};
    const double sc = kScales[rng.below(6)];
    if (sc != 1.0) {
      const int64_t hs = std::max<int64_t>(1, std::llround(static_cast<double>(h) * sc));
      const int64_t ws = std::max<int64_t>(1, std::llround(static_cast<double>(w) * sc));
      std::vector<float> rgb_s = bilinear_resize_chw(rgb, 3, h, w, hs, ws);
      std::vector<float> hha_s = bilinear_resize_chw(hha, 3, h, w, hs, ws);
      std::vector<int32_t> lab_s = nearest_resize_labels(lab, h, w, hs, ws);
      std::vector<float> rgb_o(static_cast<size_t>(3 * h * w), 0.f);
      std::vector<float> hha_o(static_cast<size_t>(3 * h * w), 0.f);
      std::vector<int32_t> lab_o(static_cast<size_t>(h * w), kIgnoreLabel);
      // Scaled up: random crop. Scaled down: random placement, ignore padding.
      const int64_t oy = hs >= h ? rng.range(0, hs - h) : rng.range(0, h - hs);
      const int64_t ox = ws >= w ? rng.range(0, ws - w) : rng.range(0, w - ws);
      for (int64_t y = 0; y < std::min(h, hs); ++y)
        for (int64_t x = 0; x < std::min(w, ws); ++x) {
          const int64_t sy = hs >= h ? y + oy : y;
          const int64_t sx = ws >= w ? x + ox : x;
          const int64_t dy = hs >= h ? y : y + oy;
          const int64_t dx = ws >= w ? x : x + ox;
          for (int64_t c = 0; c < 3; ++c) {
            rgb_o[static_cast<size_t>((c * h + dy) * w + dx)] =
                rgb_s[static_cast<size_t>((c * hs + sy) * ws + sx)];
            hha_o[static_cast<size_t>((c * h + dy) * w + dx)] =
                hha_s[static_cast<size_t>((c * hs + sy) * ws + sx)];
          }
          lab_o[static_cast<size_t>(dy * w + dx)] = lab_s[static_cast<size_t>(sy * ws + sx)];
        }
      rgb = std::move(rgb_o);
      hha = std::move(hha_o);
      lab = std::move(lab_o);
    }
  }

  if (cfg.hha_noise_std > 0) {
    const double std01 = cfg.hha_noise_std / 255.0;
    for (auto& v : hha)
      v = static_cast<float>(std::clamp(static_cast<double>(v) + rng.normal() * std01, 0.0, 1.0));
  }

  AugmentedSample out;
  out.rgb = Tensor<float>::from_data({3, h, w}, std::move(rgb));
  out.hha = Tensor<float>::from_data({3, h, w}, std::move(hha));
  out.labels.n = 1;
  out.labels.h = h;
  out.labels.w = w;
  out.labels.v = std::move(lab);
  return out;
}

TrainResult train_model(SegModel<float>& model, const std::vector<Sample>& train_data,
                        const std::vector<Sample>* val_data, const TrainConfig& cfg) {
  cfg.validate();
  if (train_data.empty()) throw ConfigError("empty training set");
  const int64_t n = static_cast<int64_t>(train_data.size());
  const int64_t batch = std::min<int64_t>(cfg.batch_size, n);
  const int64_t steps_per_epoch = (n + batch - 1) / batch;

  SplitMix64 order_rng(derive_seed(cfg.seed, kBatchStream));
  SplitMix64 aug_rng(derive_seed(cfg.seed, kAugStream));
  std::vector<int64_t> perm(static_cast<size_t>(n));
  for (int64_t i = 0; i < n; ++i) perm[static_cast<size_t>(i)] = i;
  int64_t pos = n;

  SgdState<float> state = SgdState<float>::create(model.params());
  TrainResult result;
  std::vector<std::vector<float>> best_values;

  for (int64_t iter = 0; iter < cfg.max_iter; ++iter) {
    std::vector<AugmentedSample> items;
    items.reserve(static_cast<size_t>(batch));
    for (int64_t b = 0; b < batch; ++b) {
      if (pos == n) {
        order_rng.shuffle(perm.begin(), perm.end());
        pos = 0;
      }
      items.push_back(augment_sample(train_data[static_cast<size_t>(perm[static_cast<size_t>(pos++)])],
                                     cfg, aug_rng));
    }
    Batch bt = collate(items);

    Tape<float> tape;
    double loss_v = 0, aux_v = 0;
    {
      TapeScope<float> scope(tape);
      ForwardResult<float> fwd = model.forward(bt.rgb, bt.hha);
      Tensor<float> main = cfg.ohem_enabled ? ohem_loss(fwd.logits, bt.labels, cfg.ohem_keep)
                                            : cross_entropy(fwd.logits, bt.labels);
      Tensor<float> total = main;
      if (fwd.aux_logits.defined()) {
        Tensor<float> aux = cross_entropy(fwd.aux_logits, bt.labels);
        aux_v = aux.value()[0];
        total = add(main, scale(aux, static_cast<float>(cfg.aux_weight)));
      }
      loss_v = main.value()[0];
      const double tv = total.value()[0];
      if (!std::isfinite(tv))
        throw Divergence("non-finite loss at iter " + std::to_string(iter));
      model.params().zero_grads();
      tape.backward(total);
    }
    sgd_step(model.params(), state, cfg, iter);

    TrainLogRow row{iter, poly_lr(iter, cfg), loss_v, aux_v, 0, false};
    const bool epoch_end = cfg.eval_every_epochs > 0 && val_data &&
                           ((iter + 1) % (cfg.eval_every_epochs * steps_per_epoch) == 0 ||
                            iter + 1 == cfg.max_iter);
    if (epoch_end) {
      row.miou = evaluate_miou(model, *val_data);
      row.has_miou = true;
      if (row.miou > result.best_miou) {
        result.best_miou = row.miou;
        result.best_iter = iter;
        best_values.clear();
        for (const auto& [_, t] : model.params().items()) best_values.push_back(t.value());
      }
    }
    result.history.push_back(row);
  }

  if (!best_values.empty()) {
    size_t i = 0;
    for (const auto& [_, t] : model.params().items()) {
      Tensor<float> h = t;
      h.mutable_value() = best_values[i++];
    }
  }
  return result;
}

LabelMap predict_labels(const SegModel<float>& model, const Sample& s, bool flip_average) {
  const int64_t h = s.rgb.dim(1), w = s.rgb.dim(2);
  auto as_batch = [&](const Tensor<float>& t) {
    return Tensor<float>::from_data({1, 3, h, w}, t.value());
  };
  ForwardResult<float> fwd = model.forward(as_batch(s.rgb), as_batch(s.hha));
  std::vector<float> logits = fwd.logits.value();
  if (flip_average) {
    ForwardResult<float> f2 =
        model.forward(as_batch(flip_w(s.rgb)), as_batch(flip_w(s.hha)));
    Tensor<float> unflipped = flip_w(f2.logits);
    for (size_t i = 0; i < logits.size(); ++i)
      logits[i] = 0.5f * (logits[i] + unflipped.value()[i]);
  }
  const int64_t k = fwd.logits.dim(1);
  LabelMap pred = LabelMap::filled(1, h, w, 0);
  for (int64_t p = 0; p < h * w; ++p) {
    int32_t arg = 0;
    float best = logits[static_cast<size_t>(p)];
    for (int64_t c = 1; c < k; ++c) {
      const float v = logits[static_cast<size_t>(c * h * w + p)];
      if (v > best) {
        best = v;
        arg = static_cast<int32_t>(c);
      }
    }
    pred.v[static_cast<size_t>(p)] = arg;
  }
  return pred;
}

double evaluate_miou(const SegModel<float>& model, const std::vector<Sample>& data,
                     bool flip_average, ConfusionMatrix* cm_out) {
  ConfusionMatrix cm(model.config().decoder.num_classes);
  for (const Sample& s : data) cm.accumulate(predict_labels(model, s, flip_average), s.labels);
  if (cm_out) *cm_out = cm;
  return cm.miou();
}

std::string history_to_csv(const TrainResult& result, const std::string& hash_hex) {
  std::ostringstream os;
  os << "# config=" << hash_hex << '\n';
  os << "iter,lr,loss,aux_loss,miou\n";
  for (const auto& r : result.history) {
    os << r.iter << ',' << fmt9(r.lr) << ',' << fmt9(r.loss) << ',' << fmt9(r.aux_loss) << ',';
    if (r.has_miou) os << fmt9(r.miou);
    os << '\n';
  }
  return os.str();
}

SegModel<float> train_or_load(const ExperimentConfig& cfg, const std::vector<Sample>& train_data,
                              uint64_t seed, const std::string& cache_path) {
  SegModel<float> model = SegModel<float>::create(cfg.model_config(), seed);
  if (!cache_path.empty() && fs::exists(cache_path)) {
    model.load_checkpoint(cache_path);
    return model;
  }
  TrainConfig tcfg = cfg.train_config();
  tcfg.seed = seed;
  train_model(model, train_data, nullptr, tcfg);
  if (!cache_path.empty()) {
    fs::path p(cache_path);
    if (p.has_parent_path()) fs::create_directories(p.parent_path());
    const std::string tmp = cache_path + ".tmp." + std::to_string(::getpid());
    model.save_checkpoint(tmp);
    fs::rename(tmp, cache_path);
  }
  return model;
}

// ---------------------------------------------------------------------------
// Suites
// ---------------------------------------------------------------------------

namespace {

void run_jobs(int threads, int64_t count, const std::function<void(int64_t)>& job) {
  threads = std::max(1, std::min<int>(threads, static_cast<int>(count)));
  if (threads == 1) {
    for (int64_t i = 0; i < count; ++i) job(i);
    return;
  }
  std::atomic<int64_t> next{0};
  std::exception_ptr first_error;
  std::mutex err_mu;
  std::vector<std::thread> pool;
  for (int t = 0; t < threads; ++t)
    pool.emplace_back([&]() {
      for (;;) {
        const int64_t i = next.fetch_add(1);
        if (i >= count) return;
        try {
          job(i);
        } catch (...) {
          std::lock_guard<std::mutex> lock(err_mu);
          if (!first_error) first_error = std::current_exception();
        }
      }
    });
  for (auto& th : pool) th.join();
  if (first_error) std::rethrow_exception(first_error);
}

double sample_std(const std::vector<double>& v, double mean) {
  if (v.size() < 2) return 0.0;
  double acc = 0;
  for (double x : v) acc += (x - mean) * (x - mean);
  return std::sqrt(acc / static_cast<double>(v.size() - 1));
}

struct VariantSpec {
  std::string label;
  ExperimentConfig cfg;
};

std::vector<VariantSpec> suite_variants(const ExperimentConfig& base, const std::string& suite) {
  std::vector<VariantSpec> out;
  auto with_fusion = [&](const char* label, FusionKind k) {
    ExperimentConfig c = base;
    c.fusion = k;
    out.push_back({label, c});
  };
  if (suite == "fs") {
    with_fusion("Concat", FusionKind::Concat);
    with_fusion("Self-global", FusionKind::SelfGlobal);
    with_fusion("Cross-global", FusionKind::CrossGlobal);
    with_fusion("Product", FusionKind::Product);
    with_fusion("Proposed", FusionKind::Proposed);
  } else if (suite == "fa") {
    with_fusion("Addition", FusionKind::Addition);
    with_fusion("Conv", FusionKind::Conv);
    with_fusion("Proposed", FusionKind::Proposed);
  } else if (suite == "placement") {
    const size_t L = base.stage_channels.size();
    auto with_mask = [&](const std::string& label, const std::vector<bool>& mask, HeadMode head) {
      ExperimentConfig c = base;
      c.gate_mask = mask;
      c.head = head;
      out.push_back({label, c});
    };
    with_mask("none", std::vector<bool>(L, false), HeadMode::Auto);
    for (size_t i = 0; i < L; ++i) {
      std::vector<bool> m(L, false);
      m[i] = true;
      with_mask("B" + std::to_string(i + 1), m, HeadMode::Auto);
    }
    for (size_t k = 2; k <= L; ++k) {
      std::vector<bool> m(L, false);
      for (size_t i = 0; i < k; ++i) m[i] = true;
      if (k < L) {
        with_mask("B1-" + std::to_string(k), m, HeadMode::Auto);
      } else {
        with_mask("B1-" + std::to_string(k) + " (avg heads)", m, HeadMode::AvgStreams);
        with_mask("B1-" + std::to_string(k) + " (fused)", m, HeadMode::Auto);
      }
    }
  } else if (suite == "factors") {
    const size_t L = base.stage_channels.size();
    auto add = [&](const char* label, bool gates, FusionKind k, bool bmp, HeadMode head) {
      ExperimentConfig c = base;
      c.gate_mask = std::vector<bool>(L, gates);
      c.fusion = k;
      c.bmp = bmp;
      c.head = head;
      out.push_back({label, c});
    };
    add("DualPath (Average)", false, FusionKind::Proposed, false, HeadMode::Auto);
    add("+ SA-Gate", true, FusionKind::Proposed, false, HeadMode::Auto);
    add("+ BMP", true, FusionKind::Mean, true, HeadMode::Auto);
    add("+ BMP + SA-Gate", true, FusionKind::Proposed, true, HeadMode::Auto);
  } else {
    throw ConfigError("unknown ablation suite: " + suite + " (expected fs|fa|placement|factors)");
  }
  return out;
}

}  // namespace

AblationResult run_ablate(const ExperimentConfig& cfg, const std::string& suite) {
  const std::vector<VariantSpec> variants = suite_variants(cfg, suite);
  const int64_t n_seeds = std::max<int64_t>(1, cfg.ablate_seeds);

  // One pinned data shard shared by every variant, so comparisons are paired.
  const SceneRecipe recipe = cfg.scene_recipe();
  const std::vector<Sample> train_data = generate(recipe, cfg.train_count, 0);
  const std::vector<Sample> test_data = generate(recipe, cfg.test_count, 1000000);

  AblationResult result;
  result.suite = suite;
  result.rows.resize(variants.size());
  for (size_t i = 0; i < variants.size(); ++i) {
    result.rows[i].label = variants[i].label;
    result.rows[i].per_seed_miou.assign(static_cast<size_t>(n_seeds), 0.0);
  }

  const int64_t jobs = static_cast<int64_t>(variants.size()) * n_seeds;
  run_jobs(cfg.threads, jobs, [&](int64_t j) {
    const size_t vi = static_cast<size_t>(j / n_seeds);
    const int64_t si = j % n_seeds;
    const uint64_t seed = cfg.seed + static_cast<uint64_t>(si);
    SegModel<float> model = train_or_load(variants[vi].cfg, train_data, seed, "");
    result.rows[vi].per_seed_miou[static_cast<size_t>(si)] =
        evaluate_miou(model, test_data, variants[vi].cfg.eval_flip);
  });

  for (auto& row : result.rows) {
    double acc = 0;
    for (double v : row.per_seed_miou) acc += v;
    row.mean = acc / static_cast<double>(row.per_seed_miou.size());
    row.stddev = sample_std(row.per_seed_miou, row.mean);
  }

  // CSV
  std::ostringstream csv;
  csv << "# config=" << cfg.hash_hex() << "\n# suite=" << suite << '\n';
  csv << "variant";
  for (int64_t s = 0; s < n_seeds; ++s) csv << ",seed" << (cfg.seed + static_cast<uint64_t>(s));
  csv << ",mean_miou,std_miou\n";
  for (const auto& row : result.rows) {
    csv << row.label;
    for (double v : row.per_seed_miou) csv << ',' << fmt9(v);
    csv << ',' << fmt9(row.mean) << ',' << fmt9(row.stddev) << '\n';
  }
  result.csv = csv.str();

  // Aligned text
  std::ostringstream txt;
  txt << "ablation suite: " << suite << "   (config " << cfg.hash_hex() << ")\n";
  size_t wlabel = 8;
  for (const auto& row : result.rows) wlabel = std::max(wlabel, row.label.size());
  char buf[64];
  for (const auto& row : result.rows) {
    txt << "  " << row.label << std::string(wlabel - row.label.size() + 2, ' ');
    std::snprintf(buf, sizeof(buf), "mIoU %.4f +- %.4f\n", row.mean, row.stddev);
    txt << buf;
  }
  result.text = txt.str();
  return result;
}

NoiseSweepResult run_noise_sweep(const ExperimentConfig& cfg) {
  NoiseSweepResult result;
  result.stds = cfg.noise_stds;
  result.methods = {"SA-Gate (proposed)", "Concat baseline"};
  const int64_t n_seeds = std::max<int64_t>(1, cfg.ablate_seeds);

  ExperimentConfig proposed = cfg;
  proposed.fusion = FusionKind::Proposed;
  ExperimentConfig concat = cfg;
  concat.fusion = FusionKind::Concat;
  const std::vector<ExperimentConfig> method_cfgs{proposed, concat};

  const SceneRecipe recipe = cfg.scene_recipe();
  const std::vector<Sample> train_data = generate(recipe, cfg.train_count, 0);
  const std::vector<Sample> test_data = generate(recipe, cfg.test_count, 1000000);

  // Pre-corrupted test sets, identical for every method and seed (paired).
  std::vector<std::vector<Sample>> noisy_sets;
  for (size_t di = 0; di < result.stds.size(); ++di) {
    std::vector<Sample> set;
    set.reserve(test_data.size());
    for (size_t i = 0; i < test_data.size(); ++i)
      set.push_back(corrupt_depth(
          test_data[i], result.stds[di],
          derive_seed(derive_seed(cfg.seed, kNoiseEvalStream), (static_cast<uint64_t>(di) << 32) |
                                                                   static_cast<uint64_t>(i))));
    noisy_sets.push_back(std::move(set));
  }

  result.cells.assign(result.methods.size(),
                      std::vector<NoiseCell>(result.stds.size()));
  result.clean_mean.assign(result.methods.size(), 0.0);
  std::vector<std::vector<double>> clean(result.methods.size(),
                                         std::vector<double>(static_cast<size_t>(n_seeds), 0.0));
  for (auto& m : result.cells)
    for (auto& c : m) c.per_seed_miou.assign(static_cast<size_t>(n_seeds), 0.0);

  const int64_t jobs = static_cast<int64_t>(result.methods.size()) * n_seeds;
  run_jobs(cfg.threads, jobs, [&](int64_t j) {
    const size_t mi = static_cast<size_t>(j / n_seeds);
    const int64_t si = j % n_seeds;
    const uint64_t seed = cfg.seed + static_cast<uint64_t>(si);
    SegModel<float> model = train_or_load(method_cfgs[mi], train_data, seed, "");
    clean[mi][static_cast<size_t>(si)] = evaluate_miou(model, test_data, cfg.eval_flip);
    for (size_t di = 0; di < result.stds.size(); ++di)
      result.cells[mi][di].per_seed_miou[static_cast<size_t>(si)] =
          evaluate_miou(model, noisy_sets[di], cfg.eval_flip);
  });

  for (size_t mi = 0; mi < result.methods.size(); ++mi) {
    double acc = 0;
    for (double v : clean[mi]) acc += v;
    result.clean_mean[mi] = acc / static_cast<double>(n_seeds);
    for (size_t di = 0; di < result.stds.size(); ++di) {
      NoiseCell& cell = result.cells[mi][di];
      double macc = 0, dacc = 0;
      for (int64_t si = 0; si < n_seeds; ++si) {
        const double noisy = cell.per_seed_miou[static_cast<size_t>(si)];
        const double cl = clean[mi][static_cast<size_t>(si)];
        macc += noisy;
        dacc += cl > 0 ? (cl - noisy) / cl * 1000.0 : 0.0;
      }
      cell.miou_mean = macc / static_cast<double>(n_seeds);
      cell.degr_permille_mean = dacc / static_cast<double>(n_seeds);
    }
  }

  // CSV mirrors the published header: clean column, then one mIoU and one
  // degradation column per noise level.
  std::ostringstream csv;
  csv << "# config=" << cfg.hash_hex() << "\n# suite=noise-sweep\n";
  csv << "method,no_noise";
  for (double s : result.stds) csv << ",std" << fmt9(s) << "_miou,std" << fmt9(s) << "_permille";
  csv << '\n';
  for (size_t mi = 0; mi < result.methods.size(); ++mi) {
    csv << result.methods[mi] << ',' << fmt9(result.clean_mean[mi]);
    for (size_t di = 0; di < result.stds.size(); ++di)
      csv << ',' << fmt9(result.cells[mi][di].miou_mean) << ','
          << fmt9(result.cells[mi][di].degr_permille_mean);
    csv << '\n';
  }
  result.csv = csv.str();

  std::ostringstream txt;
  txt << "noise robustness sweep   (config " << cfg.hash_hex() << ")\n";
  txt << "  Method                 No Noise";
  char buf[96];
  for (double s : result.stds) {
    std::snprintf(buf, sizeof(buf), "   Std=%-3g            ", s);
    txt << buf;
  }
  txt << '\n';
  for (size_t mi = 0; mi < result.methods.size(); ++mi) {
    std::snprintf(buf, sizeof(buf), "  %-22s %.4f", result.methods[mi].c_str(),
                  result.clean_mean[mi]);
    txt << buf;
    for (size_t di = 0; di < result.stds.size(); ++di) {
      std::snprintf(buf, sizeof(buf), "   %.4f (%+.1f%%o)", result.cells[mi][di].miou_mean,
                    -result.cells[mi][di].degr_permille_mean);
      txt << buf;
    }
    txt << '\n';
  }
  result.text = txt.str();
  return result;
}

// ---------------------------------------------------------------------------
// Full-model gradient check (f64)
// ---------------------------------------------------------------------------

std::vector<GradCheckReport> full_model_gradcheck(double step, double tol, std::ostream* log) {
  const FusionKind kinds[] = {FusionKind::Proposed,    FusionKind::Concat,
                              FusionKind::SelfGlobal,  FusionKind::CrossGlobal,
                              FusionKind::Product,     FusionKind::Addition,
                              FusionKind::Conv};
  std::vector<GradCheckReport> reports;
  for (FusionKind kind : kinds) {
    ModelConfig mc;
    mc.encoder.stage_channels = {3, 4, 5, 6};
    mc.encoder.gate_mask = {true, true, true, true};
    mc.encoder.fusion = kind;
    mc.encoder.bmp = true;
    mc.decoder.num_classes = 3;
    mc.decoder.mid_channels = 8;
    mc.decoder.aux_enabled = true;

    SegModel<double> model = SegModel<double>::create(mc, 11);
    SplitMix64 rng(401);
    Tensor<double> rgb = Tensor<double>::uniform({1, 3, 16, 16}, rng, 0.05, 0.95);
    Tensor<double> hha = Tensor<double>::uniform({1, 3, 16, 16}, rng, 0.05, 0.95);
    LabelMap labels = LabelMap::filled(1, 16, 16, 0);
    for (auto& v : labels.v) v = static_cast<int32_t>(rng.below(3));
    labels.v[5] = kIgnoreLabel;  // exercise the ignore path

    TrainConfig tc;
    tc.aux_weight = 0.2;
    auto loss_value = [&]() {
      ForwardResult<double> fwd = model.forward(rgb, hha);
      return total_loss(fwd, labels, tc).value()[0];
    };

    // Analytic gradients.
    std::vector<std::vector<double>> analytic;
    {
      Tape<double> tape;
      TapeScope<double> scope(tape);
      ForwardResult<double> fwd = model.forward(rgb, hha);
      Tensor<double> loss = total_loss(fwd, labels, tc);
      model.params().zero_grads();
      tape.backward(loss);
      for (const auto& [_, t] : model.params().items())
        analytic.push_back(t.has_grad() ? t.grad() : std::vector<double>(t.numel(), 0.0));
    }

    GradCheckReport rep;
    rep.variant = fusion_kind_name(kind);
    size_t pi = 0;
    for (const auto& [name, t] : model.params().items()) {
      Tensor<double> h = t;
      auto& vals = h.mutable_value();
      for (size_t i = 0; i < vals.size(); ++i) {
        const double orig = vals[i];
        vals[i] = orig + step;
        const double lp = loss_value();
        vals[i] = orig - step;
        const double lm = loss_value();
        vals[i] = orig;
        const double fd = (lp - lm) / (2 * step);
        const double ad = analytic[pi][i];
        const double rel = std::abs(ad - fd) / std::max({std::abs(ad), std::abs(fd), 1e-3});
        rep.max_rel_err = std::max(rep.max_rel_err, rel);
        ++rep.checked;
      }
      ++pi;
    }
    rep.pass = rep.max_rel_err < tol;
    if (log)
      *log << "  " << rep.variant << ": " << rep.checked
           << " params, max rel err = " << rep.max_rel_err << (rep.pass ? "  [ok]" : "  [FAIL]")
           << '\n';
    reports.push_back(rep);
  }
  return reports;
}

// ---------------------------------------------------------------------------
// CLI commands
// ---------------------------------------------------------------------------

namespace {

std::string resolve_shard_dir(const std::string& data_dir, const char* sub) {
  const std::string candidate = data_dir + "/" + sub;
  if (fs::exists(candidate + "/manifest.json")) return candidate;
  if (fs::exists(data_dir + "/manifest.json")) return data_dir;
  throw IoError("no shard manifest under " + data_dir);
}

}  // namespace

void cmd_generate(const ExperimentConfig& cfg, const std::string& out_dir) {
  const SceneRecipe recipe = cfg.scene_recipe();
  save_shard(out_dir + "/train", recipe, generate(recipe, cfg.train_count, 0));
  save_shard(out_dir + "/test", recipe, generate(recipe, cfg.test_count, 1000000));
  write_text_file(out_dir + "/resolved.cfg", cfg.resolved_text());
}

void cmd_train(const ExperimentConfig& cfg, const std::string& data_dir,
               const std::string& out_dir) {
  const std::vector<Sample> train_data = load_shard(resolve_shard_dir(data_dir, "train"));
  std::vector<Sample> val_data;
  if (cfg.train.eval_every_epochs > 0) val_data = load_shard(resolve_shard_dir(data_dir, "test"));

  SegModel<float> model = SegModel<float>::create(cfg.model_config(), cfg.seed);
  TrainResult result =
      train_model(model, train_data, val_data.empty() ? nullptr : &val_data, cfg.train_config());
  fs::create_directories(out_dir);
  model.save_checkpoint(out_dir + "/checkpoint.stnc");
  write_text_file(out_dir + "/history.csv", history_to_csv(result, cfg.hash_hex()));
  write_text_file(out_dir + "/resolved.cfg", cfg.resolved_text());
}

void cmd_eval(const ExperimentConfig& cfg, const std::string& data_dir,
              const std::string& checkpoint, const std::string& out_dir) {
  const std::vector<Sample> test_data = load_shard(resolve_shard_dir(data_dir, "test"));
  SegModel<float> model = SegModel<float>::create(cfg.model_config(), cfg.seed);
  if (!checkpoint.empty()) model.load_checkpoint(checkpoint);
  ConfusionMatrix cm(cfg.data.num_classes);
  evaluate_miou(model, test_data, cfg.eval_flip, &cm);
  write_text_file(out_dir + "/metrics.csv",
                  "# config=" + cfg.hash_hex() + "\n" + cm.to_csv());
  write_text_file(out_dir + "/metrics.txt",
                  "eval   (config " + cfg.hash_hex() + ")\n" + cm.to_text());
  write_text_file(out_dir + "/resolved.cfg", cfg.resolved_text());
}

void cmd_ablate(const ExperimentConfig& cfg, const std::string& suite, const std::string& out_dir) {
  AblationResult result = run_ablate(cfg, suite);
  write_text_file(out_dir + "/ablate_" + suite + ".csv", result.csv);
  write_text_file(out_dir + "/ablate_" + suite + ".txt", result.text);
  write_text_file(out_dir + "/resolved.cfg", cfg.resolved_text());
}

void cmd_noise_sweep(const ExperimentConfig& cfg, const std::string& out_dir) {
  NoiseSweepResult result = run_noise_sweep(cfg);
  write_text_file(out_dir + "/noise_sweep.csv", result.csv);
  write_text_file(out_dir + "/noise_sweep.txt", result.text);
  write_text_file(out_dir + "/resolved.cfg", cfg.resolved_text());
}

void cmd_visualize(const ExperimentConfig& cfg, const std::string& checkpoint,
                   const std::string& data_dir, const std::string& out_dir) {
  const std::vector<Sample> data = load_shard(resolve_shard_dir(data_dir, "test"));
  SegModel<float> model = SegModel<float>::create(cfg.model_config(), cfg.seed);
  if (!checkpoint.empty()) model.load_checkpoint(checkpoint);
  fs::create_directories(out_dir);

  const EncoderConfig& ec = model.config().encoder;
  int stage = static_cast<int>(cfg.viz_stage);
  if (stage < 0) stage = ec.first_gate();
  if (stage < 0 || stage >= ec.stages() || !ec.gate_mask[static_cast<size_t>(stage)])
    throw ConfigError("viz.stage does not name an enabled gate");

  const int64_t n = std::min<int64_t>(cfg.viz_count, static_cast<int64_t>(data.size()));
  for (int64_t i = 0; i < n; ++i) {
    const Sample& s = data[static_cast<size_t>(i)];
    const int64_t h = s.rgb.dim(1), w = s.rgb.dim(2);
    auto as_batch = [&](const Tensor<float>& t) {
      return Tensor<float>::from_data({1, 3, h, w}, t.value());
    };
    ForwardResult<float> fwd = model.forward(as_batch(s.rgb), as_batch(s.hha));
    const StageTrace<float>& tr = fwd.encoder.stages[static_cast<size_t>(stage)];
    if (!tr.fusion) throw ConfigError("no fusion output recorded at the requested stage");

    char prefix[32];
    std::snprintf(prefix, sizeof(prefix), "sample%02lld", static_cast<long long>(i));

    // Gate map: red = weight on RGB, blue = weight on HHA, linear blend.
    Tensor<float> a = bilinear_upsample(tr.fusion->gate.a_rgb, h, w);
    Ppm8 img;
    img.width = w;
    img.height = h;
    img.pixels.resize(static_cast<size_t>(3 * h * w));
    for (int64_t p = 0; p < h * w; ++p) {
      const float v = std::clamp(a.value()[static_cast<size_t>(p)], 0.f, 1.f);
      img.pixels[static_cast<size_t>(p * 3 + 0)] = static_cast<uint8_t>(std::lround(v * 255.0));
      img.pixels[static_cast<size_t>(p * 3 + 1)] = 0;
      img.pixels[static_cast<size_t>(p * 3 + 2)] =
          static_cast<uint8_t>(std::lround((1.f - v) * 255.0));
    }
    write_ppm8(out_dir + "/" + prefix + "_gate.ppm", img);

    // Feature-energy maps before/after separation (per-pixel L2 over channels).
    auto energy_pgm = [&](const Tensor<float>& feat, const std::string& path) {
      const int64_t c = feat.dim(1), fh = feat.dim(2), fw = feat.dim(3);
      std::vector<float> e(static_cast<size_t>(fh * fw), 0.f);
      for (int64_t ci = 0; ci < c; ++ci)
        for (int64_t p = 0; p < fh * fw; ++p) {
          const float v = feat.value()[static_cast<size_t>((ci * fh * fw) + p)];
          e[static_cast<size_t>(p)] += v * v;
        }
      float lo = std::numeric_limits<float>::max(), hi = std::numeric_limits<float>::lowest();
      for (auto& v : e) {
        v = std::sqrt(v);
        lo = std::min(lo, v);
        hi = std::max(hi, v);
      }
      Pgm8 g;
      g.width = fw;
      g.height = fh;
      g.pixels.resize(e.size());
      for (size_t p = 0; p < e.size(); ++p)
        g.pixels[p] = static_cast<uint8_t>(
            std::lround(hi > lo ? (e[p] - lo) / (hi - lo) * 255.0 : 0.0));
      write_pgm8(path, g);
    };
    energy_pgm(tr.rgb_raw, out_dir + "/" + prefix + "_rgb_before.pgm");
    energy_pgm(tr.fusion->separation.rgb_rec, out_dir + "/" + prefix + "_rgb_after.pgm");
    energy_pgm(tr.hha_raw, out_dir + "/" + prefix + "_hha_before.pgm");
    energy_pgm(tr.fusion->separation.hha_rec, out_dir + "/" + prefix + "_hha_after.pgm");
  }
  write_text_file(out_dir + "/resolved.cfg", cfg.resolved_text());
}

int cmd_gradcheck(std::ostream& os) {
  os << "full-model gradient check (f64, central differences, h=1e-4)\n";
  auto reports = full_model_gradcheck(1e-4, 1e-4, &os);
  int fails = 0;
  for (const auto& r : reports)
    if (!r.pass) ++fails;
  return fails;
}

}  // namespace sagate
