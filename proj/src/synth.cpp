#include "sagate/synth.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "sagate/imageio.hpp"

namespace fs = std::filesystem;

namespace sagate {

namespace {

constexpr uint64_t kPaletteStream = 0x9a1e77e;
constexpr uint64_t kJitterStream = 0x71773e;
constexpr uint64_t kDepthNoiseStream = 0xd391;
constexpr uint64_t kCorruptStream = 0xc0441;

struct CorruptDraw {
  double extra_rgb_amp = 0.0;  // added to texture_amp
  double hha_std01 = 0.0;      // Gaussian std on the [0,1] HHA scale
  int64_t shift_y = 0, shift_x = 0;  // depth misalignment in pixels
  bool dropout = false;              // depth collapses to the background plane
};

// Drawn from a dedicated stream keyed by (seed, index) so the background
// render reproduces the exact same decision.
CorruptDraw draw_corruption(const SceneRecipe& r, int64_t index) {
  CorruptDraw d;
  SplitMix64 rng(derive_seed(derive_seed(r.seed, static_cast<uint64_t>(index)), kCorruptStream));
  if (rng.uniform() < r.rgb_corrupt_prob) d.extra_rgb_amp = r.rgb_corrupt_amp;
  if (rng.uniform() < r.hha_corrupt_prob)
    d.hha_std01 = rng.uniform(0.3, 1.0) * r.hha_corrupt_std / 255.0;
  if (rng.uniform() < r.hha_misalign_prob && r.hha_misalign_px > 0) {
    d.shift_y = rng.range(-r.hha_misalign_px, r.hha_misalign_px);
    d.shift_x = rng.range(-r.hha_misalign_px, r.hha_misalign_px);
    if (d.shift_y == 0 && d.shift_x == 0) d.shift_x = r.hha_misalign_px;
  }
  if (rng.uniform() < r.hha_dropout_prob) d.dropout = true;
  return d;
}

struct Palette {
  std::array<double, 3> bg;
  std::vector<std::array<double, 3>> cls;  // classes 1..K-1
};

double color_dist(const std::array<double, 3>& a, const std::array<double, 3>& b) {
  double m = 0;
  for (int c = 0; c < 3; ++c) m = std::max(m, std::abs(a[c] - b[c]));
  return m;
}

Palette make_palette(const SceneRecipe& r) {
  SplitMix64 rng(derive_seed(r.seed, kPaletteStream));
  Palette p;
  for (auto& c : p.bg) c = rng.uniform(0.2, 0.8);
  for (int64_t k = 1; k < r.num_classes; ++k) {
    const Visibility vis = r.class_visibility[static_cast<size_t>(k - 1)];
    if (vis == Visibility::DepthOnly) {
      p.cls.push_back(p.bg);  // iso-colour with the background, by construction
      continue;
    }
    bool placed = false;
    for (int attempt = 0; attempt < 512 && !placed; ++attempt) {
      std::array<double, 3> c{rng.uniform(), rng.uniform(), rng.uniform()};
      if (color_dist(c, p.bg) < r.color_margin) continue;
      bool clash = false;
      for (const auto& other : p.cls)
        if (color_dist(c, other) < r.color_margin * 0.5) clash = true;
      if (clash) continue;
      p.cls.push_back(c);
      placed = true;
    }
    if (!placed)
      throw RecipeInfeasible("cannot find a class colour honouring color_margin=" +
                             std::to_string(r.color_margin));
  }
  return p;
}

struct SceneObject {
  int64_t cls;         // 1..K-1
  bool ellipse;
  int64_t cx, cy, hw, hh;  // center and half extents in pixels
  double depth;
};

// Single jitter draw; shared so the background render consumes the stream in
// exactly the same order as the scene render.
double rng_jitter_value(SplitMix64& jit, double amp) {
  return amp > 0 ? jit.uniform(-amp, amp) : 0.0;
}

}  // namespace

void SceneRecipe::validate() const {
  if (height < 8 || width < 8) throw RecipeInfeasible("scene must be at least 8x8");
  if (num_classes < 1 || num_classes > 254)
    throw RecipeInfeasible("num_classes must be in [1, 254]");
  if (static_cast<int64_t>(class_visibility.size()) != num_classes - 1)
    throw RecipeInfeasible("class_visibility must list exactly num_classes-1 entries");
  if (objects_min < 0 || objects_max < objects_min)
    throw RecipeInfeasible("invalid object count range");
  if (num_classes == 1 && objects_max > 0)
    throw RecipeInfeasible("objects requested but no foreground class exists");
  if (size_min_frac <= 0 || size_max_frac > 0.95 || size_max_frac < size_min_frac)
    throw RecipeInfeasible("invalid object size range");
  const int64_t smin = std::max<int64_t>(2, static_cast<int64_t>(size_min_frac *
                                                                 static_cast<double>(std::min(height, width))));
  if (smin >= std::min(height, width) / 2)
    throw RecipeInfeasible("objects do not fit in the scene");
  if (depth_step <= 0 || bg_depth <= depth_step + depth_range)
    throw RecipeInfeasible("depth layout would produce non-positive depths");
  if (hha_corrupt_prob < 0 || hha_corrupt_prob > 1 || rgb_corrupt_prob < 0 ||
      rgb_corrupt_prob > 1 || hha_corrupt_std < 0 || rgb_corrupt_amp < 0 ||
      hha_misalign_prob < 0 || hha_misalign_prob > 1 || hha_misalign_px < 0 ||
      hha_dropout_prob < 0 || hha_dropout_prob > 1)
    throw RecipeInfeasible("invalid corruption parameters");
}

Sample generate_sample(const SceneRecipe& r, int64_t index) {
  r.validate();
  const Palette pal = make_palette(r);
  const int64_t H = r.height, W = r.width;
  const size_t npx = static_cast<size_t>(H * W);
  SplitMix64 rng(derive_seed(r.seed, static_cast<uint64_t>(index)));

  // Scene layout.
  const int64_t count = rng.range(r.objects_min, r.objects_max);
  std::vector<int64_t> class_order;
  for (int64_t k = 1; k < r.num_classes; ++k) class_order.push_back(k);
  rng.shuffle(class_order.begin(), class_order.end());

  const double smin = r.size_min_frac * static_cast<double>(std::min(H, W));
  const double smax = r.size_max_frac * static_cast<double>(std::min(H, W));
  std::vector<SceneObject> objs;
  for (int64_t i = 0; i < count; ++i) {
    SceneObject o;
    o.cls = class_order.empty() ? 0 : class_order[static_cast<size_t>(i) % class_order.size()];
    o.ellipse = rng.below(2) == 1;
    o.hw = std::max<int64_t>(1, static_cast<int64_t>(rng.uniform(smin, smax) * 0.5));
    o.hh = std::max<int64_t>(1, static_cast<int64_t>(rng.uniform(smin, smax) * 0.5));
    if (o.hw >= W / 2 || o.hh >= H / 2) throw RecipeInfeasible("object larger than scene");
    o.cx = rng.range(o.hw, W - 1 - o.hw);
    o.cy = rng.range(o.hh, H - 1 - o.hh);
    const Visibility vis = r.class_visibility[static_cast<size_t>(o.cls - 1)];
    o.depth = vis == Visibility::RgbOnly
                  ? r.bg_depth  // coplanar: invisible to the depth sensor
                  : r.bg_depth - (r.depth_step + rng.uniform() * r.depth_range);
    objs.push_back(o);
  }
  // Painter order, far to near; ties keep draw order (stable).
  std::stable_sort(objs.begin(), objs.end(),
                   [](const SceneObject& a, const SceneObject& b) { return a.depth > b.depth; });

  LabelMap labels = LabelMap::filled(1, H, W, 0);
  std::vector<double> depth(npx, r.bg_depth);
  std::vector<std::array<double, 3>> base(npx, pal.bg);
  for (const auto& o : objs) {
    for (int64_t y = o.cy - o.hh; y <= o.cy + o.hh; ++y)
      for (int64_t x = o.cx - o.hw; x <= o.cx + o.hw; ++x) {
        if (o.ellipse) {
          const double dy = static_cast<double>(y - o.cy) / static_cast<double>(o.hh);
          const double dx = static_cast<double>(x - o.cx) / static_cast<double>(o.hw);
          if (dx * dx + dy * dy > 1.0) continue;
        }
        const size_t i = static_cast<size_t>(y * W + x);
        labels.v[i] = static_cast<int32_t>(o.cls);
        depth[i] = o.depth;
        // Depth-only classes carry the background colour in the palette, so the
        // painted surface always matches what the camera would see.
        base[i] = pal.cls[static_cast<size_t>(o.cls - 1)];
      }
  }

  // Texture jitter from a dedicated stream; identical for the background-only
  // render so depth-only pixels match the background exactly.
  const CorruptDraw corrupt = draw_corruption(r, index);
  const double amp = r.texture_amp + corrupt.extra_rgb_amp;
  SplitMix64 jit(derive_seed(derive_seed(r.seed, static_cast<uint64_t>(index)), kJitterStream));
  std::vector<float> rgb(3 * npx);
  for (size_t i = 0; i < npx; ++i)
    for (int c = 0; c < 3; ++c) {
      const double v = base[i][static_cast<size_t>(c)] + rng_jitter_value(jit, amp);
      rgb[static_cast<size_t>(c) * npx + i] = static_cast<float>(std::clamp(v, 0.0, 1.0));
    }

  // Depth noise (optional) and the frame.
  DepthFrame frame;
  frame.height = H;
  frame.width = W;
  frame.fx = frame.fy = static_cast<float>(H);
  frame.cx = static_cast<float>(W - 1) / 2.f;
  frame.cy = static_cast<float>(H - 1) / 2.f;
  frame.gravity = {0.f, -1.f, 0.f};
  frame.depth.resize(npx);
  frame.valid.assign(npx, 1);
  const CorruptDraw pre_corrupt = draw_corruption(r, index);
  SplitMix64 dn(derive_seed(derive_seed(r.seed, static_cast<uint64_t>(index)), kDepthNoiseStream));
  for (size_t i = 0; i < npx; ++i) {
    double d = pre_corrupt.dropout ? r.bg_depth : depth[i];
    if (r.depth_noise > 0) d += dn.uniform(-r.depth_noise, r.depth_noise);
    frame.depth[i] = static_cast<float>(std::max(d, 1e-3));
  }

  Sample s;
  s.rgb = Tensor<float>::from_data({3, H, W}, std::move(rgb));
  s.depth = std::move(frame);
  if (corrupt.shift_y != 0 || corrupt.shift_x != 0) {
    DepthFrame shifted = s.depth;
    for (int64_t y = 0; y < H; ++y)
      for (int64_t x = 0; x < W; ++x) {
        const int64_t sy = std::clamp<int64_t>(y - corrupt.shift_y, 0, H - 1);
        const int64_t sx = std::clamp<int64_t>(x - corrupt.shift_x, 0, W - 1);
        shifted.depth[static_cast<size_t>(y * W + x)] =
            s.depth.depth[static_cast<size_t>(sy * W + sx)];
        shifted.valid[static_cast<size_t>(y * W + x)] =
            s.depth.valid[static_cast<size_t>(sy * W + sx)];
      }
    s.depth = std::move(shifted);
  }
  s.hha = encode_hha(s.depth);
  if (corrupt.hha_std01 > 0) {
    SplitMix64 cn(
        derive_seed(derive_seed(r.seed, static_cast<uint64_t>(index)), kCorruptStream ^ 0xbeef));
    std::vector<float> hha = s.hha.value();
    for (int64_t c = 0; c < 3; ++c)
      for (size_t i = 0; i < npx; ++i) {
        if (!s.depth.valid[i]) continue;
        auto& v = hha[static_cast<size_t>(c) * npx + i];
        v = static_cast<float>(
            std::clamp(static_cast<double>(v) + cn.normal() * corrupt.hha_std01, 0.0, 1.0));
      }
    s.hha = Tensor<float>::from_data({3, H, W}, std::move(hha));
  }
  s.labels = std::move(labels);
  return s;
}

std::vector<Sample> generate(const SceneRecipe& r, int64_t count, int64_t index_offset) {
  std::vector<Sample> out;
  out.reserve(static_cast<size_t>(count));
  for (int64_t i = 0; i < count; ++i) out.push_back(generate_sample(r, index_offset + i));
  return out;
}

Tensor<float> render_background_rgb(const SceneRecipe& r, int64_t index) {
  r.validate();
  const Palette pal = make_palette(r);
  const size_t npx = static_cast<size_t>(r.height * r.width);
  const CorruptDraw corrupt = draw_corruption(r, index);
  const double amp = r.texture_amp + corrupt.extra_rgb_amp;
  SplitMix64 jit(derive_seed(derive_seed(r.seed, static_cast<uint64_t>(index)), kJitterStream));
  std::vector<float> rgb(3 * npx);
  for (size_t i = 0; i < npx; ++i)
    for (int c = 0; c < 3; ++c) {
      const double v = pal.bg[static_cast<size_t>(c)] + rng_jitter_value(jit, amp);
      rgb[static_cast<size_t>(c) * npx + i] = static_cast<float>(std::clamp(v, 0.0, 1.0));
    }
  return Tensor<float>::from_data({3, r.height, r.width}, std::move(rgb));
}

Sample corrupt_depth(const Sample& sample, double std255, uint64_t seed, bool on_raw_depth) {
  if (std255 < 0) throw ConfigError("noise std must be non-negative");
  Sample out = sample;
  if (std255 == 0) return out;
  SplitMix64 rng(derive_seed(seed, 0xc0ffee));
  if (on_raw_depth) {
    DepthFrame f = sample.depth;
    for (size_t i = 0; i < f.depth.size(); ++i) {
      if (!f.valid[i]) continue;
      f.depth[i] = static_cast<float>(
          std::max(1e-3, static_cast<double>(f.depth[i]) + rng.normal() * std255 / 1000.0));
    }
    out.depth = std::move(f);
    out.hha = encode_hha(out.depth);
    return out;
  }
  const double std01 = std255 / 255.0;
  std::vector<float> hha = sample.hha.value();
  for (auto& v : hha)
    v = static_cast<float>(std::clamp(static_cast<double>(v) + rng.normal() * std01, 0.0, 1.0));
  out.hha = Tensor<float>::from_data(sample.hha.shape(), std::move(hha));
  return out;
}

uint64_t fnv1a64(const std::string& text) {
  uint64_t h = 0xcbf29ce484222325ull;
  for (unsigned char c : text) {
    h ^= c;
    h *= 0x100000001b3ull;
  }
  return h;
}

std::string recipe_canonical(const SceneRecipe& r) {
  std::ostringstream os;
  os << "height=" << r.height << "\nwidth=" << r.width << "\nnum_classes=" << r.num_classes
     << "\nvisibility=";
  for (size_t i = 0; i < r.class_visibility.size(); ++i)
    os << (i ? "," : "") << visibility_name(r.class_visibility[i]);
  char buf[64];
  auto putf = [&](const char* k, double v) {
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    os << '\n' << k << '=' << buf;
  };
  os << "\nobjects_min=" << r.objects_min << "\nobjects_max=" << r.objects_max;
  putf("size_min_frac", r.size_min_frac);
  putf("size_max_frac", r.size_max_frac);
  putf("texture_amp", r.texture_amp);
  putf("color_margin", r.color_margin);
  putf("depth_step", r.depth_step);
  putf("depth_range", r.depth_range);
  putf("depth_noise", r.depth_noise);
  putf("bg_depth", r.bg_depth);
  putf("hha_corrupt_prob", r.hha_corrupt_prob);
  putf("hha_corrupt_std", r.hha_corrupt_std);
  putf("rgb_corrupt_prob", r.rgb_corrupt_prob);
  putf("rgb_corrupt_amp", r.rgb_corrupt_amp);
  putf("hha_misalign_prob", r.hha_misalign_prob);
  os << "\nhha_misalign_px=" << r.hha_misalign_px;
  putf("hha_dropout_prob", r.hha_dropout_prob);
  os << "\nseed=" << r.seed << '\n';
  return os.str();
}

uint64_t recipe_hash(const SceneRecipe& r) { return fnv1a64(recipe_canonical(r)); }

void save_shard(const std::string& dir, const SceneRecipe& recipe,
                const std::vector<Sample>& samples) {
  fs::create_directories(dir);
  nlohmann::json manifest;
  manifest["format"] = "sagate-shard-v1";
  char hash[32];
  std::snprintf(hash, sizeof(hash), "0x%016llx",
                static_cast<unsigned long long>(recipe_hash(recipe)));
  manifest["recipe_hash"] = hash;
  manifest["count"] = samples.size();
  nlohmann::json list = nlohmann::json::array();
  for (size_t i = 0; i < samples.size(); ++i) {
    const Sample& s = samples[i];
    char id[16];
    std::snprintf(id, sizeof(id), "%04zu", i);
    const std::string rgb_f = std::string(id) + "_rgb.stns";
    const std::string hha_f = std::string(id) + "_hha.stns";
    const std::string depth_f = std::string(id) + "_depth.pgm";
    const std::string labels_f = std::string(id) + "_labels.pgm";
    save_stns(dir + "/" + rgb_f, s.rgb);
    save_stns(dir + "/" + hha_f, s.hha);
    depth_to_pgm16(dir + "/" + depth_f, s.depth);
    Pgm8 lab;
    lab.width = s.labels.w;
    lab.height = s.labels.h;
    lab.pixels.resize(s.labels.v.size());
    for (size_t j = 0; j < lab.pixels.size(); ++j)
      lab.pixels[j] = static_cast<uint8_t>(s.labels.v[j]);
    write_pgm8(dir + "/" + labels_f, lab);
    nlohmann::json e;
    e["id"] = i;
    e["rgb"] = rgb_f;
    e["hha"] = hha_f;
    e["depth"] = depth_f;
    e["labels"] = labels_f;
    e["fx"] = s.depth.fx;
    e["fy"] = s.depth.fy;
    e["cx"] = s.depth.cx;
    e["cy"] = s.depth.cy;
    e["gravity"] = {s.depth.gravity[0], s.depth.gravity[1], s.depth.gravity[2]};
    list.push_back(e);
  }
  manifest["samples"] = list;
  std::ofstream f(dir + "/manifest.json", std::ios::binary);
  if (!f) throw IoError("cannot write manifest in " + dir);
  f << manifest.dump(2) << '\n';
}

std::vector<Sample> load_shard(const std::string& dir) {
  std::ifstream f(dir + "/manifest.json", std::ios::binary);
  if (!f) throw IoError("missing manifest.json in " + dir);
  nlohmann::json manifest;
  f >> manifest;
  std::vector<Sample> out;
  for (const auto& e : manifest.at("samples")) {
    Sample s;
    s.rgb = load_stns<float>(dir + "/" + e.at("rgb").get<std::string>());
    s.hha = load_stns<float>(dir + "/" + e.at("hha").get<std::string>());
    const auto g = e.at("gravity");
    s.depth = depth_from_pgm16(dir + "/" + e.at("depth").get<std::string>(), e.at("fx"),
                               e.at("fy"), e.at("cx"), e.at("cy"),
                               {g.at(0).get<float>(), g.at(1).get<float>(), g.at(2).get<float>()});
    Pgm8 lab = read_pgm8(dir + "/" + e.at("labels").get<std::string>());
    s.labels.n = 1;
    s.labels.h = lab.height;
    s.labels.w = lab.width;
    s.labels.v.resize(lab.pixels.size());
    for (size_t j = 0; j < lab.pixels.size(); ++j) s.labels.v[j] = lab.pixels[j];
    out.push_back(std::move(s));
  }
  return out;
}

}  // namespace sagate
