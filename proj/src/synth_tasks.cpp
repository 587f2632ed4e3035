// Copyright (c) the mtac project authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//      http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include "mtac/synth_tasks.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>

namespace mtac {

// ---------------------------------------------------------------------------
// TaskSpec plumbing
// ---------------------------------------------------------------------------

LossKind loss_kind_from_string(const std::string& s) {
  if (s == "cross_entropy") return LossKind::kCrossEntropy;
  if (s == "l1_depth") return LossKind::kL1Depth;
  if (s == "cosine_normals") return LossKind::kCosineNormals;
  if (s == "binary_ce") return LossKind::kBinaryCe;
  throw ConfigError("unknown loss kind: " + s);
}

MetricKind metric_kind_from_string(const std::string& s) {
  if (s == "miou") return MetricKind::kMiou;
  if (s == "rmse") return MetricKind::kRmse;
  if (s == "angular_error") return MetricKind::kAngularError;
  if (s == "miou_binary") return MetricKind::kMiouBinary;
  throw ConfigError("unknown metric kind: " + s);
}

std::string to_string(LossKind k) {
  switch (k) {
    case LossKind::kCrossEntropy: return "cross_entropy";
    case LossKind::kL1Depth: return "l1_depth";
    case LossKind::kCosineNormals: return "cosine_normals";
    case LossKind::kBinaryCe: return "binary_ce";
  }
  return "?";
}

std::string to_string(MetricKind k) {
  switch (k) {
    case MetricKind::kMiou: return "miou";
    case MetricKind::kRmse: return "rmse";
    case MetricKind::kAngularError: return "angular_error";
    case MetricKind::kMiouBinary: return "miou_binary";
  }
  return "?";
}

std::vector<TaskSpec> default_task_roster(int num_classes) {
  return {
      {"segmentation", num_classes, LossKind::kCrossEntropy, MetricKind::kMiou, 1.0},
      {"saliency", 1, LossKind::kBinaryCe, MetricKind::kMiouBinary, 1.0},
      {"depth", 1, LossKind::kL1Depth, MetricKind::kRmse, 1.0},
      {"normals", 3, LossKind::kCosineNormals, MetricKind::kAngularError, 1.0},
  };
}

const TaskSpec& find_task(const std::vector<TaskSpec>& tasks, const std::string& name) {
  for (const auto& t : tasks)
    if (t.name == name) return t;
  throw LookupError("unknown task name: " + name);
}

// ---------------------------------------------------------------------------
// Scene generation
// ---------------------------------------------------------------------------

namespace {

struct Shape {
  int type = 1;  // 1 disk(spherical cap), 2 rectangle, 3 triangle, 4 diamond
  double cx, cy, r;
  double zc;
  double sx = 0, sy = 0;   // plane slopes (depth units per pixel)
  double bulge = 0;        // spherical cap height
  double rx = 0, ry = 0;   // rectangle / diamond half extents
  double vx[3], vy[3];     // triangle vertices
  double col[3];
  double stripe_fx, stripe_fy, stripe_phase;

  bool inside(double x, double y) const {
    double dx = x - cx, dy = y - cy;
    switch (type) {
      case 1: return dx * dx + dy * dy <= r * r;
      case 2: return std::abs(dx) <= rx && std::abs(dy) <= ry;
      case 3: {
        auto side = [&](int i, int j) {
          return (vx[j] - vx[i]) * (y - vy[i]) - (vy[j] - vy[i]) * (x - vx[i]);
        };
        double s0 = side(0, 1), s1 = side(1, 2), s2 = side(2, 0);
        return (s0 >= 0 && s1 >= 0 && s2 >= 0) || (s0 <= 0 && s1 <= 0 && s2 <= 0);
      }
      case 4: return std::abs(dx) / rx + std::abs(dy) / ry <= 1.0;
    }
    return false;
  }

  double depth_at(double x, double y) const {
    double dx = x - cx, dy = y - cy;
    if (type == 1) {
      double q = std::max(0.0, 1.0 - (dx * dx + dy * dy) / (r * r));
      return zc - bulge * std::sqrt(q);
    }
    return zc + sx * dx + sy * dy;
  }

  // Analytic depth gradient in pixel units.
  void depth_grad(double x, double y, double* gx, double* gy) const {
    if (type == 1) {
      double dx = x - cx, dy = y - cy;
      double q = std::max(1e-6, 1.0 - (dx * dx + dy * dy) / (r * r));
      double f = bulge / (r * r * std::sqrt(q));
      *gx = f * dx;
      *gy = f * dy;
      return;
    }
    *gx = sx;
    *gy = sy;
  }
};

void unit_normal_from_grad(double gx, double gy, float* n) {
  double inv = 1.0 / std::sqrt(gx * gx + gy * gy + 1.0);
  n[0] = static_cast<float>(-gx * inv);
  n[1] = static_cast<float>(-gy * inv);
  n[2] = static_cast<float>(inv);
}

double urand(std::mt19937_64& rng, double lo, double hi) {
  std::uniform_real_distribution<double> d(lo, hi);
  return d(rng);
}

}  // namespace

Scene generate_scene(std::uint64_t seed, int h, int w, int num_shapes,
                     int num_classes) {
  if (h <= 0 || w <= 0 || h % 8 != 0 || w % 8 != 0)
    throw ShapeError("scene dimensions must be positive multiples of 8, got " +
                     std::to_string(h) + "x" + std::to_string(w));
  if (num_classes < 2)
    throw ConfigError("num_classes must be >= 2, got " + std::to_string(num_classes));
  if (num_shapes < 0) throw ConfigError("num_shapes must be >= 0");

  std::mt19937_64 rng(seed);
  Scene s;
  s.image = Tensor<float>({h, w, 3});
  s.seg = Tensor<int>({h, w}, 0);
  s.sal = Tensor<int>({h, w}, 0);
  s.depth = Tensor<float>({h, w});
  s.normals = Tensor<float>({h, w, 3});

  // Background: tilted plane with a two-color gradient.
  double z0 = urand(rng, 3.0, 3.6);
  double span = static_cast<double>(std::max(h, w));
  double bg_gx = urand(rng, -0.6, 0.6) / span;
  double bg_gy = urand(rng, -0.6, 0.6) / span;
  double col_a[3], col_b[3];
  for (double& v : col_a) v = urand(rng, 0.25, 0.65);
  for (double& v : col_b) v = urand(rng, 0.25, 0.65);
  double bg_dir = urand(rng, 0.0, 2.0 * M_PI);
  double bg_freq = urand(rng, 0.05, 0.12);
  double bg_phase = urand(rng, 0.0, 2.0 * M_PI);

  static const double kPalette[4][3] = {
      {0.85, 0.32, 0.25}, {0.25, 0.55, 0.85}, {0.88, 0.74, 0.22}, {0.45, 0.80, 0.40}};
  int type_count = std::min(4, num_classes - 1);

  std::vector<Shape> shapes(static_cast<std::size_t>(num_shapes));
  for (auto& sh : shapes) {
    sh.type = 1 + static_cast<int>(rng() % static_cast<std::uint64_t>(type_count));
    sh.cx = urand(rng, 0.16, 0.84) * w;
    sh.cy = urand(rng, 0.16, 0.84) * h;
    sh.r = urand(rng, 0.10, 0.20) * std::min(h, w);
    sh.zc = urand(rng, 1.2, 2.6);
    double max_slope = 0.35 / sh.r;
    sh.sx = urand(rng, -max_slope, max_slope);
    sh.sy = urand(rng, -max_slope, max_slope);
    sh.bulge = urand(rng, 0.25, 0.55);
    sh.rx = urand(rng, 0.7, 1.2) * sh.r;
    sh.ry = urand(rng, 0.5, 1.0) * sh.r;
    double theta = urand(rng, 0.0, 2.0 * M_PI);
    for (int i = 0; i < 3; ++i) {
      double a = theta + 2.0 * M_PI * i / 3.0;
      sh.vx[i] = sh.cx + 1.25 * sh.r * std::cos(a);
      sh.vy[i] = sh.cy + 1.25 * sh.r * std::sin(a);
    }
    for (int i = 0; i < 3; ++i)
      sh.col[i] = std::clamp(kPalette[sh.type - 1][i] + urand(rng, -0.08, 0.08), 0.05, 0.95);
    double wavelength = urand(rng, 4.0, 10.0);
    double dir = urand(rng, 0.0, 2.0 * M_PI);
    sh.stripe_fx = 2.0 * M_PI * std::cos(dir) / wavelength;
    sh.stripe_fy = 2.0 * M_PI * std::sin(dir) / wavelength;
    sh.stripe_phase = urand(rng, 0.0, 2.0 * M_PI);
  }

  const double light[3] = {0.35 / 1.0194, -0.45 / 1.0194, 0.82 / 1.0194};
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      double px = x + 0.5, py = y + 0.5;
      int cls = 0;
      const Shape* hit = nullptr;
      double z = z0 + bg_gx * (px - 0.5 * w) + bg_gy * (py - 0.5 * h);
      double gx = bg_gx, gy = bg_gy;
      for (const auto& sh : shapes) {
        if (!sh.inside(px, py)) continue;
        double zs = sh.depth_at(px, py);
        if (zs < z) {
          z = zs;
          hit = &sh;
          cls = sh.type;
          sh.depth_grad(px, py, &gx, &gy);
        }
      }
      s.seg.at(y, x) = cls;
      s.sal.at(y, x) = cls != 0 ? 1 : 0;
      s.depth.at(y, x) = static_cast<float>(z);
      unit_normal_from_grad(gx, gy, &s.normals.at(y, x, 0));

      double ndl = std::max(0.0, s.normals.at(y, x, 0) * light[0] +
                                     s.normals.at(y, x, 1) * light[1] +
                                     s.normals.at(y, x, 2) * light[2]);
      double shade = 0.55 + 0.45 * ndl;
      double rgb[3];
      if (hit) {
        double stripe = 0.5 + 0.5 * std::sin(hit->stripe_fx * px + hit->stripe_fy * py +
                                             hit->stripe_phase);
        for (int cch = 0; cch < 3; ++cch)
          rgb[cch] = hit->col[cch] * shade * (0.78 + 0.30 * stripe);
      } else {
        double t = 0.5 + 0.5 * std::sin(bg_dir) * (py / h - 0.5) +
                   0.5 * std::cos(bg_dir) * (px / w - 0.5);
        t = std::clamp(t, 0.0, 1.0);
        double stripe =
            0.5 + 0.5 * std::sin(bg_freq * (px * std::cos(bg_dir) + py * std::sin(bg_dir)) +
                                 bg_phase);
        for (int cch = 0; cch < 3; ++cch)
          rgb[cch] = (col_a[cch] * (1 - t) + col_b[cch] * t) * shade * (0.92 + 0.08 * stripe);
      }
      for (int cch = 0; cch < 3; ++cch)
        s.image.at(y, x, cch) = static_cast<float>(std::clamp(rgb[cch], 0.02, 0.98));
    }
  }
  return s;
}

// ---------------------------------------------------------------------------
// Dataset assembly and cache
// ---------------------------------------------------------------------------

void DatasetConfig::validate() const {
  if (height % 8 != 0 || width % 8 != 0 || height <= 0 || width <= 0)
    throw ConfigError("dataset dims must be positive multiples of 8");
  if (train_scenes <= 0 || val_scenes <= 0)
    throw ConfigError("dataset needs positive train/val scene counts");
  if (max_shapes < 0) throw ConfigError("max_shapes must be >= 0");
  if (num_classes < 2) throw ConfigError("num_classes must be >= 2");
}

namespace {

constexpr std::uint32_t kSceneVersion = 1;

template <class V>
void put(std::ostream& os, const V& v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(V));
}

template <class V>
bool get(std::istream& is, V* v) {
  is.read(reinterpret_cast<char*>(v), sizeof(V));
  return static_cast<bool>(is);
}

template <class V>
void put_vec(std::ostream& os, const std::vector<V>& v) {
  os.write(reinterpret_cast<const char*>(v.data()),
           static_cast<std::streamsize>(v.size() * sizeof(V)));
}

template <class V>
bool get_vec(std::istream& is, std::vector<V>& v) {
  is.read(reinterpret_cast<char*>(v.data()),
          static_cast<std::streamsize>(v.size() * sizeof(V)));
  return static_cast<bool>(is);
}

Scene obtain_scene(std::uint64_t seed, int h, int w, int shapes, int classes,
                   const std::string& cache_dir) {
  std::string path;
  if (!cache_dir.empty()) {
    char name[128];
    std::snprintf(name, sizeof(name), "sc_%016llx_%dx%d_%d_%d.mtsc",
                  static_cast<unsigned long long>(seed), h, w, shapes, classes);
    path = cache_dir + "/" + name;
    Scene cached;
    if (load_scene(path, &cached)) return cached;
  }
  Scene s = generate_scene(seed, h, w, shapes, classes);
  if (!path.empty()) save_scene(s, path);
  return s;
}

}  // namespace

void save_scene(const Scene& s, const std::string& path) {
  std::filesystem::create_directories(std::filesystem::path(path).parent_path());
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot write scene cache file: " + path);
  os.write("MTSC", 4);
  put(os, kSceneVersion);
  put(os, static_cast<std::int32_t>(s.image.dim(0)));
  put(os, static_cast<std::int32_t>(s.image.dim(1)));
  put_vec(os, s.image.v);
  put_vec(os, s.seg.v);
  put_vec(os, s.sal.v);
  put_vec(os, s.depth.v);
  put_vec(os, s.normals.v);
}

bool load_scene(const std::string& path, Scene* out) {
  std::ifstream is(path, std::ios::binary);
  if (!is) return false;
  char magic[4];
  is.read(magic, 4);
  if (!is || std::string(magic, 4) != "MTSC") return false;
  std::uint32_t ver;
  if (!get(is, &ver) || ver != kSceneVersion) return false;
  std::int32_t h, w;
  if (!get(is, &h) || !get(is, &w) || h <= 0 || w <= 0) return false;
  Scene s;
  s.image = Tensor<float>({h, w, 3});
  s.seg = Tensor<int>({h, w});
  s.sal = Tensor<int>({h, w});
  s.depth = Tensor<float>({h, w});
  s.normals = Tensor<float>({h, w, 3});
  if (!get_vec(is, s.image.v) || !get_vec(is, s.seg.v) || !get_vec(is, s.sal.v) ||
      !get_vec(is, s.depth.v) || !get_vec(is, s.normals.v))
    return false;
  *out = std::move(s);
  return true;
}

Dataset make_dataset(const DatasetConfig& cfg) {
  cfg.validate();
  Dataset ds;
  auto build = [&](const char* split, int count, std::vector<Scene>& dst) {
    std::mt19937_64 shape_rng(derive_seed(cfg.split_seed, std::string(split) + ".shapes"));
    dst.reserve(static_cast<std::size_t>(count));
    for (int i = 0; i < count; ++i) {
      int shapes = cfg.max_shapes == 0
                       ? 0
                       : 1 + static_cast<int>(shape_rng() %
                                              static_cast<std::uint64_t>(cfg.max_shapes));
      std::uint64_t seed = derive_seed(cfg.split_seed, split, static_cast<std::uint64_t>(i));
      dst.push_back(obtain_scene(seed, cfg.height, cfg.width, shapes, cfg.num_classes,
                                 cfg.cache_dir));
    }
  };
  build("train", cfg.train_scenes, ds.train);
  build("val", cfg.val_scenes, ds.val);
  return ds;
}

// ---------------------------------------------------------------------------
// Plain losses and metrics
// ---------------------------------------------------------------------------

namespace {

void check_pred_shape(const Tensor<double>& pred, const Scene& sc, int channels,
                      const TaskSpec& spec) {
  if (pred.rank() != 3 || pred.dim(0) != sc.seg.dim(0) || pred.dim(1) != sc.seg.dim(1) ||
      pred.dim(2) != channels)
    throw ShapeError("prediction for task '" + spec.name + "' has shape " +
                     pred.shape_str() + ", expected (" + std::to_string(sc.seg.dim(0)) +
                     ", " + std::to_string(sc.seg.dim(1)) + ", " +
                     std::to_string(channels) + ")");
}

double miou_from_assignments(const std::vector<int>& pred, const Tensor<int>& label,
                             int num_classes) {
  std::vector<std::int64_t> inter(num_classes, 0), pred_n(num_classes, 0),
      label_n(num_classes, 0);
  for (std::int64_t i = 0; i < label.size(); ++i) {
    int l = label.v[i];
    int p = pred[static_cast<std::size_t>(i)];
    ++label_n[l];
    ++pred_n[p];
    if (l == p) ++inter[l];
  }
  double acc = 0;
  int present = 0;
  for (int c = 0; c < num_classes; ++c) {
    if (label_n[c] == 0) continue;  // average over classes present in the label
    std::int64_t uni = label_n[c] + pred_n[c] - inter[c];
    acc += uni > 0 ? static_cast<double>(inter[c]) / static_cast<double>(uni) : 0.0;
    ++present;
  }
  return present > 0 ? acc / present : 0.0;
}

}  // namespace

double task_loss(const Tensor<double>& pred, const Scene& sc, const TaskSpec& spec) {
  std::int64_t npix = static_cast<std::int64_t>(sc.seg.dim(0)) * sc.seg.dim(1);
  switch (spec.loss_kind) {
    case LossKind::kCrossEntropy: {
      check_pred_shape(pred, sc, spec.out_channels, spec);
      int k = spec.out_channels;
      double acc = 0;
      for (std::int64_t p = 0; p < npix; ++p) {
        const double* row = pred.data() + p * k;
        double m = row[0];
        for (int j = 1; j < k; ++j) m = std::max(m, row[j]);
        double z = 0;
        for (int j = 0; j < k; ++j) z += std::exp(row[j] - m);
        acc += m + std::log(z) - row[sc.seg.v[p]];
      }
      return acc / static_cast<double>(npix);
    }
    case LossKind::kBinaryCe: {
      check_pred_shape(pred, sc, 1, spec);
      double acc = 0;
      for (std::int64_t p = 0; p < npix; ++p) {
        double x = pred.v[p];
        double y = sc.sal.v[p];
        acc += std::max(x, 0.0) - x * y + std::log1p(std::exp(-std::abs(x)));
      }
      return acc / static_cast<double>(npix);
    }
    case LossKind::kL1Depth: {
      check_pred_shape(pred, sc, 1, spec);
      double acc = 0;
      for (std::int64_t p = 0; p < npix; ++p)
        acc += std::abs(pred.v[p] - static_cast<double>(sc.depth.v[p]));
      return acc / static_cast<double>(npix);
    }
    case LossKind::kCosineNormals: {
      check_pred_shape(pred, sc, 3, spec);
      double acc = 0;
      for (std::int64_t p = 0; p < npix; ++p) {
        const double* v = pred.data() + p * 3;
        double n = std::sqrt(v[0] * v[0] + v[1] * v[1] + v[2] * v[2] + 1e-12);
        double dot = 0;
        for (int j = 0; j < 3; ++j) dot += v[j] / n * sc.normals.v[p * 3 + j];
        acc += 1.0 - dot;
      }
      return acc / static_cast<double>(npix);
    }
  }
  throw ConfigError("unhandled loss kind");
}

double task_metric(const Tensor<double>& pred, const Scene& sc, const TaskSpec& spec) {
  std::int64_t npix = static_cast<std::int64_t>(sc.seg.dim(0)) * sc.seg.dim(1);
  switch (spec.metric_kind) {
    case MetricKind::kMiou: {
      check_pred_shape(pred, sc, spec.out_channels, spec);
      int k = spec.out_channels;
      std::vector<int> assign(static_cast<std::size_t>(npix));
      for (std::int64_t p = 0; p < npix; ++p) {
        const double* row = pred.data() + p * k;
        int best = 0;
        for (int j = 1; j < k; ++j)
          if (row[j] > row[best]) best = j;
        assign[static_cast<std::size_t>(p)] = best;
      }
      return miou_from_assignments(assign, sc.seg, k);
    }
    case MetricKind::kMiouBinary: {
      check_pred_shape(pred, sc, 1, spec);
      std::vector<int> assign(static_cast<std::size_t>(npix));
      for (std::int64_t p = 0; p < npix; ++p)
        assign[static_cast<std::size_t>(p)] = pred.v[p] > 0.0 ? 1 : 0;
      return miou_from_assignments(assign, sc.sal, 2);
    }
    case MetricKind::kRmse: {
      check_pred_shape(pred, sc, 1, spec);
      double acc = 0;
      for (std::int64_t p = 0; p < npix; ++p) {
        double d = pred.v[p] - static_cast<double>(sc.depth.v[p]);
        acc += d * d;
      }
      return std::sqrt(acc / static_cast<double>(npix));
    }
    case MetricKind::kAngularError: {
      check_pred_shape(pred, sc, 3, spec);
      double acc = 0;
      for (std::int64_t p = 0; p < npix; ++p) {
        const double* v = pred.data() + p * 3;
        double n = std::sqrt(v[0] * v[0] + v[1] * v[1] + v[2] * v[2] + 1e-12);
        double dot = 0;
        for (int j = 0; j < 3; ++j) dot += v[j] / n * sc.normals.v[p * 3 + j];
        acc += std::acos(std::clamp(dot, -1.0, 1.0)) * 180.0 / M_PI;
      }
      return acc / static_cast<double>(npix);
    }
  }
  throw ConfigError("unhandled metric kind");
}

}  // namespace mtac
