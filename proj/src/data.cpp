#include "protoseg/data.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <bit>
#include <cstring>
#include <cmath>
#include <fstream>
#include <json.hpp>
#include <numbers>
#include <sstream>

namespace protoseg {

namespace fs = std::filesystem;
using json = nlohmann::json;

const ImageSample& Dataset::find(const std::string& id) const {
  for (const auto& s : samples) {
    if (s.sample_id == id) return s;
  }
  throw InsufficientDataError("unknown sample id '" + id + "'");
}

std::vector<std::size_t> Dataset::indices_with_class(int class_id) const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    if (samples[i].masks.contains(class_id)) out.push_back(i);
  }
  return out;
}

std::array<double, 2> AffineTransform::apply(double x, double y) const {
  return {m[0] * x + m[1] * y + m[2], m[3] * x + m[4] * y + m[5]};
}

AffineTransform AffineTransform::inverse() const {
  const double det = determinant();
  const double a = m[4] / det, b = -m[1] / det, c = -m[3] / det, d = m[0] / det;
  return {{a, b, -(a * m[2] + b * m[5]), c, d, -(c * m[2] + d * m[5])}};
}

// ---------------------------------------------------------------------------
// Synthetic corpus

namespace {

constexpr int kMaxRetries = 100;
constexpr int kMaxShrinks = 8;
constexpr double kShrinkFactor = 0.85;
constexpr double kBackgroundLevel = 0.1;
constexpr double kBackgroundRamp = 0.1;
constexpr double kBackgroundNoise = 0.05;
constexpr double kTexture = 0.1;

struct ShapeDraw {
  int family;
  double cx, cy, angle;
  double a, b;        // semi-axes / half-sizes / ring radii (outer, inner)
  double radius;      // bounding radius
  std::array<double, 3> tri_r;  // triangle vertex radii
};

ShapeDraw draw_shape(int family, double scale, int size, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  const double s = scale * size / 64.0;
  ShapeDraw d{};
  d.family = family;
  d.angle = unit(rng) * std::numbers::pi;
  switch (family) {
    case 0:  // ellipse
      d.a = (7.0 + 6.0 * unit(rng)) * s;
      d.b = (7.0 + 6.0 * unit(rng)) * s;
      d.radius = std::max(d.a, d.b);
      break;
    case 1:  // rectangle
      d.a = (6.0 + 6.0 * unit(rng)) * s;
      d.b = (6.0 + 6.0 * unit(rng)) * s;
      d.radius = std::hypot(d.a, d.b);
      break;
    case 2:  // ring
      d.a = (11.0 + 5.0 * unit(rng)) * s;
      d.b = d.a * (0.35 + 0.15 * unit(rng));
      d.radius = d.a;
      break;
    default:  // triangle
      for (auto& r : d.tri_r) r = (11.0 + 5.0 * unit(rng)) * s;
      d.radius = *std::max_element(d.tri_r.begin(), d.tri_r.end());
      d.angle *= 2.0;
      break;
  }
  const double margin = d.radius + 1.0;
  const double span = std::max(0.0, size - 2.0 * margin);
  d.cx = margin + unit(rng) * span;
  d.cy = margin + unit(rng) * span;
  return d;
}

bool inside(const ShapeDraw& d, double x, double y) {
  const double dx = x - d.cx, dy = y - d.cy;
  const double cs = std::cos(d.angle), sn = std::sin(d.angle);
  const double u = cs * dx + sn * dy;
  const double v = -sn * dx + cs * dy;
  switch (d.family) {
    case 0:
      return (u * u) / (d.a * d.a) + (v * v) / (d.b * d.b) <= 1.0;
    case 1:
      return std::abs(u) <= d.a && std::abs(v) <= d.b;
    case 2: {
      const double r2 = dx * dx + dy * dy;
      return r2 <= d.a * d.a && r2 >= d.b * d.b;
    }
    default: {
      std::array<std::array<double, 2>, 3> p{};
      for (int k = 0; k < 3; ++k) {
        const double t = d.angle + 2.0 * std::numbers::pi * k / 3.0;
        p[static_cast<std::size_t>(k)] = {d.cx + d.tri_r[static_cast<std::size_t>(k)] * std::cos(t),
                                          d.cy + d.tri_r[static_cast<std::size_t>(k)] * std::sin(t)};
      }
      auto edge = [&](int i, int j) {
        const auto& a = p[static_cast<std::size_t>(i)];
        const auto& b = p[static_cast<std::size_t>(j)];
        return (b[0] - a[0]) * (y - a[1]) - (b[1] - a[1]) * (x - a[0]);
      };
      const double e0 = edge(0, 1), e1 = edge(1, 2), e2 = edge(2, 0);
      return (e0 >= 0 && e1 >= 0 && e2 >= 0) || (e0 <= 0 && e1 <= 0 && e2 <= 0);
    }
  }
}

Mask rasterize(const ShapeDraw& d, int size) {
  Mask m({size, size, 1});
  for (int r = 0; r < size; ++r)
    for (int c = 0; c < size; ++c) m.at(r, c, 0) = inside(d, c + 0.5, r + 0.5) ? 1.0f : 0.0f;
  return m;
}

// True when `m` touches `occupied` or any of its 8-neighbours.
bool collides(const Mask& m, const Mask& occupied, int size) {
  for (int r = 0; r < size; ++r) {
    for (int c = 0; c < size; ++c) {
      if (m.at(r, c, 0) == 0.0f) continue;
      for (int dr = -1; dr <= 1; ++dr) {
        for (int dc = -1; dc <= 1; ++dc) {
          const int rr = r + dr, cc = c + dc;
          if (rr >= 0 && rr < size && cc >= 0 && cc < size && occupied.at(rr, cc, 0) != 0.0f) return true;
        }
      }
    }
  }
  return false;
}

std::string sample_name(std::size_t i) {
  std::ostringstream os;
  os << 's';
  os.width(4);
  os.fill('0');
  os << i;
  return os.str();
}

ImageSample generate_one(const GeneratorConfig& cfg, std::size_t index) {
  std::seed_seq seq{static_cast<std::uint32_t>(cfg.seed), static_cast<std::uint32_t>(cfg.seed >> 32),
                    static_cast<std::uint32_t>(index)};
  std::mt19937_64 rng(seq);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::normal_distribution<double> noise(0.0, kBackgroundNoise);
  const int size = cfg.size;

  ImageSample sample;
  sample.sample_id = sample_name(index);
  Image img({size, size, 1});
  const double angle = unit(rng) * 2.0 * std::numbers::pi;
  const double gx = std::cos(angle), gy = std::sin(angle);
  for (int r = 0; r < size; ++r) {
    for (int c = 0; c < size; ++c) {
      const double ramp = 0.5 + 0.5 * (gx * (c - size / 2.0) + gy * (r - size / 2.0)) / (size / 2.0);
      img.at(r, c, 0) = static_cast<float>(kBackgroundLevel + kBackgroundRamp * ramp + noise(rng));
    }
  }

  Mask occupied({size, size, 1});
  for (int cls = 0; cls < cfg.num_classes; ++cls) {
    const int family = cls % 4;
    double scale = 1.0;
    std::optional<Mask> placed;
    for (int shrink = 0; shrink <= kMaxShrinks && !placed; ++shrink) {
      for (int attempt = 0; attempt < kMaxRetries; ++attempt) {
        ShapeDraw d = draw_shape(family, scale, size, rng);
        Mask m = rasterize(d, size);
        const bool nonempty = std::any_of(m.values().begin(), m.values().end(), [](float v) { return v != 0; });
        if (nonempty && !collides(m, occupied, size)) {
          placed = std::move(m);
          break;
        }
      }
      scale *= kShrinkFactor;
    }
    if (!placed) {
      throw PlacementError("could not place class " + std::to_string(cls) + " in sample " + sample.sample_id);
    }
    const double mean = class_intensity(cls, cfg.num_classes);
    for (std::size_t p = 0; p < placed->size(); ++p) {
      if ((*placed)[p] == 0.0f) continue;
      occupied[p] = 1.0f;
      img[p] = static_cast<float>(mean + kTexture * (2.0 * unit(rng) - 1.0));
    }
    sample.masks.emplace(cls, std::move(*placed));
  }
  for (auto& v : img.values()) v = std::clamp(v, 0.0f, 1.0f);
  sample.image = std::move(img);
  return sample;
}

}  // namespace

float class_intensity(int class_id, int num_classes) {
  if (num_classes < 2) return 0.6f;
  return static_cast<float>(0.3 + 0.6 * class_id / (num_classes - 1));
}

Dataset generate_synthetic(const GeneratorConfig& config) {
  if (config.num_classes < 2) throw ShapeError("generate_synthetic: need >= 2 classes");
  if (config.size < 32) throw ShapeError("generate_synthetic: size must be >= 32");
  if (config.num_images < 0) throw ShapeError("generate_synthetic: negative image count");
  Dataset ds;
  ds.height = ds.width = config.size;
  ds.num_classes = config.num_classes;
  ds.samples.reserve(static_cast<std::size_t>(config.num_images));
  for (int i = 0; i < config.num_images; ++i) ds.samples.push_back(generate_one(config, static_cast<std::size_t>(i)));
  return ds;
}

// ---------------------------------------------------------------------------
// On-disk format

namespace {

std::uint32_t to_little(std::uint32_t v) {
  if constexpr (std::endian::native == std::endian::big) {
    return ((v & 0xFFu) << 24) | ((v & 0xFF00u) << 8) | ((v >> 8) & 0xFF00u) | (v >> 24);
  }
  return v;
}

void write_bytes(const fs::path& path, const char* data, std::size_t n) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  out.write(data, static_cast<std::streamsize>(n));
  if (!out) throw IoError("failed writing " + path.string());
}

std::vector<char> read_bytes(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("missing or unreadable file " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_floats(const fs::path& path, const Tensor<float>& t) {
  std::vector<std::uint32_t> words(t.size());
  for (std::size_t i = 0; i < t.size(); ++i) words[i] = to_little(std::bit_cast<std::uint32_t>(t[i]));
  write_bytes(path, reinterpret_cast<const char*>(words.data()), words.size() * 4);
}

}  // namespace

void write_pgm(const Tensor<float>& map, const fs::path& path) {
  expect_rank(map.shape(), 3, "write_pgm");
  const int h = map.dim(0), w = map.dim(1);
  std::string header = "P5\n" + std::to_string(w) + " " + std::to_string(h) + "\n255\n";
  std::vector<char> buf(header.begin(), header.end());
  const int c = map.dim(2);
  for (int r = 0; r < h; ++r) {
    for (int col = 0; col < w; ++col) {
      const float v = std::clamp(map.at(r, col, c - 1), 0.0f, 1.0f);
      buf.push_back(static_cast<char>(static_cast<unsigned char>(std::lround(v * 255.0f))));
    }
  }
  write_bytes(path, buf.data(), buf.size());
}

void save_dataset(const Dataset& dataset, const fs::path& dir, bool pgm) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create " + dir.string() + ": " + ec.message());
  json meta;
  meta["version"] = 1;
  meta["height"] = dataset.height;
  meta["width"] = dataset.width;
  meta["num_classes"] = dataset.num_classes;
  meta["samples"] = json::array();
  for (const auto& s : dataset.samples) {
    json entry;
    entry["id"] = s.sample_id;
    entry["classes"] = json::array();
    for (const auto& [cls, mask] : s.masks) entry["classes"].push_back(cls);
    meta["samples"].push_back(entry);

    write_floats(dir / (s.sample_id + ".img.raw"), s.image);
    for (const auto& [cls, mask] : s.masks) {
      std::vector<char> bytes(mask.size());
      for (std::size_t i = 0; i < mask.size(); ++i) bytes[i] = mask[i] != 0.0f ? 1 : 0;
      write_bytes(dir / (s.sample_id + ".cls" + std::to_string(cls) + ".mask.raw"), bytes.data(), bytes.size());
    }
    if (pgm) write_pgm(s.image, dir / (s.sample_id + ".pgm"));
  }
  const std::string text = meta.dump(2) + "\n";
  write_bytes(dir / "meta.json", text.data(), text.size());
}

Dataset load_dataset(const fs::path& dir) {
  const fs::path meta_path = dir / "meta.json";
  if (!fs::exists(meta_path)) throw IoError("dataset directory " + dir.string() + " is missing meta.json");
  const auto meta_bytes = read_bytes(meta_path);
  json meta;
  try {
    meta = json::parse(meta_bytes.begin(), meta_bytes.end());
  } catch (const json::exception& e) {
    throw FormatError("meta.json: " + std::string(e.what()));
  }
  Dataset ds;
  try {
    if (meta.at("version").get<int>() != 1) throw FormatError("meta.json: unsupported version");
    ds.height = meta.at("height").get<int>();
    ds.width = meta.at("width").get<int>();
    ds.num_classes = meta.at("num_classes").get<int>();
    if (ds.height <= 0 || ds.width <= 0) throw FormatError("meta.json: non-positive image size");
    const std::size_t pixels = static_cast<std::size_t>(ds.height) * static_cast<std::size_t>(ds.width);
    for (const auto& entry : meta.at("samples")) {
      ImageSample s;
      s.sample_id = entry.at("id").get<std::string>();
      const auto raw = read_bytes(dir / (s.sample_id + ".img.raw"));
      if (raw.size() != pixels * 4) {
        throw FormatError(s.sample_id + ".img.raw: " + std::to_string(raw.size()) + " bytes, expected " +
                          std::to_string(pixels * 4) + " for " + std::to_string(ds.height) + "x" +
                          std::to_string(ds.width));
      }
      Image img({ds.height, ds.width, 1});
      for (std::size_t i = 0; i < pixels; ++i) {
        std::uint32_t word;
        std::memcpy(&word, raw.data() + i * 4, 4);
        img[i] = std::bit_cast<float>(to_little(word));
      }
      s.image = std::move(img);
      for (const auto& cls_json : entry.at("classes")) {
        const int cls = cls_json.get<int>();
        const auto bytes = read_bytes(dir / (s.sample_id + ".cls" + std::to_string(cls) + ".mask.raw"));
        if (bytes.size() != pixels) {
          throw FormatError(s.sample_id + " class " + std::to_string(cls) + " mask has wrong byte count");
        }
        Mask m({ds.height, ds.width, 1});
        for (std::size_t i = 0; i < pixels; ++i) {
          if (bytes[i] != 0 && bytes[i] != 1) throw FormatError(s.sample_id + ": mask byte outside {0,1}");
          m[i] = static_cast<float>(bytes[i]);
        }
        s.masks.emplace(cls, std::move(m));
      }
      ds.samples.push_back(std::move(s));
    }
  } catch (const json::exception& e) {
    throw FormatError("meta.json: " + std::string(e.what()));
  }
  return ds;
}

// ---------------------------------------------------------------------------
// Episodes

std::vector<std::size_t> sample_support_indices(const Dataset& dataset, int class_id, int k,
                                                std::optional<std::size_t> exclude_index, std::mt19937_64& rng,
                                                const std::optional<std::string>& fixed_support_id) {
  if (k < 1) throw InsufficientDataError("support size K must be >= 1");
  std::vector<std::size_t> pool;
  for (std::size_t i : dataset.indices_with_class(class_id)) {
    if (!exclude_index || i != *exclude_index) pool.push_back(i);
  }
  std::vector<std::size_t> chosen;
  if (fixed_support_id) {
    auto it = std::find_if(pool.begin(), pool.end(),
                           [&](std::size_t i) { return dataset.samples[i].sample_id == *fixed_support_id; });
    if (it == pool.end()) {
      throw InsufficientDataError("fixed support '" + *fixed_support_id + "' is not an eligible sample of class " +
                                  std::to_string(class_id));
    }
    chosen.push_back(*it);
    pool.erase(it);
  }
  const std::size_t need = static_cast<std::size_t>(k) - chosen.size();
  if (pool.size() < need) {
    throw InsufficientDataError("class " + std::to_string(class_id) + " has too few samples for K=" +
                                std::to_string(k));
  }
  // Partial Fisher-Yates.
  for (std::size_t i = 0; i < need; ++i) {
    std::uniform_int_distribution<std::size_t> pick(i, pool.size() - 1);
    std::swap(pool[i], pool[pick(rng)]);
    chosen.push_back(pool[i]);
  }
  return chosen;
}

Episode make_episode(const Dataset& dataset, int class_id, std::size_t query_index,
                     const std::vector<std::size_t>& support_indices) {
  Episode ep;
  ep.class_id = class_id;
  const ImageSample& q = dataset.samples.at(query_index);
  ep.query_id = q.sample_id;
  ep.query_image = q.image;
  if (auto it = q.masks.find(class_id); it != q.masks.end()) ep.query_mask = it->second;
  for (std::size_t i : support_indices) {
    const ImageSample& s = dataset.samples.at(i);
    ep.support.push_back({s.sample_id, s.image, s.masks.at(class_id)});
  }
  return ep;
}

Episode sample_episode(const Dataset& dataset, int class_id, int k, std::mt19937_64& rng,
                       const std::optional<std::string>& fixed_support_id) {
  auto candidates = dataset.indices_with_class(class_id);
  if (candidates.size() < static_cast<std::size_t>(k) + 1) {
    throw InsufficientDataError("class " + std::to_string(class_id) + " has " + std::to_string(candidates.size()) +
                                " samples, need K+1=" + std::to_string(k + 1));
  }
  if (fixed_support_id) {
    std::erase_if(candidates, [&](std::size_t i) { return dataset.samples[i].sample_id == *fixed_support_id; });
  }
  std::uniform_int_distribution<std::size_t> pick(0, candidates.size() - 1);
  const std::size_t query = candidates[pick(rng)];
  return make_episode(dataset, class_id, query, sample_support_indices(dataset, class_id, k, query, rng, fixed_support_id));
}

// ---------------------------------------------------------------------------
// Alignment

namespace {

constexpr double kMinIntensity = 1e-6;
constexpr double kCovarianceRidge = 1e-6;
constexpr double kMinScale = 0.5;
constexpr double kMaxScale = 2.0;

struct Moments {
  Eigen::Vector2d mean;
  Eigen::Matrix2d cov;
};

Moments intensity_moments(const Image& img) {
  expect_rank(img.shape(), 3, "affine_align image");
  double mass = 0;
  Eigen::Vector2d first = Eigen::Vector2d::Zero();
  for (int r = 0; r < img.dim(0); ++r) {
    for (int c = 0; c < img.dim(1); ++c) {
      const double v = img.at(r, c, 0);
      mass += v;
      first += v * Eigen::Vector2d(c, r);
    }
  }
  if (mass < kMinIntensity) throw DegenerateError("affine_align: image has no intensity mass");
  Moments m;
  m.mean = first / mass;
  m.cov.setZero();
  for (int r = 0; r < img.dim(0); ++r) {
    for (int c = 0; c < img.dim(1); ++c) {
      const Eigen::Vector2d d = Eigen::Vector2d(c, r) - m.mean;
      m.cov += img.at(r, c, 0) * d * d.transpose();
    }
  }
  m.cov /= mass;
  m.cov += kCovarianceRidge * Eigen::Matrix2d::Identity();
  return m;
}

Eigen::Matrix2d sqrtm_spd(const Eigen::Matrix2d& a) {
  Eigen::SelfAdjointEigenSolver<Eigen::Matrix2d> eig(a);
  const Eigen::Vector2d ev = eig.eigenvalues().cwiseMax(0.0).cwiseSqrt();
  return eig.eigenvectors() * ev.asDiagonal() * eig.eigenvectors().transpose();
}

float sample_bilinear(const Image& img, double x, double y) {
  const int h = img.dim(0), w = img.dim(1);
  const int x0 = static_cast<int>(std::floor(x)), y0 = static_cast<int>(std::floor(y));
  const double fx = x - x0, fy = y - y0;
  auto px = [&](int r, int c) -> double { return (r < 0 || r >= h || c < 0 || c >= w) ? 0.0 : img.at(r, c, 0); };
  const double v = (1 - fy) * ((1 - fx) * px(y0, x0) + fx * px(y0, x0 + 1)) +
                   fy * ((1 - fx) * px(y0 + 1, x0) + fx * px(y0 + 1, x0 + 1));
  return static_cast<float>(v);
}

}  // namespace

AlignResult affine_align(const Image& support_image, const Mask& support_mask, const Image& query_image) {
  expect_shape(support_mask.shape(), support_image.shape(), "affine_align support mask");
  expect_shape(query_image.shape(), support_image.shape(), "affine_align query image");
  const Moments ms = intensity_moments(support_image);
  const Moments mq = intensity_moments(query_image);

  Eigen::Matrix2d linear = sqrtm_spd(mq.cov) * sqrtm_spd(ms.cov).inverse();
  Eigen::JacobiSVD<Eigen::Matrix2d> svd(linear, Eigen::ComputeFullU | Eigen::ComputeFullV);
  const Eigen::Vector2d sv = svd.singularValues().cwiseMax(kMinScale).cwiseMin(kMaxScale);
  linear = svd.matrixU() * sv.asDiagonal() * svd.matrixV().transpose();
  const Eigen::Vector2d t = mq.mean - linear * ms.mean;

  AlignResult out;
  out.transform.m = {linear(0, 0), linear(0, 1), t(0), linear(1, 0), linear(1, 1), t(1)};
  const AffineTransform inv = out.transform.inverse();
  const int h = support_image.dim(0), w = support_image.dim(1);
  out.image = Image({h, w, 1});
  out.mask = Mask({h, w, 1});
  bool any_source = false, any_aligned = false;
  for (int r = 0; r < h; ++r) {
    for (int c = 0; c < w; ++c) {
      const auto [sx, sy] = inv.apply(c, r);
      out.image.at(r, c, 0) = sample_bilinear(support_image, sx, sy);
      const int nx = static_cast<int>(std::lround(sx)), ny = static_cast<int>(std::lround(sy));
      const float mv = (nx >= 0 && nx < w && ny >= 0 && ny < h) ? support_mask.at(ny, nx, 0) : 0.0f;
      out.mask.at(r, c, 0) = mv;
      any_aligned = any_aligned || mv != 0.0f;
    }
  }
  for (float v : support_mask.values()) any_source = any_source || v != 0.0f;
  if (any_source && !any_aligned) {
    out.mask = support_mask;
    out.collapsed = true;
  }
  return out;
}

Mask initial_mask(const std::vector<Mask>& aligned_masks, InitMode mode) {
  if (aligned_masks.empty()) throw ShapeError("initial_mask: need K >= 1 masks");
  Mask out = aligned_masks.front();
  for (std::size_t k = 1; k < aligned_masks.size(); ++k) {
    expect_shape(aligned_masks[k].shape(), out.shape(), "initial_mask");
    for (std::size_t i = 0; i < out.size(); ++i) {
      out[i] = mode == InitMode::kUnion ? std::max(out[i], aligned_masks[k][i]) : out[i] + aligned_masks[k][i];
    }
  }
  if (mode == InitMode::kAverage) {
    for (auto& v : out.values()) v /= static_cast<float>(aligned_masks.size());
  }
  return out;
}

Mask downsample_mask(const Mask& mask, int factor) {
  expect_rank(mask.shape(), 3, "downsample_mask");
  const int h = mask.dim(0), w = mask.dim(1), c = mask.dim(2);
  if (factor < 1 || h % factor != 0 || w % factor != 0) {
    throw DivisibilityError("downsample_mask: " + shape_str(mask.shape()) + " not divisible by " +
                            std::to_string(factor));
  }
  Mask out({h / factor, w / factor, c});
  const double inv = 1.0 / (factor * factor);
  for (int r = 0; r < h / factor; ++r) {
    for (int col = 0; col < w / factor; ++col) {
      for (int ch = 0; ch < c; ++ch) {
        double acc = 0;
        for (int dr = 0; dr < factor; ++dr)
          for (int dc = 0; dc < factor; ++dc) acc += mask.at(r * factor + dr, col * factor + dc, ch);
        out.at(r, col, ch) = static_cast<float>(acc * inv);
      }
    }
  }
  return out;
}

Mask binarize(const Mask& soft) {
  Mask out(soft.shape());
  for (std::size_t i = 0; i < soft.size(); ++i) out[i] = soft[i] >= 0.5f ? 1.0f : 0.0f;
  return out;
}

std::vector<int> training_classes(int num_classes, int holdout_class) {
  std::vector<int> out;
  for (int c = 0; c < num_classes; ++c) {
    if (c != holdout_class) out.push_back(c);
  }
  return out;
}

Dataset remove_class(const Dataset& dataset, int class_id, std::uint64_t seed) {
  Dataset out = dataset;
  std::mt19937_64 rng(seed);
  for (auto& sample : out.samples) {
    const auto it = sample.masks.find(class_id);
    if (it == sample.masks.end()) continue;
    const Mask removed = it->second;
    sample.masks.erase(it);

    const int h = sample.image.dim(0), w = sample.image.dim(1);
    Eigen::Matrix3d ata = Eigen::Matrix3d::Zero();
    Eigen::Vector3d atb = Eigen::Vector3d::Zero();
    std::vector<char> labeled(removed.size(), 0);
    for (std::size_t p = 0; p < removed.size(); ++p) labeled[p] = removed[p] != 0.0f;
    for (const auto& [cls, m] : sample.masks) {
      for (std::size_t p = 0; p < m.size(); ++p) labeled[p] |= m[p] != 0.0f;
    }
    std::size_t n = 0;
    for (int r = 0; r < h; ++r) {
      for (int c = 0; c < w; ++c) {
        if (labeled[static_cast<std::size_t>(r * w + c)]) continue;
        const Eigen::Vector3d x(1.0, c, r);
        ata += x * x.transpose();
        atb += x * static_cast<double>(sample.image.at(r, c, 0));
        ++n;
      }
    }
    if (n < 3) throw InsufficientDataError("remove_class: " + sample.sample_id + " has no unlabeled pixels");
    const Eigen::Vector3d plane = ata.ldlt().solve(atb);
    double sq = 0;
    for (int r = 0; r < h; ++r) {
      for (int c = 0; c < w; ++c) {
        if (labeled[static_cast<std::size_t>(r * w + c)]) continue;
        const double e = sample.image.at(r, c, 0) - plane.dot(Eigen::Vector3d(1.0, c, r));
        sq += e * e;
      }
    }
    std::normal_distribution<double> noise(0.0, std::sqrt(sq / static_cast<double>(n)));
    for (int r = 0; r < h; ++r) {
      for (int c = 0; c < w; ++c) {
        if (removed.at(r, c, 0) == 0.0f) continue;
        const double v = plane.dot(Eigen::Vector3d(1.0, c, r)) + noise(rng);
        sample.image.at(r, c, 0) = static_cast<float>(std::clamp(v, 0.0, 1.0));
      }
    }
  }
  return out;
}

}  // namespace protoseg
