#include "fine_imitate/data.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <random>
#include <set>
#include <sstream>
#include <stdexcept>

#include "fine_imitate/image_io.hpp"
#include "fine_imitate/util.hpp"

namespace fi::data {

using nlohmann::json;

void validate(const DatasetSpec& spec) {
  if (spec.image_size == 0 || spec.stride == 0 || spec.image_size % spec.stride != 0) {
    throw std::invalid_argument("dataset: image_size " + std::to_string(spec.image_size) +
                                " must be a positive multiple of stride " + std::to_string(spec.stride));
  }
  if (spec.min_objects > spec.max_objects) throw std::invalid_argument("dataset: min_objects > max_objects");
  if (!(spec.min_size >= 4.0 && spec.min_size <= spec.max_size &&
        spec.max_size <= static_cast<double>(spec.image_size))) {
    throw std::invalid_argument("dataset: need 4 <= min_size <= max_size <= image_size");
  }
  if (!(spec.crowding >= 0.0 && spec.crowding <= 1.0)) throw std::invalid_argument("dataset: crowding must lie in [0, 1]");
  if (!(spec.noise_std >= 0.0)) throw std::invalid_argument("dataset: noise_std must be >= 0");
  if (!(spec.texture >= 0.0)) throw std::invalid_argument("dataset: texture must be >= 0");
  if (!(spec.texture_sigma > 0.0)) throw std::invalid_argument("dataset: texture_sigma must be > 0");
}

json to_json(const DatasetSpec& s) {
  return {{"seed", s.seed},           {"num_images", s.num_images}, {"image_size", s.image_size},
          {"stride", s.stride},       {"min_objects", s.min_objects}, {"max_objects", s.max_objects},
          {"min_size", s.min_size},   {"max_size", s.max_size},     {"crowding", s.crowding},
          {"noise_std", s.noise_std}, {"max_clutter", s.max_clutter}, {"max_retries", s.max_retries},
          {"texture", s.texture},     {"texture_sigma", s.texture_sigma}};
}

DatasetSpec dataset_spec_from_json(const json& j) {
  DatasetSpec s;
  const json defaults = to_json(s);
  for (const auto& [key, _] : j.items()) {
    if (!defaults.contains(key)) throw std::invalid_argument("dataset: unknown key '" + key + "'");
  }
  json merged = defaults;
  merged.update(j);
  s.seed = merged["seed"].get<std::uint64_t>();
  s.num_images = merged["num_images"].get<std::size_t>();
  s.image_size = merged["image_size"].get<std::size_t>();
  s.stride = merged["stride"].get<std::size_t>();
  s.min_objects = merged["min_objects"].get<std::size_t>();
  s.max_objects = merged["max_objects"].get<std::size_t>();
  s.min_size = merged["min_size"].get<double>();
  s.max_size = merged["max_size"].get<double>();
  s.crowding = merged["crowding"].get<double>();
  s.noise_std = merged["noise_std"].get<double>();
  s.max_clutter = merged["max_clutter"].get<std::size_t>();
  s.max_retries = merged["max_retries"].get<std::size_t>();
  s.texture = merged["texture"].get<double>();
  s.texture_sigma = merged["texture_sigma"].get<double>();
  validate(s);
  return s;
}

namespace {

constexpr std::uint64_t kTextureTag = 0x74657874;

class Canvas {
 public:
  explicit Canvas(std::size_t n) : n_(n), px_(n * n, 0.0) {}
  double& at(std::size_t x, std::size_t y) { return px_[y * n_ + x]; }
  std::size_t size() const { return n_; }

 private:
  std::size_t n_;
  std::vector<double> px_;
};

bool inside_shape(int cls, double px, double py, double x0, double y0, double s) {
  switch (cls) {
    case 0: {  // circle
      const double dx = px - (x0 + 0.5 * s), dy = py - (y0 + 0.5 * s);
      return dx * dx + dy * dy <= 0.25 * s * s;
    }
    case 1:  // square
      return px >= x0 && px <= x0 + s && py >= y0 && py <= y0 + s;
    default: {  // upward triangle, apex at top centre
      if (py < y0 || py > y0 + s) return false;
      const double half = 0.5 * s * (py - y0) / s;
      return std::abs(px - (x0 + 0.5 * s)) <= half;
    }
  }
}

// Pixel-centre rasterisation footprint; returns the tight box (empty if none).
Box footprint(int cls, double x0, double y0, double s, std::size_t n) {
  double bx1 = 1e9, by1 = 1e9, bx2 = -1e9, by2 = -1e9;
  const auto lo_x = static_cast<std::size_t>(std::max(0.0, std::floor(x0)));
  const auto lo_y = static_cast<std::size_t>(std::max(0.0, std::floor(y0)));
  const auto hi_x = std::min(n, static_cast<std::size_t>(std::ceil(x0 + s)) + 1);
  const auto hi_y = std::min(n, static_cast<std::size_t>(std::ceil(y0 + s)) + 1);
  for (std::size_t y = lo_y; y < hi_y; ++y) {
    for (std::size_t x = lo_x; x < hi_x; ++x) {
      if (!inside_shape(cls, x + 0.5, y + 0.5, x0, y0, s)) continue;
      bx1 = std::min(bx1, double(x));
      by1 = std::min(by1, double(y));
      bx2 = std::max(bx2, double(x + 1));
      by2 = std::max(by2, double(y + 1));
    }
  }
  return {bx1, by1, bx2, by2, cls};
}

void draw_stroke(Canvas& c, double x0, double y0, double x1, double y1, double thickness, double value) {
  const double len = std::hypot(x1 - x0, y1 - y0);
  const auto steps = static_cast<int>(std::ceil(len * 2.0)) + 1;
  const int n = static_cast<int>(c.size());
  const int r = static_cast<int>(std::ceil(thickness / 2.0));
  for (int t = 0; t <= steps; ++t) {
    const double u = static_cast<double>(t) / steps;
    const double x = x0 + u * (x1 - x0), y = y0 + u * (y1 - y0);
    for (int dy = -r; dy <= r; ++dy) {
      for (int dx = -r; dx <= r; ++dx) {
        const int px = static_cast<int>(std::floor(x)) + dx, py = static_cast<int>(std::floor(y)) + dy;
        if (px < 0 || py < 0 || px >= n || py >= n) continue;
        if (std::hypot(px + 0.5 - x, py + 0.5 - y) <= thickness / 2.0 + 0.25) {
          c.at(static_cast<std::size_t>(px), static_cast<std::size_t>(py)) = value;
        }
      }
    }
  }
}

struct Placed {
  int cls;
  double x0, y0, size;
  Box box;
};

// White noise blurred with a separable Gaussian, rescaled to the requested std.
void add_texture(Canvas& canvas, double amplitude, double sigma, std::uint64_t seed) {
  const std::size_t n = canvas.size();
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::vector<double> field(n * n);
  for (double& v : field) v = normal(rng);

  const auto radius = static_cast<std::ptrdiff_t>(std::ceil(3.0 * sigma));
  std::vector<double> taps;
  for (std::ptrdiff_t k = -radius; k <= radius; ++k) taps.push_back(std::exp(-0.5 * k * k / (sigma * sigma)));
  const auto sn = static_cast<std::ptrdiff_t>(n);
  auto blur = [&](bool along_x) {
    std::vector<double> out(n * n, 0.0);
    for (std::ptrdiff_t y = 0; y < sn; ++y)
      for (std::ptrdiff_t x = 0; x < sn; ++x) {
        double acc = 0.0;
        for (std::ptrdiff_t k = -radius; k <= radius; ++k) {
          // Wrap around so the texture statistics do not depend on position.
          const std::ptrdiff_t xx = along_x ? ((x + k) % sn + sn) % sn : x, yy = along_x ? y : ((y + k) % sn + sn) % sn;
          acc += taps[static_cast<std::size_t>(k + radius)] * field[static_cast<std::size_t>(yy * sn + xx)];
        }
        out[static_cast<std::size_t>(y * sn + x)] = acc;
      }
    field = std::move(out);
  };
  blur(true);
  blur(false);
  double mean = 0.0, sq = 0.0;
  for (double v : field) mean += v;
  mean /= static_cast<double>(field.size());
  for (double v : field) sq += (v - mean) * (v - mean);
  if (sq == 0.0) return;
  const double scale = amplitude / std::sqrt(sq / static_cast<double>(field.size()));
  for (std::size_t y = 0; y < n; ++y)
    for (std::size_t x = 0; x < n; ++x) canvas.at(x, y) += scale * (field[y * n + x] - mean);
}

}  // namespace

Sample generate_one(const DatasetSpec& spec, std::size_t index) {
  validate(spec);
  std::mt19937_64 rng(derive_seed(spec.seed, {index}));
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  auto uniform = [&](double lo, double hi) { return lo + (hi - lo) * unit(rng); };
  auto uniform_int = [&](std::size_t lo, std::size_t hi) {
    return lo + static_cast<std::size_t>(rng() % (hi - lo + 1));
  };

  const std::size_t n = spec.image_size;
  const double nd = static_cast<double>(n);
  Canvas canvas(n);
  const double base = uniform(0.2, 0.4);
  const double gx = uniform(-0.1, 0.1), gy = uniform(-0.1, 0.1);
  for (std::size_t y = 0; y < n; ++y) {
    for (std::size_t x = 0; x < n; ++x) canvas.at(x, y) = base + gx * (x / nd - 0.5) + gy * (y / nd - 0.5);
  }
  if (spec.texture > 0.0) add_texture(canvas, spec.texture, spec.texture_sigma, derive_seed(spec.seed, {index, kTextureTag}));

  const std::size_t strokes = spec.max_clutter ? uniform_int(0, spec.max_clutter) : 0;
  for (std::size_t s = 0; s < strokes; ++s) {
    const double x0 = uniform(0, nd), y0 = uniform(0, nd);
    const double angle = uniform(0, 2 * M_PI), len = uniform(6, 20);
    draw_stroke(canvas, x0, y0, x0 + len * std::cos(angle), y0 + len * std::sin(angle), uniform(1.0, 2.5),
                base + uniform(0.1, 0.55));
  }

  Sample sample;
  sample.image_id = "img_" + std::to_string(index);
  std::vector<Placed> placed;
  const std::size_t wanted = uniform_int(spec.min_objects, spec.max_objects);
  for (std::size_t o = 0; o < wanted; ++o) {
    const int cls = static_cast<int>(rng() % kShapeClasses.size());
    const bool crowd = !placed.empty() && unit(rng) < spec.crowding;
    bool ok = false;
    for (std::size_t attempt = 0; attempt < spec.max_retries && !ok; ++attempt) {
      const double size = std::round(uniform(spec.min_size, spec.max_size));
      double x0, y0;
      if (crowd) {
        const auto& anchor = placed[rng() % placed.size()];
        x0 = std::round(anchor.x0 + uniform(-0.7, 0.7) * size);
        y0 = std::round(anchor.y0 + uniform(-0.7, 0.7) * size);
      } else {
        x0 = std::round(uniform(0, nd - size));
        y0 = std::round(uniform(0, nd - size));
      }
      if (x0 < 0 || y0 < 0 || x0 + size > nd || y0 + size > nd) continue;
      const Box box = footprint(cls, x0, y0, size, n);
      if (!geometry::is_valid(box)) continue;
      bool overlaps_any = false, too_much = false;
      for (const auto& p : placed) {
        const double v = geometry::iou(box, p.box);
        overlaps_any |= v > 0.0;
        too_much |= v > 0.5;
      }
      ok = crowd ? (overlaps_any && !too_much) : !overlaps_any;
      if (ok) placed.push_back({cls, x0, y0, size, box});
    }
    if (!ok) log_warn("dataset: image " + std::to_string(index) + " dropped an object after bounded retries");
  }

  for (const auto& p : placed) {
    const double value = base + uniform(0.3, 0.5);
    for (auto y = static_cast<std::size_t>(p.box.y1); y < static_cast<std::size_t>(p.box.y2); ++y) {
      for (auto x = static_cast<std::size_t>(p.box.x1); x < static_cast<std::size_t>(p.box.x2); ++x) {
        if (inside_shape(p.cls, x + 0.5, y + 0.5, p.x0, p.y0, p.size)) canvas.at(x, y) = value;
      }
    }
    sample.gts.push_back(p.box);
  }

  std::normal_distribution<double> noise(0.0, spec.noise_std > 0 ? spec.noise_std : 1.0);
  sample.image = numerics::Tensor({n, n, 1});
  for (std::size_t y = 0; y < n; ++y) {
    for (std::size_t x = 0; x < n; ++x) {
      double v = canvas.at(x, y) + (spec.noise_std > 0 ? noise(rng) : 0.0);
      // Quantise to 8 bits so the PNG export is lossless.
      sample.image.at(x, y, 0) = std::round(std::clamp(v, 0.0, 1.0) * 255.0) / 255.0;
    }
  }
  return sample;
}

std::vector<Sample> generate(const DatasetSpec& spec) {
  validate(spec);
  std::vector<Sample> out;
  out.reserve(spec.num_images);
  for (std::size_t i = 0; i < spec.num_images; ++i) out.push_back(generate_one(spec, i));
  return out;
}

// --- JSON lines -------------------------------------------------------------

std::vector<SampleMeta> load_jsonl(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("load_jsonl: cannot open " + path.string());
  std::vector<SampleMeta> out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    auto fail = [&](const std::string& why) {
      return std::runtime_error(path.string() + ":" + std::to_string(line_no) + ": " + why);
    };
    try {
      const json j = json::parse(line);
      if (!j.is_object() || !j.contains("image") || !j.contains("boxes")) throw fail("expected {image, boxes}");
      SampleMeta meta;
      meta.image_path = j.at("image").get<std::string>();
      if (meta.image_path.is_relative()) meta.image_path = path.parent_path() / meta.image_path;
      meta.image_id = j.contains("image_id") ? j.at("image_id").get<std::string>()
                                             : std::filesystem::path(j.at("image").get<std::string>()).stem().string();
      for (const auto& b : j.at("boxes")) {
        if (!b.is_array() || b.size() != 5) throw fail("box must be [x1, y1, x2, y2, class_id]");
        Box box{b[0].get<double>(), b[1].get<double>(), b[2].get<double>(), b[3].get<double>(), b[4].get<int>()};
        if (!geometry::is_valid(box)) throw fail("degenerate box");
        meta.gts.push_back(box);
      }
      out.push_back(std::move(meta));
    } catch (const json::exception& e) {
      throw fail(e.what());
    }
  }
  return out;
}

void save_jsonl(const std::filesystem::path& path, const std::vector<SampleMeta>& samples) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("save_jsonl: cannot open " + path.string());
  for (const auto& s : samples) {
    json boxes = json::array();
    for (const auto& b : s.gts) boxes.push_back({b.x1, b.y1, b.x2, b.y2, b.class_id});
    std::filesystem::path rel = s.image_path;
    if (rel.is_absolute()) rel = std::filesystem::relative(rel, path.parent_path());
    out << json{{"image", rel.generic_string()}, {"image_id", s.image_id}, {"boxes", boxes}}.dump() << '\n';
  }
}

void save_dataset(const std::filesystem::path& dir, const std::vector<Sample>& samples) {
  std::filesystem::create_directories(dir / "images");
  std::vector<SampleMeta> metas;
  for (const auto& s : samples) {
    const auto rel = std::filesystem::path("images") / (s.image_id + ".png");
    write_png_gray(dir / rel, s.image);
    metas.push_back({s.image_id, rel, s.gts});
  }
  save_jsonl(dir / "annotations.jsonl", metas);
}

Sample load_sample(const SampleMeta& meta) { return {read_png_gray(meta.image_path), meta.gts, meta.image_id}; }

std::vector<Sample> load_dataset(const std::filesystem::path& dir) {
  std::vector<Sample> out;
  for (const auto& m : load_jsonl(dir / "annotations.jsonl")) out.push_back(load_sample(m));
  return out;
}

// --- KITTI ------------------------------------------------------------------

namespace {
std::string lower(std::string s) {
  std::transform(s.begin(), s.end(), s.begin(), [](unsigned char c) { return std::tolower(c); });
  return s;
}
}  // namespace

std::vector<SampleMeta> load_kitti_labels(const std::filesystem::path& dir, const std::vector<std::string>& classes) {
  std::vector<std::filesystem::path> files;
  for (const auto& e : std::filesystem::directory_iterator(dir)) {
    if (e.is_regular_file() && e.path().extension() == ".txt") files.push_back(e.path());
  }
  std::sort(files.begin(), files.end());

  std::vector<SampleMeta> out;
  for (const auto& file : files) {
    std::ifstream in(file);
    if (!in) throw std::runtime_error("kitti: cannot open " + file.string());
    SampleMeta meta;
    meta.image_id = file.stem().string();
    meta.image_path = dir.parent_path() / "image_2" / (meta.image_id + ".png");
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
      ++line_no;
      std::istringstream fields(line);
      std::string type;
      if (!(fields >> type)) continue;
      double truncated, occluded, alpha, x1, y1, x2, y2;
      if (!(fields >> truncated >> occluded >> alpha >> x1 >> y1 >> x2 >> y2)) {
        throw std::runtime_error(file.string() + ":" + std::to_string(line_no) + ": unparseable KITTI label");
      }
      const auto it = std::find_if(classes.begin(), classes.end(),
                                   [&](const std::string& c) { return lower(c) == lower(type); });
      if (it == classes.end()) continue;
      Box box{x1, y1, x2, y2, static_cast<int>(it - classes.begin())};
      if (!geometry::is_valid(box)) {
        throw std::runtime_error(file.string() + ":" + std::to_string(line_no) + ": degenerate box");
      }
      meta.gts.push_back(box);
    }
    out.push_back(std::move(meta));
  }
  return out;
}

std::string format_kitti_line(const std::string& type, const Box& box) {
  char buf[256];
  std::snprintf(buf, sizeof buf, "%s 0.00 0 0.00 %.2f %.2f %.2f %.2f 0.00 0.00 0.00 0.00 0.00 0.00 0.00",
                type.c_str(), box.x1, box.y1, box.x2, box.y2);
  return buf;
}

}  // namespace fi::data
