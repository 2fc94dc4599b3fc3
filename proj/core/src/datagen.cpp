#include "d2s/datagen.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>

namespace d2s {

namespace {

namespace fs = std::filesystem;

// Multi-octave value noise in [0,1]: random lattice values, smoothstepped
// bilinear interpolation, three octaves with halving amplitude.
std::vector<double> value_noise(Rng& rng, int size) {
  std::vector<double> field(static_cast<size_t>(size) * size, 0.0);
  double total_amp = 0.0;
  for (int octave = 0; octave < 3; ++octave) {
    const int cell = std::max(2, size / (4 << octave));
    const int gw = size / cell + 2;
    std::vector<double> grid(static_cast<size_t>(gw) * gw);
    for (auto& v : grid) v = rng.uniform();
    const double amp = 1.0 / (1 << octave);
    total_amp += amp;
    for (int y = 0; y < size; ++y) {
      const int gy = y / cell;
      double fy = static_cast<double>(y % cell) / cell;
      fy = fy * fy * (3.0 - 2.0 * fy);
      for (int x = 0; x < size; ++x) {
        const int gx = x / cell;
        double fx = static_cast<double>(x % cell) / cell;
        fx = fx * fx * (3.0 - 2.0 * fx);
        const double v00 = grid[static_cast<size_t>(gy) * gw + gx];
        const double v01 = grid[static_cast<size_t>(gy) * gw + gx + 1];
        const double v10 = grid[static_cast<size_t>(gy + 1) * gw + gx];
        const double v11 = grid[static_cast<size_t>(gy + 1) * gw + gx + 1];
        const double v = (v00 * (1 - fx) + v01 * fx) * (1 - fy) +
                         (v10 * (1 - fx) + v11 * fx) * fy;
        field[static_cast<size_t>(y) * size + x] += amp * v;
      }
    }
  }
  for (auto& v : field) v /= total_amp;
  return field;
}

struct Vec2 {
  double x, y;
};

Vec2 bezier(const Vec2& p0, const Vec2& p1, const Vec2& p2, double t) {
  const double u = 1.0 - t;
  return {u * u * p0.x + 2 * u * t * p1.x + t * t * p2.x,
          u * u * p0.y + 2 * u * t * p1.y + t * t * p2.y};
}

void stamp_disc(std::vector<uint8_t>& mask, int size, double cx, double cy,
                double radius) {
  const int x0 = std::max(0, static_cast<int>(std::floor(cx - radius)));
  const int x1 = std::min(size - 1, static_cast<int>(std::ceil(cx + radius)));
  const int y0 = std::max(0, static_cast<int>(std::floor(cy - radius)));
  const int y1 = std::min(size - 1, static_cast<int>(std::ceil(cy + radius)));
  const double r2 = radius * radius;
  for (int y = y0; y <= y1; ++y)
    for (int x = x0; x <= x1; ++x) {
      const double dx = x - cx, dy = y - cy;
      if (dx * dx + dy * dy <= r2) mask[static_cast<size_t>(y) * size + x] = 1;
    }
}

uint8_t to_byte(float v) {
  const long q = std::lround(static_cast<double>(v) * 255.0);
  return static_cast<uint8_t>(std::clamp(q, 0L, 255L));
}

// Skips whitespace and '#' comments, then reads one non-negative integer.
int read_pnm_int(std::istream& in, const std::string& path) {
  int c = in.get();
  for (;;) {
    while (c != EOF && std::isspace(c)) c = in.get();
    if (c == '#') {
      while (c != EOF && c != '\n') c = in.get();
      continue;
    }
    break;
  }
  if (c == EOF || !std::isdigit(c)) throw FormatError("malformed PNM header: " + path);
  long v = 0;
  while (c != EOF && std::isdigit(c)) {
    v = v * 10 + (c - '0');
    if (v > 1'000'000'000L) throw FormatError("PNM header value out of range: " + path);
    c = in.get();
  }
  if (c == EOF) throw FormatError("truncated PNM header: " + path);
  in.unget();
  return static_cast<int>(v);
}

// Shared P6/P5 reader: validates magic/maxval, returns raw payload bytes.
std::vector<uint8_t> read_pnm(const std::string& path, char expected_kind, int channels,
                              int& width, int& height) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open image: " + path);
  char m0 = 0, m1 = 0;
  in.get(m0);
  in.get(m1);
  if (!in || m0 != 'P') throw FormatError("not a PNM file: " + path);
  if (m1 != expected_kind) {
    if (m1 == '3' || m1 == '2')
      throw FormatError("ASCII PNM not supported (binary P6/P5 only): " + path);
    throw FormatError("wrong PNM magic P" + std::string(1, m1) + ": " + path);
  }
  width = read_pnm_int(in, path);
  height = read_pnm_int(in, path);
  const int maxval = read_pnm_int(in, path);
  if (width < 1 || height < 1) throw FormatError("bad PNM dimensions: " + path);
  if (maxval != 255) throw FormatError("PNM maxval must be 255: " + path);
  in.get();  // single whitespace before payload
  std::vector<uint8_t> payload(static_cast<size_t>(width) * height * channels);
  in.read(reinterpret_cast<char*>(payload.data()),
          static_cast<std::streamsize>(payload.size()));
  if (in.gcount() != static_cast<std::streamsize>(payload.size()))
    throw FormatError("truncated PNM payload: " + path);
  return payload;
}

}  // namespace

Sample generate_road_scene(uint64_t seed, int size) {
  if (size < 32 || size % 8 != 0)
    throw ValueError("generate_road_scene: size must be >= 32 and divisible by 8");
  Rng rng(seed);
  const size_t pixels = static_cast<size_t>(size) * size;

  // ground: two-tone earth palette over low-frequency noise, plus speckle
  const std::vector<double> field = value_noise(rng, size);
  double tone_a[3] = {rng.uniform(0.22, 0.40), rng.uniform(0.16, 0.32),
                      rng.uniform(0.08, 0.20)};
  double tone_b[3];
  if (rng.below(2) == 0) {  // dry sand
    tone_b[0] = rng.uniform(0.45, 0.70);
    tone_b[1] = rng.uniform(0.42, 0.62);
    tone_b[2] = rng.uniform(0.20, 0.38);
  } else {  // vegetation
    tone_b[0] = rng.uniform(0.22, 0.42);
    tone_b[1] = rng.uniform(0.42, 0.62);
    tone_b[2] = rng.uniform(0.14, 0.30);
  }

  Sample s;
  s.seed = seed;
  s.image = Tensor(Shape4{1, 3, size, size});
  s.mask = Tensor(Shape4{1, 1, size, size});
  for (size_t p = 0; p < pixels; ++p) {
    const double v = field[p];
    for (int c = 0; c < 3; ++c) {
      const double base = tone_a[c] * (1.0 - v) + tone_b[c] * v;
      const double speckle = rng.uniform(-0.04, 0.04);
      s.image.data[static_cast<size_t>(c) * pixels + p] =
          static_cast<float>(std::clamp(base + speckle, 0.0, 1.0));
    }
  }

  // roads: quadratic Beziers spanning the frame; a pixel budget keeps the
  // foreground fraction inside (0, 0.35]
  const int road_count = 1 + static_cast<int>(rng.below(4));
  const int max_width = std::clamp(size / 16, 2, 5);
  const size_t budget = pixels / 3;
  std::vector<uint8_t> road_mask(pixels, 0);
  size_t covered = 0;
  std::vector<uint8_t> scratch;
  for (int road = 0; road < road_count; ++road) {
    const double span = size - 1;
    Vec2 p0, p2;
    if (rng.below(2) == 0) {
      p0 = {rng.uniform() * span, 0.0};
      p2 = {rng.uniform() * span, span};
    } else {
      p0 = {0.0, rng.uniform() * span};
      p2 = {span, rng.uniform() * span};
    }
    Vec2 p1;
    if (road == 0) {
      // first road is nearly straight so it always fits the budget
      p1 = {(p0.x + p2.x) / 2 + rng.uniform(-0.15, 0.15) * size,
            (p0.y + p2.y) / 2 + rng.uniform(-0.15, 0.15) * size};
    } else {
      p1 = {rng.uniform() * span, rng.uniform() * span};
    }
    const int width =
        (road == 0 ? 2 : 2 + static_cast<int>(rng.below(static_cast<uint64_t>(
                               std::max(1, max_width - 1)))));

    scratch.assign(pixels, 0);
    const int steps = 4 * size;
    for (int t = 0; t <= steps; ++t) {
      const Vec2 pt = bezier(p0, p1, p2, static_cast<double>(t) / steps);
      stamp_disc(scratch, size, pt.x, pt.y, width / 2.0);
    }
    size_t fresh = 0;
    for (size_t p = 0; p < pixels; ++p)
      if (scratch[p] && !road_mask[p]) ++fresh;
    if (road > 0 && covered + fresh > budget) continue;
    covered += fresh;

    const double gray = rng.uniform(0.55, 0.80);
    for (size_t p = 0; p < pixels; ++p) {
      if (!scratch[p]) continue;
      road_mask[p] = 1;
      const double v = std::clamp(gray + rng.uniform(-0.05, 0.05), 0.0, 1.0);
      s.image.data[p] = static_cast<float>(v);
      s.image.data[pixels + p] = static_cast<float>(v);
      s.image.data[2 * pixels + p] =
          static_cast<float>(std::clamp(v * rng.uniform(0.96, 1.02), 0.0, 1.0));
    }
  }
  for (size_t p = 0; p < pixels; ++p) s.mask.data[p] = road_mask[p] ? 1.0f : 0.0f;
  return s;
}

void write_ppm(const Tensor& image, const std::string& path) {
  if (image.shape.n != 1 || image.shape.c != 3)
    throw ShapeError("write_ppm: expected (1,3,H,W), got " + to_string(image.shape));
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open for writing: " + path);
  out << "P6\n" << image.shape.w << " " << image.shape.h << "\n255\n";
  const size_t pixels = static_cast<size_t>(image.shape.h * image.shape.w);
  std::vector<uint8_t> row(pixels * 3);
  for (size_t p = 0; p < pixels; ++p)
    for (size_t c = 0; c < 3; ++c)
      row[p * 3 + c] = to_byte(image.data[c * pixels + p]);
  out.write(reinterpret_cast<const char*>(row.data()),
            static_cast<std::streamsize>(row.size()));
  if (!out) throw IoError("write failed: " + path);
}

Tensor read_ppm(const std::string& path) {
  int w = 0, h = 0;
  const std::vector<uint8_t> payload = read_pnm(path, '6', 3, w, h);
  Tensor image(Shape4{1, 3, h, w});
  const size_t pixels = static_cast<size_t>(w) * h;
  for (size_t p = 0; p < pixels; ++p)
    for (size_t c = 0; c < 3; ++c)
      image.data[c * pixels + p] = static_cast<float>(payload[p * 3 + c]) / 255.0f;
  return image;
}

void write_pgm(const Tensor& mask, const std::string& path) {
  if (mask.shape.n != 1 || mask.shape.c != 1)
    throw ShapeError("write_pgm: expected (1,1,H,W), got " + to_string(mask.shape));
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open for writing: " + path);
  out << "P5\n" << mask.shape.w << " " << mask.shape.h << "\n255\n";
  std::vector<uint8_t> row(static_cast<size_t>(mask.numel()));
  for (size_t p = 0; p < row.size(); ++p) row[p] = mask.data[p] >= 0.5f ? 255 : 0;
  out.write(reinterpret_cast<const char*>(row.data()),
            static_cast<std::streamsize>(row.size()));
  if (!out) throw IoError("write failed: " + path);
}

Tensor read_pgm(const std::string& path) {
  int w = 0, h = 0;
  const std::vector<uint8_t> payload = read_pnm(path, '5', 1, w, h);
  Tensor mask(Shape4{1, 1, h, w});
  for (size_t p = 0; p < payload.size(); ++p)
    mask.data[p] = payload[p] >= 128 ? 1.0f : 0.0f;
  return mask;
}

Sample patch_sample(const Sample& sample, int patch_size, Rng& rng) {
  if (patch_size % 8 != 0)
    throw ValueError("patch_sample: patch_size must be divisible by 8");
  const int64_t h = sample.image.shape.h, w = sample.image.shape.w;
  if (patch_size < 1 || patch_size > h || patch_size > w)
    throw ValueError("patch_sample: patch_size must fit inside the image");
  if (patch_size == h && patch_size == w) return sample;

  int64_t fg = 0;
  for (float v : sample.mask.data) fg += (v != 0.0f);

  int64_t y0, x0;
  if (fg > 0) {
    int64_t pick = static_cast<int64_t>(rng.below(static_cast<uint64_t>(fg)));
    int64_t cy = 0, cx = 0;
    for (int64_t p = 0; p < h * w; ++p) {
      if (sample.mask.data[static_cast<size_t>(p)] != 0.0f && pick-- == 0) {
        cy = p / w;
        cx = p % w;
        break;
      }
    }
    y0 = std::clamp<int64_t>(cy - patch_size / 2, 0, h - patch_size);
    x0 = std::clamp<int64_t>(cx - patch_size / 2, 0, w - patch_size);
  } else {
    y0 = static_cast<int64_t>(rng.below(static_cast<uint64_t>(h - patch_size + 1)));
    x0 = static_cast<int64_t>(rng.below(static_cast<uint64_t>(w - patch_size + 1)));
  }

  Sample out;
  out.seed = sample.seed;
  out.image = Tensor(Shape4{1, 3, patch_size, patch_size});
  out.mask = Tensor(Shape4{1, 1, patch_size, patch_size});
  for (int64_t c = 0; c < 3; ++c)
    for (int64_t y = 0; y < patch_size; ++y)
      for (int64_t x = 0; x < patch_size; ++x)
        out.image.at(0, c, y, x) = sample.image.at(0, c, y0 + y, x0 + x);
  for (int64_t y = 0; y < patch_size; ++y)
    for (int64_t x = 0; x < patch_size; ++x)
      out.mask.at(0, 0, y, x) = sample.mask.at(0, 0, y0 + y, x0 + x);
  return out;
}

Tensor color_jitter(const Tensor& image, Rng& rng, const JitterRanges& ranges) {
  // draws happen unconditionally so the call sequence is range-independent
  const double b = rng.uniform(-ranges.brightness, ranges.brightness);
  const double c = rng.uniform(ranges.contrast_lo, ranges.contrast_hi);
  const double s = rng.uniform(ranges.saturation_lo, ranges.saturation_hi);

  Tensor out = image;
  if (b != 0.0)
    for (auto& v : out.data) v = static_cast<float>(v + b);
  if (c != 1.0) {
    double mean = 0.0;
    for (float v : out.data) mean += v;
    mean /= static_cast<double>(out.data.size());
    for (auto& v : out.data) v = static_cast<float>(mean + c * (v - mean));
  }
  if (s != 1.0) {
    const size_t pixels = static_cast<size_t>(out.shape.h * out.shape.w);
    for (size_t p = 0; p < pixels; ++p) {
      const double r = out.data[p];
      const double g = out.data[pixels + p];
      const double bl = out.data[2 * pixels + p];
      const double luma = 0.299 * r + 0.587 * g + 0.114 * bl;
      out.data[p] = static_cast<float>(luma + s * (r - luma));
      out.data[pixels + p] = static_cast<float>(luma + s * (g - luma));
      out.data[2 * pixels + p] = static_cast<float>(luma + s * (bl - luma));
    }
  }
  for (auto& v : out.data) v = std::clamp(v, 0.0f, 1.0f);
  return out;
}

DatasetManifest make_dataset(int n_train, int n_val, int size, uint64_t seed,
                             const std::string& out_dir) {
  if (n_train < 0 || n_val < 0) throw ValueError("make_dataset: negative split size");
  std::error_code ec;
  fs::create_directories(out_dir, ec);
  if (ec) throw IoError("cannot create dataset directory " + out_dir + ": " + ec.message());

  DatasetManifest manifest;
  manifest.root = out_dir;
  manifest.size = size;
  manifest.seed = seed;

  char stem[32];
  for (int i = 0; i < n_train + n_val; ++i) {
    const bool is_train = i < n_train;
    if (is_train)
      std::snprintf(stem, sizeof(stem), "train_%04d", i);
    else
      std::snprintf(stem, sizeof(stem), "val_%04d", i - n_train);
    const Sample s = generate_road_scene(derive_seed(seed, static_cast<uint64_t>(i)), size);
    const std::string base = out_dir + "/" + stem;
    write_ppm(s.image, base + ".ppm");
    write_pgm(s.mask, base + ".pgm");
    (is_train ? manifest.train : manifest.val).push_back(stem);
  }

  const std::string manifest_path = out_dir + "/manifest.txt";
  std::ofstream out(manifest_path, std::ios::trunc);
  if (!out) throw IoError("cannot write manifest: " + manifest_path);
  out << "d2s-manifest v1 size=" << size << " seed=" << seed << "\n";
  for (const auto& stem_name : manifest.train) out << "train " << stem_name << "\n";
  for (const auto& stem_name : manifest.val) out << "val " << stem_name << "\n";
  if (!out) throw IoError("manifest write failed: " + manifest_path);
  return manifest;
}

DatasetManifest load_manifest(const std::string& dir) {
  const std::string path = dir + "/manifest.txt";
  std::ifstream in(path);
  if (!in) throw IoError("cannot open manifest: " + path);

  DatasetManifest manifest;
  manifest.root = dir;
  std::string header;
  if (!std::getline(in, header)) throw FormatError("empty manifest: " + path);
  unsigned long long seed = 0;
  if (std::sscanf(header.c_str(), "d2s-manifest v1 size=%d seed=%llu", &manifest.size,
                  &seed) != 2)
    throw FormatError("bad manifest header: " + header);
  manifest.seed = seed;

  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::istringstream ls(line);
    std::string split, stem;
    ls >> split >> stem;
    if (split == "train")
      manifest.train.push_back(stem);
    else if (split == "val")
      manifest.val.push_back(stem);
    else
      throw FormatError("bad manifest line: " + line);
  }
  for (const auto* list : {&manifest.train, &manifest.val})
    for (const auto& stem : *list) {
      const std::string base = dir + "/" + stem;
      if (!fs::exists(base + ".ppm") || !fs::exists(base + ".pgm"))
        throw IoError("manifest entry missing files: " + base + ".{ppm,pgm}");
    }
  return manifest;
}

Sample load_sample(const DatasetManifest& manifest, Split split, size_t index) {
  const auto& stems = manifest.stems(split);
  if (index >= stems.size()) throw ValueError("load_sample: index out of range");
  const std::string base = manifest.root + "/" + stems[index];
  Sample s;
  s.image = read_ppm(base + ".ppm");
  s.mask = read_pgm(base + ".pgm");
  if (!(s.image.shape.h == s.mask.shape.h && s.image.shape.w == s.mask.shape.w))
    throw ShapeError("image/mask size mismatch for " + base);
  return s;
}

}  // namespace d2s
