#pragma once

#include <string>
#include <vector>

#include "d2s/rng.hpp"
#include "d2s/tensor.hpp"

namespace d2s {

enum class Split { train, val };

// One synthetic scene: RGB image in [0,1] stored (1,3,S,S) and a binary road
// mask stored (1,1,S,S) with values exactly 0 or 1. Foreground stays the
// minority class: the generator keeps the road fraction inside (0, 0.35].
struct Sample {
  Tensor image;
  Tensor mask;
  uint64_t seed = 0;
};

// Procedural scene: multi-octave value-noise ground with a randomized
// earth-tone palette and per-pixel speckle, crossed by 1-4 quadratic Bezier
// roads (width 2-5 px, clamped down at small sizes) recolored near-gray.
// Fully determined by (seed, size); size must be >= 32 and divisible by 8.
Sample generate_road_scene(uint64_t seed, int size);

// Binary PPM (P6) / PGM (P5), maxval 255 only. Images quantize to 8 bits on
// write, so read(write(x)) is within 1/255 per channel; masks map 1 <-> 255
// and round-trip exactly. ASCII variants (P3/P2) are rejected.
void write_ppm(const Tensor& image, const std::string& path);
Tensor read_ppm(const std::string& path);
void write_pgm(const Tensor& mask, const std::string& path);
Tensor read_pgm(const std::string& path);

// Foreground-centered crop: picks a uniformly random mask-positive pixel and
// returns the patch centered there, clamped to the image bounds. Empty masks
// fall back to a uniformly random patch. patch_size must divide by 8.
Sample patch_sample(const Sample& sample, int patch_size, Rng& rng);

struct JitterRanges {
  double brightness = 0.2;  // additive, sampled from [-b, +b]
  double contrast_lo = 0.8, contrast_hi = 1.25;
  double saturation_lo = 0.8, saturation_hi = 1.25;
};

// Brightness, then contrast about the global image mean, then saturation
// about per-pixel Rec.601 luma; one clamp to [0,1] at the end. Degenerate
// ranges short-circuit to the exact identity. Masks are never touched.
Tensor color_jitter(const Tensor& image, Rng& rng, const JitterRanges& ranges = {});

struct DatasetManifest {
  std::string root;
  int size = 0;
  uint64_t seed = 0;
  std::vector<std::string> train;
  std::vector<std::string> val;

  const std::vector<std::string>& stems(Split s) const {
    return s == Split::train ? train : val;
  }
};

// Writes n_train + n_val scenes (derived per-sample seeds) plus manifest.txt:
//   d2s-manifest v1 size=<S> seed=<N>
//   train <stem> / val <stem> lines
DatasetManifest make_dataset(int n_train, int n_val, int size, uint64_t seed,
                             const std::string& out_dir);

DatasetManifest load_manifest(const std::string& dir);

Sample load_sample(const DatasetManifest& manifest, Split split, size_t index);

}  // namespace d2s
