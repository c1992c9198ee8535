#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "lkf/metrics.hpp"
#include "lkf/tensor.hpp"

// Image I/O and the LR/HR pair pipeline. PGM (binary P5, maxval 255) is the
// canonical on-disk format. LR images are manufactured from HR by the
// library's own bicubic downsampler (Catmull-Rom, a = -0.5, edge clamped),
// then quantized like any saved image, so the on-disk and in-memory paths
// agree. The synthetic scene generator stands in for real infrared data so
// everything runs without downloads.
//
// Dataset layout: <root>/hr/*.pgm, <root>/lr_x{2,4}/*.pgm plus train.txt and
// test.txt holding the deterministic 8:2 split. File order is lexicographic.

namespace lkf {

ImageU8 load_pgm(const std::string& path);
void save_pgm(const std::string& path, const ImageU8& img);

// Catmull-Rom cubic (a = -0.5), edge clamped, output clamped to [0, 255].
ImageU8 bicubic_resize(const ImageU8& img, int out_h, int out_w);

// Bicubic downsample by an integer factor, quantized to whole pixel values
// exactly like a save/load round trip.
ImageU8 degrade(const ImageU8& hr, int scale);

// Gradient sky, rectangular structures, thin railing-like lines and warm
// Gaussian blobs; clamped to [0, 255] and quantized.
ImageU8 synth_scene(Rng& rng, int h, int w);

ImageU8 flip_h(const ImageU8& img);
ImageU8 flip_v(const ImageU8& img);
ImageU8 rot90(const ImageU8& img);  // clockwise

struct SrPair {
  std::string name;
  ImageU8 hr;
  ImageU8 lr;
  int scale = 0;
};

// Loads every *.pgm under hr_dir (lexicographic), cropping each image to a
// multiple of scale and deriving LR in memory.
std::vector<SrPair> make_pairs(const std::string& hr_dir, int scale);

// Writes a synthetic dataset in the standard layout.
void make_dataset(const std::string& root, int count, int h, int w, int scale,
                  std::uint64_t seed);
// Same layout from user-supplied HR images.
void derive_dataset(const std::string& root, const std::string& hr_dir, int scale,
                    std::uint64_t seed);

// split is "train", "test" or "all".
std::vector<SrPair> load_split(const std::string& root, int scale, const std::string& split);

// Aligned LR/HR patch pairs with optional flip/rotation augmentation, fully
// deterministic from the seed.
class PatchSampler {
 public:
  PatchSampler(const std::vector<SrPair>* pairs, int patch, bool augment, std::uint64_t seed);
  void sample(ImageU8& lr_patch, ImageU8& hr_patch);

 private:
  const std::vector<SrPair>* pairs_;
  int patch_;
  bool augment_;
  Rng rng_;
};

// (1, 1, H, W) in [0, 1] <-> grayscale image in [0, 255].
Tensor image_to_tensor(const ImageU8& img);
ImageU8 tensor_to_image(const Tensor& t);

}  // namespace lkf
