#include "lkf/data.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <stdexcept>

namespace fs = std::filesystem;

namespace lkf {

namespace {

double clamp255(double v) { return v < 0.0 ? 0.0 : (v > 255.0 ? 255.0 : v); }

double quantize(double v) { return static_cast<double>(std::llround(clamp255(v))); }

int read_pgm_token(std::istream& is, const std::string& path) {
  // Skips whitespace and '#' comments, then reads one decimal token.
  for (;;) {
    const int c = is.peek();
    if (c == EOF) throw std::runtime_error("pgm: truncated header in '" + path + "'");
    if (c == '#') {
      std::string comment;
      std::getline(is, comment);
      continue;
    }
    if (std::isspace(c)) {
      is.get();
      continue;
    }
    break;
  }
  int value = 0;
  if (!(is >> value)) throw std::runtime_error("pgm: malformed header in '" + path + "'");
  return value;
}

}  // namespace

ImageU8 load_pgm(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("pgm: cannot open '" + path + "'");
  char m0 = 0, m1 = 0;
  is.get(m0);
  is.get(m1);
  if (m0 != 'P' || m1 != '5') {
    throw std::runtime_error("pgm: '" + path + "' is not a binary P5 file");
  }
  const int w = read_pgm_token(is, path);
  const int h = read_pgm_token(is, path);
  const int maxval = read_pgm_token(is, path);
  if (w < 1 || h < 1) throw std::runtime_error("pgm: bad dimensions in '" + path + "'");
  if (maxval != 255) {
    throw std::runtime_error("pgm: '" + path + "' has maxval " + std::to_string(maxval) +
                             ", only 255 supported");
  }
  is.get();  // the single whitespace byte after the header
  std::vector<unsigned char> raw(static_cast<std::size_t>(w) * h);
  if (!is.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(raw.size()))) {
    throw std::runtime_error("pgm: truncated pixel data in '" + path + "'");
  }
  ImageU8 img(h, w);
  for (std::size_t i = 0; i < raw.size(); ++i) img.pixels[i] = static_cast<double>(raw[i]);
  return img;
}

void save_pgm(const std::string& path, const ImageU8& img) {
  if (img.height < 1 || img.width < 1) throw std::invalid_argument("pgm: empty image");
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("pgm: cannot open '" + path + "' for writing");
  os << "P5\n" << img.width << ' ' << img.height << "\n255\n";
  std::vector<unsigned char> raw(img.pixels.size());
  for (std::size_t i = 0; i < raw.size(); ++i) {
    raw[i] = static_cast<unsigned char>(std::llround(clamp255(img.pixels[i])));
  }
  os.write(reinterpret_cast<const char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
  if (!os) throw std::runtime_error("pgm: write to '" + path + "' failed");
}

// ---------------------------------------------------------------------------
// Bicubic resampling

namespace {

// Catmull-Rom weight, a = -0.5.
double cubic_weight(double t) {
  t = std::fabs(t);
  if (t <= 1.0) return (1.5 * t - 2.5) * t * t + 1.0;
  if (t < 2.0) return ((-0.5 * t + 2.5) * t - 4.0) * t + 2.0;
  return 0.0;
}

// One separable pass along x: (h, w) -> (h, out_w).
std::vector<double> resize_axis(const std::vector<double>& src, int h, int w, int out_w) {
  std::vector<double> dst(static_cast<std::size_t>(h) * out_w);
  const double step = static_cast<double>(w) / out_w;
  std::vector<int> idx(static_cast<std::size_t>(out_w) * 4);
  std::vector<double> wgt(static_cast<std::size_t>(out_w) * 4);
  for (int x = 0; x < out_w; ++x) {
    const double s = (x + 0.5) * step - 0.5;
    const double base = std::floor(s);
    const double f = s - base;
    double wsum = 0.0;
    for (int t = 0; t < 4; ++t) {
      const int i = static_cast<int>(base) + t - 1;
      idx[x * 4 + t] = std::clamp(i, 0, w - 1);
      const double wv = cubic_weight(f - (t - 1));
      wgt[x * 4 + t] = wv;
      wsum += wv;
    }
    for (int t = 0; t < 4; ++t) wgt[x * 4 + t] /= wsum;  // exact partition of unity
  }
  for (int y = 0; y < h; ++y) {
    const double* row = src.data() + static_cast<std::size_t>(y) * w;
    double* out = dst.data() + static_cast<std::size_t>(y) * out_w;
    for (int x = 0; x < out_w; ++x) {
      double acc = 0.0;
      for (int t = 0; t < 4; ++t) acc += wgt[x * 4 + t] * row[idx[x * 4 + t]];
      out[x] = acc;
    }
  }
  return dst;
}

std::vector<double> transpose(const std::vector<double>& src, int h, int w) {
  std::vector<double> dst(src.size());
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      dst[static_cast<std::size_t>(x) * h + y] = src[static_cast<std::size_t>(y) * w + x];
    }
  }
  return dst;
}

}  // namespace

ImageU8 bicubic_resize(const ImageU8& img, int out_h, int out_w) {
  if (out_h < 1 || out_w < 1) throw std::invalid_argument("bicubic: output dims must be >= 1");
  std::vector<double> horiz = resize_axis(img.pixels, img.height, img.width, out_w);
  std::vector<double> t = transpose(horiz, img.height, out_w);
  std::vector<double> vert = resize_axis(t, out_w, img.height, out_h);
  std::vector<double> full = transpose(vert, out_w, out_h);
  ImageU8 out(out_h, out_w);
  for (std::size_t i = 0; i < full.size(); ++i) out.pixels[i] = clamp255(full[i]);
  return out;
}

ImageU8 degrade(const ImageU8& hr, int scale) {
  if (scale < 1 || hr.height % scale != 0 || hr.width % scale != 0) {
    throw std::invalid_argument("degrade: HR dims must be a multiple of the scale");
  }
  ImageU8 lr = bicubic_resize(hr, hr.height / scale, hr.width / scale);
  for (double& v : lr.pixels) v = quantize(v);
  return lr;
}

// ---------------------------------------------------------------------------
// Synthetic scenes

ImageU8 synth_scene(Rng& rng, int h, int w) {
  if (h < 1 || w < 1) throw std::invalid_argument("synth_scene: dims must be >= 1");
  ImageU8 img(h, w);
  // smooth thermal gradient background
  const double base = 60.0 + 100.0 * rng.uniform();
  const double gx = (rng.uniform() - 0.5) * 80.0;
  const double gy = (rng.uniform() - 0.5) * 80.0;
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      img.at(y, x) = base + gx * (static_cast<double>(x) / w) + gy * (static_cast<double>(y) / h);
    }
  }
  // rectangular structures
  const int rects = 2 + rng.uniform_int(4);
  for (int r = 0; r < rects; ++r) {
    const int rw = 3 + rng.uniform_int(std::max(1, w / 3));
    const int rh = 3 + rng.uniform_int(std::max(1, h / 3));
    const int x0 = rng.uniform_int(std::max(1, w - rw));
    const int y0 = rng.uniform_int(std::max(1, h - rh));
    const double delta = (rng.uniform() < 0.5 ? -1.0 : 1.0) * (25.0 + 60.0 * rng.uniform());
    for (int y = y0; y < std::min(h, y0 + rh); ++y) {
      for (int x = x0; x < std::min(w, x0 + rw); ++x) img.at(y, x) += delta;
    }
  }
  // thin railing-like lines
  const int lines = 1 + rng.uniform_int(3);
  for (int l = 0; l < lines; ++l) {
    const double delta = (rng.uniform() < 0.5 ? -1.0 : 1.0) * (35.0 + 55.0 * rng.uniform());
    if (rng.uniform() < 0.5) {
      const int y = rng.uniform_int(h);
      for (int x = 0; x < w; ++x) img.at(y, x) += delta;
    } else {
      const int x = rng.uniform_int(w);
      for (int y = 0; y < h; ++y) img.at(y, x) += delta;
    }
  }
  // warm blobs (pedestrians, engines)
  const int blobs = 2 + rng.uniform_int(5);
  for (int bidx = 0; bidx < blobs; ++bidx) {
    const double cx = rng.uniform() * w;
    const double cy = rng.uniform() * h;
    const double sigma = 1.0 + 3.0 * rng.uniform();
    const double amp = 30.0 + 70.0 * rng.uniform();
    const int reach = static_cast<int>(3.0 * sigma) + 1;
    for (int y = std::max(0, static_cast<int>(cy) - reach);
         y < std::min(h, static_cast<int>(cy) + reach + 1); ++y) {
      for (int x = std::max(0, static_cast<int>(cx) - reach);
           x < std::min(w, static_cast<int>(cx) + reach + 1); ++x) {
        const double d2 = (x - cx) * (x - cx) + (y - cy) * (y - cy);
        img.at(y, x) += amp * std::exp(-d2 / (2.0 * sigma * sigma));
      }
    }
  }
  for (double& v : img.pixels) v = quantize(v);
  return img;
}

// ---------------------------------------------------------------------------
// Flips and rotations

ImageU8 flip_h(const ImageU8& img) {
  ImageU8 out(img.height, img.width);
  for (int y = 0; y < img.height; ++y) {
    for (int x = 0; x < img.width; ++x) out.at(y, x) = img.at(y, img.width - 1 - x);
  }
  return out;
}

ImageU8 flip_v(const ImageU8& img) {
  ImageU8 out(img.height, img.width);
  for (int y = 0; y < img.height; ++y) {
    for (int x = 0; x < img.width; ++x) out.at(y, x) = img.at(img.height - 1 - y, x);
  }
  return out;
}

ImageU8 rot90(const ImageU8& img) {
  ImageU8 out(img.width, img.height);
  for (int y = 0; y < img.height; ++y) {
    for (int x = 0; x < img.width; ++x) out.at(x, img.height - 1 - y) = img.at(y, x);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Datasets

namespace {

std::vector<std::string> list_pgm(const std::string& dir) {
  if (!fs::is_directory(dir)) {
    throw std::runtime_error("dataset: '" + dir + "' is not a directory");
  }
  std::vector<std::string> names;
  for (const auto& entry : fs::directory_iterator(dir)) {
    if (entry.is_regular_file() && entry.path().extension() == ".pgm") {
      names.push_back(entry.path().filename().string());
    }
  }
  std::sort(names.begin(), names.end());
  if (names.empty()) throw std::runtime_error("dataset: no .pgm files in '" + dir + "'");
  return names;
}

ImageU8 crop_to_multiple(const ImageU8& img, int scale) {
  const int h = (img.height / scale) * scale;
  const int w = (img.width / scale) * scale;
  if (h < 1 || w < 1) throw std::runtime_error("dataset: image smaller than the scale factor");
  if (h == img.height && w == img.width) return img;
  ImageU8 out(h, w);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) out.at(y, x) = img.at(y, x);
  }
  return out;
}

void write_split_files(const std::string& root, const std::vector<std::string>& names,
                       std::uint64_t seed) {
  // Deterministic shuffle, then the paper-style 8:2 split.
  std::vector<std::string> shuffled = names;
  Rng split_rng = Rng(seed).fork(0x51u);
  for (std::size_t i = shuffled.size(); i > 1; --i) {
    std::swap(shuffled[i - 1], shuffled[split_rng.uniform_int(static_cast<int>(i))]);
  }
  const std::size_t train_count = shuffled.size() * 8 / 10;
  std::ofstream train(root + "/train.txt");
  std::ofstream test(root + "/test.txt");
  if (!train || !test) throw std::runtime_error("dataset: cannot write split files");
  for (std::size_t i = 0; i < shuffled.size(); ++i) {
    (i < train_count ? train : test) << shuffled[i] << '\n';
  }
}

void derive_lr_dir(const std::string& root, const std::vector<std::string>& names, int scale) {
  const std::string lr_dir = root + "/lr_x" + std::to_string(scale);
  fs::create_directories(lr_dir);
  for (const std::string& name : names) {
    ImageU8 hr = load_pgm(root + "/hr/" + name);
    save_pgm(lr_dir + "/" + name, degrade(hr, scale));
  }
}

}  // namespace

void make_dataset(const std::string& root, int count, int h, int w, int scale,
                  std::uint64_t seed) {
  if (count < 1) throw std::invalid_argument("make_dataset: count must be >= 1");
  if (h % scale != 0 || w % scale != 0) {
    throw std::invalid_argument("make_dataset: scene dims must be a multiple of the scale");
  }
  fs::create_directories(root + "/hr");
  Rng rng(seed);
  std::vector<std::string> names;
  for (int i = 0; i < count; ++i) {
    char name[32];
    std::snprintf(name, sizeof(name), "scene_%04d.pgm", i);
    Rng scene_rng = rng.fork(static_cast<std::uint64_t>(i));
    save_pgm(root + "/hr/" + name, synth_scene(scene_rng, h, w));
    names.emplace_back(name);
  }
  std::sort(names.begin(), names.end());
  derive_lr_dir(root, names, scale);
  write_split_files(root, names, seed);
}

void derive_dataset(const std::string& root, const std::string& hr_dir, int scale,
                    std::uint64_t seed) {
  const std::vector<std::string> names = list_pgm(hr_dir);
  fs::create_directories(root + "/hr");
  for (const std::string& name : names) {
    save_pgm(root + "/hr/" + name, crop_to_multiple(load_pgm(hr_dir + "/" + name), scale));
  }
  derive_lr_dir(root, names, scale);
  write_split_files(root, names, seed);
}

std::vector<SrPair> make_pairs(const std::string& hr_dir, int scale) {
  const std::vector<std::string> names = list_pgm(hr_dir);
  std::vector<SrPair> pairs;
  pairs.reserve(names.size());
  for (const std::string& name : names) {
    SrPair p;
    p.name = name;
    p.hr = crop_to_multiple(load_pgm(hr_dir + "/" + name), scale);
    p.lr = degrade(p.hr, scale);
    p.scale = scale;
    pairs.push_back(std::move(p));
  }
  return pairs;
}

std::vector<SrPair> load_split(const std::string& root, int scale, const std::string& split) {
  std::vector<std::string> names;
  if (split == "all") {
    names = list_pgm(root + "/hr");
  } else if (split == "train" || split == "test") {
    std::ifstream is(root + "/" + split + ".txt");
    if (!is) {
      throw std::runtime_error("dataset: missing " + split + ".txt under '" + root +
                               "'; run make-data first");
    }
    std::string line;
    while (std::getline(is, line)) {
      if (!line.empty()) names.push_back(line);
    }
    if (names.empty()) throw std::runtime_error("dataset: empty split file " + split + ".txt");
  } else {
    throw std::invalid_argument("dataset: split must be train, test or all");
  }
  const std::string lr_dir = root + "/lr_x" + std::to_string(scale);
  std::vector<SrPair> pairs;
  pairs.reserve(names.size());
  for (const std::string& name : names) {
    SrPair p;
    p.name = name;
    p.hr = load_pgm(root + "/hr/" + name);
    p.lr = load_pgm(lr_dir + "/" + name);
    p.scale = scale;
    if (p.hr.height != p.lr.height * scale || p.hr.width != p.lr.width * scale) {
      throw std::runtime_error("dataset: '" + name + "' LR/HR dims disagree with scale x" +
                               std::to_string(scale));
    }
    pairs.push_back(std::move(p));
  }
  return pairs;
}

// ---------------------------------------------------------------------------
// Patch sampling

PatchSampler::PatchSampler(const std::vector<SrPair>* pairs, int patch, bool augment,
                           std::uint64_t seed)
    : pairs_(pairs), patch_(patch), augment_(augment), rng_(seed) {
  if (!pairs_ || pairs_->empty()) throw std::invalid_argument("sampler: empty pair list");
  for (const SrPair& p : *pairs_) {
    if (p.lr.height < patch_ || p.lr.width < patch_) {
      throw std::invalid_argument("sampler: patch " + std::to_string(patch_) +
                                  " exceeds LR image '" + p.name + "'");
    }
  }
}

void PatchSampler::sample(ImageU8& lr_patch, ImageU8& hr_patch) {
  const SrPair& p = (*pairs_)[rng_.uniform_int(static_cast<int>(pairs_->size()))];
  const int s = p.scale;
  const int y0 = rng_.uniform_int(p.lr.height - patch_ + 1);
  const int x0 = rng_.uniform_int(p.lr.width - patch_ + 1);
  lr_patch = ImageU8(patch_, patch_);
  hr_patch = ImageU8(patch_ * s, patch_ * s);
  for (int y = 0; y < patch_; ++y) {
    for (int x = 0; x < patch_; ++x) lr_patch.at(y, x) = p.lr.at(y0 + y, x0 + x);
  }
  for (int y = 0; y < patch_ * s; ++y) {
    for (int x = 0; x < patch_ * s; ++x) hr_patch.at(y, x) = p.hr.at(y0 * s + y, x0 * s + x);
  }
  if (augment_) {
    const bool fh = rng_.uniform() < 0.5;
    const bool fv = rng_.uniform() < 0.5;
    const int rot = rng_.uniform_int(4);
    if (fh) {
      lr_patch = flip_h(lr_patch);
      hr_patch = flip_h(hr_patch);
    }
    if (fv) {
      lr_patch = flip_v(lr_patch);
      hr_patch = flip_v(hr_patch);
    }
    for (int r = 0; r < rot; ++r) {
      lr_patch = rot90(lr_patch);
      hr_patch = rot90(hr_patch);
    }
  }
}

// ---------------------------------------------------------------------------
// Tensor bridges

Tensor image_to_tensor(const ImageU8& img) {
  Tensor t = zeros({1, 1, img.height, img.width});
  double* p = t.data();
  for (std::size_t i = 0; i < img.pixels.size(); ++i) p[i] = img.pixels[i] / 255.0;
  return t;
}

ImageU8 tensor_to_image(const Tensor& t) {
  if (t.ndim() != 4 || t.dim(0) != 1 || t.dim(1) != 1) {
    throw std::invalid_argument("tensor_to_image: expected shape (1,1,H,W), got " +
                                shape_str(t.shape()));
  }
  ImageU8 img(t.dim(2), t.dim(3));
  const double* p = t.data();
  for (std::size_t i = 0; i < img.pixels.size(); ++i) img.pixels[i] = clamp255(p[i] * 255.0);
  return img;
}

}  // namespace lkf
