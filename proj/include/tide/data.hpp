#pragma once

#include <cstdint>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "tide/rng.hpp"
#include "tide/tensor.hpp"

namespace tide {

struct Dataset {
  Tensor images;            // [N, C, H, W], values in [0,1] before normalization
  std::vector<int> labels;  // class indices in [0, classes)
  std::string split;
  int classes = 10;

  int size() const { return images.ndim() == 4 ? images.dim(0) : 0; }

  Tensor image(int i) const {
    const int c = images.dim(1), h = images.dim(2), w = images.dim(3);
    Tensor out({c, h, w});
    const int64_t stride = static_cast<int64_t>(c) * h * w;
    for (int64_t j = 0; j < stride; ++j) out[j] = images[i * stride + j];
    return out;
  }
};

namespace idx {

constexpr uint32_t kImagesMagic = 0x00000803;
constexpr uint32_t kLabelsMagic = 0x00000801;

inline uint32_t read_u32_be(std::istream& in, const std::string& path) {
  unsigned char b[4];
  in.read(reinterpret_cast<char*>(b), 4);
  if (!in)
    throw std::runtime_error("idx: truncated header in " + path);
  return (static_cast<uint32_t>(b[0]) << 24) | (static_cast<uint32_t>(b[1]) << 16) |
         (static_cast<uint32_t>(b[2]) << 8) | static_cast<uint32_t>(b[3]);
}

inline void write_u32_be(std::ostream& out, uint32_t v) {
  unsigned char b[4] = {static_cast<unsigned char>(v >> 24), static_cast<unsigned char>(v >> 16),
                        static_cast<unsigned char>(v >> 8), static_cast<unsigned char>(v)};
  out.write(reinterpret_cast<const char*>(b), 4);
}

}  // namespace idx

// Reads an IDX image/label pair; pixels are scaled to [0,1].
inline Dataset load_idx(const std::string& images_path, const std::string& labels_path) {
  std::ifstream img(images_path, std::ios::binary);
  if (!img) throw std::runtime_error("idx: cannot open " + images_path);
  const uint32_t magic_i = idx::read_u32_be(img, images_path);
  if (magic_i != idx::kImagesMagic)
    throw std::runtime_error("idx: bad image magic in " + images_path + " (expected 0x00000803)");
  const uint32_t n = idx::read_u32_be(img, images_path);
  const uint32_t rows = idx::read_u32_be(img, images_path);
  const uint32_t cols = idx::read_u32_be(img, images_path);
  const int64_t expected = static_cast<int64_t>(n) * rows * cols;
  std::vector<unsigned char> pixels(static_cast<size_t>(expected));
  img.read(reinterpret_cast<char*>(pixels.data()), expected);
  if (img.gcount() != expected)
    throw std::runtime_error("idx: truncated image payload in " + images_path + " (expected " +
                             std::to_string(expected + 16) + " bytes)");

  std::ifstream lab(labels_path, std::ios::binary);
  if (!lab) throw std::runtime_error("idx: cannot open " + labels_path);
  const uint32_t magic_l = idx::read_u32_be(lab, labels_path);
  if (magic_l != idx::kLabelsMagic)
    throw std::runtime_error("idx: bad label magic in " + labels_path + " (expected 0x00000801)");
  const uint32_t nl = idx::read_u32_be(lab, labels_path);
  if (nl != n)
    throw std::runtime_error("idx: image/label count mismatch (" + std::to_string(n) + " vs " +
                             std::to_string(nl) + ")");
  std::vector<unsigned char> raw(nl);
  lab.read(reinterpret_cast<char*>(raw.data()), nl);
  if (lab.gcount() != static_cast<std::streamsize>(nl))
    throw std::runtime_error("idx: truncated label payload in " + labels_path + " (expected " +
                             std::to_string(nl + 8) + " bytes)");

  Dataset ds;
  ds.images = Tensor({static_cast<int>(n), 1, static_cast<int>(rows), static_cast<int>(cols)});
  for (int64_t i = 0; i < expected; ++i) ds.images[i] = pixels[static_cast<size_t>(i)] / 255.0;
  ds.labels.assign(raw.begin(), raw.end());
  return ds;
}

// Writes a dataset back to the IDX pair; values are rounded to bytes.
inline void save_idx(const Dataset& ds, const std::string& images_path,
                     const std::string& labels_path) {
  std::ofstream img(images_path, std::ios::binary);
  if (!img) throw std::runtime_error("idx: cannot write " + images_path);
  idx::write_u32_be(img, idx::kImagesMagic);
  idx::write_u32_be(img, static_cast<uint32_t>(ds.size()));
  idx::write_u32_be(img, static_cast<uint32_t>(ds.images.dim(2)));
  idx::write_u32_be(img, static_cast<uint32_t>(ds.images.dim(3)));
  for (int64_t i = 0; i < ds.images.size(); ++i) {
    const double v = ds.images[i] * 255.0;
    const int b = v < 0 ? 0 : (v > 255 ? 255 : static_cast<int>(v + 0.5));
    img.put(static_cast<char>(b));
  }
  std::ofstream lab(labels_path, std::ios::binary);
  if (!lab) throw std::runtime_error("idx: cannot write " + labels_path);
  idx::write_u32_be(lab, idx::kLabelsMagic);
  idx::write_u32_be(lab, static_cast<uint32_t>(ds.size()));
  for (int v : ds.labels) lab.put(static_cast<char>(v));
}

// x <- (x - mean) / std, per channel.
inline Dataset normalize(const Dataset& ds, const std::vector<double>& mean,
                         const std::vector<double>& std_dev) {
  const int c = ds.images.dim(1);
  if (static_cast<int>(mean.size()) != c || static_cast<int>(std_dev.size()) != c)
    throw std::invalid_argument("normalize: channel count mismatch");
  for (double s : std_dev)
    if (s <= 0.0) throw std::invalid_argument("normalize: std must be positive");
  Dataset out = ds;
  const int n = ds.size(), h = ds.images.dim(2), w = ds.images.dim(3);
  for (int i = 0; i < n; ++i)
    for (int ch = 0; ch < c; ++ch) {
      const int64_t base = (static_cast<int64_t>(i) * c + ch) * h * w;
      for (int64_t j = 0; j < static_cast<int64_t>(h) * w; ++j)
        out.images[base + j] = (out.images[base + j] - mean[static_cast<size_t>(ch)]) /
                               std_dev[static_cast<size_t>(ch)];
    }
  return out;
}

enum class SyntheticKind { blobs, bars };

// Seeded synthetic tasks, linearly separable by construction:
// blobs  - two Gaussian bumps at opposite corners of an 8x8 image
// bars   - one horizontal vs one vertical bar
inline Dataset synthetic_task(SyntheticKind kind, int n, uint64_t seed, int hw = 8) {
  Rng rng(seed);
  Dataset ds;
  ds.classes = 2;
  ds.images = Tensor({n, 1, hw, hw});
  ds.labels.resize(static_cast<size_t>(n));
  for (int i = 0; i < n; ++i) {
    const int label = static_cast<int>(rng.uniform_int(2));
    ds.labels[static_cast<size_t>(i)] = label;
    double* img = ds.images.data() + static_cast<int64_t>(i) * hw * hw;
    if (kind == SyntheticKind::blobs) {
      const double cy = label == 0 ? hw * 0.3 : hw * 0.7;
      const double cx = label == 0 ? hw * 0.3 : hw * 0.7;
      const double sigma = hw * 0.15;
      for (int y = 0; y < hw; ++y)
        for (int x = 0; x < hw; ++x) {
          const double d2 = (y - cy) * (y - cy) + (x - cx) * (x - cx);
          double v = std::exp(-d2 / (2.0 * sigma * sigma)) + 0.02 * rng.normal();
          img[y * hw + x] = std::min(1.0, std::max(0.0, v));
        }
    } else {
      const int pos = 1 + static_cast<int>(rng.uniform_int(static_cast<uint64_t>(hw - 2)));
      for (int y = 0; y < hw; ++y)
        for (int x = 0; x < hw; ++x) {
          const bool on = label == 0 ? (y == pos) : (x == pos);
          double v = (on ? 0.9 : 0.0) + 0.02 * rng.normal();
          img[y * hw + x] = std::min(1.0, std::max(0.0, v));
        }
    }
  }
  return ds;
}

enum class CorruptionKind {
  gaussian_noise,
  gaussian_blur,
  rotate_15,
  horizontal_flip,
  contrast,
  brightness
};

struct Corruption {
  CorruptionKind kind = CorruptionKind::gaussian_noise;
  int severity = 1;  // 1..5
};

inline CorruptionKind parse_corruption_kind(const std::string& name) {
  if (name == "gaussian-noise") return CorruptionKind::gaussian_noise;
  if (name == "gaussian-blur") return CorruptionKind::gaussian_blur;
  if (name == "rotate-15") return CorruptionKind::rotate_15;
  if (name == "horizontal-flip") return CorruptionKind::horizontal_flip;
  if (name == "contrast") return CorruptionKind::contrast;
  if (name == "brightness") return CorruptionKind::brightness;
  throw std::invalid_argument("unknown corruption kind: " + name);
}

inline const char* corruption_name(CorruptionKind k) {
  switch (k) {
    case CorruptionKind::gaussian_noise: return "gaussian-noise";
    case CorruptionKind::gaussian_blur: return "gaussian-blur";
    case CorruptionKind::rotate_15: return "rotate-15";
    case CorruptionKind::horizontal_flip: return "horizontal-flip";
    case CorruptionKind::contrast: return "contrast";
    case CorruptionKind::brightness: return "brightness";
  }
  return "?";
}

// Applies one corruption in pixel space ([0,1] range, pre-normalization).
// Deterministic given the seed; severities grade from mild to severe.
inline Tensor corrupt(const Tensor& image, const Corruption& c, uint64_t seed) {
  if (c.severity < 1 || c.severity > 5) throw std::invalid_argument("corrupt: severity in 1..5");
  const int ch = image.dim(0), h = image.dim(1), w = image.dim(2);
  const int s = c.severity - 1;
  Tensor out = image;
  auto clamp01 = [](double v) { return v < 0.0 ? 0.0 : (v > 1.0 ? 1.0 : v); };
  switch (c.kind) {
    case CorruptionKind::gaussian_noise: {
      static constexpr double kSigma[5] = {0.04, 0.08, 0.12, 0.18, 0.26};
      Rng rng(seed);
      for (int64_t i = 0; i < out.size(); ++i)
        out[i] = clamp01(out[i] + kSigma[s] * rng.normal());
      break;
    }
    case CorruptionKind::gaussian_blur: {
      static constexpr double kSigma[5] = {0.4, 0.6, 0.8, 1.1, 1.5};
      const double sigma = kSigma[s];
      const int radius = std::max(1, static_cast<int>(std::ceil(3.0 * sigma)));
      std::vector<double> kern(static_cast<size_t>(2 * radius + 1));
      for (int i = -radius; i <= radius; ++i)
        kern[static_cast<size_t>(i + radius)] = std::exp(-(i * i) / (2.0 * sigma * sigma));
      auto blur_axis = [&](const Tensor& src, bool horizontal) {
        Tensor dst({ch, h, w});
        for (int cc = 0; cc < ch; ++cc)
          for (int y = 0; y < h; ++y)
            for (int x = 0; x < w; ++x) {
              double acc = 0.0, norm = 0.0;
              for (int k = -radius; k <= radius; ++k) {
                const int yy = horizontal ? y : y + k;
                const int xx = horizontal ? x + k : x;
                if (yy < 0 || yy >= h || xx < 0 || xx >= w) continue;
                const double kv = kern[static_cast<size_t>(k + radius)];
                acc += kv * src[(static_cast<int64_t>(cc) * h + yy) * w + xx];
                norm += kv;
              }
              dst[(static_cast<int64_t>(cc) * h + y) * w + x] = acc / norm;
            }
        return dst;
      };
      out = blur_axis(blur_axis(out, true), false);
      break;
    }
    case CorruptionKind::rotate_15: {
      const double angle = 3.0 * c.severity * 3.14159265358979323846 / 180.0;
      const double cy = (h - 1) / 2.0, cx = (w - 1) / 2.0;
      const double ca = std::cos(angle), sa = std::sin(angle);
      Tensor rot({ch, h, w});
      for (int cc = 0; cc < ch; ++cc)
        for (int y = 0; y < h; ++y)
          for (int x = 0; x < w; ++x) {
            // inverse map with bilinear sampling
            const double sy = ca * (y - cy) + sa * (x - cx) + cy;
            const double sx = -sa * (y - cy) + ca * (x - cx) + cx;
            const int y0 = static_cast<int>(std::floor(sy));
            const int x0 = static_cast<int>(std::floor(sx));
            const double fy = sy - y0, fx = sx - x0;
            double v = 0.0;
            for (int dy = 0; dy <= 1; ++dy)
              for (int dx = 0; dx <= 1; ++dx) {
                const int yy = y0 + dy, xx = x0 + dx;
                if (yy < 0 || yy >= h || xx < 0 || xx >= w) continue;
                const double wgt = (dy ? fy : 1 - fy) * (dx ? fx : 1 - fx);
                v += wgt * image[(static_cast<int64_t>(cc) * h + yy) * w + xx];
              }
            rot[(static_cast<int64_t>(cc) * h + y) * w + x] = clamp01(v);
          }
      out = rot;
      break;
    }
    case CorruptionKind::horizontal_flip: {
      for (int cc = 0; cc < ch; ++cc)
        for (int y = 0; y < h; ++y)
          for (int x = 0; x < w; ++x)
            out[(static_cast<int64_t>(cc) * h + y) * w + x] =
                image[(static_cast<int64_t>(cc) * h + y) * w + (w - 1 - x)];
      break;
    }
    case CorruptionKind::contrast: {
      static constexpr double kScale[5] = {0.85, 0.7, 0.55, 0.4, 0.25};
      for (int64_t i = 0; i < out.size(); ++i)
        out[i] = clamp01((out[i] - 0.5) * kScale[s] + 0.5);
      break;
    }
    case CorruptionKind::brightness: {
      static constexpr double kShift[5] = {0.06, 0.12, 0.18, 0.24, 0.3};
      for (int64_t i = 0; i < out.size(); ++i) out[i] = clamp01(out[i] + kShift[s]);
      break;
    }
  }
  return out;
}

// Seeded batch iteration: a fresh permutation per epoch, derived from the
// base seed and epoch index.
class Batcher {
 public:
  Batcher(int n, int batch, uint64_t seed) : n_(n), batch_(batch), seed_(seed) { reshuffle(); }

  // Indices for the next batch; reshuffles at epoch boundaries.
  std::vector<int> next() {
    std::vector<int> out;
    out.reserve(static_cast<size_t>(batch_));
    for (int k = 0; k < batch_; ++k) {
      if (cursor_ == n_) {
        ++epoch_;
        reshuffle();
      }
      out.push_back(order_[static_cast<size_t>(cursor_++)]);
    }
    return out;
  }

  int64_t epoch() const { return epoch_; }

 private:
  void reshuffle() {
    Rng rng(seed_ ^ (0x9e3779b97f4a7c15ULL * static_cast<uint64_t>(epoch_ + 1)));
    order_ = rng.permutation(n_);
    cursor_ = 0;
  }

  int n_, batch_;
  uint64_t seed_;
  int64_t epoch_ = 0;
  int cursor_ = 0;
  std::vector<int> order_;
};

inline Tensor gather_batch(const Dataset& ds, const std::vector<int>& idx) {
  const int c = ds.images.dim(1), h = ds.images.dim(2), w = ds.images.dim(3);
  const int64_t stride = static_cast<int64_t>(c) * h * w;
  Tensor out({static_cast<int>(idx.size()), c, h, w});
  for (size_t k = 0; k < idx.size(); ++k)
    for (int64_t j = 0; j < stride; ++j)
      out[static_cast<int64_t>(k) * stride + j] = ds.images[idx[k] * stride + j];
  return out;
}

inline std::vector<int> gather_labels(const Dataset& ds, const std::vector<int>& idx) {
  std::vector<int> out;
  out.reserve(idx.size());
  for (int i : idx) out.push_back(ds.labels[static_cast<size_t>(i)]);
  return out;
}

}  // namespace tide
