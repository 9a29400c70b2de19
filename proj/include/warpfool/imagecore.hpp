#pragma once

// Image tensor type, labeled datasets, and the two file formats the
// tool speaks natively: IDX (the MNIST distribution format) and binary
// PGM/PPM. Everything here is immutable after construction and safe to
// share read-only across workers.

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "warpfool/error.hpp"
#include "warpfool/rng.hpp"

namespace warpfool {

// C x H x W image, channel-planar, rows top-down, values in [0, 1].
// Geometry needs non-degenerate borderlines, hence the >= 8 floor on
// both spatial dimensions.
struct ImageTensor {
  int channels = 0;
  int height = 0;
  int width = 0;
  std::vector<double> data;

  static ImageTensor zeros(int c, int h, int w) {
    ImageTensor img;
    img.channels = c;
    img.height = h;
    img.width = w;
    img.data.assign(std::size_t(c) * h * w, 0.0);
    return img;
  }

  double& at(int c, int y, int x) {
    return data[(std::size_t(c) * height + y) * width + x];
  }
  double at(int c, int y, int x) const {
    return data[(std::size_t(c) * height + y) * width + x];
  }

  std::size_t size() const { return data.size(); }

  bool same_shape(const ImageTensor& o) const {
    return channels == o.channels && height == o.height && width == o.width;
  }

  void validate() const {
    if (channels < 1) throw std::invalid_argument("ImageTensor: channels < 1");
    if (height < 8 || width < 8)
      throw std::invalid_argument("ImageTensor: spatial dims must be >= 8");
    if (data.size() != std::size_t(channels) * height * width)
      throw std::invalid_argument("ImageTensor: data length != c*h*w");
    for (double v : data)
      if (!(v >= 0.0 && v <= 1.0))
        throw std::invalid_argument("ImageTensor: value outside [0,1]");
  }

  double mean() const {
    double s = 0.0;
    for (double v : data) s += v;
    return data.empty() ? 0.0 : s / double(data.size());
  }
};

// Images plus integer class labels in [0, class_count).
struct LabeledBatch {
  std::vector<ImageTensor> images;
  std::vector<int> labels;

  std::size_t size() const { return images.size(); }

  void validate(int class_count) const {
    if (images.size() != labels.size())
      throw std::invalid_argument("LabeledBatch: images/labels length mismatch");
    for (std::size_t i = 0; i < images.size(); ++i) {
      if (!images[i].same_shape(images[0]))
        throw std::invalid_argument("LabeledBatch: non-uniform image shapes");
      if (labels[i] < 0 || labels[i] >= class_count)
        throw std::invalid_argument("LabeledBatch: label outside [0, M)");
    }
  }

  // First n elements as a new batch (n clamped to size).
  LabeledBatch head(std::size_t n) const {
    LabeledBatch out;
    n = std::min(n, images.size());
    out.images.assign(images.begin(), images.begin() + n);
    out.labels.assign(labels.begin(), labels.begin() + n);
    return out;
  }
};

struct Dataset {
  LabeledBatch train;
  LabeledBatch test;
  int class_count = 0;
  std::string name;

  void validate() const {
    if (class_count < 2) throw std::invalid_argument("Dataset: class_count < 2");
    train.validate(class_count);
    test.validate(class_count);
  }
};

// ---------------------------------------------------------------------------
// IDX loading (big-endian headers, magic 0x803 for images, 0x801 for labels)

namespace detail {

inline std::uint32_t read_be32(std::istream& in, const char* what) {
  unsigned char b[4];
  if (!in.read(reinterpret_cast<char*>(b), 4))
    throw format_error(std::string("IDX: truncated header reading ") + what);
  return (std::uint32_t(b[0]) << 24) | (std::uint32_t(b[1]) << 16) |
         (std::uint32_t(b[2]) << 8) | std::uint32_t(b[3]);
}

}  // namespace detail

inline constexpr std::uint32_t kIdxImagesMagic = 0x00000803;
inline constexpr std::uint32_t kIdxLabelsMagic = 0x00000801;

// Reads an MNIST-format image/label file pair. Pixel bytes are scaled
// by 1/255 into [0, 1].
inline LabeledBatch load_idx(const std::filesystem::path& images_path,
                             const std::filesystem::path& labels_path) {
  std::ifstream imgs(images_path, std::ios::binary);
  if (!imgs) throw io_error("cannot open " + images_path.string());
  std::ifstream labs(labels_path, std::ios::binary);
  if (!labs) throw io_error("cannot open " + labels_path.string());

  const std::uint32_t img_magic = detail::read_be32(imgs, "image magic");
  if (img_magic != kIdxImagesMagic)
    throw format_error("IDX: bad image magic (expected 0x00000803)");
  const std::uint32_t n_images = detail::read_be32(imgs, "image count");
  const std::uint32_t rows = detail::read_be32(imgs, "rows");
  const std::uint32_t cols = detail::read_be32(imgs, "cols");
  if (rows < 8 || cols < 8 || rows > 4096 || cols > 4096)
    throw format_error("IDX: implausible image dimensions");

  const std::uint32_t lab_magic = detail::read_be32(labs, "label magic");
  if (lab_magic != kIdxLabelsMagic)
    throw format_error("IDX: bad label magic (expected 0x00000801)");
  const std::uint32_t n_labels = detail::read_be32(labs, "label count");
  if (n_images != n_labels)
    throw format_error("IDX: image count != label count");

  LabeledBatch batch;
  batch.images.reserve(n_images);
  batch.labels.reserve(n_images);
  std::vector<unsigned char> row(std::size_t(rows) * cols);
  for (std::uint32_t i = 0; i < n_images; ++i) {
    if (!imgs.read(reinterpret_cast<char*>(row.data()), std::streamsize(row.size())))
      throw format_error("IDX: truncated pixel payload");
    ImageTensor img = ImageTensor::zeros(1, int(rows), int(cols));
    for (std::size_t p = 0; p < row.size(); ++p)
      img.data[p] = double(row[p]) / 255.0;
    batch.images.push_back(std::move(img));
    char lab = 0;
    if (!labs.read(&lab, 1)) throw format_error("IDX: truncated label payload");
    batch.labels.push_back(int(static_cast<unsigned char>(lab)));
  }
  return batch;
}

// ---------------------------------------------------------------------------
// Binary PGM (P5) / PPM (P6), maxval 255

namespace detail {

// Round to nearest with ties to even, independent of the FP environment.
inline int quantize8(double v) {
  const double s = std::clamp(v, 0.0, 1.0) * 255.0;
  const double f = std::floor(s);
  const double frac = s - f;
  int q = int(f);
  if (frac > 0.5) {
    q += 1;
  } else if (frac == 0.5) {
    if (q % 2 != 0) q += 1;
  }
  return std::clamp(q, 0, 255);
}

inline int pnm_next_int(std::istream& in) {
  // Skips whitespace and '#' comments, per the netpbm grammar.
  int c = in.get();
  while (c != EOF) {
    if (c == '#') {
      while (c != EOF && c != '\n') c = in.get();
    } else if (std::isspace(c)) {
      c = in.get();
    } else {
      break;
    }
  }
  if (c == EOF || !std::isdigit(c)) throw format_error("PNM: malformed header");
  int value = 0;
  while (c != EOF && std::isdigit(c)) {
    value = value * 10 + (c - '0');
    if (value > (1 << 24)) throw format_error("PNM: header value out of range");
    c = in.get();
  }
  if (c != EOF) in.unget();  // leave the terminator for the caller
  return value;
}

}  // namespace detail

// Writes 1-channel images as binary PGM and 3-channel as binary PPM.
inline void save_image(const ImageTensor& img, const std::filesystem::path& path) {
  if (img.channels != 1 && img.channels != 3)
    throw format_error("save_image: only 1-channel PGM or 3-channel PPM supported");
  std::ofstream out(path, std::ios::binary);
  if (!out) throw io_error("cannot write " + path.string());
  out << (img.channels == 1 ? "P5" : "P6") << "\n"
      << img.width << " " << img.height << "\n255\n";
  std::vector<unsigned char> payload;
  payload.reserve(std::size_t(img.channels) * img.height * img.width);
  for (int y = 0; y < img.height; ++y)
    for (int x = 0; x < img.width; ++x)
      for (int c = 0; c < img.channels; ++c)  // PPM interleaves per pixel
        payload.push_back(static_cast<unsigned char>(detail::quantize8(img.at(c, y, x))));
  out.write(reinterpret_cast<const char*>(payload.data()),
            std::streamsize(payload.size()));
  if (!out) throw io_error("short write to " + path.string());
}

inline ImageTensor load_image(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw io_error("cannot open " + path.string());
  char m0 = 0, m1 = 0;
  in.get(m0);
  in.get(m1);
  int channels = 0;
  if (m0 == 'P' && m1 == '5') channels = 1;
  else if (m0 == 'P' && m1 == '6') channels = 3;
  else throw format_error("PNM: unknown magic (want P5 or P6)");
  const int w = detail::pnm_next_int(in);
  const int h = detail::pnm_next_int(in);
  const int maxval = detail::pnm_next_int(in);
  if (maxval != 255) throw format_error("PNM: only maxval 255 supported");
  // Exactly one whitespace byte separates the header from the payload.
  in.get();
  std::vector<unsigned char> payload(std::size_t(channels) * h * w);
  if (!in.read(reinterpret_cast<char*>(payload.data()), std::streamsize(payload.size())))
    throw format_error("PNM: truncated payload");
  ImageTensor img = ImageTensor::zeros(channels, h, w);
  std::size_t p = 0;
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      for (int c = 0; c < channels; ++c)
        img.at(c, y, x) = double(payload[p++]) / 255.0;
  return img;
}

// ---------------------------------------------------------------------------
// Synthetic 4-class fixture: disk, cross, bar, ring on 28x28 canvases.
// Pure function of its arguments; exists so the full pipeline runs with
// no external downloads.

namespace detail {

inline double box_sdf(double x, double y, double cx, double cy, double hw, double hh) {
  const double dx = std::abs(x - cx) - hw;
  const double dy = std::abs(y - cy) - hh;
  const double ox = std::max(dx, 0.0);
  const double oy = std::max(dy, 0.0);
  return std::min(std::max(dx, dy), 0.0) + std::sqrt(ox * ox + oy * oy);
}

inline ImageTensor render_shape(int cls, Rng& rng) {
  constexpr int kSide = 28;
  ImageTensor img = ImageTensor::zeros(1, kSide, kSide);
  const double cx = 13.5 + rng.uniform(-3.5, 3.5);
  const double cy = 13.5 + rng.uniform(-3.5, 3.5);
  const double intensity = rng.uniform(0.55, 1.0);

  // Shapes are rendered from signed distances with a 1 px linear edge
  // ramp, so they stay clean under bilinear resampling. The classes
  // deliberately overlap at the small end (a small thick ring reads as
  // a disk, a cross with a foreshortened arm reads as a bar) so the
  // trained classifier keeps graded margins instead of saturating.
  switch (cls) {
    case 0: {  // disk
      const double r = rng.uniform(4.0, 9.0);
      for (int y = 0; y < kSide; ++y)
        for (int x = 0; x < kSide; ++x) {
          const double d = std::hypot(x - cx, y - cy) - r;
          img.at(0, y, x) = intensity * std::clamp(0.5 - d, 0.0, 1.0);
        }
      break;
    }
    case 1: {  // cross: two perpendicular strokes through the center;
               // the second arm may be nearly degenerate, putting short
               // strokes on a real cross/bar decision boundary
      const double arm = rng.uniform(6.5, 10.0);
      const double arm2 = rng.uniform(1.2, 10.0);
      const double hwid = rng.uniform(1.0, 2.0);
      for (int y = 0; y < kSide; ++y)
        for (int x = 0; x < kSide; ++x) {
          const double d1 = box_sdf(x, y, cx, cy, arm, hwid);
          const double d2 = box_sdf(x, y, cx, cy, hwid, arm2);
          const double d = std::min(d1, d2);
          img.at(0, y, x) = intensity * std::clamp(0.5 - d, 0.0, 1.0);
        }
      break;
    }
    case 2: {  // bar: one long stroke, horizontal or vertical; length is
               // part of the class identity, so strong shrinks leave the
               // trained manifold
      const double len = rng.uniform(8.5, 10.5);
      const double hwid = rng.uniform(1.0, 2.2);
      const bool horizontal = (rng.next_u64() & 1) != 0;
      for (int y = 0; y < kSide; ++y)
        for (int x = 0; x < kSide; ++x) {
          const double d = horizontal ? box_sdf(x, y, cx, cy, len, hwid)
                                      : box_sdf(x, y, cx, cy, hwid, len);
          img.at(0, y, x) = intensity * std::clamp(0.5 - d, 0.0, 1.0);
        }
      break;
    }
    case 3: {  // ring: annulus
      const double r = rng.uniform(4.5, 9.0);
      const double half_thick = rng.uniform(0.7, 1.5);
      for (int y = 0; y < kSide; ++y)
        for (int x = 0; x < kSide; ++x) {
          const double d = std::abs(std::hypot(x - cx, y - cy) - r) - half_thick;
          img.at(0, y, x) = intensity * std::clamp(0.5 - d, 0.0, 1.0);
        }
      break;
    }
    default:
      throw std::invalid_argument("render_shape: class out of range");
  }
  return img;
}

inline LabeledBatch synth_split(std::uint64_t seed, std::uint64_t split_tag, int n) {
  LabeledBatch batch;
  batch.images.reserve(std::size_t(n));
  batch.labels.reserve(std::size_t(n));
  for (int i = 0; i < n; ++i) {
    const int cls = i % 4;  // round-robin keeps the class histogram exact
    Rng rng(derive_seed(seed, split_tag, std::uint64_t(i)));
    batch.images.push_back(render_shape(cls, rng));
    batch.labels.push_back(cls);
  }
  return batch;
}

}  // namespace detail

inline Dataset synth_dataset(std::uint64_t seed, int n_train, int n_test) {
  if (n_train < 10 || n_test < 10)
    throw std::invalid_argument("synth_dataset: counts must be >= 10");
  Dataset ds;
  ds.train = detail::synth_split(seed, 1, n_train);
  ds.test = detail::synth_split(seed, 2, n_test);
  ds.class_count = 4;
  ds.name = "synth";
  return ds;
}

}  // namespace warpfool
