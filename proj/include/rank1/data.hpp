#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <numeric>
#include <optional>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "rank1/random.hpp"
#include "rank1/tensor.hpp"

namespace rank1 {

/// Labelled images: images [M, C, H, W] with pixels in [0, 1].
struct Dataset {
  Tensor images;
  std::vector<int> labels;
  std::size_t class_count = 0;

  std::size_t size() const { return labels.size(); }
  Shape sample_shape() const { return {images.dim(1), images.dim(2), images.dim(3)}; }
};

inline void check_dataset(const Dataset& d) {
  if (d.labels.empty()) throw ValueError("dataset is empty");
  if (d.images.rank() != 4 || d.images.dim(0) != d.labels.size()) {
    throw ShapeError("dataset: images " + to_string(d.images.shape()) + " do not match " +
                     std::to_string(d.labels.size()) + " labels");
  }
  for (int l : d.labels) {
    if (l < 0 || static_cast<std::size_t>(l) >= d.class_count) {
      throw ValueError("dataset: label " + std::to_string(l) + " outside [0, " +
                       std::to_string(d.class_count) + ")");
    }
  }
}

/// Samples [begin, begin + count) as a new dataset.
inline Dataset slice(const Dataset& d, std::size_t begin, std::size_t count) {
  if (count == 0 || begin + count > d.size()) throw ValueError("slice: range outside the dataset");
  const std::size_t per = d.images.size() / d.size();
  Dataset out;
  out.class_count = d.class_count;
  out.labels.assign(d.labels.begin() + static_cast<std::ptrdiff_t>(begin),
                    d.labels.begin() + static_cast<std::ptrdiff_t>(begin + count));
  Shape shape = d.images.shape();
  shape[0] = count;
  const auto first = d.images.data().begin() + static_cast<std::ptrdiff_t>(begin * per);
  out.images = Tensor(shape, std::vector<double>(first, first + static_cast<std::ptrdiff_t>(count * per)));
  return out;
}

/// First `count` samples (all of them when count is 0 or too large).
inline Dataset take(const Dataset& d, std::size_t count) {
  if (count == 0 || count >= d.size()) return d;
  return slice(d, 0, count);
}

// ---------------------------------------------------------------------------
// IDX (big-endian) as distributed with MNIST
// ---------------------------------------------------------------------------

inline constexpr std::uint32_t kIdxImagesMagic = 0x00000803;
inline constexpr std::uint32_t kIdxLabelsMagic = 0x00000801;

namespace detail {

inline std::vector<unsigned char> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline std::uint32_t read_be32(const std::vector<unsigned char>& buf, std::size_t at, const std::string& what) {
  if (at + 4 > buf.size()) throw ParseError(what + ": truncated header");
  return (std::uint32_t{buf[at]} << 24) | (std::uint32_t{buf[at + 1]} << 16) | (std::uint32_t{buf[at + 2]} << 8) |
         std::uint32_t{buf[at + 3]};
}

inline std::string hex32(std::uint32_t v) {
  std::ostringstream os;
  os << "0x" << std::hex << v;
  return os.str();
}

inline void put_be32(std::ofstream& out, std::uint32_t v) {
  const char bytes[4] = {static_cast<char>(v >> 24), static_cast<char>(v >> 16), static_cast<char>(v >> 8),
                         static_cast<char>(v)};
  out.write(bytes, 4);
}

}  // namespace detail

/// Parse an IDX image file and its label file. Pixels are scaled by 1/255.
inline Dataset load_idx(const std::filesystem::path& images_path, const std::filesystem::path& labels_path,
                        std::size_t class_count = 10) {
  const auto img = detail::read_file(images_path);
  const auto lbl = detail::read_file(labels_path);
  const std::string iname = images_path.string(), lname = labels_path.string();

  if (const auto magic = detail::read_be32(img, 0, iname); magic != kIdxImagesMagic) {
    throw ParseError(iname + ": bad magic " + detail::hex32(magic) + " for an image file");
  }
  if (const auto magic = detail::read_be32(lbl, 0, lname); magic != kIdxLabelsMagic) {
    throw ParseError(lname + ": bad magic " + detail::hex32(magic) + " for a label file");
  }
  const std::size_t count = detail::read_be32(img, 4, iname);
  const std::size_t rows = detail::read_be32(img, 8, iname);
  const std::size_t cols = detail::read_be32(img, 12, iname);
  const std::size_t label_count = detail::read_be32(lbl, 4, lname);
  if (count == 0 || rows == 0 || cols == 0) throw ParseError(iname + ": zero-sized dimension");
  if (count != label_count) {
    throw ParseError("image/label count mismatch: " + std::to_string(count) + " vs " + std::to_string(label_count));
  }
  if (img.size() < 16 + count * rows * cols) throw ParseError(iname + ": truncated pixel data");
  if (lbl.size() < 8 + count) throw ParseError(lname + ": truncated label data");

  Dataset d;
  d.class_count = class_count;
  d.images = Tensor({count, 1, rows, cols});
  for (std::size_t i = 0; i < count * rows * cols; ++i) d.images[i] = img[16 + i] / 255.0;
  d.labels.resize(count);
  for (std::size_t i = 0; i < count; ++i) d.labels[i] = lbl[8 + i];
  check_dataset(d);
  return d;
}

/// Write a single-channel dataset as an IDX pair; pixels round to bytes.
inline void write_idx(const Dataset& d, const std::filesystem::path& images_path,
                      const std::filesystem::path& labels_path) {
  check_dataset(d);
  if (d.images.dim(1) != 1) throw ShapeError("write_idx: only single-channel images are supported");
  std::ofstream img(images_path, std::ios::binary), lbl(labels_path, std::ios::binary);
  if (!img || !lbl) throw IoError("cannot create IDX files");
  detail::put_be32(img, kIdxImagesMagic);
  detail::put_be32(img, static_cast<std::uint32_t>(d.size()));
  detail::put_be32(img, static_cast<std::uint32_t>(d.images.dim(2)));
  detail::put_be32(img, static_cast<std::uint32_t>(d.images.dim(3)));
  for (double v : d.images.data()) {
    img.put(static_cast<char>(static_cast<unsigned char>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0))));
  }
  detail::put_be32(lbl, kIdxLabelsMagic);
  detail::put_be32(lbl, static_cast<std::uint32_t>(d.size()));
  for (int l : d.labels) lbl.put(static_cast<char>(l));
  if (!img || !lbl) throw IoError("failed writing IDX files");
}

// ---------------------------------------------------------------------------
// Synthetic data
// ---------------------------------------------------------------------------

/// Gaussian blobs rendered as images.
///
/// Each class gets a random prototype image with pixels in [0.2, 0.8]; a
/// sample is its prototype plus N(0, noise^2) per pixel, clipped to [0, 1].
/// With the default noise the prototypes are tens of noise-widths apart, so
/// the classes are linearly separable in practice. Samples are interleaved by
/// class (0, 1, ..., K-1, 0, 1, ...).
inline Dataset synth_blobs(std::size_t classes, std::size_t per_class, const Shape& dims, std::uint64_t seed,
                           double noise = 0.05) {
  if (classes < 2 || per_class == 0) throw ValueError("synth_blobs: need >= 2 classes and >= 1 sample each");
  if (dims.size() != 3) throw ShapeError("synth_blobs: dims must be [C, H, W]");
  const std::size_t pixels = shape_size(dims);
  Rng rng(seed);
  std::vector<std::vector<double>> prototypes(classes, std::vector<double>(pixels));
  for (auto& proto : prototypes)
    for (double& v : proto) v = rng.uniform(0.2, 0.8);
  Dataset d;
  d.class_count = classes;
  d.images = Tensor({classes * per_class, dims[0], dims[1], dims[2]});
  d.labels.resize(classes * per_class);
  for (std::size_t s = 0; s < per_class; ++s) {
    for (std::size_t c = 0; c < classes; ++c) {
      const std::size_t idx = s * classes + c;
      d.labels[idx] = static_cast<int>(c);
      for (std::size_t p = 0; p < pixels; ++p) {
        d.images[idx * pixels + p] = std::clamp(prototypes[c][p] + noise * rng.normal(), 0.0, 1.0);
      }
    }
  }
  return d;
}

// ---------------------------------------------------------------------------
// Batching
// ---------------------------------------------------------------------------

struct Batch {
  Tensor images;  // [B, C, H, W]
  std::vector<int> labels;
};

inline Batch gather(const Dataset& d, std::span<const std::size_t> indices) {
  const std::size_t per = d.images.size() / d.size();
  Shape shape = d.images.shape();
  shape[0] = indices.size();
  Batch b{Tensor(shape), {}};
  b.labels.reserve(indices.size());
  for (std::size_t i = 0; i < indices.size(); ++i) {
    const std::size_t src = indices[i];
    std::copy_n(d.images.data().begin() + static_cast<std::ptrdiff_t>(src * per), per,
                b.images.data().begin() + static_cast<std::ptrdiff_t>(i * per));
    b.labels.push_back(d.labels[src]);
  }
  return b;
}

/// Minibatch schedule over a dataset: an optional seeded shuffle, then
/// consecutive batches of batch_size with the last short batch kept.
class BatchSequence {
 public:
  BatchSequence(const Dataset& data, std::size_t batch_size, std::optional<std::uint64_t> shuffle_seed)
      : data_(&data), batch_size_(batch_size), order_(data.size()) {
    if (batch_size == 0) throw ValueError("batch size must be positive");
    std::iota(order_.begin(), order_.end(), std::size_t{0});
    if (shuffle_seed) {
      Rng rng(*shuffle_seed);
      rng.shuffle(std::span<std::size_t>(order_));
    }
  }

  std::size_t size() const { return (order_.size() + batch_size_ - 1) / batch_size_; }

  std::span<const std::size_t> indices(std::size_t i) const {
    const std::size_t begin = i * batch_size_;
    return std::span<const std::size_t>(order_).subspan(begin, std::min(batch_size_, order_.size() - begin));
  }

  Batch operator[](std::size_t i) const { return gather(*data_, indices(i)); }

  const std::vector<std::size_t>& order() const { return order_; }

  class iterator {
   public:
    using value_type = Batch;
    using difference_type = std::ptrdiff_t;
    iterator(const BatchSequence* seq, std::size_t i) : seq_(seq), i_(i) {}
    Batch operator*() const { return (*seq_)[i_]; }
    iterator& operator++() {
      ++i_;
      return *this;
    }
    bool operator==(const iterator& o) const { return i_ == o.i_; }

   private:
    const BatchSequence* seq_;
    std::size_t i_;
  };

  iterator begin() const { return {this, 0}; }
  iterator end() const { return {this, size()}; }

 private:
  const Dataset* data_;
  std::size_t batch_size_;
  std::vector<std::size_t> order_;
};

inline BatchSequence batches(const Dataset& data, std::size_t batch_size,
                             std::optional<std::uint64_t> shuffle_seed = std::nullopt) {
  return BatchSequence(data, batch_size, shuffle_seed);
}

}  // namespace rank1
