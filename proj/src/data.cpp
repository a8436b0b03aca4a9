#include "last/data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include "last/rng.hpp"

namespace last {

namespace {

std::vector<unsigned char> read_all(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open " + path);
  return std::vector<unsigned char>((std::istreambuf_iterator<char>(f)),
                                    std::istreambuf_iterator<char>());
}

std::uint32_t be32(const std::vector<unsigned char>& b, std::size_t off) {
  return (std::uint32_t(b[off]) << 24) | (std::uint32_t(b[off + 1]) << 16) |
         (std::uint32_t(b[off + 2]) << 8) | std::uint32_t(b[off + 3]);
}

}  // namespace

Dataset load_idx(const std::string& images_path, const std::string& labels_path) {
  auto img = read_all(images_path);
  if (img.size() < 4 || be32(img, 0) != 0x00000803u) {
    throw BadMagicError("idx images: bad magic in " + images_path);
  }
  if (img.size() < 16) throw TruncatedError("idx images: header truncated in " + images_path);
  std::size_t n = be32(img, 4), h = be32(img, 8), w = be32(img, 12);
  if (img.size() != 16 + n * h * w) {
    throw TruncatedError("idx images: payload holds " + std::to_string(img.size() - 16) +
                         " bytes, expected " + std::to_string(n * h * w));
  }

  auto lab = read_all(labels_path);
  if (lab.size() < 4 || be32(lab, 0) != 0x00000801u) {
    throw BadMagicError("idx labels: bad magic in " + labels_path);
  }
  if (lab.size() < 8) throw TruncatedError("idx labels: header truncated in " + labels_path);
  std::size_t nl = be32(lab, 4);
  if (lab.size() != 8 + nl) {
    throw TruncatedError("idx labels: payload holds " + std::to_string(lab.size() - 8) +
                         " bytes, expected " + std::to_string(nl));
  }
  if (n != nl) {
    throw CountMismatchError("idx: " + std::to_string(n) + " images vs " + std::to_string(nl) +
                             " labels");
  }

  Dataset d;
  d.inputs = Tensor::zeros({n, h * w});
  d.labels.resize(n);
  for (std::size_t i = 0; i < n * h * w; ++i) d.inputs.data[i] = real(img[16 + i]) / real(255);
  int max_label = 0;
  for (std::size_t i = 0; i < n; ++i) {
    d.labels[i] = int(lab[8 + i]);
    max_label = std::max(max_label, d.labels[i]);
  }
  d.num_classes = std::size_t(max_label) + 1;
  d.layout = {false, 1, h, w};
  return d;
}

Dataset load_cifar_binary(const std::vector<std::string>& paths) {
  constexpr std::size_t kRecord = 3073;
  Dataset d;
  d.num_classes = 10;
  d.layout = {false, 3, 32, 32};
  std::vector<real> pixels;
  for (const auto& path : paths) {
    auto bytes = read_all(path);
    if (bytes.size() % kRecord != 0) {
      throw TruncatedError("cifar: " + path + " length " + std::to_string(bytes.size()) +
                           " not divisible by 3073");
    }
    std::size_t records = bytes.size() / kRecord;
    for (std::size_t r = 0; r < records; ++r) {
      int label = int(bytes[r * kRecord]);
      if (label >= 10) {
        throw ValueError("cifar: label " + std::to_string(label) + " out of range in " + path);
      }
      d.labels.push_back(label);
      for (std::size_t i = 1; i < kRecord; ++i) {
        pixels.push_back(real(bytes[r * kRecord + i]) / real(255));
      }
    }
  }
  d.inputs = Tensor({d.labels.size(), 3072}, std::move(pixels));
  return d;
}

Dataset synth_blobs(std::size_t num_classes, std::size_t per_class, std::size_t dim, real margin,
                    std::uint64_t seed) {
  if (margin <= real(0)) throw ValueError("synth_blobs: margin must be > 0");
  if (per_class == 0) throw ValueError("synth_blobs: per_class is 0, dataset would be empty");
  if (num_classes < 2) throw ValueError("synth_blobs: need at least 2 classes");
  const real offset = margin / std::sqrt(real(2));
  if (num_classes > dim || real(0.5) + offset > real(1)) {
    throw ValueError("synth_blobs: geometry infeasible for " + std::to_string(num_classes) +
                     " classes in dim " + std::to_string(dim) + " with margin " +
                     std::to_string(double(margin)));
  }

  Dataset d;
  d.num_classes = num_classes;
  d.layout = {true, 1, 1, dim};
  std::size_t n = num_classes * per_class;
  d.inputs = Tensor::zeros({n, dim});
  d.labels.resize(n);
  Rng rng(split_seed(seed, "blobs"));
  const real noise = margin / real(6);
  std::size_t row = 0;
  for (std::size_t k = 0; k < num_classes; ++k) {
    for (std::size_t s = 0; s < per_class; ++s, ++row) {
      d.labels[row] = int(k);
      for (std::size_t j = 0; j < dim; ++j) {
        real mean = real(0.5) + (j == k ? offset : real(0));
        real v = mean + noise * rng.normal();
        d.inputs.data[row * dim + j] = std::min(std::max(v, real(0)), real(1));
      }
    }
  }
  return d;
}

BatchSequence::BatchSequence(const Dataset& dataset, std::size_t batch_size, std::uint64_t seed,
                             std::uint64_t epoch)
    : dataset_(dataset), batch_size_(batch_size) {
  if (batch_size == 0) throw ValueError("batch_iter: batch_size must be >= 1");
  Rng rng(split_seed(seed, "batch", epoch));
  perm_ = rng.permutation(dataset.size());
}

std::size_t BatchSequence::batch_count() const {
  return (dataset_.size() + batch_size_ - 1) / batch_size_;
}

Batch BatchSequence::batch(std::size_t index) const {
  std::size_t begin = index * batch_size_;
  std::size_t end = std::min(begin + batch_size_, dataset_.size());
  std::size_t d = dataset_.dim();
  Batch b;
  b.inputs = Tensor::zeros({end - begin, d});
  b.labels.resize(end - begin);
  for (std::size_t i = begin; i < end; ++i) {
    std::size_t src = perm_[i];
    std::copy(dataset_.inputs.data.begin() + src * d, dataset_.inputs.data.begin() + (src + 1) * d,
              b.inputs.data.begin() + (i - begin) * d);
    b.labels[i - begin] = dataset_.labels[src];
  }
  return b;
}

Batch slice_batch(const Dataset& dataset, std::size_t begin, std::size_t end) {
  std::size_t d = dataset.dim();
  Batch b;
  b.inputs = Tensor::zeros({end - begin, d});
  b.labels.resize(end - begin);
  std::copy(dataset.inputs.data.begin() + begin * d, dataset.inputs.data.begin() + end * d,
            b.inputs.data.begin());
  std::copy(dataset.labels.begin() + std::ptrdiff_t(begin),
            dataset.labels.begin() + std::ptrdiff_t(end), b.labels.begin());
  return b;
}

}  // namespace last
