#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "last/tensor.hpp"

namespace last {

struct ChannelLayout {
  bool flat = true;
  std::size_t channels = 1, height = 1, width = 0;  // width = dim when flat
};

struct Dataset {
  Tensor inputs;             // (N, D), values in [0,1]
  std::vector<int> labels;   // [0, num_classes)
  std::size_t num_classes = 0;
  ChannelLayout layout;
  std::string split;

  std::size_t size() const { return labels.size(); }
  std::size_t dim() const { return inputs.rank() == 2 ? inputs.shape[1] : 0; }
};

struct Batch {
  Tensor inputs;  // (B, D)
  std::vector<int> labels;

  std::size_t size() const { return labels.size(); }
};

// Big-endian IDX pair (magic 0x00000803 images / 0x00000801 labels),
// pixels scaled by 1/255.
Dataset load_idx(const std::string& images_path, const std::string& labels_path);

// CIFAR-10 binary batches: 3073-byte records, 1 label byte + 3072
// channel-major pixels.
Dataset load_cifar_binary(const std::vector<std::string>& paths);

// Seeded Gaussian blobs: class k mean at 0.5 + (margin/sqrt(2))*e_k, noise
// std margin/6, clamped to [0,1]. Pairwise mean distance is exactly margin.
Dataset synth_blobs(std::size_t num_classes, std::size_t per_class, std::size_t dim, real margin,
                    std::uint64_t seed);

// One epoch of batches over a permutation seeded by (seed, epoch); the short
// final batch is kept.
class BatchSequence {
public:
  BatchSequence(const Dataset& dataset, std::size_t batch_size, std::uint64_t seed,
                std::uint64_t epoch);

  std::size_t batch_count() const;
  Batch batch(std::size_t index) const;
  const std::vector<std::size_t>& permutation() const { return perm_; }

private:
  const Dataset& dataset_;
  std::size_t batch_size_;
  std::vector<std::size_t> perm_;
};

// Contiguous, unshuffled slices for evaluation walks.
Batch slice_batch(const Dataset& dataset, std::size_t begin, std::size_t end);

}  // namespace last
