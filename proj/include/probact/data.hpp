#pragma once

#include <string>
#include <vector>

#include "probact/tensor.hpp"

namespace probact::data {

struct Dataset {
  Tensor images;            // N,C,H,W with values in [0,1]
  std::vector<int> labels;  // each < classes
  std::size_t classes = 0;

  std::size_t size() const { return labels.size(); }
  Shape sample_shape() const;  // C,H,W
};

enum class CifarVariant { kCifar10, kCifar100 };

struct CifarData {
  Dataset train;
  Dataset test;
};

// Reads the standard binary layout (record = label byte(s) + 3072 pixel
// bytes) from `dir`, also looking under the conventional extracted folder
// names. Pixels are scaled by 1/255.
CifarData load_cifar(const std::string& dir, CifarVariant variant);

// Equal per-class draws, floor(fraction * class count) each, chosen by a
// seeded shuffle within every class. Original sample order is preserved.
Dataset stratified_subset(const Dataset& d, double fraction,
                          std::uint64_t seed);

enum class SyntheticKind { kBlobs, kSpirals, kImageBlobs };

// blobs / spirals: balanced 2-D point sets stored as N x 2 x 1 x 1.
// image-blobs: class-keyed random 3 x res x res patterns plus per-sample
// pixel jitter, for exercising the convolutional path at desk scale.
Dataset synthetic_dataset(SyntheticKind kind, std::size_t n,
                          std::size_t classes, double noise,
                          std::uint64_t seed, std::size_t resolution = 16);

// Epoch permutation, Fisher-Yates driven by the counter RNG: a function of
// (seed, epoch) only, never of thread count or prior epochs.
std::vector<std::size_t> batch_order(std::size_t n, std::uint64_t shuffle_seed,
                                     std::uint64_t epoch);

// Split [0,n) into consecutive index runs of the epoch permutation; the
// final short batch is kept.
std::vector<std::vector<std::size_t>> batch_indices(std::size_t n,
                                                    std::size_t batch_size,
                                                    std::uint64_t shuffle_seed,
                                                    std::uint64_t epoch);

struct Batch {
  Tensor images;
  std::vector<int> labels;
};

Batch gather(const Dataset& d, const std::vector<std::size_t>& indices);

// Subset as a dataset (keeps class count).
Dataset gather_dataset(const Dataset& d,
                       const std::vector<std::size_t>& indices);

}  // namespace probact::data
