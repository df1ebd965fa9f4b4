#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "normlab/rng.hpp"
#include "normlab/tensor.hpp"

namespace normlab {

// Images as (N, H, W, C) doubles in [0,1] before standardization; labels as
// class indices. Standardization statistics always come from the train split.
struct Dataset {
    std::string id;
    Tensor train_x;
    std::vector<std::size_t> train_y;
    Tensor test_x;
    std::vector<std::size_t> test_y;
    std::size_t classes = 0;
};

// IDX payloads: rank-1 uint8 label files (magic 0x00000801) come back as an
// (N) tensor of raw values; rank-3 uint8 image files (magic 0x00000803) as
// (N, H, W, 1) scaled by 1/255. Malformed input reports the byte offset.
Tensor load_idx(const std::string& path);

// Standard four-file layout: {train,t10k}-{images-idx3,labels-idx1}-ubyte.
Dataset load_mnist(const std::string& dir);

// 3073-byte records: one label byte, then 32x32 planes for R, G, B.
Tensor load_cifar10_images(const std::string& path, std::vector<std::size_t>& labels);
Dataset load_cifar10(const std::vector<std::string>& train_files,
                     const std::string& test_file);

// Well-separated Gaussian blobs: class centers are orthonormalized random
// directions scaled to norm 4, samples add unit noise, split 80/20 in order.
Dataset synthetic_dataset(std::size_t n, const Shape& input, std::size_t classes,
                          Rng rng);

// Per-channel (last axis) standardization using train-split moments.
void standardize(Dataset& data);

Tensor gather_rows(const Tensor& x, const std::vector<std::size_t>& idx);

}  // namespace normlab
