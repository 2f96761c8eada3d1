#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "meud/matrix.hpp"

namespace meud {

/// Samples scaled to [0,1], one row per sample.
struct LabeledDataset {
    Matrix samples;
    std::vector<int> labels;  // each in [0, num_classes)
    int num_classes = 0;

    std::size_t size() const { return samples.rows(); }
};

enum class Polarity : std::uint8_t { Positive, Negative };

/// Samples whose first num_classes features carry a one-hot label block.
/// Positive rows encode the true label, negative rows a deliberately wrong one.
struct EncodedMatrix {
    Matrix data;
    std::vector<Polarity> polarity;
    std::vector<int> source_labels;  // true labels, kept for classification

    std::size_t size() const { return data.rows(); }
};

/// IDX decoding (big-endian magic 0x00000803 images / 0x00000801 labels, pixel
/// bytes scaled by 1/255). label_offset is subtracted from every raw label;
/// EMNIST Letters ships labels 1..26 and loads with label_offset = 1.
LabeledDataset parse_idx(std::span<const std::uint8_t> image_bytes,
                         std::span<const std::uint8_t> label_bytes, int label_offset = 0);
LabeledDataset parse_idx_files(const std::string& image_path, const std::string& label_path,
                               int label_offset = 0);

/// CIFAR-10 binary batches: 3073-byte records, one label byte then 3072 pixels.
LabeledDataset parse_cifar10_bin(std::span<const std::uint8_t> batch_bytes);
LabeledDataset parse_cifar10_file(const std::string& path);

/// Overwrites features 0..p-1 with a one-hot block. Positive rows use the true
/// label (seed is irrelevant); negative rows draw a wrong label uniformly and
/// deterministically from the seed.
EncodedMatrix embed_labels(const LabeledDataset& ds, Polarity polarity, std::uint64_t seed);

/// Training matrix layout: the first ceil(m/2) rows are positive encodings in
/// original sample order, the rest negative encodings. With mirrored = true the
/// negative half re-encodes the leading samples instead of the trailing ones.
EncodedMatrix build_training_matrix(const LabeledDataset& ds, std::uint64_t seed,
                                    bool mirrored = false);

/// Gaussian class clusters clipped to [0,1]; labels are per_class copies of
/// each class index in order, independent of the seed.
LabeledDataset synth_blobs(int num_classes, int per_class, std::size_t n, double spread,
                           std::uint64_t seed);

/// Procedural 28x28 digit glyphs (seven-segment strokes with jitter and pixel
/// noise). Same shape as MNIST; labels cycle 0..9 so every prefix is balanced.
LabeledDataset synth_digits(std::size_t count, std::uint64_t seed);

LabeledDataset shuffle_dataset(const LabeledDataset& ds, std::uint64_t seed);
LabeledDataset slice_dataset(const LabeledDataset& ds, std::size_t begin, std::size_t count);

}  // namespace meud
