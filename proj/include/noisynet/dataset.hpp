#pragma once

// Image classification datasets: CIFAR-10 binary batches and IDX (MNIST-style)
// files, scaled to [0, 1], plus deterministic stratified subsets.

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <numeric>
#include <string>
#include <vector>

#include "noisynet/errors.hpp"
#include "noisynet/noise.hpp"
#include "noisynet/rng.hpp"
#include "noisynet/tensor.hpp"

namespace noisynet {

struct Dataset {
  Tensor<float> images;  // [N, C, H, W], values in [0, 1]
  std::vector<int> labels;
  std::string split;  // "train" / "test" / free-form tag
  std::size_t num_classes = 10;

  std::size_t size() const { return labels.size(); }
  Shape sample_shape() const { return Shape(images.shape().begin() + 1, images.shape().end()); }

  void validate() const {
    if (labels.empty()) throw DataError("dataset '" + split + "' is empty");
    if (images.rank() != 4 || images.dim(0) != labels.size())
      throw DataError("dataset '" + split + "': image tensor " + shape_string(images.shape()) + " does not match " +
                      std::to_string(labels.size()) + " labels");
    for (int l : labels)
      if (l < 0 || static_cast<std::size_t>(l) >= num_classes)
        throw DataError("dataset '" + split + "': label " + std::to_string(l) + " out of range");
  }
};

struct DataSplit {
  Dataset train;
  Dataset test;
};

namespace detail {

inline std::vector<unsigned char> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline std::uint32_t read_be32(const unsigned char* p) {
  return (std::uint32_t{p[0]} << 24) | (std::uint32_t{p[1]} << 16) | (std::uint32_t{p[2]} << 8) | p[3];
}

}  // namespace detail

/// Tensor/label gather for a list of sample indices.
template <class T = float>
Tensor<T> gather_images(const Dataset& ds, const std::vector<std::size_t>& idx) {
  Shape shape = ds.sample_shape();
  const std::size_t per = shape_size(shape);
  shape.insert(shape.begin(), idx.size());
  Tensor<T> out(shape);
  for (std::size_t i = 0; i < idx.size(); ++i) {
    const float* src = ds.images.raw() + idx[i] * per;
    std::copy(src, src + per, out.raw() + i * per);
  }
  return out;
}

inline std::vector<int> gather_labels(const Dataset& ds, const std::vector<std::size_t>& idx) {
  std::vector<int> out(idx.size());
  for (std::size_t i = 0; i < idx.size(); ++i) out[i] = ds.labels[idx[i]];
  return out;
}

inline Dataset select(const Dataset& ds, const std::vector<std::size_t>& idx, std::string split) {
  Dataset out;
  out.images = gather_images(ds, idx);
  out.labels = gather_labels(ds, idx);
  out.split = std::move(split);
  out.num_classes = ds.num_classes;
  return out;
}

// ---------------------------------------------------------------------------
// CIFAR-10

inline constexpr std::size_t kCifarRecord = 3073;

inline void append_cifar_batch(const std::filesystem::path& file, std::vector<float>& pixels, std::vector<int>& labels) {
  const auto bytes = detail::read_file(file);
  if (bytes.empty() || bytes.size() % kCifarRecord != 0)
    throw DataError(file.string() + ": size " + std::to_string(bytes.size()) + " is not a multiple of 3073");
  for (std::size_t r = 0; r < bytes.size() / kCifarRecord; ++r) {
    const unsigned char* rec = bytes.data() + r * kCifarRecord;
    if (rec[0] > 9) throw DataError(file.string() + ": label byte " + std::to_string(rec[0]) + " > 9 in record " + std::to_string(r));
    labels.push_back(rec[0]);
    for (std::size_t k = 1; k < kCifarRecord; ++k) pixels.push_back(static_cast<float>(rec[k]) / 255.0f);
  }
}

/// Reads data_batch_1..5.bin and test_batch.bin from `dir`.
inline DataSplit load_cifar10(const std::filesystem::path& dir) {
  DataSplit out;
  auto load = [&](const std::vector<std::string>& files, std::string split) {
    std::vector<float> px;
    std::vector<int> labels;
    for (const auto& f : files) append_cifar_batch(dir / f, px, labels);
    Dataset ds;
    ds.images = Tensor<float>({labels.size(), 3, 32, 32}, std::move(px));
    ds.labels = std::move(labels);
    ds.split = std::move(split);
    return ds;
  };
  out.train = load({"data_batch_1.bin", "data_batch_2.bin", "data_batch_3.bin", "data_batch_4.bin", "data_batch_5.bin"},
                   "train");
  out.test = load({"test_batch.bin"}, "test");
  return out;
}

// ---------------------------------------------------------------------------
// IDX

/// Reads an IDX image file (magic 0x803) and label file (magic 0x801).
inline Dataset load_mnist_idx(const std::filesystem::path& images, const std::filesystem::path& labels,
                              std::string split = "all") {
  const auto ib = detail::read_file(images);
  const auto lb = detail::read_file(labels);
  if (ib.size() < 16 || detail::read_be32(ib.data()) != 0x00000803)
    throw DataError(images.string() + ": bad IDX image magic");
  if (lb.size() < 8 || detail::read_be32(lb.data()) != 0x00000801)
    throw DataError(labels.string() + ": bad IDX label magic");
  const std::size_t n = detail::read_be32(ib.data() + 4);
  const std::size_t h = detail::read_be32(ib.data() + 8);
  const std::size_t w = detail::read_be32(ib.data() + 12);
  const std::size_t nl = detail::read_be32(lb.data() + 4);
  if (n != nl) throw DataError("IDX: " + std::to_string(n) + " images but " + std::to_string(nl) + " labels");
  if (n == 0 || h == 0 || w == 0) throw DataError("IDX: empty dimensions");
  if (ib.size() != 16 + n * h * w) throw DataError(images.string() + ": size does not match header dimensions");
  if (lb.size() != 8 + n) throw DataError(labels.string() + ": size does not match header count");
  Dataset ds;
  std::vector<float> px(n * h * w);
  for (std::size_t i = 0; i < px.size(); ++i) px[i] = static_cast<float>(ib[16 + i]) / 255.0f;
  ds.images = Tensor<float>({n, 1, h, w}, std::move(px));
  ds.labels.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    if (lb[8 + i] > 9) throw DataError(labels.string() + ": label > 9 at index " + std::to_string(i));
    ds.labels[i] = lb[8 + i];
  }
  ds.split = std::move(split);
  return ds;
}

// ---------------------------------------------------------------------------
// Subsets

/// Deterministic Fisher-Yates permutation of [0, n).
inline std::vector<std::size_t> permutation(std::size_t n, RngStream& rng) {
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  for (std::size_t i = n; i > 1; --i) std::swap(idx[i - 1], idx[rng.next_below(i)]);
  return idx;
}

/// Stratified sample of n items: per-class counts differ by at most one
/// (classes too small to supply their share are taken whole).
inline std::vector<std::size_t> stratified_indices(const Dataset& ds, std::size_t n, std::uint64_t seed,
                                                   std::uint64_t tag = 0) {
  if (n == 0 || n > ds.size())
    throw ConfigError("subset size " + std::to_string(n) + " must lie in [1, " + std::to_string(ds.size()) + "]");
  RngStream rng(seed, stream_id(StreamRole::Subset, 0, tag, 0));
  std::vector<std::vector<std::size_t>> by_class(ds.num_classes);
  for (std::size_t i : permutation(ds.size(), rng)) by_class[ds.labels[i]].push_back(i);

  // Water-filling: the smallest classes are exhausted first.
  std::vector<std::size_t> take(ds.num_classes, 0);
  std::size_t remaining = n;
  std::vector<std::size_t> open;
  for (std::size_t c = 0; c < ds.num_classes; ++c)
    if (!by_class[c].empty()) open.push_back(c);
  while (remaining > 0 && !open.empty()) {
    const std::size_t share = std::max<std::size_t>(1, remaining / open.size());
    std::vector<std::size_t> still;
    for (std::size_t c : open) {
      const std::size_t t = std::min({share, by_class[c].size() - take[c], remaining});
      take[c] += t;
      remaining -= t;
      if (take[c] < by_class[c].size()) still.push_back(c);
    }
    open.swap(still);
  }
  std::vector<std::size_t> out;
  for (std::size_t c = 0; c < ds.num_classes; ++c)
    out.insert(out.end(), by_class[c].begin(), by_class[c].begin() + static_cast<std::ptrdiff_t>(take[c]));
  // Interleave classes deterministically.
  RngStream order(seed, stream_id(StreamRole::Subset, 1, tag, 0));
  const auto perm = permutation(out.size(), order);
  std::vector<std::size_t> shuffled(out.size());
  for (std::size_t i = 0; i < out.size(); ++i) shuffled[i] = out[perm[i]];
  return shuffled;
}

inline Dataset subset(const Dataset& ds, std::size_t n, std::uint64_t seed) {
  return select(ds, stratified_indices(ds, n, seed), ds.split);
}

/// Disjoint stratified train/test split of one pool.
inline DataSplit split_stratified(const Dataset& pool, std::size_t n_train, std::size_t n_test, std::uint64_t seed) {
  if (n_train + n_test > pool.size()) throw ConfigError("split: requested more samples than the pool holds");
  const auto all = stratified_indices(pool, n_train + n_test, seed);
  // Re-stratify the test share inside the chosen pool.
  Dataset chosen = select(pool, all, pool.split);
  const auto test_idx = stratified_indices(chosen, n_test, seed, 1);
  std::vector<char> is_test(chosen.size(), 0);
  for (std::size_t i : test_idx) is_test[i] = 1;
  std::vector<std::size_t> train_idx;
  for (std::size_t i = 0; i < chosen.size(); ++i)
    if (!is_test[i]) train_idx.push_back(i);
  return {select(chosen, train_idx, "train"), select(chosen, test_idx, "test")};
}

}  // namespace noisynet
