#pragma once

// Deterministic CPU forward pass for manifest-described CNNs.
//
// Every image is evaluated independently with float64 accumulation and
// float32 storage between layers, so logits do not depend on batch size or
// thread count.

#include <cstdint>
#include <filesystem>

#include "kernelspect/pruner.hpp"
#include "kernelspect/tensor_io.hpp"

namespace kernelspect {

struct EvalDataset {
  Tensor images;  // [N, C, H, W] float32/float64
  Tensor labels;  // [N] int64
};

/// Reads `<dir>/images.npy` and `<dir>/labels.npy`.
EvalDataset load_dataset(const std::filesystem::path& dir);

/// First `count` samples of a dataset.
EvalDataset take_samples(const EvalDataset& dataset, std::int64_t count);

struct EvalResult {
  double top1_accuracy = 0.0;
  std::int64_t num_samples = 0;
  std::int64_t correct = 0;
  double logits_checksum = 0.0;  // sum of all logits, in sample order
};

/// Logits [N, classes] (float32). The graph output is the last manifest
/// layer; softmax layers pass values through unchanged.
Tensor forward(const ModelSnapshot& snapshot, const Tensor& batch, int jobs = 1);

/// Index of the largest logit; ties go to the lowest class index.
std::int64_t argmax_class(std::span<const float> logits);

/// Evaluates top-1 accuracy in batches of `batch_size`. When a mask is
/// given, its pruned kernels are zeroed first.
EvalResult evaluate(const ModelSnapshot& snapshot, const EvalDataset& dataset,
                    const PruneMask* mask = nullptr, int jobs = 1,
                    std::int64_t batch_size = 256);

}  // namespace kernelspect
