#pragma once

// Tensor containers, NPY reading/writing, model manifests and checkpoint
// series.
//
// Kernel enumeration order used everywhere downstream: conv2d layers in
// manifest order; within a layer out_channel-major, then in_channel.

#include <cstddef>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <map>
#include <memory>
#include <span>
#include <string>
#include <type_traits>
#include <vector>

#include "kernelspect/error.hpp"

namespace kernelspect {

enum class DType { Float32, Float64, UInt8, Int64 };

std::size_t dtype_size(DType dtype);
std::string_view dtype_name(DType dtype);

template <class T>
constexpr DType dtype_of() {
  if constexpr (std::is_same_v<T, float>) {
    return DType::Float32;
  } else if constexpr (std::is_same_v<T, double>) {
    return DType::Float64;
  } else if constexpr (std::is_same_v<T, std::uint8_t>) {
    return DType::UInt8;
  } else {
    static_assert(std::is_same_v<T, std::int64_t>, "unsupported element type");
    return DType::Int64;
  }
}

using Shape = std::vector<std::int64_t>;

std::int64_t element_count(const Shape& shape);
std::string shape_string(const Shape& shape);

/// Dense row-major tensor. Element storage is a raw byte buffer in native
/// (little-endian) layout; typed access goes through values<T>().
class Tensor {
 public:
  Tensor() = default;
  Tensor(DType dtype, Shape shape);

  template <class T>
  static Tensor from_values(Shape shape, std::span<const T> values) {
    Tensor t(dtype_of<T>(), std::move(shape));
    if (static_cast<std::size_t>(t.size()) != values.size()) {
      throw Error(ErrorCode::ShapeMismatch,
                  "value count " + std::to_string(values.size()) +
                      " does not match shape " + shape_string(t.shape()));
    }
    if (!values.empty()) {
      std::memcpy(t.bytes_.data(), values.data(), values.size_bytes());
    }
    return t;
  }

  template <class T>
  static Tensor from_values(Shape shape, const std::vector<T>& values) {
    return from_values<T>(std::move(shape), std::span<const T>(values));
  }

  DType dtype() const { return dtype_; }
  const Shape& shape() const { return shape_; }
  std::int64_t rank() const { return static_cast<std::int64_t>(shape_.size()); }
  std::int64_t size() const { return element_count(shape_); }

  std::span<const std::byte> bytes() const { return bytes_; }
  std::span<std::byte> mutable_bytes() { return bytes_; }

  template <class T>
  std::span<const T> values() const {
    check_dtype(dtype_of<T>());
    return {reinterpret_cast<const T*>(bytes_.data()),
            static_cast<std::size_t>(size())};
  }

  template <class T>
  std::span<T> mutable_values() {
    check_dtype(dtype_of<T>());
    return {reinterpret_cast<T*>(bytes_.data()),
            static_cast<std::size_t>(size())};
  }

  /// Widened copy of a floating-point tensor.
  std::vector<double> to_double() const;

  bool bit_equal(const Tensor& other) const;

 private:
  void check_dtype(DType wanted) const;

  DType dtype_ = DType::Float64;
  Shape shape_;
  std::vector<std::byte> bytes_;
};

// ---------------------------------------------------------------------------
// NPY

Tensor load_npy(const std::filesystem::path& path);
Tensor parse_npy(std::span<const std::byte> file_bytes,
                 const std::string& origin = "<memory>");
void save_npy(const Tensor& tensor, const std::filesystem::path& path);
std::vector<std::byte> serialize_npy(const Tensor& tensor);

// ---------------------------------------------------------------------------
// Model manifest

enum class OpKind {
  Input,
  Conv2d,
  BatchNorm,
  Relu,
  Add,
  GlobalAvgPool,
  Dense,
  Softmax,
};

OpKind parse_op_kind(std::string_view name);
std::string_view op_kind_name(OpKind kind);

struct LayerAttrs {
  int stride = 1;
  int padding = 0;
  double epsilon = 1e-5;
  // input layers only: [C, H, W]
  Shape input_shape;

  bool operator==(const LayerAttrs&) const = default;
};

struct LayerSpec {
  std::string name;
  OpKind op_kind = OpKind::Input;
  std::map<std::string, std::string> weight_refs;
  LayerAttrs attrs;
  std::vector<std::string> inputs;

  bool operator==(const LayerSpec&) const = default;
};

/// Immutable once loaded; safe to share between readers.
struct ModelSnapshot {
  std::vector<LayerSpec> manifest;
  std::map<std::string, Tensor> tensors;
  std::string label;

  const LayerSpec& layer(std::string_view name) const;
  const Tensor& tensor(const LayerSpec& layer, const std::string& role) const;
  const Tensor* optional_tensor(const LayerSpec& layer,
                                const std::string& role) const;
};

/// Validates layer graph and weight shapes. Throws on the first violation.
void validate_snapshot(const ModelSnapshot& snapshot);

/// Layer indices in an order where every layer follows its inputs.
std::vector<std::size_t> topological_order(const std::vector<LayerSpec>& layers);

/// Loads a manifest document (or a .zip/.npz archive holding manifest.json
/// and the tensors it names).
ModelSnapshot load_snapshot(const std::filesystem::path& manifest_path);

/// Writes manifest.json plus one NPY file per tensor into `dir`.
void save_snapshot(const ModelSnapshot& snapshot,
                   const std::filesystem::path& dir);

// ---------------------------------------------------------------------------
// Checkpoint series

struct Checkpoint {
  std::int64_t epoch = 0;
  std::shared_ptr<const ModelSnapshot> snapshot;
};

struct CheckpointSeries {
  std::vector<Checkpoint> snapshots;
};

/// Reads `<dir>/epoch_<N>/manifest.json` for every epoch directory.
CheckpointSeries load_checkpoint_series(const std::filesystem::path& dir);

/// True when both snapshots share layer names, graph and tensor shapes.
bool same_structure(const ModelSnapshot& a, const ModelSnapshot& b);

}  // namespace kernelspect
