#include <algorithm>

#include "kernelspect/tensor_io.hpp"

namespace kernelspect {

std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::MalformedHeader: return "MalformedHeader";
    case ErrorCode::UnsupportedDtype: return "UnsupportedDtype";
    case ErrorCode::TruncatedPayload: return "TruncatedPayload";
    case ErrorCode::IoFailure: return "IoFailure";
    case ErrorCode::MissingTensor: return "MissingTensor";
    case ErrorCode::ShapeMismatch: return "ShapeMismatch";
    case ErrorCode::CyclicGraph: return "CyclicGraph";
    case ErrorCode::UnknownOpKind: return "UnknownOpKind";
    case ErrorCode::UnknownLayer: return "UnknownLayer";
    case ErrorCode::MalformedManifest: return "MalformedManifest";
    case ErrorCode::InconsistentManifests: return "InconsistentManifests";
    case ErrorCode::EmptySeries: return "EmptySeries";
    case ErrorCode::UnsupportedOrder: return "UnsupportedOrder";
    case ErrorCode::NonFiniteEntry: return "NonFiniteEntry";
    case ErrorCode::NoConvergence: return "NoConvergence";
    case ErrorCode::EmptyUniverse: return "EmptyUniverse";
    case ErrorCode::ZeroVanillaAccuracy: return "ZeroVanillaAccuracy";
    case ErrorCode::UniverseMismatch: return "UniverseMismatch";
    case ErrorCode::UnsupportedKind: return "UnsupportedKind";
    case ErrorCode::EmptyGrid: return "EmptyGrid";
    case ErrorCode::InvalidArgument: return "InvalidArgument";
    case ErrorCode::InvariantViolation: return "InvariantViolation";
  }
  return "Unknown";
}

std::size_t dtype_size(DType dtype) {
  switch (dtype) {
    case DType::Float32: return 4;
    case DType::Float64: return 8;
    case DType::UInt8: return 1;
    case DType::Int64: return 8;
  }
  return 0;
}

std::string_view dtype_name(DType dtype) {
  switch (dtype) {
    case DType::Float32: return "float32";
    case DType::Float64: return "float64";
    case DType::UInt8: return "uint8";
    case DType::Int64: return "int64";
  }
  return "unknown";
}

std::int64_t element_count(const Shape& shape) {
  std::int64_t n = 1;
  for (std::int64_t d : shape) {
    n *= d;
  }
  return n;
}

std::string shape_string(const Shape& shape) {
  std::string out = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) out += ",";
    out += std::to_string(shape[i]);
  }
  return out + "]";
}

Tensor::Tensor(DType dtype, Shape shape) : dtype_(dtype), shape_(std::move(shape)) {
  for (std::int64_t d : shape_) {
    if (d < 0) {
      throw Error(ErrorCode::ShapeMismatch, "negative dimension in " + shape_string(shape_));
    }
  }
  bytes_.resize(static_cast<std::size_t>(element_count(shape_)) * dtype_size(dtype_));
}

void Tensor::check_dtype(DType wanted) const {
  if (wanted != dtype_) {
    throw Error(ErrorCode::UnsupportedDtype,
                "tensor holds " + std::string(dtype_name(dtype_)) + ", requested " +
                    std::string(dtype_name(wanted)));
  }
}

std::vector<double> Tensor::to_double() const {
  switch (dtype_) {
    case DType::Float32: {
      auto v = values<float>();
      return {v.begin(), v.end()};
    }
    case DType::Float64: {
      auto v = values<double>();
      return {v.begin(), v.end()};
    }
    default:
      throw Error(ErrorCode::UnsupportedDtype,
                  "expected a floating-point tensor, got " + std::string(dtype_name(dtype_)));
  }
}

bool Tensor::bit_equal(const Tensor& other) const {
  return dtype_ == other.dtype_ && shape_ == other.shape_ &&
         std::equal(bytes_.begin(), bytes_.end(), other.bytes_.begin(), other.bytes_.end());
}

}  // namespace kernelspect
