#include "kernelspect/infer.hpp"

#include <algorithm>
#include <cmath>
#include <map>

#include "kernelspect/parallel.hpp"

namespace kernelspect {

namespace {

struct Activation {
  // Feature maps are [C, H, W]; flat vectors use h = w = 1.
  std::int64_t c = 0, h = 1, w = 1;
  std::vector<float> data;
};

struct ConvWeights {
  std::int64_t out = 0, in = 0, k = 0;
  int stride = 1, padding = 0;
  std::vector<double> w;
  std::vector<double> bias;  // empty when absent
};

struct BatchNormWeights {
  std::vector<double> scale;  // gamma / sqrt(var + eps)
  std::vector<double> mean;
  std::vector<double> beta;
};

struct DenseWeights {
  std::int64_t out = 0, in = 0;
  std::vector<double> w;
  std::vector<double> bias;
};

// Widened parameters plus evaluation order, prepared once per forward call.
struct CompiledModel {
  std::vector<std::size_t> order;
  std::map<std::string, std::size_t> index;
  std::vector<ConvWeights> conv;
  std::vector<BatchNormWeights> bn;
  std::vector<DenseWeights> dense;
  std::vector<std::size_t> slot;  // per layer: index into conv/bn/dense
  std::size_t input_layer = 0;
  Shape input_shape;
};

[[noreturn]] void shape_error(const LayerSpec& layer, const std::string& what) {
  throw Error(ErrorCode::ShapeMismatch, "layer '" + layer.name + "': " + what);
}

CompiledModel compile(const ModelSnapshot& snap) {
  CompiledModel m;
  m.order = topological_order(snap.manifest);
  m.slot.resize(snap.manifest.size(), 0);
  int inputs = 0;
  for (std::size_t i = 0; i < snap.manifest.size(); ++i) {
    const LayerSpec& layer = snap.manifest[i];
    m.index[layer.name] = i;
    switch (layer.op_kind) {
      case OpKind::Input:
        ++inputs;
        m.input_layer = i;
        m.input_shape = layer.attrs.input_shape;
        break;
      case OpKind::Conv2d: {
        const Tensor& w = snap.tensor(layer, "weights");
        ConvWeights c;
        c.out = w.shape()[0];
        c.in = w.shape()[1];
        c.k = w.shape()[2];
        c.stride = layer.attrs.stride;
        c.padding = layer.attrs.padding;
        c.w = w.to_double();
        if (const Tensor* b = snap.optional_tensor(layer, "bias")) c.bias = b->to_double();
        m.slot[i] = m.conv.size();
        m.conv.push_back(std::move(c));
        break;
      }
      case OpKind::BatchNorm: {
        BatchNormWeights b;
        const auto gamma = snap.tensor(layer, "gamma").to_double();
        const auto var = snap.tensor(layer, "var").to_double();
        b.mean = snap.tensor(layer, "mean").to_double();
        b.beta = snap.tensor(layer, "beta").to_double();
        b.scale.resize(gamma.size());
        for (std::size_t j = 0; j < gamma.size(); ++j) {
          b.scale[j] = gamma[j] / std::sqrt(var[j] + layer.attrs.epsilon);
        }
        m.slot[i] = m.bn.size();
        m.bn.push_back(std::move(b));
        break;
      }
      case OpKind::Dense: {
        const Tensor& w = snap.tensor(layer, "weights");
        DenseWeights d;
        d.out = w.shape()[0];
        d.in = w.shape()[1];
        d.w = w.to_double();
        if (const Tensor* b = snap.optional_tensor(layer, "bias")) d.bias = b->to_double();
        m.slot[i] = m.dense.size();
        m.dense.push_back(std::move(d));
        break;
      }
      default:
        break;
    }
  }
  if (inputs != 1) {
    throw Error(ErrorCode::MalformedManifest, "model needs exactly one input layer");
  }
  return m;
}

Activation conv2d(const LayerSpec& layer, const ConvWeights& c, const Activation& x) {
  if (x.c != c.in) {
    shape_error(layer, "expects " + std::to_string(c.in) + " input channels, got " +
                           std::to_string(x.c));
  }
  Activation y;
  y.c = c.out;
  y.h = (x.h + 2 * c.padding - c.k) / c.stride + 1;
  y.w = (x.w + 2 * c.padding - c.k) / c.stride + 1;
  if (y.h < 1 || y.w < 1) shape_error(layer, "output is empty");
  y.data.resize(static_cast<std::size_t>(y.c * y.h * y.w));
  for (std::int64_t o = 0; o < c.out; ++o) {
    const double bias = c.bias.empty() ? 0.0 : c.bias[o];
    for (std::int64_t oy = 0; oy < y.h; ++oy) {
      for (std::int64_t ox = 0; ox < y.w; ++ox) {
        double acc = bias;
        for (std::int64_t i = 0; i < c.in; ++i) {
          const double* kern = c.w.data() + ((o * c.in + i) * c.k) * c.k;
          const float* plane = x.data.data() + i * x.h * x.w;
          for (std::int64_t ky = 0; ky < c.k; ++ky) {
            const std::int64_t iy = oy * c.stride - c.padding + ky;
            if (iy < 0 || iy >= x.h) continue;
            for (std::int64_t kx = 0; kx < c.k; ++kx) {
              const std::int64_t ix = ox * c.stride - c.padding + kx;
              if (ix < 0 || ix >= x.w) continue;
              acc += kern[ky * c.k + kx] * static_cast<double>(plane[iy * x.w + ix]);
            }
          }
        }
        y.data[static_cast<std::size_t>((o * y.h + oy) * y.w + ox)] = static_cast<float>(acc);
      }
    }
  }
  return y;
}

Activation batchnorm(const LayerSpec& layer, const BatchNormWeights& b, Activation x) {
  if (static_cast<std::size_t>(x.c) != b.scale.size()) {
    shape_error(layer, "channel count " + std::to_string(x.c) + " does not match parameters");
  }
  const std::int64_t plane = x.h * x.w;
  for (std::int64_t ch = 0; ch < x.c; ++ch) {
    for (std::int64_t p = 0; p < plane; ++p) {
      float& v = x.data[static_cast<std::size_t>(ch * plane + p)];
      v = static_cast<float>((static_cast<double>(v) - b.mean[ch]) * b.scale[ch] + b.beta[ch]);
    }
  }
  return x;
}

Activation dense(const LayerSpec& layer, const DenseWeights& d, const Activation& x) {
  const std::int64_t features = x.c * x.h * x.w;
  if (features != d.in) {
    shape_error(layer, "expects " + std::to_string(d.in) + " features, got " +
                           std::to_string(features));
  }
  Activation y;
  y.c = d.out;
  y.data.resize(static_cast<std::size_t>(d.out));
  for (std::int64_t o = 0; o < d.out; ++o) {
    double acc = d.bias.empty() ? 0.0 : d.bias[o];
    for (std::int64_t i = 0; i < d.in; ++i) {
      acc += d.w[o * d.in + i] * static_cast<double>(x.data[i]);
    }
    y.data[o] = static_cast<float>(acc);
  }
  return y;
}

Activation run_image(const ModelSnapshot& snap, const CompiledModel& m, Activation input) {
  std::vector<Activation> values(snap.manifest.size());
  for (std::size_t i : m.order) {
    const LayerSpec& layer = snap.manifest[i];
    auto in = [&](std::size_t which) -> const Activation& {
      return values[m.index.at(layer.inputs[which])];
    };
    switch (layer.op_kind) {
      case OpKind::Input:
        values[i] = input;
        break;
      case OpKind::Conv2d:
        values[i] = conv2d(layer, m.conv[m.slot[i]], in(0));
        break;
      case OpKind::BatchNorm:
        values[i] = batchnorm(layer, m.bn[m.slot[i]], in(0));
        break;
      case OpKind::Relu: {
        Activation y = in(0);
        for (float& v : y.data) v = std::max(v, 0.0f);
        values[i] = std::move(y);
        break;
      }
      case OpKind::Add: {
        const Activation& a = in(0);
        const Activation& b = in(1);
        if (a.c != b.c || a.h != b.h || a.w != b.w) {
          shape_error(layer, "add operands differ in shape");
        }
        Activation y = a;
        for (std::size_t j = 0; j < y.data.size(); ++j) {
          y.data[j] = static_cast<float>(static_cast<double>(a.data[j]) + b.data[j]);
        }
        values[i] = std::move(y);
        break;
      }
      case OpKind::GlobalAvgPool: {
        const Activation& x = in(0);
        Activation y;
        y.c = x.c;
        y.data.resize(static_cast<std::size_t>(x.c));
        const std::int64_t plane = x.h * x.w;
        for (std::int64_t ch = 0; ch < x.c; ++ch) {
          double acc = 0.0;
          for (std::int64_t p = 0; p < plane; ++p) acc += x.data[ch * plane + p];
          y.data[ch] = static_cast<float>(acc / static_cast<double>(plane));
        }
        values[i] = std::move(y);
        break;
      }
      case OpKind::Dense:
        values[i] = dense(layer, m.dense[m.slot[i]], in(0));
        break;
      case OpKind::Softmax:
        values[i] = in(0);
        break;
    }
  }
  return std::move(values.back());
}

}  // namespace

EvalDataset load_dataset(const std::filesystem::path& dir) {
  EvalDataset ds{load_npy(dir / "images.npy"), load_npy(dir / "labels.npy")};
  if (ds.images.rank() != 4) {
    throw Error(ErrorCode::ShapeMismatch, "images must be [N, C, H, W], got " +
                                              shape_string(ds.images.shape()));
  }
  if (ds.labels.dtype() != DType::Int64 || ds.labels.rank() != 1) {
    throw Error(ErrorCode::UnsupportedDtype, "labels must be a 1-D int64 tensor");
  }
  if (ds.labels.shape()[0] != ds.images.shape()[0] || ds.labels.shape()[0] < 1) {
    throw Error(ErrorCode::ShapeMismatch, "images and labels disagree on sample count");
  }
  return ds;
}

EvalDataset take_samples(const EvalDataset& ds, std::int64_t count) {
  count = std::min(count, ds.labels.shape()[0]);
  Shape img_shape = ds.images.shape();
  img_shape[0] = count;
  EvalDataset out{Tensor(ds.images.dtype(), img_shape), Tensor(DType::Int64, {count})};
  std::copy_n(ds.images.bytes().begin(), out.images.bytes().size(),
              out.images.mutable_bytes().begin());
  std::copy_n(ds.labels.bytes().begin(), out.labels.bytes().size(),
              out.labels.mutable_bytes().begin());
  return out;
}

std::int64_t argmax_class(std::span<const float> logits) {
  std::int64_t best = 0;
  for (std::size_t j = 1; j < logits.size(); ++j) {
    if (logits[j] > logits[best]) best = static_cast<std::int64_t>(j);
  }
  return best;
}

Tensor forward(const ModelSnapshot& snapshot, const Tensor& batch, int jobs) {
  const CompiledModel model = compile(snapshot);
  if (batch.rank() != 4) {
    throw Error(ErrorCode::ShapeMismatch, "batch must be [N, C, H, W], got " +
                                              shape_string(batch.shape()));
  }
  const Shape per_image(batch.shape().begin() + 1, batch.shape().end());
  if (per_image != model.input_shape) {
    throw Error(ErrorCode::ShapeMismatch, "batch image shape " + shape_string(per_image) +
                                              " does not match input " +
                                              shape_string(model.input_shape));
  }
  const std::int64_t n = batch.shape()[0];
  const std::int64_t image_size = element_count(per_image);
  const std::vector<double> pixels = batch.to_double();

  std::vector<std::vector<float>> outputs(static_cast<std::size_t>(n));
  parallel_for(static_cast<std::size_t>(n), jobs, [&](std::size_t begin, std::size_t end) {
    for (std::size_t s = begin; s < end; ++s) {
      Activation x;
      x.c = per_image[0];
      x.h = per_image[1];
      x.w = per_image[2];
      x.data.resize(static_cast<std::size_t>(image_size));
      for (std::int64_t j = 0; j < image_size; ++j) {
        x.data[j] = static_cast<float>(pixels[s * image_size + j]);
      }
      outputs[s] = run_image(snapshot, model, std::move(x)).data;
    }
  });

  const std::int64_t classes = n > 0 ? static_cast<std::int64_t>(outputs.front().size()) : 0;
  std::vector<float> flat;
  flat.reserve(static_cast<std::size_t>(n * classes));
  for (const auto& o : outputs) flat.insert(flat.end(), o.begin(), o.end());
  return Tensor::from_values<float>({n, classes}, flat);
}

EvalResult evaluate(const ModelSnapshot& snapshot, const EvalDataset& dataset,
                    const PruneMask* mask, int jobs, std::int64_t batch_size) {
  const std::int64_t n = dataset.labels.shape()[0];
  if (n < 1) {
    throw Error(ErrorCode::ShapeMismatch, "dataset is empty");
  }
  ModelSnapshot pruned;
  const ModelSnapshot* model = &snapshot;
  if (mask != nullptr) {
    pruned = apply_mask(snapshot, KernelCatalog(snapshot), *mask);
    model = &pruned;
  }
  batch_size = std::max<std::int64_t>(1, batch_size);
  const auto labels = dataset.labels.values<std::int64_t>();
  const std::int64_t image_size = element_count(dataset.images.shape()) / n;
  const std::size_t image_bytes =
      static_cast<std::size_t>(image_size) * dtype_size(dataset.images.dtype());

  EvalResult result;
  result.num_samples = n;
  for (std::int64_t start = 0; start < n; start += batch_size) {
    const std::int64_t count = std::min(batch_size, n - start);
    Shape shape = dataset.images.shape();
    shape[0] = count;
    Tensor batch(dataset.images.dtype(), shape);
    std::copy_n(dataset.images.bytes().begin() + static_cast<std::ptrdiff_t>(start * image_bytes),
                count * image_bytes, batch.mutable_bytes().begin());
    const Tensor logits = forward(*model, batch, jobs);
    const std::int64_t classes = logits.shape()[1];
    const auto values = logits.values<float>();
    for (std::int64_t s = 0; s < count; ++s) {
      const auto row = values.subspan(static_cast<std::size_t>(s * classes),
                                      static_cast<std::size_t>(classes));
      const std::int64_t label = labels[start + s];
      if (label < 0 || label >= classes) {
        throw Error(ErrorCode::ShapeMismatch, "label " + std::to_string(label) +
                                                  " is outside [0, " + std::to_string(classes) + ")");
      }
      for (float v : row) result.logits_checksum += v;
      if (argmax_class(row) == label) ++result.correct;
    }
  }
  result.top1_accuracy = static_cast<double>(result.correct) / static_cast<double>(n);
  return result;
}

}  // namespace kernelspect
