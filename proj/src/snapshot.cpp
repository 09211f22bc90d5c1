#include <algorithm>
#include <array>
#include <optional>
#include <fstream>
#include <functional>
#include <json.hpp>
#include <regex>
#include <set>

#include "kernelspect/tensor_io.hpp"
#include "zip_archive.hpp"

namespace kernelspect {

namespace {

using nlohmann::json;

constexpr std::string_view kManifestFormat = "kernelspect.manifest/1";

constexpr std::array<std::pair<OpKind, std::string_view>, 8> kOpNames = {{
    {OpKind::Input, "input"},
    {OpKind::Conv2d, "conv2d"},
    {OpKind::BatchNorm, "batchnorm"},
    {OpKind::Relu, "relu"},
    {OpKind::Add, "add"},
    {OpKind::GlobalAvgPool, "global_avg_pool"},
    {OpKind::Dense, "dense"},
    {OpKind::Softmax, "softmax"},
}};

[[noreturn]] void manifest_error(const std::string& what) {
  throw Error(ErrorCode::MalformedManifest, what);
}

struct TensorDecl {
  std::string file;
  std::optional<Shape> shape;
};

struct ParsedManifest {
  std::vector<LayerSpec> layers;
  std::map<std::string, TensorDecl> tensors;
  std::string tensor_dir = ".";
  std::string label;
};

ParsedManifest parse_manifest(const std::string& text, const std::string& origin) {
  json doc;
  try {
    doc = json::parse(text);
  } catch (const json::exception& e) {
    manifest_error(origin + ": " + e.what());
  }
  if (!doc.is_object() || !doc.contains("layers") || !doc["layers"].is_array()) {
    manifest_error(origin + ": manifest must be an object with a 'layers' array");
  }
  ParsedManifest out;
  try {
    if (doc.contains("format") && doc["format"].get<std::string>() != kManifestFormat) {
      manifest_error(origin + ": unknown manifest format '" +
                     doc["format"].get<std::string>() + "'");
    }
    out.tensor_dir = doc.value("tensor_dir", std::string("."));
    out.label = doc.value("label", std::string());
    if (doc.contains("tensors")) {
      for (const auto& [name, decl] : doc["tensors"].items()) {
        TensorDecl d;
        d.file = decl.value("file", name + ".npy");
        if (decl.contains("shape")) {
          d.shape = decl["shape"].get<Shape>();
        }
        out.tensors[name] = d;
      }
    }
    for (const json& l : doc["layers"]) {
      LayerSpec spec;
      spec.name = l.at("name").get<std::string>();
      spec.op_kind = parse_op_kind(l.at("op_kind").get<std::string>());
      spec.inputs = l.value("inputs", std::vector<std::string>{});
      spec.weight_refs = l.value("weight_refs", std::map<std::string, std::string>{});
      if (l.contains("attrs")) {
        const json& a = l["attrs"];
        spec.attrs.stride = a.value("stride", 1);
        spec.attrs.padding = a.value("padding", 0);
        spec.attrs.epsilon = a.value("epsilon", 1e-5);
        spec.attrs.input_shape = a.value("shape", Shape{});
      }
      out.layers.push_back(std::move(spec));
    }
  } catch (const json::exception& e) {
    manifest_error(origin + ": " + e.what());
  }
  return out;
}

void require_rank(const Tensor& t, std::int64_t rank, const std::string& what) {
  if (t.rank() != rank) {
    throw Error(ErrorCode::ShapeMismatch, what + " must have rank " + std::to_string(rank) +
                                              ", got shape " + shape_string(t.shape()));
  }
}

void require_float(const Tensor& t, const std::string& what) {
  if (t.dtype() != DType::Float32 && t.dtype() != DType::Float64) {
    throw Error(ErrorCode::UnsupportedDtype, what + " must be float32 or float64");
  }
}

void check_vector(const ModelSnapshot& snap, const LayerSpec& layer, const std::string& role,
                  std::int64_t length, bool required) {
  const Tensor* t = snap.optional_tensor(layer, role);
  if (t == nullptr) {
    if (required) {
      throw Error(ErrorCode::MissingTensor,
                  "layer '" + layer.name + "' needs weight role '" + role + "'");
    }
    return;
  }
  const std::string what = "layer '" + layer.name + "' " + role;
  require_float(*t, what);
  if (t->shape() != Shape{length}) {
    throw Error(ErrorCode::ShapeMismatch, what + " must have shape [" + std::to_string(length) +
                                              "], got " + shape_string(t->shape()));
  }
}

}  // namespace

OpKind parse_op_kind(std::string_view name) {
  for (const auto& [kind, text] : kOpNames) {
    if (text == name) return kind;
  }
  throw Error(ErrorCode::UnknownOpKind, "unknown op_kind '" + std::string(name) + "'");
}

std::string_view op_kind_name(OpKind kind) {
  for (const auto& [k, text] : kOpNames) {
    if (k == kind) return text;
  }
  return "unknown";
}

const LayerSpec& ModelSnapshot::layer(std::string_view name) const {
  for (const LayerSpec& l : manifest) {
    if (l.name == name) return l;
  }
  throw Error(ErrorCode::UnknownLayer, "no layer named '" + std::string(name) + "'");
}

const Tensor* ModelSnapshot::optional_tensor(const LayerSpec& layer,
                                             const std::string& role) const {
  const auto ref = layer.weight_refs.find(role);
  if (ref == layer.weight_refs.end()) return nullptr;
  const auto it = tensors.find(ref->second);
  if (it == tensors.end()) {
    throw Error(ErrorCode::MissingTensor, "layer '" + layer.name + "' references missing tensor '" +
                                              ref->second + "'");
  }
  return &it->second;
}

const Tensor& ModelSnapshot::tensor(const LayerSpec& layer, const std::string& role) const {
  const Tensor* t = optional_tensor(layer, role);
  if (t == nullptr) {
    throw Error(ErrorCode::MissingTensor,
                "layer '" + layer.name + "' has no weight role '" + role + "'");
  }
  return *t;
}

std::vector<std::size_t> topological_order(const std::vector<LayerSpec>& layers) {
  std::map<std::string, std::size_t> index;
  for (std::size_t i = 0; i < layers.size(); ++i) {
    if (!index.emplace(layers[i].name, i).second) {
      throw Error(ErrorCode::MalformedManifest, "duplicate layer name '" + layers[i].name + "'");
    }
  }
  // 0 = unvisited, 1 = on stack, 2 = done
  std::vector<int> state(layers.size(), 0);
  std::vector<std::size_t> order;
  std::function<void(std::size_t)> visit = [&](std::size_t i) {
    if (state[i] == 2) return;
    if (state[i] == 1) {
      throw Error(ErrorCode::CyclicGraph, "layer graph has a cycle through '" + layers[i].name + "'");
    }
    state[i] = 1;
    for (const std::string& in : layers[i].inputs) {
      const auto it = index.find(in);
      if (it == index.end()) {
        throw Error(ErrorCode::UnknownLayer,
                    "layer '" + layers[i].name + "' reads unknown layer '" + in + "'");
      }
      visit(it->second);
    }
    state[i] = 2;
    order.push_back(i);
  };
  for (std::size_t i = 0; i < layers.size(); ++i) visit(i);
  return order;
}

void validate_snapshot(const ModelSnapshot& snap) {
  topological_order(snap.manifest);
  for (const LayerSpec& layer : snap.manifest) {
    const std::size_t want_inputs =
        layer.op_kind == OpKind::Input ? 0 : (layer.op_kind == OpKind::Add ? 2 : 1);
    if (layer.inputs.size() != want_inputs) {
      throw Error(ErrorCode::MalformedManifest,
                  "layer '" + layer.name + "' (" + std::string(op_kind_name(layer.op_kind)) +
                      ") needs " + std::to_string(want_inputs) + " inputs, has " +
                      std::to_string(layer.inputs.size()));
    }
    for (const auto& [role, name] : layer.weight_refs) {
      if (!snap.tensors.count(name)) {
        throw Error(ErrorCode::MissingTensor,
                    "layer '" + layer.name + "' references missing tensor '" + name + "'");
      }
    }
    switch (layer.op_kind) {
      case OpKind::Input:
        if (layer.attrs.input_shape.size() != 3) {
          throw Error(ErrorCode::ShapeMismatch,
                      "input layer '" + layer.name + "' needs attrs.shape = [C, H, W]");
        }
        break;
      case OpKind::Conv2d: {
        const Tensor& w = snap.tensor(layer, "weights");
        const std::string what = "conv2d '" + layer.name + "' weights";
        require_float(w, what);
        require_rank(w, 4, what);
        const auto& s = w.shape();
        if (s[2] != s[3] || s[2] < 1 || s[2] > 3) {
          throw Error(ErrorCode::ShapeMismatch,
                      what + " must be [out, in, k, k] with k in {1,2,3}, got " + shape_string(s));
        }
        check_vector(snap, layer, "bias", s[0], false);
        if (layer.attrs.stride < 1 || layer.attrs.padding < 0) {
          throw Error(ErrorCode::MalformedManifest, "conv2d '" + layer.name + "' has bad stride/padding");
        }
        break;
      }
      case OpKind::BatchNorm: {
        const Tensor& gamma = snap.tensor(layer, "gamma");
        require_rank(gamma, 1, "batchnorm '" + layer.name + "' gamma");
        for (const char* role : {"gamma", "beta", "mean", "var"}) {
          check_vector(snap, layer, role, gamma.shape()[0], true);
        }
        break;
      }
      case OpKind::Dense: {
        const Tensor& w = snap.tensor(layer, "weights");
        require_float(w, "dense '" + layer.name + "' weights");
        require_rank(w, 2, "dense '" + layer.name + "' weights");
        check_vector(snap, layer, "bias", w.shape()[0], false);
        break;
      }
      default:
        break;
    }
  }
}

ModelSnapshot load_snapshot(const std::filesystem::path& manifest_path) {
  const std::string origin = manifest_path.string();
  const auto ext = manifest_path.extension().string();
  const bool archive = ext == ".zip" || ext == ".npz";

  std::optional<detail::ZipArchive> zip;
  std::string text;
  if (archive) {
    zip.emplace(manifest_path);
    const auto bytes = zip->read("manifest.json");
    text.assign(reinterpret_cast<const char*>(bytes.data()), bytes.size());
  } else {
    std::ifstream in(manifest_path);
    if (!in) {
      throw Error(ErrorCode::IoFailure, "cannot open manifest " + origin);
    }
    text.assign(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
  }

  ParsedManifest parsed = parse_manifest(text, origin);
  ModelSnapshot snap;
  snap.manifest = std::move(parsed.layers);
  snap.label = !parsed.label.empty() ? parsed.label
                                     : std::filesystem::absolute(manifest_path)
                                           .parent_path()
                                           .filename()
                                           .string();

  std::set<std::string> referenced;
  for (const LayerSpec& layer : snap.manifest) {
    for (const auto& [role, name] : layer.weight_refs) referenced.insert(name);
  }
  const std::filesystem::path base = manifest_path.parent_path() / parsed.tensor_dir;
  for (const std::string& name : referenced) {
    const auto decl_it = parsed.tensors.find(name);
    const TensorDecl decl =
        decl_it != parsed.tensors.end() ? decl_it->second : TensorDecl{name + ".npy", {}};
    Tensor t;
    if (archive) {
      const std::string entry =
          (std::filesystem::path(parsed.tensor_dir) / decl.file).lexically_normal().generic_string();
      if (!zip->contains(entry)) {
        throw Error(ErrorCode::MissingTensor, origin + ": archive lacks '" + entry + "'");
      }
      t = parse_npy(zip->read(entry), origin + ":" + entry);
    } else {
      const auto file = base / decl.file;
      if (!std::filesystem::exists(file)) {
        throw Error(ErrorCode::MissingTensor, "tensor '" + name + "' file " + file.string() +
                                                  " does not exist");
      }
      t = load_npy(file);
    }
    if (decl.shape && *decl.shape != t.shape()) {
      throw Error(ErrorCode::ShapeMismatch, "tensor '" + name + "' declared " +
                                                shape_string(*decl.shape) + " but file holds " +
                                                shape_string(t.shape()));
    }
    snap.tensors.emplace(name, std::move(t));
  }
  validate_snapshot(snap);
  return snap;
}

void save_snapshot(const ModelSnapshot& snap, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  json doc;
  doc["format"] = kManifestFormat;
  doc["label"] = snap.label;
  doc["tensor_dir"] = ".";
  json tensors = json::object();
  for (const auto& [name, t] : snap.tensors) {
    tensors[name] = {{"file", name + ".npy"}, {"shape", t.shape()}};
    save_npy(t, dir / (name + ".npy"));
  }
  doc["tensors"] = tensors;
  json layers = json::array();
  for (const LayerSpec& l : snap.manifest) {
    json j;
    j["name"] = l.name;
    j["op_kind"] = op_kind_name(l.op_kind);
    j["inputs"] = l.inputs;
    j["weight_refs"] = l.weight_refs;
    json attrs = json::object();
    switch (l.op_kind) {
      case OpKind::Input:
        attrs["shape"] = l.attrs.input_shape;
        break;
      case OpKind::Conv2d:
        attrs["stride"] = l.attrs.stride;
        attrs["padding"] = l.attrs.padding;
        break;
      case OpKind::BatchNorm:
        attrs["epsilon"] = l.attrs.epsilon;
        break;
      default:
        break;
    }
    j["attrs"] = attrs;
    layers.push_back(j);
  }
  doc["layers"] = layers;
  std::ofstream out(dir / "manifest.json");
  if (!out) {
    throw Error(ErrorCode::IoFailure, "cannot write " + (dir / "manifest.json").string());
  }
  out << doc.dump(2) << "\n";
}

bool same_structure(const ModelSnapshot& a, const ModelSnapshot& b) {
  if (a.manifest != b.manifest || a.tensors.size() != b.tensors.size()) return false;
  for (const auto& [name, t] : a.tensors) {
    const auto it = b.tensors.find(name);
    if (it == b.tensors.end() || it->second.shape() != t.shape()) return false;
  }
  return true;
}

CheckpointSeries load_checkpoint_series(const std::filesystem::path& dir) {
  if (!std::filesystem::is_directory(dir)) {
    throw Error(ErrorCode::IoFailure, dir.string() + " is not a directory");
  }
  static const std::regex kEpochDir("epoch_([0-9]+)");
  std::vector<std::pair<std::int64_t, std::filesystem::path>> found;
  for (const auto& entry : std::filesystem::directory_iterator(dir)) {
    std::smatch m;
    const std::string name = entry.path().filename().string();
    if (entry.is_directory() && std::regex_match(name, m, kEpochDir)) {
      found.emplace_back(std::stoll(m[1].str()), entry.path());
    }
  }
  if (found.empty()) {
    throw Error(ErrorCode::EmptySeries, dir.string() + " holds no epoch_<N> directories");
  }
  std::sort(found.begin(), found.end());
  CheckpointSeries series;
  for (const auto& [epoch, path] : found) {
    if (!series.snapshots.empty() && series.snapshots.back().epoch == epoch) {
      throw Error(ErrorCode::InconsistentManifests,
                  "epoch " + std::to_string(epoch) + " appears twice in " + dir.string());
    }
    auto snap = std::make_shared<const ModelSnapshot>(load_snapshot(path / "manifest.json"));
    if (!series.snapshots.empty() && !same_structure(*series.snapshots.front().snapshot, *snap)) {
      throw Error(ErrorCode::InconsistentManifests,
                  "epoch " + std::to_string(epoch) + " does not match the manifest of epoch " +
                      std::to_string(series.snapshots.front().epoch));
    }
    series.snapshots.push_back({epoch, std::move(snap)});
  }
  return series;
}

}  // namespace kernelspect
