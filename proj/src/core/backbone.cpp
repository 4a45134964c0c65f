// Copyright 2026 The EiHi Lab Authors
// SPDX-License-Identifier: Apache-2.0

#include "eihi/backbone.hpp"

#include <cmath>

#include "eihi/error.hpp"
#include "eihi/rng.hpp"

namespace eihi {

namespace {

const char* kind_name(LayerKind k) {
  switch (k) {
    case LayerKind::Conv: return "conv";
    case LayerKind::Relu: return "relu";
    case LayerKind::MaxPool: return "maxpool";
    case LayerKind::AvgPool: return "avgpool";
    case LayerKind::GlobalMean: return "global_mean";
    case LayerKind::Flatten: return "flatten";
    case LayerKind::Dense: return "dense";
  }
  return "?";
}

LayerKind kind_from(const std::string& s) {
  if (s == "conv") return LayerKind::Conv;
  if (s == "relu") return LayerKind::Relu;
  if (s == "maxpool") return LayerKind::MaxPool;
  if (s == "avgpool") return LayerKind::AvgPool;
  if (s == "global_mean") return LayerKind::GlobalMean;
  if (s == "flatten") return LayerKind::Flatten;
  if (s == "dense") return LayerKind::Dense;
  throw ConfigError("unknown layer type '" + s + "'");
}

}  // namespace

bool operator==(const LayerSpec& a, const LayerSpec& b) {
  return a.kind == b.kind && a.out == b.out && a.kernel == b.kernel && a.stride == b.stride &&
         a.pad == b.pad;
}

BackboneSpec BackboneSpec::standard(std::size_t height, std::size_t width,
                                    std::size_t embedding_dim) {
  BackboneSpec s;
  s.height = height;
  s.width = width;
  for (std::size_t ch : {8u, 16u, 32u}) {
    s.layers.push_back({LayerKind::Conv, ch, 3, 1, 1});
    s.layers.push_back({LayerKind::Relu});
    s.layers.push_back({LayerKind::MaxPool, 0, 2});
  }
  s.layers.push_back({LayerKind::Flatten});
  s.layers.push_back({LayerKind::Dense, embedding_dim});
  return s;
}

std::vector<Shape> BackboneSpec::layer_shapes() const {
  if (channels == 0 || height == 0 || width == 0)
    throw ConfigError("backbone input extents must be positive");
  if (layers.empty()) throw ConfigError("backbone has no layers");
  std::vector<Shape> shapes;
  Shape cur{channels, height, width};
  for (std::size_t i = 0; i < layers.size(); ++i) {
    const auto& l = layers[i];
    const std::string where = "layer " + std::to_string(i) + " (" + kind_name(l.kind) + ")";
    switch (l.kind) {
      case LayerKind::Conv: {
        if (cur.size() != 3) throw ShapeError(where + ": needs a c x h x w input");
        if (l.out == 0 || l.kernel == 0 || l.stride == 0)
          throw ConfigError(where + ": out, kernel and stride must be positive");
        if (cur[1] + 2 * l.pad < l.kernel || cur[2] + 2 * l.pad < l.kernel)
          throw ShapeError(where + ": kernel larger than input " + shape_string(cur));
        cur = {l.out, (cur[1] + 2 * l.pad - l.kernel) / l.stride + 1,
               (cur[2] + 2 * l.pad - l.kernel) / l.stride + 1};
        break;
      }
      case LayerKind::MaxPool:
      case LayerKind::AvgPool:
        if (cur.size() != 3) throw ShapeError(where + ": needs a c x h x w input");
        if (l.kernel == 0 || cur[1] < l.kernel || cur[2] < l.kernel)
          throw ShapeError(where + ": window does not fit " + shape_string(cur));
        cur = {cur[0], cur[1] / l.kernel, cur[2] / l.kernel};
        break;
      case LayerKind::GlobalMean:
        if (cur.size() != 3) throw ShapeError(where + ": needs a c x h x w input");
        cur = {cur[0]};
        break;
      case LayerKind::Flatten:
        cur = {shape_size(cur)};
        break;
      case LayerKind::Dense:
        if (cur.size() != 1) throw ShapeError(where + ": needs a flat input (add flatten)");
        if (l.out == 0) throw ConfigError(where + ": width must be positive");
        cur = {l.out};
        break;
      case LayerKind::Relu:
        break;
    }
    shapes.push_back(cur);
  }
  if (cur.size() != 1) throw ShapeError("backbone output must be a vector, got " + shape_string(cur));
  return shapes;
}

std::size_t BackboneSpec::embedding_dim() const { return layer_shapes().back()[0]; }

std::vector<Shape> BackboneSpec::parameter_shapes() const {
  const auto shapes = layer_shapes();
  std::vector<Shape> out;
  Shape in{channels, height, width};
  for (std::size_t i = 0; i < layers.size(); ++i) {
    const auto& l = layers[i];
    if (l.kind == LayerKind::Conv) {
      out.push_back({l.out, in[0], l.kernel, l.kernel});
      out.push_back({l.out});
    } else if (l.kind == LayerKind::Dense) {
      out.push_back({l.out, in[0]});
      out.push_back({l.out});
    }
    in = shapes[i];
  }
  return out;
}

std::size_t BackboneSpec::parameter_count() const {
  std::size_t n = 0;
  for (const auto& s : parameter_shapes()) n += shape_size(s);
  return n;
}

nlohmann::json BackboneSpec::to_json() const {
  nlohmann::json layers_json = nlohmann::json::array();
  for (const auto& l : layers) {
    nlohmann::json j{{"type", kind_name(l.kind)}};
    switch (l.kind) {
      case LayerKind::Conv:
        j["out"] = l.out;
        j["kernel"] = l.kernel;
        j["stride"] = l.stride;
        j["pad"] = l.pad;
        break;
      case LayerKind::MaxPool:
      case LayerKind::AvgPool:
        j["size"] = l.kernel;
        break;
      case LayerKind::Dense:
        j["out"] = l.out;
        break;
      default:
        break;
    }
    layers_json.push_back(std::move(j));
  }
  return {{"input", {{"channels", channels}, {"height", height}, {"width", width}}},
          {"layers", std::move(layers_json)}};
}

BackboneSpec BackboneSpec::from_json(const nlohmann::json& j) {
  try {
    BackboneSpec s;
    const auto& in = j.at("input");
    s.channels = in.at("channels").get<std::size_t>();
    s.height = in.at("height").get<std::size_t>();
    s.width = in.at("width").get<std::size_t>();
    for (const auto& lj : j.at("layers")) {
      LayerSpec l;
      l.kind = kind_from(lj.at("type").get<std::string>());
      if (l.kind == LayerKind::Conv) {
        l.out = lj.at("out").get<std::size_t>();
        l.kernel = lj.at("kernel").get<std::size_t>();
        l.stride = lj.value("stride", std::size_t{1});
        l.pad = lj.value("pad", std::size_t{0});
      } else if (l.kind == LayerKind::MaxPool || l.kind == LayerKind::AvgPool) {
        l.kernel = lj.at("size").get<std::size_t>();
      } else if (l.kind == LayerKind::Dense) {
        l.out = lj.at("out").get<std::size_t>();
      }
      s.layers.push_back(l);
    }
    s.layer_shapes();
    return s;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("backbone spec: ") + e.what());
  }
}

std::uint64_t BackboneParams::checksum() const {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (const auto& t : tensors)
    for (double v : t.values()) {
      const auto* bytes = reinterpret_cast<const unsigned char*>(&v);
      for (std::size_t i = 0; i < sizeof(double); ++i) {
        h ^= bytes[i];
        h *= 0x100000001b3ULL;
      }
    }
  return h;
}

BackboneParams init_backbone(const BackboneSpec& spec, std::uint64_t seed) {
  BackboneParams p{spec, {}};
  CounterRng rng(CounterRng::derive(seed, 0xbacb0e));
  for (const auto& shape : spec.parameter_shapes()) {
    Tensor t(shape, 0.0);
    if (shape.size() > 1) {
      double fan_in = 1.0, fan_out = static_cast<double>(shape[0]);
      for (std::size_t i = 1; i < shape.size(); ++i) fan_in *= static_cast<double>(shape[i]);
      for (std::size_t i = 2; i < shape.size(); ++i) fan_out *= static_cast<double>(shape[i]);
      const double s = std::sqrt(6.0 / (fan_in + fan_out));
      for (auto& v : t.values()) v = rng.uniform(-s, s);
    }
    p.tensors.push_back(std::move(t));
  }
  return p;
}

Var forward_backbone(const BackboneSpec& spec, std::span<const Var> params, Var batch) {
  const Tensor& x = batch.value();
  if (x.rank() != 4 || x.dim(1) != spec.channels || x.dim(2) != spec.height ||
      x.dim(3) != spec.width)
    throw ShapeError("backbone expects n x " + std::to_string(spec.channels) + " x " +
                     std::to_string(spec.height) + " x " + std::to_string(spec.width) +
                     " input, got " + shape_string(x.shape()));
  const auto expected = spec.parameter_shapes();
  if (params.size() != expected.size())
    throw ShapeError("backbone expects " + std::to_string(expected.size()) +
                     " parameter tensors, got " + std::to_string(params.size()));
  for (std::size_t i = 0; i < params.size(); ++i)
    if (params[i].shape() != expected[i])
      throw ShapeError("backbone parameter " + std::to_string(i) + " has shape " +
                       shape_string(params[i].shape()) + ", expected " +
                       shape_string(expected[i]));
  Var h = batch;
  std::size_t p = 0;
  for (const auto& l : spec.layers) {
    switch (l.kind) {
      case LayerKind::Conv:
        h = conv2d(h, params[p], params[p + 1], l.stride, l.pad);
        p += 2;
        break;
      case LayerKind::Relu: h = relu(h); break;
      case LayerKind::MaxPool: h = max_pool2d(h, l.kernel); break;
      case LayerKind::AvgPool: h = avg_pool2d(h, l.kernel); break;
      case LayerKind::GlobalMean: h = global_mean(h); break;
      case LayerKind::Flatten: h = flatten(h); break;
      case LayerKind::Dense:
        h = dense(h, params[p], params[p + 1]);
        p += 2;
        break;
    }
  }
  return h;
}

Tensor forward_backbone(const BackboneParams& params, const Tensor& batch) {
  Tape tape;
  std::vector<Var> vars;
  vars.reserve(params.tensors.size());
  for (const auto& t : params.tensors) vars.push_back(tape.constant(t));
  return forward_backbone(params.spec, vars, tape.constant(batch)).value();
}

Tensor embed_all(const BackboneParams& params, const Tensor& batch, std::size_t chunk) {
  if (batch.rank() != 4) throw ShapeError("embed_all expects an n x c x h x w batch");
  const std::size_t n = batch.dim(0);
  const std::size_t d = params.embedding_dim();
  std::vector<double> out;
  out.reserve(n * d);
  for (std::size_t b = 0; b < n; b += chunk) {
    const Tensor z = forward_backbone(params, batch.slice_rows(b, std::min(n, b + chunk)));
    out.insert(out.end(), z.values().begin(), z.values().end());
  }
  return Tensor({n, d}, std::move(out));
}

}  // namespace eihi
