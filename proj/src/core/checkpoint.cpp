// Copyright 2026 The EiHi Lab Authors
// SPDX-License-Identifier: Apache-2.0

#include "eihi/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

#include "eihi/error.hpp"

namespace eihi {

namespace {

static_assert(std::endian::native == std::endian::little,
              "checkpoint codec assumes a little-endian host");

template <typename T>
void put(std::string& out, T v) {
  char buf[sizeof(T)];
  std::memcpy(buf, &v, sizeof(T));
  out.append(buf, sizeof(T));
}

class Reader {
 public:
  explicit Reader(std::string_view bytes) : bytes_(bytes) {}

  template <typename T>
  T get(const char* what) {
    if (bytes_.size() - pos_ < sizeof(T))
      throw ParseError(std::string("checkpoint truncated while reading ") + what);
    T v;
    std::memcpy(&v, bytes_.data() + pos_, sizeof(T));
    pos_ += sizeof(T);
    return v;
  }

  std::string_view take(std::size_t n, const char* what) {
    if (bytes_.size() - pos_ < n)
      throw ParseError(std::string("checkpoint truncated while reading ") + what);
    auto s = bytes_.substr(pos_, n);
    pos_ += n;
    return s;
  }

  bool done() const { return pos_ == bytes_.size(); }

 private:
  std::string_view bytes_;
  std::size_t pos_ = 0;
};

}  // namespace

std::string encode_checkpoint(const nlohmann::json& spec, std::span<const Tensor> tensors) {
  std::string out = "EIHI";
  put<std::uint32_t>(out, kCheckpointVersion);
  const std::string js = spec.dump();
  put<std::uint32_t>(out, static_cast<std::uint32_t>(js.size()));
  out += js;
  for (const auto& t : tensors) {
    put<std::uint32_t>(out, static_cast<std::uint32_t>(t.rank()));
    for (auto e : t.shape()) put<std::uint64_t>(out, e);
    for (double v : t.values()) put<double>(out, v);
  }
  return out;
}

Checkpoint decode_checkpoint(std::string_view bytes) {
  Reader r(bytes);
  if (r.take(4, "magic") != "EIHI") throw ParseError("checkpoint: bad magic bytes");
  const auto version = r.get<std::uint32_t>("version");
  if (version != kCheckpointVersion)
    throw ParseError("checkpoint: unsupported version " + std::to_string(version));
  const auto len = r.get<std::uint32_t>("spec length");
  Checkpoint ck;
  try {
    ck.spec = nlohmann::json::parse(r.take(len, "spec"));
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("checkpoint: spec is not valid JSON: ") + e.what());
  }
  while (!r.done()) {
    const auto rank = r.get<std::uint32_t>("tensor rank");
    if (rank > 8) throw ParseError("checkpoint: implausible tensor rank " + std::to_string(rank));
    Shape shape(rank);
    for (auto& e : shape) e = r.get<std::uint64_t>("tensor extent");
    const std::size_t n = shape_size(shape);
    if (n > bytes.size() / sizeof(double)) throw ParseError("checkpoint: tensor larger than file");
    std::vector<double> values(n);
    const auto raw = r.take(n * sizeof(double), "tensor values");
    std::memcpy(values.data(), raw.data(), raw.size());
    try {
      ck.tensors.emplace_back(std::move(shape), std::move(values));
    } catch (const ShapeError& e) {
      throw ParseError(std::string("checkpoint: ") + e.what());
    }
  }
  return ck;
}

std::string read_file_bytes(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file_bytes(const std::filesystem::path& path, std::string_view bytes) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("short write to " + path.string());
}

void save_checkpoint(const std::filesystem::path& path, const nlohmann::json& spec,
                     std::span<const Tensor> tensors) {
  write_file_bytes(path, encode_checkpoint(spec, tensors));
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  return decode_checkpoint(read_file_bytes(path));
}

void save_backbone(const std::filesystem::path& path, const BackboneParams& params) {
  auto spec = params.spec.to_json();
  spec["kind"] = "backbone";
  save_checkpoint(path, spec, params.tensors);
}

BackboneParams load_backbone(const std::filesystem::path& path) {
  auto ck = load_checkpoint(path);
  if (ck.spec.value("kind", std::string()) != "backbone")
    throw ParseError(path.string() + ": not a backbone checkpoint");
  BackboneParams p{BackboneSpec::from_json(ck.spec), std::move(ck.tensors)};
  const auto shapes = p.spec.parameter_shapes();
  if (shapes.size() != p.tensors.size())
    throw ParseError(path.string() + ": expected " + std::to_string(shapes.size()) +
                     " tensors, found " + std::to_string(p.tensors.size()));
  for (std::size_t i = 0; i < shapes.size(); ++i)
    if (shapes[i] != p.tensors[i].shape())
      throw ParseError(path.string() + ": tensor " + std::to_string(i) + " has shape " +
                       shape_string(p.tensors[i].shape()));
  return p;
}

}  // namespace eihi
