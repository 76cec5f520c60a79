#include "difflab/tensor_io.hpp"

#include <bit>
#include <cstring>
#include <fstream>

#include "difflab/kernels.hpp"

namespace difflab {

namespace {

nlohmann::json nest(const Tensor& t, std::size_t axis, Index& cursor) {
  if (axis == t.shape().size()) return t[cursor++];
  auto arr = nlohmann::json::array();
  for (Index i = 0; i < t.shape()[axis]; ++i) arr.push_back(nest(t, axis + 1, cursor));
  return arr;
}

void flatten(const nlohmann::json& j, const Shape& shape, std::size_t axis, std::vector<double>& out) {
  if (axis == shape.size()) {
    if (!j.is_number()) throw DimensionError("tensor literal: expected a number at depth " + std::to_string(axis));
    out.push_back(j.get<double>());
    return;
  }
  if (!j.is_array() || static_cast<Index>(j.size()) != shape[axis])
    throw DimensionError("tensor literal: extent mismatch at axis " + std::to_string(axis) + " for shape " +
                         to_string(shape));
  for (const auto& e : j) flatten(e, shape, axis + 1, out);
}

std::filesystem::path sidecar(const std::filesystem::path& bin) {
  auto p = bin;
  p += ".json";
  return p;
}

}  // namespace

nlohmann::json tensor_to_json(const Tensor& t) {
  Index cursor = 0;
  return {{"shape", t.shape()}, {"data", nest(t, 0, cursor)}};
}

Tensor tensor_from_json(const nlohmann::json& j) {
  if (!j.contains("shape") || !j.contains("data")) throw DimensionError("tensor literal: missing shape or data");
  const Shape shape = j.at("shape").get<Shape>();
  std::vector<double> flat;
  flat.reserve(static_cast<std::size_t>(shape_size(shape)));
  flatten(j.at("data"), shape, 0, flat);
  return Tensor(shape, std::span<const double>(flat));
}

void write_f64_blob(const std::filesystem::path& path, std::span<const double> values) {
  static_assert(std::endian::native == std::endian::little, "f64 blobs are little-endian");
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot open " + path.string() + " for writing");
  os.write(reinterpret_cast<const char*>(values.data()), static_cast<std::streamsize>(values.size_bytes()));
}

std::vector<double> read_f64_blob(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary | std::ios::ate);
  if (!is) throw std::runtime_error("cannot open " + path.string());
  const auto bytes = static_cast<std::size_t>(is.tellg());
  if (bytes % sizeof(double) != 0) throw DimensionError(path.string() + ": size is not a multiple of 8 bytes");
  std::vector<double> out(bytes / sizeof(double));
  is.seekg(0);
  is.read(reinterpret_cast<char*>(out.data()), static_cast<std::streamsize>(bytes));
  return out;
}

void write_image_fixture(const std::filesystem::path& bin_path, const Tensor& nhwc) {
  write_f64_blob(bin_path, nhwc.values());
  std::ofstream os(sidecar(bin_path));
  os << nlohmann::json{{"shape", nhwc.shape()}, {"dtype", "f64"}, {"layout", "nhwc"}}.dump(2) << '\n';
}

Tensor read_image_fixture(const std::filesystem::path& bin_path) {
  std::ifstream meta_stream(sidecar(bin_path));
  if (!meta_stream) throw std::runtime_error("missing sidecar " + sidecar(bin_path).string());
  const auto meta = nlohmann::json::parse(meta_stream);
  if (meta.value("dtype", "") != "f64") throw DimensionError("image fixture: dtype must be f64");
  const Shape shape = meta.at("shape").get<Shape>();
  if (shape.size() != 4) throw DimensionError("image fixture: expected a rank-4 shape, got " + to_string(shape));
  const auto values = read_f64_blob(bin_path);
  Tensor t(shape, std::span<const double>(values));
  const std::string layout = meta.value("layout", "nhwc");
  if (layout == "nhwc") return t;
  if (layout == "nchw") return transpose(t, {0, 2, 3, 1});
  throw DimensionError("image fixture: unknown layout '" + layout + "'");
}

}  // namespace difflab
