#pragma once

#include <filesystem>
#include <string>

#include <nlohmann/json.hpp>

#include "difflab/tensor.hpp"

namespace difflab {

/// Tensor literal: {"shape": [...], "data": nested arrays-of-arrays}.
/// A rank-0 tensor stores its value directly as "data".
nlohmann::json tensor_to_json(const Tensor& t);
Tensor tensor_from_json(const nlohmann::json& j);

/// Raw little-endian f64 payload with a JSON sidecar
/// {"shape": [...], "dtype": "f64", "layout": "nhwc" | "nchw"}.
/// Channel-first files are transposed to channel-last on load.
void write_image_fixture(const std::filesystem::path& bin_path, const Tensor& nhwc);
Tensor read_image_fixture(const std::filesystem::path& bin_path);

void write_f64_blob(const std::filesystem::path& path, std::span<const double> values);
std::vector<double> read_f64_blob(const std::filesystem::path& path);

}  // namespace difflab
