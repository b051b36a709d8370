#pragma once

#include "steerlab/tensor.hpp"

#include <json.hpp>

#include <map>
#include <string>
#include <string_view>

namespace steerlab {

// Named-tensor container shared by model weights and direction banks.
//
// Layout:
//   u64 little-endian  header length L
//   L bytes            UTF-8 JSON header:
//                        { "format": "steerlab.tensors", "version": 1,
//                          "metadata": { ... },
//                          "tensors": [ { "name", "dtype": "f32",
//                                         "shape": [..], "byte_offset" } ] }
//   blob               concatenated little-endian f32 tensors, row-major;
//                      byte_offset is relative to the first blob byte
struct TensorFile {
    nlohmann::json metadata = nlohmann::json::object();
    std::map<std::string, Tensor> tensors;
};

inline constexpr std::string_view kContainerFormat = "steerlab.tensors";
inline constexpr int kContainerVersion = 1;

std::string encode_tensor_file(const TensorFile& file);
TensorFile decode_tensor_file(std::string_view bytes, const std::string& source = "<memory>");

void write_tensor_file(const std::string& path, const TensorFile& file);
TensorFile read_tensor_file(const std::string& path);

std::string read_file_bytes(const std::string& path);
void write_file_bytes(const std::string& path, std::string_view bytes);

} // namespace steerlab
