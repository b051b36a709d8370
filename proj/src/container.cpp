#include "steerlab/container.hpp"

#include "steerlab/error.hpp"

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

namespace steerlab {

using nlohmann::json;

namespace {

void put_u64_le(std::string& out, std::uint64_t v) {
    for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

std::uint64_t get_u64_le(std::string_view in) {
    std::uint64_t v = 0;
    for (int i = 7; i >= 0; --i) v = (v << 8) | static_cast<unsigned char>(in[static_cast<std::size_t>(i)]);
    return v;
}

void put_f32_le(std::string& out, float f) {
    auto bits = std::bit_cast<std::uint32_t>(f);
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((bits >> (8 * i)) & 0xff));
}

float get_f32_le(const char* p) {
    std::uint32_t bits = 0;
    for (int i = 3; i >= 0; --i) bits = (bits << 8) | static_cast<unsigned char>(p[i]);
    return std::bit_cast<float>(bits);
}

[[noreturn]] void malformed(const std::string& source, const std::string& what) {
    throw Error(ErrorCode::malformed_header, source + ": malformed header: " + what);
}

} // namespace

std::string encode_tensor_file(const TensorFile& file) {
    json header;
    header["format"] = kContainerFormat;
    header["version"] = kContainerVersion;
    header["metadata"] = file.metadata;
    header["tensors"] = json::array();

    std::string blob;
    for (const auto& [name, tensor] : file.tensors) {
        if (tensor.numel() != tensor.data.size()) {
            throw Error(ErrorCode::shape_mismatch,
                        "tensor '" + name + "': shape does not match element count");
        }
        header["tensors"].push_back({{"name", name},
                                     {"dtype", "f32"},
                                     {"shape", tensor.shape},
                                     {"byte_offset", blob.size()}});
        blob.reserve(blob.size() + tensor.data.size() * 4);
        for (float f : tensor.data) put_f32_le(blob, f);
    }

    const std::string text = header.dump(2);
    std::string out;
    out.reserve(8 + text.size() + blob.size());
    put_u64_le(out, text.size());
    out += text;
    out += blob;
    return out;
}

TensorFile decode_tensor_file(std::string_view bytes, const std::string& source) {
    if (bytes.size() < 8) malformed(source, "file shorter than the 8-byte length prefix");
    const std::uint64_t header_len = get_u64_le(bytes.substr(0, 8));
    if (header_len > bytes.size() - 8) malformed(source, "header length exceeds file size");

    json header;
    try {
        header = json::parse(bytes.substr(8, header_len));
    } catch (const json::parse_error& e) {
        malformed(source, std::string("not valid JSON: ") + e.what());
    }
    if (!header.is_object()) malformed(source, "header is not an object");
    if (header.value("format", "") != kContainerFormat) malformed(source, "unknown format tag");
    if (!header.contains("version") || !header["version"].is_number_integer() ||
        header["version"].get<int>() != kContainerVersion) {
        malformed(source, "unsupported container version");
    }
    if (!header.contains("tensors") || !header["tensors"].is_array()) malformed(source, "missing tensor list");

    TensorFile file;
    if (header.contains("metadata")) {
        if (!header["metadata"].is_object()) malformed(source, "metadata is not an object");
        file.metadata = header["metadata"];
    }

    const std::string_view blob = bytes.substr(8 + header_len);
    for (const auto& entry : header["tensors"]) {
        if (!entry.is_object() || !entry.contains("name") || !entry["name"].is_string()) {
            malformed(source, "tensor entry without a name");
        }
        const auto name = entry["name"].get<std::string>();
        if (!entry.contains("dtype") || !entry["dtype"].is_string() ||
            !entry.contains("shape") || !entry["shape"].is_array() ||
            !entry.contains("byte_offset") || !entry["byte_offset"].is_number_unsigned()) {
            malformed(source, "tensor '" + name + "' lacks dtype/shape/byte_offset");
        }
        if (entry["dtype"].get<std::string>() != "f32") {
            throw Error(ErrorCode::shape_mismatch,
                        source + ": tensor '" + name + "' has unsupported dtype '" +
                            entry["dtype"].get<std::string>() + "'");
        }
        Tensor t;
        for (const auto& d : entry["shape"]) {
            if (!d.is_number_unsigned() || d.get<std::size_t>() == 0) {
                malformed(source, "tensor '" + name + "' has a non-positive dimension");
            }
            t.shape.push_back(d.get<std::size_t>());
        }
        const auto offset = entry["byte_offset"].get<std::size_t>();
        const std::size_t nbytes = t.numel() * 4;
        if (offset > blob.size() || nbytes > blob.size() - offset) {
            throw Error(ErrorCode::truncated_blob,
                        source + ": tensor '" + name + "' needs " + std::to_string(nbytes) +
                            " bytes at offset " + std::to_string(offset) + " but the blob holds " +
                            std::to_string(blob.size()));
        }
        t.data.resize(t.numel());
        const char* p = blob.data() + offset;
        for (std::size_t i = 0; i < t.data.size(); ++i) t.data[i] = get_f32_le(p + 4 * i);
        if (!file.tensors.emplace(name, std::move(t)).second) {
            malformed(source, "duplicate tensor '" + name + "'");
        }
    }
    return file;
}

std::string read_file_bytes(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error(ErrorCode::io, "cannot open " + path);
    std::ostringstream ss;
    ss << in.rdbuf();
    return std::move(ss).str();
}

void write_file_bytes(const std::string& path, std::string_view bytes) {
    const auto parent = std::filesystem::path(path).parent_path();
    if (!parent.empty()) std::filesystem::create_directories(parent);
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw Error(ErrorCode::io, "cannot write " + path);
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw Error(ErrorCode::io, "short write to " + path);
}

void write_tensor_file(const std::string& path, const TensorFile& file) {
    write_file_bytes(path, encode_tensor_file(file));
}

TensorFile read_tensor_file(const std::string& path) {
    return decode_tensor_file(read_file_bytes(path), path);
}

} // namespace steerlab
