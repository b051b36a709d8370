#include "steerlab/hashing.hpp"

#include "steerlab/error.hpp"

#include <array>
#include <fstream>

namespace steerlab {

namespace {
constexpr std::uint64_t kFnvPrime = 0x100000001b3ULL;
}

std::uint64_t fnv1a64(std::span<const std::byte> bytes, std::uint64_t basis) {
    std::uint64_t h = basis;
    for (std::byte b : bytes) {
        h ^= static_cast<std::uint64_t>(b);
        h *= kFnvPrime;
    }
    return h;
}

std::uint64_t fnv1a64(std::string_view text, std::uint64_t basis) {
    return fnv1a64(std::as_bytes(std::span(text.data(), text.size())), basis);
}

std::string hex64(std::uint64_t value) {
    static constexpr char digits[] = "0123456789abcdef";
    std::string out(16, '0');
    for (int i = 15; i >= 0; --i) {
        out[static_cast<std::size_t>(i)] = digits[value & 0xf];
        value >>= 4;
    }
    return out;
}

std::string file_fingerprint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error(ErrorCode::io, "cannot open " + path);
    std::uint64_t h = 0xcbf29ce484222325ULL;
    std::array<char, 1 << 14> buf{};
    while (in) {
        in.read(buf.data(), buf.size());
        const auto got = static_cast<std::size_t>(in.gcount());
        h = fnv1a64(std::as_bytes(std::span(buf.data(), got)), h);
    }
    return hex64(h);
}

} // namespace steerlab
