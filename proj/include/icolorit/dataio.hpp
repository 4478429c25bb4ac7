#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "icolorit/image.hpp"
#include "icolorit/model.hpp"

namespace icolorit::dataio {

inline constexpr char kCheckpointMagic[4] = {'I', 'C', 'L', 'T'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

/// Layout: magic "ICLT", u32 version, u64 header length (all little
/// endian), UTF-8 JSON header {"config", "tensors":[{"name","shape",
/// "offset"}]}, then float32 little-endian payload. Offsets are bytes from
/// the start of the payload.
std::vector<std::uint8_t> encode_checkpoint(const ModelParams& params, const ModelConfig& config);
Model decode_checkpoint(std::span<const std::uint8_t> bytes);

void save_checkpoint(const ModelParams& params, const ModelConfig& config,
                     const std::filesystem::path& path);
Model load_checkpoint(const std::filesystem::path& path);

std::vector<std::uint8_t> encode_png(const RgbImage& img);
/// Grayscale is replicated, alpha dropped, 16-bit reduced to 8.
RgbImage decode_png(std::span<const std::uint8_t> bytes);

/// Width and height from the IHDR chunk without decoding pixels.
std::pair<int, int> png_dimensions(std::span<const std::uint8_t> bytes);

void save_png(const RgbImage& img, const std::filesystem::path& path);
RgbImage load_png(const std::filesystem::path& path);

/// Bilinear resampling with half-pixel centers on a real-valued plane.
Plane resize_bilinear(const Plane& plane, int width, int height);
/// Per-channel bilinear resampling, rounded to 8 bits.
RgbImage resize_bilinear(const RgbImage& img, int width, int height);

/// All *.png files in a directory (sorted by name), resized to size x size.
std::vector<RgbImage> load_png_directory(const std::filesystem::path& dir, int size);

std::vector<std::uint8_t> read_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path, std::span<const std::uint8_t> bytes);
void write_text(const std::filesystem::path& path, std::string_view text);
std::string read_text(const std::filesystem::path& path);

std::string base64_encode(std::span<const std::uint8_t> bytes);
/// Throws InvalidArgument on characters outside the standard alphabet.
std::vector<std::uint8_t> base64_decode(std::string_view text);

}  // namespace icolorit::dataio
