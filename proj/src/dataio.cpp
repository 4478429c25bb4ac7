#include "icolorit/dataio.hpp"

#include <png.h>

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <set>

#include "icolorit/error.hpp"
#include "json.hpp"

namespace icolorit::dataio {
namespace {

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

void put_u64(std::vector<std::uint8_t>& out, std::uint64_t v) {
    for (int i = 0; i < 8; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

std::uint64_t get_le(std::span<const std::uint8_t> bytes, std::size_t at, int width) {
    std::uint64_t v = 0;
    for (int i = 0; i < width; ++i) v |= static_cast<std::uint64_t>(bytes[at + i]) << (8 * i);
    return v;
}

void put_f32(std::vector<std::uint8_t>& out, float f) { put_u32(out, std::bit_cast<std::uint32_t>(f)); }

float get_f32(std::span<const std::uint8_t> bytes, std::size_t at) {
    return std::bit_cast<float>(static_cast<std::uint32_t>(get_le(bytes, at, 4)));
}

constexpr std::size_t kPreamble = 16;

}  // namespace

// ---------------------------------------------------------------------------
// Checkpoints

std::vector<std::uint8_t> encode_checkpoint(const ModelParams& params, const ModelConfig& config) {
    nlohmann::json dir = nlohmann::json::array();
    std::uint64_t offset = 0;
    for (const auto& p : params.list()) {
        dir.push_back({{"name", p.name}, {"shape", p.tensor.shape()}, {"offset", offset}});
        offset += 4 * p.tensor.size();
    }
    nlohmann::json header = {{"config", nlohmann::json::parse(config_to_json(config))},
                             {"tensors", std::move(dir)}};
    const std::string text = header.dump();

    std::vector<std::uint8_t> out;
    out.reserve(kPreamble + text.size() + offset);
    out.insert(out.end(), std::begin(kCheckpointMagic), std::end(kCheckpointMagic));
    put_u32(out, kCheckpointVersion);
    put_u64(out, text.size());
    out.insert(out.end(), text.begin(), text.end());
    for (const auto& p : params.list()) {
        for (double v : p.tensor.values()) put_f32(out, static_cast<float>(v));
    }
    return out;
}

Model decode_checkpoint(std::span<const std::uint8_t> bytes) {
    if (bytes.size() < 4 || std::memcmp(bytes.data(), kCheckpointMagic, 4) != 0) {
        throw InvalidArgument("not a checkpoint (bad magic)");
    }
    if (bytes.size() < kPreamble) throw InvalidArgument("checkpoint: unexpected end of file in preamble");
    const auto version = static_cast<std::uint32_t>(get_le(bytes, 4, 4));
    if (version != kCheckpointVersion) {
        throw InvalidArgument("checkpoint: unsupported format version " + std::to_string(version) +
                              " (expected " + std::to_string(kCheckpointVersion) + ")");
    }
    const std::uint64_t header_len = get_le(bytes, 8, 8);
    if (header_len > bytes.size() - kPreamble) {
        throw InvalidArgument("checkpoint: unexpected end of file in header");
    }
    nlohmann::json header;
    try {
        header = nlohmann::json::parse(bytes.begin() + kPreamble,
                                       bytes.begin() + static_cast<std::ptrdiff_t>(kPreamble + header_len));
    } catch (const nlohmann::json::exception& e) {
        throw InvalidArgument(std::string("checkpoint: malformed header: ") + e.what());
    }
    if (!header.contains("config") || !header.contains("tensors") || !header["tensors"].is_array()) {
        throw InvalidArgument("checkpoint: header lacks config or tensor directory");
    }
    const ModelConfig config = config_from_json(header["config"].dump());

    const std::size_t payload_start = kPreamble + header_len;
    const std::size_t payload_size = bytes.size() - payload_start;
    std::map<std::string, ParameterSpec> expected;
    for (auto& spec : parameter_layout(config)) expected.emplace(spec.name, spec);

    ModelParams params = ModelParams::zeros(config);
    std::set<std::string> seen;
    std::vector<std::pair<std::uint64_t, std::uint64_t>> ranges;
    for (const auto& entry : header["tensors"]) {
        if (!entry.contains("name") || !entry.contains("shape") || !entry.contains("offset")) {
            throw InvalidArgument("checkpoint: malformed tensor directory entry");
        }
        const auto name = entry["name"].get<std::string>();
        const auto shape = entry["shape"].get<ad::Shape>();
        const auto offset = entry["offset"].get<std::uint64_t>();
        auto it = expected.find(name);
        if (it == expected.end()) throw InvalidArgument("checkpoint: unexpected tensor '" + name + "'");
        if (!seen.insert(name).second) throw InvalidArgument("checkpoint: duplicate tensor '" + name + "'");
        if (shape != it->second.shape) {
            throw InvalidArgument("checkpoint: tensor '" + name + "' has shape " +
                                  ad::shape_str(shape) + ", expected " +
                                  ad::shape_str(it->second.shape));
        }
        const std::uint64_t len = 4 * ad::numel(shape);
        if (offset > payload_size || len > payload_size - offset) {
            throw InvalidArgument("checkpoint: unexpected end of file in tensor '" + name + "'");
        }
        ranges.emplace_back(offset, offset + len);
        ad::Tensor t = params.get(name);
        auto dst = t.mutable_values();
        for (std::size_t i = 0; i < dst.size(); ++i) {
            dst[i] = get_f32(bytes, payload_start + offset + 4 * i);
        }
    }
    for (const auto& [name, spec] : expected) {
        if (!seen.contains(name)) throw InvalidArgument("checkpoint: missing tensor '" + name + "'");
    }
    std::sort(ranges.begin(), ranges.end());
    for (std::size_t i = 1; i < ranges.size(); ++i) {
        if (ranges[i].first < ranges[i - 1].second) {
            throw InvalidArgument("checkpoint: overlapping tensor data");
        }
    }
    return Model(config, std::move(params));
}

void save_checkpoint(const ModelParams& params, const ModelConfig& config,
                     const std::filesystem::path& path) {
    write_file(path, encode_checkpoint(params, config));
}

Model load_checkpoint(const std::filesystem::path& path) {
    const auto bytes = read_file(path);
    try {
        return decode_checkpoint(bytes);
    } catch (const InvalidArgument& e) {
        throw InvalidArgument(path.string() + ": " + e.what());
    }
}

// ---------------------------------------------------------------------------
// PNG

namespace {

struct ReadCursor {
    std::span<const std::uint8_t> bytes;
    std::size_t pos = 0;
};

void png_read_span(png_structp png, png_bytep out, png_size_t len) {
    auto* cur = static_cast<ReadCursor*>(png_get_io_ptr(png));
    if (len > cur->bytes.size() - cur->pos) png_error(png, "unexpected end of PNG data");
    std::memcpy(out, cur->bytes.data() + cur->pos, len);
    cur->pos += len;
}

void png_write_vec(png_structp png, png_bytep data, png_size_t len) {
    auto* out = static_cast<std::vector<std::uint8_t>*>(png_get_io_ptr(png));
    out->insert(out->end(), data, data + len);
}

void png_flush_noop(png_structp) {}

[[noreturn]] void png_fail(png_structp png, png_const_charp msg) {
    auto* err = static_cast<std::string*>(png_get_error_ptr(png));
    *err = msg;
    png_longjmp(png, 1);
}

void png_warn_ignore(png_structp, png_const_charp) {}

}  // namespace

std::vector<std::uint8_t> encode_png(const RgbImage& img) {
    if (img.width < 1 || img.height < 1) throw InvalidArgument("encode_png: empty image");
    std::string err;
    png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, &err, png_fail, png_warn_ignore);
    if (!png) throw RuntimeError("encode_png: out of memory");
    png_infop info = png_create_info_struct(png);
    std::vector<std::uint8_t> out;
    std::vector<png_bytep> rows(static_cast<std::size_t>(img.height));
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_write_struct(&png, &info);
        throw RuntimeError("encode_png: " + err);
    }
    png_set_write_fn(png, &out, png_write_vec, png_flush_noop);
    png_set_IHDR(png, info, static_cast<png_uint_32>(img.width), static_cast<png_uint_32>(img.height), 8,
                 PNG_COLOR_TYPE_RGB, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT,
                 PNG_FILTER_TYPE_DEFAULT);
    for (int y = 0; y < img.height; ++y) {
        rows[static_cast<std::size_t>(y)] = const_cast<png_bytep>(img.pixel(0, y));
    }
    png_set_rows(png, info, rows.data());
    png_write_png(png, info, PNG_TRANSFORM_IDENTITY, nullptr);
    png_destroy_write_struct(&png, &info);
    return out;
}

RgbImage decode_png(std::span<const std::uint8_t> bytes) {
    if (bytes.size() < 8 || png_sig_cmp(bytes.data(), 0, 8) != 0) {
        throw InvalidArgument("decode error: not a PNG file");
    }
    std::string err;
    png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, &err, png_fail, png_warn_ignore);
    if (!png) throw RuntimeError("decode_png: out of memory");
    png_infop info = png_create_info_struct(png);
    ReadCursor cursor{bytes, 0};
    RgbImage img;
    std::vector<png_bytep> rows;
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw InvalidArgument("decode error: " + err);
    }
    png_set_read_fn(png, &cursor, png_read_span);
    png_read_info(png, info);
    const auto color = png_get_color_type(png, info);
    const auto depth = png_get_bit_depth(png, info);
    if (depth == 16) png_set_strip_16(png);
    if (color == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
    if (color == PNG_COLOR_TYPE_GRAY && depth < 8) png_set_expand_gray_1_2_4_to_8(png);
    if (png_get_valid(png, info, PNG_INFO_tRNS)) png_set_tRNS_to_alpha(png);
    if (color == PNG_COLOR_TYPE_GRAY || color == PNG_COLOR_TYPE_GRAY_ALPHA) png_set_gray_to_rgb(png);
    png_set_strip_alpha(png);
    png_set_interlace_handling(png);
    png_read_update_info(png, info);

    const auto w = png_get_image_width(png, info);
    const auto h = png_get_image_height(png, info);
    if (png_get_rowbytes(png, info) != static_cast<png_size_t>(w) * 3) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw InvalidArgument("decode error: unsupported PNG layout");
    }
    img = RgbImage(static_cast<int>(w), static_cast<int>(h));
    rows.resize(h);
    for (png_uint_32 y = 0; y < h; ++y) rows[y] = img.pixel(0, static_cast<int>(y));
    png_read_image(png, rows.data());
    png_read_end(png, nullptr);
    png_destroy_read_struct(&png, &info, nullptr);
    return img;
}

std::pair<int, int> png_dimensions(std::span<const std::uint8_t> bytes) {
    if (bytes.size() < 24 || png_sig_cmp(bytes.data(), 0, 8) != 0 ||
        std::memcmp(bytes.data() + 12, "IHDR", 4) != 0) {
        throw InvalidArgument("decode error: not a PNG file");
    }
    auto be32 = [&](std::size_t at) {
        return (std::uint32_t{bytes[at]} << 24) | (std::uint32_t{bytes[at + 1]} << 16) |
               (std::uint32_t{bytes[at + 2]} << 8) | std::uint32_t{bytes[at + 3]};
    };
    const std::uint32_t w = be32(16), h = be32(20);
    if (w == 0 || h == 0 || w > 0x7fffffff || h > 0x7fffffff) {
        throw InvalidArgument("decode error: invalid PNG dimensions");
    }
    return {static_cast<int>(w), static_cast<int>(h)};
}

void save_png(const RgbImage& img, const std::filesystem::path& path) { write_file(path, encode_png(img)); }

RgbImage load_png(const std::filesystem::path& path) {
    const auto bytes = read_file(path);
    try {
        return decode_png(bytes);
    } catch (const InvalidArgument& e) {
        throw InvalidArgument(path.string() + ": " + e.what());
    }
}

// ---------------------------------------------------------------------------
// Resampling

namespace {

struct Tap {
    int i0, i1;
    double t;
};

std::vector<Tap> taps(int src, int dst) {
    std::vector<Tap> out(static_cast<std::size_t>(dst));
    const double scale = static_cast<double>(src) / dst;
    for (int i = 0; i < dst; ++i) {
        const double pos = std::clamp((i + 0.5) * scale - 0.5, 0.0, static_cast<double>(src - 1));
        const int i0 = static_cast<int>(std::floor(pos));
        const int i1 = std::min(i0 + 1, src - 1);
        out[static_cast<std::size_t>(i)] = {i0, i1, pos - i0};
    }
    return out;
}

template <typename Get, typename Put>
void bilinear(int sw, int sh, int dw, int dh, Get&& get, Put&& put) {
    const auto tx = taps(sw, dw);
    const auto ty = taps(sh, dh);
    for (int y = 0; y < dh; ++y) {
        const Tap& vy = ty[static_cast<std::size_t>(y)];
        for (int x = 0; x < dw; ++x) {
            const Tap& vx = tx[static_cast<std::size_t>(x)];
            const double top = get(vx.i0, vy.i0) * (1 - vx.t) + get(vx.i1, vy.i0) * vx.t;
            const double bot = get(vx.i0, vy.i1) * (1 - vx.t) + get(vx.i1, vy.i1) * vx.t;
            put(x, y, top * (1 - vy.t) + bot * vy.t);
        }
    }
}

}  // namespace

Plane resize_bilinear(const Plane& plane, int width, int height) {
    if (width < 1 || height < 1) throw InvalidArgument("resize: target dimensions must be >= 1");
    if (width == plane.width && height == plane.height) return plane;
    Plane out(width, height);
    bilinear(plane.width, plane.height, width, height,
             [&](int x, int y) { return plane.at(x, y); },
             [&](int x, int y, double v) { out.at(x, y) = v; });
    return out;
}

RgbImage resize_bilinear(const RgbImage& img, int width, int height) {
    if (width < 1 || height < 1) throw InvalidArgument("resize: target dimensions must be >= 1");
    if (width == img.width && height == img.height) return img;
    RgbImage out(width, height);
    for (int c = 0; c < 3; ++c) {
        bilinear(img.width, img.height, width, height,
                 [&](int x, int y) { return static_cast<double>(img.pixel(x, y)[c]); },
                 [&](int x, int y, double v) {
                     out.pixel(x, y)[c] = static_cast<std::uint8_t>(std::clamp(std::round(v), 0.0, 255.0));
                 });
    }
    return out;
}

std::vector<RgbImage> load_png_directory(const std::filesystem::path& dir, int size) {
    if (!std::filesystem::is_directory(dir)) {
        throw IoError(dir.string() + ": not a directory");
    }
    std::vector<std::filesystem::path> files;
    for (const auto& e : std::filesystem::directory_iterator(dir)) {
        if (e.is_regular_file() && e.path().extension() == ".png") files.push_back(e.path());
    }
    std::sort(files.begin(), files.end());
    std::vector<RgbImage> out;
    for (const auto& f : files) out.push_back(resize_bilinear(load_png(f), size, size));
    return out;
}

// ---------------------------------------------------------------------------
// Files and encoding

std::vector<std::uint8_t> read_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError(path.string() + ": cannot open for reading");
    std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return bytes;
}

void write_file(const std::filesystem::path& path, std::span<const std::uint8_t> bytes) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError(path.string() + ": cannot open for writing");
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw IoError(path.string() + ": write failed");
}

void write_text(const std::filesystem::path& path, std::string_view text) {
    write_file(path, std::span(reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
}

std::string read_text(const std::filesystem::path& path) {
    const auto bytes = read_file(path);
    return {bytes.begin(), bytes.end()};
}

namespace {
constexpr char kAlphabet[] = "ABCDEFGHIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyz0123456789+/";
}

std::string base64_encode(std::span<const std::uint8_t> bytes) {
    std::string out;
    out.reserve((bytes.size() + 2) / 3 * 4);
    for (std::size_t i = 0; i < bytes.size(); i += 3) {
        std::uint32_t v = static_cast<std::uint32_t>(bytes[i]) << 16;
        if (i + 1 < bytes.size()) v |= static_cast<std::uint32_t>(bytes[i + 1]) << 8;
        if (i + 2 < bytes.size()) v |= bytes[i + 2];
        out += kAlphabet[(v >> 18) & 63];
        out += kAlphabet[(v >> 12) & 63];
        out += i + 1 < bytes.size() ? kAlphabet[(v >> 6) & 63] : '=';
        out += i + 2 < bytes.size() ? kAlphabet[v & 63] : '=';
    }
    return out;
}

std::vector<std::uint8_t> base64_decode(std::string_view text) {
    std::vector<std::uint8_t> out;
    std::uint32_t acc = 0;
    int bits = 0;
    for (char ch : text) {
        if (ch == '=' || ch == '\n' || ch == '\r') continue;
        const char* p = std::strchr(kAlphabet, ch);
        if (p == nullptr || ch == '\0') throw InvalidArgument("base64: invalid character");
        acc = (acc << 6) | static_cast<std::uint32_t>(p - kAlphabet);
        bits += 6;
        if (bits >= 8) {
            bits -= 8;
            out.push_back(static_cast<std::uint8_t>(acc >> bits));
            acc &= (1u << bits) - 1;
        }
    }
    return out;
}

}  // namespace icolorit::dataio
