#include "icolorit/hints.hpp"

#include "json.hpp"

#include "icolorit/colorspace.hpp"
#include "icolorit/error.hpp"

namespace icolorit::hints {

int sample_hint_count(Rng& rng, int max_count) {
    if (max_count < 0) throw InvalidArgument("hint count maximum must be >= 0");
    std::uniform_int_distribution<int> dist(0, max_count);
    return dist(rng);
}

std::vector<std::pair<int, int>> sample_hint_locations(Rng& rng, int n, int width, int height,
                                                       int size) {
    if (size < 1 || width < size || height < size) {
        throw InvalidArgument("hint block does not fit in the image");
    }
    std::uniform_int_distribution<int> xs(0, width - size);
    std::uniform_int_distribution<int> ys(0, height - size);
    std::vector<std::pair<int, int>> out;
    out.reserve(static_cast<std::size_t>(std::max(n, 0)));
    for (int i = 0; i < n; ++i) {
        const int x = xs(rng);
        const int y = ys(rng);
        out.emplace_back(x, y);
    }
    return out;
}

bool in_bounds(const Hint& h, int width, int height) {
    return h.size >= 1 && h.x >= 0 && h.y >= 0 && h.x <= width - h.size &&
           h.y <= height - h.size;
}

std::pair<double, double> hint_color_from_image(const LabImage& img, int x, int y, int size) {
    if (!in_bounds(Hint{x, y, size, 0, 0}, img.width, img.height)) {
        throw InvalidArgument("invalid hint placement: block at (" + std::to_string(x) + "," +
                              std::to_string(y) + ") size " + std::to_string(size) +
                              " leaves the image");
    }
    double sa = 0.0;
    double sb = 0.0;
    for (int dy = 0; dy < size; ++dy) {
        for (int dx = 0; dx < size; ++dx) {
            sa += img.a.at(x + dx, y + dy);
            sb += img.b.at(x + dx, y + dy);
        }
    }
    const double n = static_cast<double>(size) * size;
    return {sa / n, sb / n};
}

HintPlanes encode_hints(const std::vector<Hint>& hint_list, int width, int height) {
    HintPlanes out{width, height, Plane(width, height), Plane(width, height), Plane(width, height)};
    for (const auto& h : hint_list) {
        for (int dy = 0; dy < h.size; ++dy) {
            for (int dx = 0; dx < h.size; ++dx) {
                out.a.at(h.x + dx, h.y + dy) = h.a;
                out.b.at(h.x + dx, h.y + dy) = h.b;
                out.mask.at(h.x + dx, h.y + dy) = 1.0;
            }
        }
    }
    return out;
}

NetInput build_model_input(const LumaPlane& luma, const HintPlanes& planes) {
    if (luma.width != planes.width || luma.height != planes.height) {
        throw InvalidArgument("lightness plane and hint planes differ in size");
    }
    NetInput in{luma.width, luma.height, {}};
    const std::size_t n = luma.data.size();
    in.data.resize(n * NetInput::kChannels);
    for (std::size_t i = 0; i < n; ++i) {
        in.data[4 * i + 0] = colorspace::normalize_l(luma.data[i]);
        in.data[4 * i + 1] = colorspace::normalize_ab(planes.a.data[i]);
        in.data[4 * i + 2] = colorspace::normalize_ab(planes.b.data[i]);
        in.data[4 * i + 3] = planes.mask.data[i];
    }
    return in;
}

std::vector<Hint> simulate_n_hints(Rng& rng, const LabImage& img, int n, int size) {
    std::vector<Hint> out;
    for (const auto& [x, y] : sample_hint_locations(rng, n, img.width, img.height, size)) {
        const auto [a, b] = hint_color_from_image(img, x, y, size);
        out.push_back(Hint{x, y, size, a, b});
    }
    return out;
}

std::vector<Hint> simulate_hints(Rng& rng, const LabImage& img, int max_count, int size) {
    return simulate_n_hints(rng, img, sample_hint_count(rng, max_count), size);
}

std::vector<Hint> parse_hints_json(const std::string& text) {
    nlohmann::json doc;
    try {
        doc = nlohmann::json::parse(text);
    } catch (const nlohmann::json::exception& e) {
        throw InvalidArgument(std::string("hints: malformed JSON: ") + e.what());
    }
    if (!doc.is_array()) throw InvalidArgument("hints: expected a JSON array");

    std::vector<Hint> out;
    for (std::size_t i = 0; i < doc.size(); ++i) {
        const auto& item = doc[i];
        const std::string where = "hints[" + std::to_string(i) + "]";
        if (!item.is_object()) throw InvalidArgument(where + ": expected an object");
        auto get_int = [&](const char* key) {
            if (!item.contains(key) || !item[key].is_number_integer()) {
                throw InvalidArgument(where + "." + key + ": expected an integer");
            }
            return item[key].get<int>();
        };
        Hint h;
        h.x = get_int("x");
        h.y = get_int("y");
        h.size = item.contains("size") ? get_int("size") : 2;
        if (h.size < 1) throw InvalidArgument(where + ".size: must be >= 1");
        if (item.contains("rgb")) {
            const auto& rgb = item["rgb"];
            if (!rgb.is_array() || rgb.size() != 3) {
                throw InvalidArgument(where + ".rgb: expected [r,g,b]");
            }
            std::array<int, 3> c{};
            for (int k = 0; k < 3; ++k) {
                if (!rgb[k].is_number_integer() || rgb[k].get<int>() < 0 ||
                    rgb[k].get<int>() > 255) {
                    throw InvalidArgument(where + ".rgb: channels must be integers in [0,255]");
                }
                c[k] = rgb[k].get<int>();
            }
            const auto lab = colorspace::rgb_to_lab(static_cast<std::uint8_t>(c[0]),
                                                    static_cast<std::uint8_t>(c[1]),
                                                    static_cast<std::uint8_t>(c[2]));
            h.a = lab.a;
            h.b = lab.b;
        } else {
            for (const char* key : {"a", "b"}) {
                if (!item.contains(key) || !item[key].is_number()) {
                    throw InvalidArgument(where + "." + key + ": expected a number");
                }
            }
            h.a = item["a"].get<double>();
            h.b = item["b"].get<double>();
        }
        out.push_back(h);
    }
    return out;
}

std::string hints_to_json(const std::vector<Hint>& hint_list) {
    nlohmann::json doc = nlohmann::json::array();
    for (const auto& h : hint_list) {
        doc.push_back({{"x", h.x}, {"y", h.y}, {"size", h.size}, {"a", h.a}, {"b", h.b}});
    }
    return doc.dump();
}

}  // namespace icolorit::hints
