#include "icolorit/service.hpp"

#include <algorithm>
#include <cmath>
#include <thread>

#include "httplib.h"
#include "icolorit/colorspace.hpp"
#include "icolorit/dataio.hpp"
#include "icolorit/error.hpp"
#include "json.hpp"

namespace icolorit::service {

int scale_coordinate(int v, int src, int dst) {
    // floor(v * dst / src + 1/2) in exact integer arithmetic.
    const long long num = 2LL * v * dst + src;
    const long long den = 2LL * src;
    return static_cast<int>(num >= 0 ? num / den : -((-num + den - 1) / den));
}

std::vector<Hint> scale_hints(const std::vector<Hint>& hint_list, int width, int height,
                              int model_size) {
    std::vector<Hint> out;
    out.reserve(hint_list.size());
    for (std::size_t i = 0; i < hint_list.size(); ++i) {
        const Hint& h = hint_list[i];
        const std::string where = "hints[" + std::to_string(i) + "]";
        if (h.size < 1 || h.size > model_size) {
            throw InvalidArgument(where + ".size: " + std::to_string(h.size) + " not in [1," +
                                  std::to_string(model_size) + "]");
        }
        if (h.x < 0 || h.x > width - h.size) {
            throw InvalidArgument(where + ".x: " + std::to_string(h.x) + " outside [0," +
                                  std::to_string(width - h.size) + "]");
        }
        if (h.y < 0 || h.y > height - h.size) {
            throw InvalidArgument(where + ".y: " + std::to_string(h.y) + " outside [0," +
                                  std::to_string(height - h.size) + "]");
        }
        Hint s = h;
        s.x = std::clamp(scale_coordinate(h.x, width, model_size), 0, model_size - h.size);
        s.y = std::clamp(scale_coordinate(h.y, height, model_size), 0, model_size - h.size);
        out.push_back(s);
    }
    return out;
}

ColorizeResult colorize_full_resolution(const Model& model, const RgbImage& image,
                                        const std::vector<Hint>& hint_list, bool with_rollout) {
    if (image.width < 1 || image.height < 1) throw InvalidArgument("colorize: empty image");
    const int size = model.config().image_size;
    const auto scaled = scale_hints(hint_list, image.width, image.height, size);

    const LabImage lab = colorspace::rgb_to_lab(image);
    const LumaPlane luma = dataio::resize_bilinear(lab.L, size, size);

    ColorizeResult result;
    const auto t0 = std::chrono::steady_clock::now();
    auto [a, b] = model::predict_ab(model, luma, scaled);
    const auto t1 = std::chrono::steady_clock::now();
    result.latency_ms = std::chrono::duration<double, std::milli>(t1 - t0).count();

    LabImage fused(image.width, image.height);
    fused.L = lab.L;
    fused.a = dataio::resize_bilinear(a, image.width, image.height);
    fused.b = dataio::resize_bilinear(b, image.width, image.height);
    result.image = colorspace::lab_to_rgb(fused);

    if (with_rollout && !scaled.empty()) {
        const NetInput input =
            hints::build_model_input(luma, hints::encode_hints(scaled, size, size));
        const auto r = rollout::input_rollout(model, input);
        for (const auto& h : scaled) result.rollout.push_back(rollout::heat_map_for_hint(r, model.config(), h));
    }
    return result;
}

namespace {

Response error(int status, const std::string& message) {
    return {status, nlohmann::json{{"error", message}}.dump()};
}

}  // namespace

Service::Service(Options options)
    : options_(std::move(options)), started_(std::chrono::steady_clock::now()) {
    if (options_.workers <= 0) {
        options_.workers = static_cast<int>(std::max(1u, std::thread::hardware_concurrency()));
    }
    if (options_.max_image_dim < 1) throw InvalidArgument("max image dimension must be >= 1");
}

Service::~Service() { stop(); }

void Service::load(const std::filesystem::path& checkpoint) {
    set_model(dataio::load_checkpoint(checkpoint), checkpoint.string());
}

void Service::set_model(Model model, std::string checkpoint_path) {
    model_ = std::make_shared<const Model>(std::move(model));
    checkpoint_path_ = std::move(checkpoint_path);
}

bool Service::loaded() const { return model_ != nullptr; }

Response Service::colorize(const std::string& body) const {
    const auto model = model_;
    if (!model) return error(503, "no checkpoint loaded");

    nlohmann::json req;
    try {
        req = nlohmann::json::parse(body);
    } catch (const nlohmann::json::exception& e) {
        return error(400, std::string("malformed JSON: ") + e.what());
    }
    if (!req.is_object()) return error(400, "request: expected a JSON object");
    if (!req.contains("image") || !req["image"].is_string()) {
        return error(400, "image: expected a base64 PNG string");
    }
    bool with_rollout = false;
    if (req.contains("return_rollout")) {
        if (!req["return_rollout"].is_boolean()) return error(400, "return_rollout: expected a boolean");
        with_rollout = req["return_rollout"].get<bool>();
    }

    RgbImage image;
    std::vector<Hint> hint_list;
    try {
        const auto bytes = dataio::base64_decode(req["image"].get<std::string>());
        const auto [w, h] = dataio::png_dimensions(bytes);
        if (w > options_.max_image_dim || h > options_.max_image_dim) {
            return error(413, "image: " + std::to_string(w) + "x" + std::to_string(h) +
                                  " exceeds the " + std::to_string(options_.max_image_dim) +
                                  " pixel limit");
        }
        image = dataio::decode_png(bytes);
    } catch (const InvalidArgument& e) {
        return error(400, std::string("image: ") + e.what());
    }
    ColorizeResult result;
    try {
        if (req.contains("hints")) hint_list = hints::parse_hints_json(req["hints"].dump());
        result = colorize_full_resolution(*model, image, hint_list, with_rollout);
    } catch (const InvalidArgument& e) {
        return error(400, e.what());
    } catch (const std::exception& e) {
        return error(500, e.what());
    }
    nlohmann::json resp = {{"image", dataio::base64_encode(dataio::encode_png(result.image))},
                           {"latency_ms", static_cast<long long>(std::llround(result.latency_ms))},
                           {"width", result.image.width},
                           {"height", result.image.height}};
    if (with_rollout) {
        nlohmann::json maps = nlohmann::json::array();
        for (const auto& m : result.rollout) maps.push_back(nlohmann::json::parse(rollout::heat_map_to_json(m)));
        resp["rollout"] = std::move(maps);
    }
    return {200, resp.dump()};
}

Response Service::model_info() const {
    const auto model = model_;
    if (!model) return error(503, "no checkpoint loaded");
    const auto& c = model->config();
    nlohmann::json j = {{"config", nlohmann::json::parse(config_to_json(c))},
                        {"parameter_count", model::parameter_count(c)},
                        {"gflops", model::count_flops(c)},
                        {"checkpoint_path", checkpoint_path_}};
    return {200, j.dump()};
}

Response Service::health() const {
    const auto up = std::chrono::steady_clock::now() - started_;
    const auto secs = std::chrono::duration_cast<std::chrono::seconds>(up).count();
    return {200, nlohmann::json{{"status", "ok"}, {"uptime_s", secs}}.dump()};
}

void Service::install_routes() {
    server_ = std::make_unique<httplib::Server>();
    const int workers = options_.workers;
    server_->new_task_queue = [workers] { return new httplib::ThreadPool(static_cast<size_t>(workers)); };
    server_->set_payload_max_length(512ull * 1024 * 1024);
    auto reply = [](httplib::Response& res, const Response& r) {
        res.status = r.status;
        res.set_content(r.body, "application/json");
    };
    server_->Post("/api/colorize", [this, reply](const httplib::Request& req, httplib::Response& res) {
        reply(res, colorize(req.body));
    });
    server_->Get("/api/model", [this, reply](const httplib::Request&, httplib::Response& res) {
        reply(res, model_info());
    });
    server_->Get("/api/health", [this, reply](const httplib::Request&, httplib::Response& res) {
        reply(res, health());
    });
    if (!options_.static_dir.empty()) server_->set_mount_point("/", options_.static_dir.string());
}

bool Service::listen() {
    install_routes();
    return server_->listen(options_.host, options_.port);
}

int Service::bind_any_port() {
    install_routes();
    return server_->bind_to_any_port(options_.host);
}

bool Service::listen_after_bind() { return server_ && server_->listen_after_bind(); }

void Service::stop() {
    if (server_) server_->stop();
}

}  // namespace icolorit::service
