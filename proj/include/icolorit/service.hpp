#pragma once

#include <atomic>
#include <chrono>
#include <filesystem>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "icolorit/hints.hpp"
#include "icolorit/image.hpp"
#include "icolorit/model.hpp"
#include "icolorit/rollout.hpp"

namespace httplib {
class Server;
}

namespace icolorit::service {

/// Maps a coordinate from `src` pixels to `dst` pixels, rounding half up.
int scale_coordinate(int v, int src, int dst);

/// Checks hints against the original image and rescales them to the model
/// grid, clamping so each block stays inside. Throws InvalidArgument with
/// a "hints[i].field" prefix on out-of-bounds input.
std::vector<Hint> scale_hints(const std::vector<Hint>& hint_list, int width, int height,
                              int model_size);

struct ColorizeResult {
    RgbImage image;
    double latency_ms = 0.0;
    /// One map per hint, in request order, when requested.
    std::vector<rollout::HeatMap> rollout;
};

/// Full-resolution colorization shared by the CLI and the service: ab is
/// predicted at model resolution, upsampled bilinearly and joined with the
/// input's own lightness.
ColorizeResult colorize_full_resolution(const Model& model, const RgbImage& image,
                                        const std::vector<Hint>& hint_list,
                                        bool with_rollout = false);

struct Options {
    std::string host = "127.0.0.1";
    int port = 8290;
    /// Largest accepted width or height.
    int max_image_dim = 4096;
    /// Concurrent request handlers; 0 selects the logical CPU count.
    int workers = 0;
    /// Served under / when set.
    std::filesystem::path static_dir;
};

struct Response {
    int status = 200;
    std::string body;
};

/// HTTP front end over an immutable model. Handlers are callable directly
/// for in-process use; `listen` binds them to the network.
class Service {
public:
    explicit Service(Options options);
    ~Service();

    Service(const Service&) = delete;
    Service& operator=(const Service&) = delete;

    void load(const std::filesystem::path& checkpoint);
    void set_model(Model model, std::string checkpoint_path);
    bool loaded() const;

    Response colorize(const std::string& body) const;
    Response model_info() const;
    Response health() const;

    /// Binds and serves until `stop`; returns false when binding fails.
    bool listen();
    /// Binds to an ephemeral port; returns it or -1.
    int bind_any_port();
    bool listen_after_bind();
    void stop();

private:
    void install_routes();

    Options options_;
    std::shared_ptr<const Model> model_;
    std::string checkpoint_path_;
    std::chrono::steady_clock::time_point started_;
    std::unique_ptr<httplib::Server> server_;
};

}  // namespace icolorit::service
