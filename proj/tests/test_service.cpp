#include <thread>

#include "doctest.h"
#include "httplib.h"
#include "icolorit/colorspace.hpp"
#include "icolorit/dataio.hpp"
#include "icolorit/error.hpp"
#include "icolorit/service.hpp"
#include "json.hpp"
#include "support.hpp"

using namespace icolorit;
using nlohmann::json;

namespace {

Model toy_model() {
    const auto c = ModelConfig::toy();
    return Model(c, ModelParams::init(c, 5));
}

std::string request(const RgbImage& img, const json& hint_list, bool rollout = false) {
    json j = {{"image", dataio::base64_encode(dataio::encode_png(img))}, {"hints", hint_list}};
    if (rollout) j["return_rollout"] = true;
    return j.dump();
}

RgbImage decode_reply(const service::Response& r) {
    return dataio::decode_png(dataio::base64_decode(json::parse(r.body)["image"].get<std::string>()));
}

}  // namespace

TEST_CASE("coordinate scaling rounds half up") {
    CHECK(service::scale_coordinate(0, 100, 64) == 0);
    CHECK(service::scale_coordinate(1, 2, 3) == 2);     // 1.5
    CHECK(service::scale_coordinate(5, 10, 3) == 2);    // 1.5
    CHECK(service::scale_coordinate(4, 10, 3) == 1);    // 1.2
    CHECK(service::scale_coordinate(99, 100, 64) == 63);
    CHECK(service::scale_coordinate(37, 64, 64) == 37);
    testing::Gen g(1);
    for (int i = 0; i < 1000; ++i) {
        const int src = testing::uniform_int(g, 1, 5000), dst = testing::uniform_int(g, 1, 500);
        const int v = testing::uniform_int(g, 0, src);
        const long double exact = static_cast<long double>(v) * dst / src;
        const int got = service::scale_coordinate(v, src, dst);
        CHECK(got - exact <= 0.5L);
        CHECK(exact - got < 0.5L);
    }
}

TEST_CASE("hint scaling and validation") {
    const auto s = service::scale_hints({Hint{10, 21, 2, 5, 6}, Hint{126, 126, 2, 0, 0}}, 128, 128, 64);
    CHECK(s[0].x == 5);
    CHECK(s[0].y == 11);
    CHECK(s[0].a == 5.0);
    CHECK(s[0].size == 2);
    CHECK(s[1].x == 62);
    CHECK(s[1].y == 62);
    CHECK_THROWS_WITH_AS(service::scale_hints({Hint{-1, 0, 2, 0, 0}}, 128, 128, 64), doctest::Contains("hints[0].x"),
                         InvalidArgument);
    CHECK_THROWS_WITH_AS(service::scale_hints({Hint{0, 0, 2, 0, 0}, Hint{0, 127, 2, 0, 0}}, 128, 128, 64),
                         doctest::Contains("hints[1].y"), InvalidArgument);
    CHECK_THROWS_WITH_AS(service::scale_hints({Hint{0, 0, 0, 0, 0}}, 128, 128, 64),
                         doctest::Contains("hints[0].size"), InvalidArgument);
}

TEST_CASE("full-resolution colorization keeps size and lightness") {
    const auto m = toy_model();
    testing::Gen g(2);
    const auto img = testing::random_rgb(g, 50, 30);
    const auto r = service::colorize_full_resolution(m, img, {Hint{10, 10, 2, 60, 10}}, true);
    CHECK(r.image.width == 50);
    CHECK(r.image.height == 30);
    CHECK(r.latency_ms >= 0.0);
    REQUIRE(r.rollout.size() == 1);
    CHECK(r.rollout[0].token == (service::scale_coordinate(10, 30, 64) / 8) * 8 + service::scale_coordinate(10, 50, 64) / 8);
    const auto in = colorspace::rgb_to_lab(img), out = colorspace::rgb_to_lab(r.image);
    double diff = 0.0;
    for (std::size_t i = 0; i < in.L.data.size(); ++i) diff += std::abs(in.L.data[i] - out.L.data[i]);
    CHECK(diff / static_cast<double>(in.L.data.size()) < 2.0);
    const auto again = service::colorize_full_resolution(m, img, {Hint{10, 10, 2, 60, 10}});
    CHECK(again.image == r.image);
    CHECK(again.rollout.empty());
}

TEST_CASE("handlers without a model") {
    service::Service svc({});
    CHECK_FALSE(svc.loaded());
    CHECK(svc.colorize(request(RgbImage(8, 8), json::array())).status == 503);
    CHECK(svc.model_info().status == 503);
    const auto h = svc.health();
    CHECK(h.status == 200);
    CHECK(json::parse(h.body)["status"] == "ok");
}

TEST_CASE("colorize handler") {
    service::Options opt;
    opt.max_image_dim = 100;
    service::Service svc(opt);
    svc.set_model(toy_model(), "mem.ckpt");
    testing::Gen g(3);
    const auto img = testing::random_rgb(g, 40, 24);

    const auto ok = svc.colorize(request(img, json::array()));
    REQUIRE(ok.status == 200);
    const auto body = json::parse(ok.body);
    CHECK(body["latency_ms"].is_number_integer());
    CHECK(body["width"] == 40);
    CHECK(body["height"] == 24);
    CHECK_FALSE(body.contains("rollout"));
    const auto out = decode_reply(ok);
    CHECK(out.width == 40);
    CHECK(out.height == 24);

    const json one = json::array({{{"x", 3}, {"y", 4}, {"size", 2}, {"rgb", {250, 20, 20}}}});
    const auto a = svc.colorize(request(img, one)), b = svc.colorize(request(img, one));
    CHECK(json::parse(a.body)["image"] == json::parse(b.body)["image"]);
    CHECK(decode_reply(a) == service::colorize_full_resolution(toy_model(), img,
                                                               hints::parse_hints_json(one.dump()))
                                 .image);

    const auto with = svc.colorize(request(img, one, true));
    REQUIRE(with.status == 200);
    CHECK(json::parse(with.body)["rollout"].size() == 1);
    CHECK(json::parse(with.body)["rollout"][0]["values"].size() == 8);

    const auto bad_hint = svc.colorize(request(img, json::array({{{"x", -1}, {"y", 0}, {"a", 0}, {"b", 0}}})));
    CHECK(bad_hint.status == 400);
    CHECK(json::parse(bad_hint.body)["error"].get<std::string>().find("hints[0].x") != std::string::npos);

    CHECK(svc.colorize("{not json").status == 400);
    CHECK(svc.colorize("[1,2]").status == 400);
    CHECK(svc.colorize(R"({"hints":[]})").status == 400);
    CHECK(svc.colorize(R"({"image":"!!!!"})").status == 400);
    CHECK(svc.colorize(json{{"image", dataio::base64_encode(std::vector<std::uint8_t>{1, 2, 3})}}.dump()).status == 400);
    CHECK(svc.colorize(request(img, json::array(), false).substr(0, 20)).status == 400);
    json rollout_type = json::parse(request(img, json::array()));
    rollout_type["return_rollout"] = "yes";
    CHECK(svc.colorize(rollout_type.dump()).status == 400);
    CHECK(svc.colorize(request(img, json{{"x", 1}})).status == 400);

    CHECK(svc.colorize(request(RgbImage(101, 10), json::array())).status == 413);
    CHECK(svc.colorize(request(RgbImage(100, 100), json::array())).status == 200);
}

TEST_CASE("model info and health") {
    service::Service svc({});
    const auto c = ModelConfig::tiny();
    svc.set_model(Model(c, ModelParams::init(c, 1)), "/tmp/t.ckpt");
    const auto info = json::parse(svc.model_info().body);
    CHECK(info["gflops"].get<double>() == doctest::Approx(1.43).epsilon(0.05));
    CHECK(info["parameter_count"] == model::parameter_count(c));
    CHECK(info["checkpoint_path"] == "/tmp/t.ckpt");
    CHECK(info["config"]["dim"] == 192);

    const auto first = json::parse(svc.health().body)["uptime_s"].get<long long>();
    const auto second = json::parse(svc.health().body)["uptime_s"].get<long long>();
    CHECK(second >= first);
}

TEST_CASE("service loads checkpoints") {
    testing::TempDir dir("svc");
    const auto m = toy_model();
    dataio::save_checkpoint(m.params(), m.config(), dir / "m.ckpt");
    service::Service svc({});
    svc.load(dir / "m.ckpt");
    CHECK(svc.loaded());
    CHECK(json::parse(svc.model_info().body)["checkpoint_path"] == (dir / "m.ckpt").string());
    service::Service other({});
    CHECK_THROWS_AS(other.load(dir / "missing.ckpt"), IoError);
    CHECK_FALSE(other.loaded());
}

TEST_CASE("requests over HTTP") {
    service::Options opt;
    opt.workers = 2;
    service::Service svc(opt);
    svc.set_model(toy_model(), "mem.ckpt");
    const int port = svc.bind_any_port();
    REQUIRE(port > 0);
    std::thread server([&] { svc.listen_after_bind(); });

    httplib::Client client("127.0.0.1", port);
    client.set_read_timeout(60, 0);
    const auto health = client.Get("/api/health");
    REQUIRE(health);
    CHECK(health->status == 200);
    CHECK(client.Get("/api/model")->status == 200);

    testing::Gen g(4);
    const auto img = testing::random_rgb(g, 64, 64);
    const std::string body = request(img, json::array({{{"x", 8}, {"y", 8}, {"a", 40}, {"b", -30}}}));
    const auto res = client.Post("/api/colorize", body, "application/json");
    REQUIRE(res);
    CHECK(res->status == 200);
    CHECK(json::parse(res->body)["image"] == json::parse(svc.colorize(body).body)["image"]);

    const auto bad = client.Post("/api/colorize", "{", "application/json");
    REQUIRE(bad);
    CHECK(bad->status == 400);

    // Concurrent identical requests see the same immutable model.
    std::vector<std::string> images(4);
    std::vector<std::thread> callers;
    for (std::size_t i = 0; i < images.size(); ++i) {
        callers.emplace_back([&, i] {
            httplib::Client c("127.0.0.1", port);
            c.set_read_timeout(60, 0);
            if (auto r = c.Post("/api/colorize", body, "application/json")) {
                images[i] = json::parse(r->body)["image"];
            }
        });
    }
    for (auto& t : callers) t.join();
    for (const auto& s : images) CHECK(s == images[0]);
    CHECK_FALSE(images[0].empty());

    svc.stop();
    server.join();
}
