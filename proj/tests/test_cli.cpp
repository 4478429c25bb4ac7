#include "doctest.h"
#include "icolorit/dataio.hpp"
#include "icolorit/model.hpp"
#include "json.hpp"
#include "process.hpp"
#include "support.hpp"

using namespace icolorit;
using nlohmann::json;
using testing::run_cli;

namespace {

const json kMicro = {{"image_size", 16}, {"patch_size", 4}, {"depth", 2}, {"dim", 8},
                     {"heads", 2},       {"mlp_dim", 16},   {"ls_kind", "convolution"}};

std::string write_run(const testing::TempDir& dir, const std::string& name, const json& model, int steps,
                      double lr) {
    const auto path = (dir / name).string();
    dataio::write_text(path, json{{"model", model},
                                  {"train", {{"steps", steps}, {"batch", 2}, {"lr", lr}, {"seed", 3}}},
                                  {"data", {{"synthetic", 16}}}}
                                 .dump());
    return path;
}

}  // namespace

TEST_CASE("usage errors exit 1") {
    CHECK(run_cli({}).exit_code == 1);
    CHECK(run_cli({"frobnicate"}).exit_code == 1);
    CHECK(run_cli({"train"}).exit_code == 1);
    CHECK(run_cli({"train", "-c", "/nonexistent.json", "-o", "x"}).exit_code == 1);
    CHECK(run_cli({"bench", "--runs", "3"}).exit_code == 1);
    CHECK(run_cli({"--help"}).exit_code == 0);
    const auto v = run_cli({"--version"});
    CHECK(v.exit_code == 0);
    CHECK(v.output.find("0.1.0") != std::string::npos);
}

TEST_CASE("train smoke run, determinism and divergence") {
    testing::TempDir dir("clitrain");
    const auto toy = write_run(dir, "toy.json", {{"preset", "toy"}}, 200, 5e-4);
    const auto ckpt = (dir / "toy.ckpt").string();
    const auto r = run_cli({"train", "-c", toy, "-o", ckpt, "--print-every", "100"});
    INFO(r.output);
    REQUIRE(r.exit_code == 0);
    CHECK(r.output.find("step    200") != std::string::npos);
    const Model m = dataio::load_checkpoint(ckpt);
    CHECK(m.config() == ModelConfig::toy());
    CHECK(dataio::read_text(ckpt + ".log.jsonl").size() > 0);

    const auto micro = write_run(dir, "micro.json", kMicro, 20, 1e-3);
    const auto a = (dir / "a.ckpt").string(), b = (dir / "b.ckpt").string();
    REQUIRE(run_cli({"train", "-c", micro, "-o", a, "--print-every", "0"}).exit_code == 0);
    REQUIRE(run_cli({"train", "-c", micro, "-o", b, "--print-every", "0"}).exit_code == 0);
    CHECK(dataio::read_file(a) == dataio::read_file(b));

    const auto wild = write_run(dir, "wild.json", kMicro, 200, 1e3);
    const auto d = run_cli({"train", "-c", wild, "-o", (dir / "d.ckpt").string()});
    CHECK(d.exit_code == 2);
    CHECK(d.output.find("diverged") != std::string::npos);

    const auto broken = (dir / "broken.json").string();
    dataio::write_text(broken, "{\"train\":{\"lr\":\"fast\"}}");
    CHECK(run_cli({"train", "-c", broken, "-o", (dir / "e.ckpt").string()}).exit_code == 2);
}

TEST_CASE("eval, colorize, rollout and bench commands") {
    testing::TempDir dir("cliuse");
    const auto ckpt = (dir / "m.ckpt").string();
    const auto c = config_from_json(kMicro.dump());
    dataio::save_checkpoint(ModelParams::init(c, 2), c, ckpt);

    const auto prefix = (dir / "report").string();
    const auto e = run_cli({"eval", "--checkpoint", ckpt, "--synthetic", "3", "--hints", "0,1,5", "--hpr-steps", "2",
                            "-o", prefix});
    INFO(e.output);
    REQUIRE(e.exit_code == 0);
    CHECK(e.output.starts_with("n,mean_psnr,n_images,seed\n0,"));
    CHECK(json::parse(dataio::read_text(prefix + ".json"))["psnr_at"].size() == 3);
    CHECK(run_cli({"eval", "--checkpoint", ckpt, "--synthetic", "3", "--hints", "1,x", "-o", prefix}).exit_code == 1);

    testing::Gen g(5);
    const auto img = testing::random_rgb(g, 33, 21);
    const auto in = (dir / "in.png").string(), out = (dir / "out.png").string(), hints = (dir / "h.json").string();
    dataio::save_png(img, in);
    dataio::write_text(hints, R"([{"x":4,"y":6,"size":2,"rgb":[10,200,30]}])");
    REQUIRE(run_cli({"colorize", "--checkpoint", ckpt, "-i", in, "--hints", hints, "-o", out}).exit_code == 0);
    CHECK(dataio::load_png(out).width == 33);
    dataio::write_text(hints, R"([{"x":40,"y":6,"a":0,"b":0}])");
    const auto bad = run_cli({"colorize", "--checkpoint", ckpt, "-i", in, "--hints", hints, "-o", out});
    CHECK(bad.exit_code == 2);
    CHECK(bad.output.find("hints[0].x") != std::string::npos);
    CHECK(run_cli({"colorize", "--checkpoint", ckpt, "-i", (dir / "none.png").string(), "-o", out}).exit_code == 2);

    const auto heat = (dir / "heat.png").string();
    REQUIRE(run_cli({"rollout", "--checkpoint", ckpt, "-i", in, "-x", "3", "-y", "4", "-o", heat}).exit_code == 0);
    CHECK(dataio::load_png(heat).width == 4);
    CHECK(json::parse(dataio::read_text((dir / "heat.json").string()))["grid_width"] == 4);
    REQUIRE(run_cli({"rollout", "--checkpoint", ckpt, "-i", in, "-x", "3", "-y", "4", "-o", heat, "--upsample"})
                .exit_code == 0);
    CHECK(dataio::load_png(heat).width == 16);

    const auto bj = (dir / "bench.json").string();
    const auto b = run_cli({"bench", "--config", "toy", "--json", bj});
    REQUIRE(b.exit_code == 0);
    CHECK(b.output.find("toy") != std::string::npos);
    CHECK(json::parse(dataio::read_text(bj))["timed_runs"] == 30);
    CHECK(run_cli({"bench", "--checkpoint", ckpt}).exit_code == 0);
}

TEST_CASE("CLI and service agree byte for byte") {
    testing::TempDir dir("cliserve");
    const auto ckpt = (dir / "m.ckpt").string();
    const auto c = ModelConfig::toy();
    dataio::save_checkpoint(ModelParams::init(c, 7), c, ckpt);
    testing::Gen g(6);
    const auto img = testing::random_rgb(g, 96, 80);
    const auto in = (dir / "in.png").string(), out = (dir / "out.png").string(), hints = (dir / "h.json").string();
    dataio::save_png(img, in);
    const std::string hint_text = R"([{"x":10,"y":12,"size":2,"a":50,"b":-20},{"x":70,"y":40,"rgb":[0,0,255]}])";
    dataio::write_text(hints, hint_text);
    REQUIRE(run_cli({"colorize", "--checkpoint", ckpt, "-i", in, "--hints", hints, "-o", out}).exit_code == 0);

    testing::ServerProcess server({"--checkpoint", ckpt, "--workers", "2"});
    REQUIRE(server.running());
    httplib::Client client("127.0.0.1", server.port());
    client.set_read_timeout(60, 0);
    const json body = {{"image", dataio::base64_encode(dataio::read_file(in))}, {"hints", json::parse(hint_text)}};
    const auto res = client.Post("/api/colorize", body.dump(), "application/json");
    REQUIRE(res);
    REQUIRE(res->status == 200);
    const auto served = dataio::base64_decode(json::parse(res->body)["image"].get<std::string>());
    CHECK(served == dataio::read_file(out));

    const auto info = client.Get("/api/model");
    REQUIRE(info);
    CHECK(json::parse(info->body)["checkpoint_path"] == ckpt);
}
