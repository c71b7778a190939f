#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "fine_imitate/util.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

const fs::path kRoot = fs::temp_directory_path() / "fi_test_cli";

struct Result {
  int code = 0;
  std::string err;
};

Result cli(const std::string& args) {
  const fs::path err = kRoot / "stderr.txt";
  const std::string cmd = std::string(FI_CLI_PATH) + " " + args + " 2> " + err.string() + " > /dev/null";
  const int status = std::system(cmd.c_str());
  std::ifstream in(err);
  std::stringstream ss;
  ss << in.rdbuf();
  return {WEXITSTATUS(status), ss.str()};
}

json read_json(const fs::path& p) {
  std::ifstream in(p);
  return json::parse(in);
}

std::string read_text(const fs::path& p) {
  std::ifstream in(p);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

// Small enough for a unit test; every section is exercised.
fs::path write_config() {
  const json cfg = {
      {"dataset", {{"seed", 3}, {"num_images", 12}, {"image_size", 32}, {"min_size", 8}, {"max_size", 16}}},
      {"test_dataset", {{"seed", 4}, {"num_images", 6}}},
      {"detector", {{"backbone_widths", {8, 8, 16, 16}}}},
      {"student", {{"width_mult", 0.5}}},
      {"train", {{"iterations", 4}, {"batch_size", 2}, {"lr", 0.005}}},
      {"distill", {{"lambda", 0.001}, {"psi", 0.5}}},
      {"analysis", {{"psis", {0.0, 0.1, 0.5, 0.9, 1.0}}, {"seeds", {1}}, {"variance_images", 4}}}};
  const fs::path p = kRoot / "config.json";
  std::ofstream(p) << cfg.dump(2);
  return p;
}

struct Fixture {
  fs::path config;
  fs::path data;
  Fixture() {
    fs::remove_all(kRoot);
    fs::create_directories(kRoot);
    config = write_config();
    data = kRoot / "data";
  }
  std::string common(const std::string& out) const { return "--config " + config.string() + " --out " + (kRoot / out).string(); }
};

}  // namespace

TEST_CASE("cli end to end") {
  Fixture fx;
  REQUIRE(cli("generate-data " + fx.common("data")).code == 0);
  CHECK(fs::exists(fx.data / "train" / "annotations.jsonl"));
  CHECK(fs::exists(fx.data / "test" / "annotations.jsonl"));

  const auto manifest = read_json(fx.data / "manifest.json");
  CHECK(manifest.at("command") == "generate-data");
  CHECK(manifest.at("status") == "ok");
  CHECK(manifest.at("resolved_config").at("dataset").at("num_images") == 12);
  CHECK(manifest.at("resolved_config").at("train").at("lr") == 0.005);
  for (const char* key : {"seeds", "out_dir", "tool_version", "start_time", "end_time"}) CHECK(manifest.contains(key));

  SUBCASE("reruns reproduce metric files") {
    REQUIRE(cli("generate-data " + fx.common("data2")).code == 0);
    CHECK(fi::file_digest(fx.data / "metrics.json") == fi::file_digest(kRoot / "data2" / "metrics.json"));
    CHECK(fi::file_digest(fx.data / "train" / "annotations.jsonl") ==
          fi::file_digest(kRoot / "data2" / "train" / "annotations.jsonl"));
    REQUIRE(cli("train-teacher --data " + fx.data.string() + " " + fx.common("t1")).code == 0);
    REQUIRE(cli("train-teacher --data " + fx.data.string() + " " + fx.common("t2")).code == 0);
    for (const char* f : {"metrics.json", "checkpoint.json", "losses.csv", "run_record.json"}) {
      CHECK(fi::file_digest(kRoot / "t1" / f) == fi::file_digest(kRoot / "t2" / f));
    }
  }

  SUBCASE("distill with lambda 0 matches plain student training") {
    REQUIRE(cli("train-teacher --data " + fx.data.string() + " " + fx.common("teacher")).code == 0);
    const auto teacher = (kRoot / "teacher" / "checkpoint.json").string();
    REQUIRE(cli("train --data " + fx.data.string() + " " + fx.common("student")).code == 0);
    REQUIRE(cli("distill --teacher " + teacher + " --data " + fx.data.string() + " " + fx.common("distill0") +
                " --override distill.lambda=0")
                .code == 0);
    CHECK(read_json(kRoot / "student" / "metrics.json").at("map") ==
          read_json(kRoot / "distill0" / "metrics.json").at("map"));
    CHECK(read_json(kRoot / "distill0" / "manifest.json").at("resolved_config").at("distill").at("lambda") == 0);
    CHECK(fs::exists(kRoot / "distill0" / "student_checkpoint.json"));
    CHECK(fs::exists(kRoot / "distill0" / "deploy_checkpoint.json"));
    CHECK(fs::exists(kRoot / "distill0" / "detections.jsonl"));

    REQUIRE(cli("sweep-psi --teacher " + teacher + " --data " + fx.data.string() + " " + fx.common("sweep")).code == 0);
    std::istringstream csv(read_text(kRoot / "sweep" / "sweep.csv"));
    std::size_t lines = 0;
    for (std::string line; std::getline(csv, line);) ++lines;
    CHECK(lines == 6);

    REQUIRE(cli("analyze-variance --teacher " + teacher + " --data " + fx.data.string() + " " + fx.common("var"))
                .code == 0);
    CHECK(read_json(kRoot / "var" / "metrics.json").at("channels") == 16);

    REQUIRE(cli("compare-baselines --teacher " + teacher + " --data " + fx.data.string() + " " + fx.common("cmp"))
                .code == 0);
    CHECK(read_json(kRoot / "cmp" / "comparison.json").at("rows").size() == 4);
  }

  SUBCASE("visualize mask endpoints") {
    const auto ann = (fx.data / "train" / "annotations.jsonl").string();
    REQUIRE(cli("visualize-mask --annotations " + ann + " --psi 1 " + fx.common("vis1")).code == 0);
    CHECK(read_json(kRoot / "vis1" / "overlay.json").at("n_positive") == 0);
    CHECK(fs::exists(kRoot / "vis1" / "mask_overlay.png"));
    REQUIRE(cli("visualize-mask --annotations " + ann + " --psi 0 " + fx.common("vis0")).code == 0);
    CHECK(read_json(kRoot / "vis0" / "overlay.json").at("n_positive") == 16);
    REQUIRE(cli("visualize-mask --annotations " + ann + " --hard-threshold 0.99 --image-id img_3 " +
                fx.common("vish"))
                .code == 0);
    CHECK(read_json(kRoot / "vish" / "overlay.json").at("image_id") == "img_3");
  }
}

TEST_CASE("cli errors are one-line json with a nonzero exit") {
  Fixture fx;
  auto check_error = [](const Result& r) {
    CHECK(r.code != 0);
    REQUIRE_FALSE(r.err.empty());
    CHECK(std::count(r.err.begin(), r.err.end(), '\n') == 1);
    const auto j = json::parse(r.err);
    CHECK(j.contains("error"));
  };
  check_error(cli("generate-data " + fx.common("bad1") + " --override dataset.num_imgs=3"));
  check_error(cli("generate-data " + fx.common("bad2") + " --override nosuch.key=3"));
  check_error(cli("train-teacher --data " + (kRoot / "missing").string() + " " + fx.common("bad3")));
  check_error(cli("generate-data --out"));

  std::ofstream(kRoot / "typo.json") << R"({"train": {"learning_rate": 0.1}})";
  check_error(cli("generate-data --config " + (kRoot / "typo.json").string() + " --out " + (kRoot / "bad4").string()));
  // A failing command still leaves exactly one manifest.
  CHECK(read_json(kRoot / "bad3" / "manifest.json").at("status") == "error");
}
