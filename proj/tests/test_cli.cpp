#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>
#include <string>
#include <sys/wait.h>

#include <nlohmann/json.hpp>

#include "sparsefocus/image.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

int run(const std::string& args) {
  const std::string cmd = std::string(SPARSEFOCUS_CLI_PATH) + " " + args + " >/dev/null 2>&1";
  const int rc = std::system(cmd.c_str());
  REQUIRE(rc != -1);
  return WEXITSTATUS(rc);
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  REQUIRE(in.good());
  return std::string((std::istreambuf_iterator<char>(in)), {});
}

std::map<std::string, std::string> dir_bytes(const fs::path& root, bool skip_manifest) {
  std::map<std::string, std::string> out;
  for (auto it = fs::recursive_directory_iterator(root); it != fs::recursive_directory_iterator();
       ++it) {
    if (!it->is_regular_file()) continue;
    if (skip_manifest && it->path().filename() == "manifest.json") continue;
    out[fs::relative(it->path(), root).string()] = slurp(it->path());
  }
  return out;
}

std::vector<float> read_f32(const fs::path& p) {
  const std::string bytes = slurp(p);
  REQUIRE(bytes.size() % 4 == 0);
  std::vector<float> v(bytes.size() / 4);
  std::memcpy(v.data(), bytes.data(), bytes.size());
  return v;
}

struct Fixture {
  fs::path root;
  fs::path data, cfg_file;

  Fixture() {
    root = fs::temp_directory_path() / "sf_cli";
    fs::remove_all(root);
    fs::create_directories(root);
    data = root / "data";
    REQUIRE(run("phantom --out " + data.string() +
                " --train 6 --val 2 --test 2 --size 32 --seed 5") == 0);
    cfg_file = root / "cfg.json";
    std::ofstream(cfg_file) << json{{"epochs", 2},
                                    {"batch_size", 3},
                                    {"model",
                                     {{"levels", 1},
                                      {"base_channels", 4},
                                      {"dilation_schedule", {1}}}}}
                                   .dump();
  }

  int train(const std::string& variant, const fs::path& out, std::uint64_t seed) {
    return run("train --data " + data.string() + " --out " + out.string() + " --variant " +
               variant + " --config " + cfg_file.string() + " --seed " + std::to_string(seed));
  }
};

Fixture& fx() {
  static Fixture f;
  return f;
}

}  // namespace

TEST_CASE("usage errors exit 2") {
  CHECK(run("") == 2);                                    // missing subcommand
  CHECK(run("frobnicate") == 2);                          // unknown subcommand
  CHECK(run("phantom") == 2);                             // missing --out
  CHECK(run("phantom --out /tmp/sf_cli_x --train 0") == 2);
  CHECK(run("train --data /nope --out /tmp/sf_cli_x --variant 9tn") == 2);
  CHECK(run("--help") == 0);
  CHECK(run("--version") == 0);
}

TEST_CASE("phantom is byte-reproducible") {
  const fs::path d1 = fx().root / "rep1", d2 = fx().root / "rep2";
  REQUIRE(run("phantom --out " + d1.string() + " --train 2 --val 1 --test 1 --size 32 --seed 9") ==
          0);
  REQUIRE(run("phantom --out " + d2.string() + " --train 2 --val 1 --test 1 --size 32 --seed 9") ==
          0);
  CHECK(dir_bytes(d1, false) == dir_bytes(d2, false));
  // collision without --overwrite is an I/O failure; --overwrite succeeds
  CHECK(run("phantom --out " + d1.string() + " --train 2 --val 1 --test 1 --size 32 --seed 9") ==
        1);
  CHECK(run("phantom --out " + d1.string() +
            " --train 2 --val 1 --test 1 --size 32 --seed 9 --overwrite") == 0);
}

TEST_CASE("train reruns match except the manifest") {
  const fs::path r1 = fx().root / "run1", r2 = fx().root / "run2";
  REQUIRE(fx().train("3tn", r1, 3) == 0);
  REQUIRE(fx().train("3tn", r2, 3) == 0);
  CHECK(fs::exists(r1 / "manifest.json"));
  CHECK(fs::exists(r1 / "selected.json"));
  CHECK(fs::exists(r1 / "history.json"));
  CHECK(dir_bytes(r1, true) == dir_bytes(r2, true));

  const json manifest = json::parse(slurp(r1 / "manifest.json"));
  CHECK(manifest.at("tool") == "sparsefocus");
  CHECK(manifest.at("seed") == 3);
  const json cfg = json::parse(slurp(r1 / "config.json"));
  CHECK(cfg.at("variant") == "3tn");
  CHECK(cfg.at("epochs") == 2);
  const json hist = json::parse(slurp(r1 / "history.json"));
  CHECK(hist.size() == 2);
}

TEST_CASE("predict writes the heads the variant has") {
  const fs::path run3 = fx().root / "run1";
  if (!fs::exists(run3 / "selected.json")) REQUIRE(fx().train("3tn", run3, 3) == 0);
  const fs::path run1 = fx().root / "run-gl";
  REQUIRE(fx().train("1tn-gl", run1, 3) == 0);
  const std::string input = (fx().data / "test" / "0000").string();

  const fs::path p3 = fx().root / "pred3";
  REQUIRE(run("predict --model " + run3.string() + " --input " + input + " --out " + p3.string()) ==
          0);
  CHECK(fs::exists(p3 / "sct.f32"));
  CHECK(fs::exists(p3 / "bone.f32"));
  CHECK(fs::exists(p3 / "mask.f32"));
  for (float v : read_f32(p3 / "sct.f32")) {
    CHECK(v >= sparsefocus::kHuMin);
    CHECK(v <= sparsefocus::kHuMax);
  }
  for (float v : read_f32(p3 / "mask.f32")) {
    CHECK(v >= 0.0f);
    CHECK(v <= 1.0f);
  }

  const fs::path p1 = fx().root / "pred1";
  REQUIRE(run("predict --model " + run1.string() + " --input " + input + " --out " + p1.string()) ==
          0);
  CHECK(fs::exists(p1 / "sct.f32"));
  CHECK(!fs::exists(p1 / "bone.f32"));
  CHECK(!fs::exists(p1 / "mask.f32"));

  // variant guard and model resolution failures
  CHECK(run("predict --model " + run1.string() + " --input " + input + " --out " +
            (fx().root / "px").string() + " --expect-variant 3tn") == 2);
  CHECK(run("predict --model /nonexistent --input " + input + " --out " +
            (fx().root / "px").string()) == 1);
}

TEST_CASE("eval scores a prediction tree") {
  // self-predictions: copy each reference ct as the prediction
  const fs::path pred = fx().root / "self";
  for (const auto& e : fs::directory_iterator(fx().data / "test")) {
    fs::create_directories(pred / e.path().filename());
    fs::copy_file(e.path() / "ct.f32", pred / e.path().filename() / "sct.f32",
                  fs::copy_options::overwrite_existing);
  }
  const fs::path rep = fx().root / "report.json";
  REQUIRE(run("eval --pred " + pred.string() + " --ref " + (fx().data / "test").string() +
              " --out " + rep.string() + " --variant 3tn") == 0);
  const json r = json::parse(slurp(rep));
  CHECK(r["metadata"]["variant"] == "3tn");
  CHECK(r["summary"]["mae"]["body"]["mean"] == 0.0);
  CHECK(r["summary"]["dice"]["bone"]["mean"] == 1.0);
  CHECK(fs::exists(pred / "0000" / "diff.f32"));
  for (float v : read_f32(pred / "0000" / "diff.f32")) CHECK(v == 0.0f);

  // rerun is byte-identical
  const fs::path rep2 = fx().root / "report2.json";
  REQUIRE(run("eval --pred " + pred.string() + " --ref " + (fx().data / "test").string() +
              " --out " + rep2.string() + " --variant 3tn") == 0);
  CHECK(slurp(rep) == slurp(rep2));

  // custom thresholds are carried verbatim
  REQUIRE(run("eval --pred " + pred.string() + " --ref " + (fx().data / "test").string() +
              " --out " + rep2.string() + " --thresholds 100,700") == 0);
  const json rc = json::parse(slurp(rep2));
  CHECK(rc["cases"][0]["dice_curve"]["thresholds"] == json::array({100.0, 700.0}));

  // unpaired ids in either direction are contract violations
  fs::create_directories(pred / "9999");
  fs::copy_file(pred / "0000" / "sct.f32", pred / "9999" / "sct.f32");
  CHECK(run("eval --pred " + pred.string() + " --ref " + (fx().data / "test").string() +
            " --out " + rep2.string()) == 2);
  fs::remove_all(pred / "9999");
  fs::remove(pred / "0000" / "sct.f32");
  CHECK(run("eval --pred " + pred.string() + " --ref " + (fx().data / "test").string() +
            " --out " + rep2.string()) == 2);
}
