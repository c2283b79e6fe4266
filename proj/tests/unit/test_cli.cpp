#include <doctest.h>

#include <fstream>
#include <sstream>

#include <json.hpp>

#include "netseg/cli.hpp"
#include "netseg/nifti.hpp"
#include "oracles.hpp"

using namespace netseg;
namespace fs = std::filesystem;

namespace {

struct Result {
  int code;
  std::string out, err;
};

Result run(std::vector<std::string> args) {
  std::ostringstream out, err;
  const int code = cli::run(args, out, err);
  return {code, out.str(), err.str()};
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

/// Relative path -> bytes for every file below root.
std::map<std::string, std::string> tree(const fs::path& root) {
  std::map<std::string, std::string> t;
  for (const auto& e : fs::recursive_directory_iterator(root))
    if (e.is_regular_file()) t[fs::relative(e.path(), root).string()] = slurp(e.path());
  return t;
}

Result small_phantom(const fs::path& out, std::vector<std::string> extra = {}) {
  std::vector<std::string> a{"phantom", "--out", out.string(), "--n", "3", "--shape", "8", "16", "16", "--gamma-scale", "60"};
  a.insert(a.end(), extra.begin(), extra.end());
  return run(a);
}

}  // namespace

TEST_CASE("help and usage errors") {
  auto r = run({"--help"});
  CHECK(r.code == cli::kExitOk);
  CHECK(r.out.find("phantom") != std::string::npos);
  CHECK(run({"train", "--help"}).code == cli::kExitOk);
  CHECK(run({}).code == cli::kExitUsage);
  CHECK(run({"phantom", "--bogus"}).code == cli::kExitUsage);
  CHECK(run({"nosuch"}).code == cli::kExitUsage);
  r = run({"phantom", "--n", "3"});  // --out is required
  CHECK(r.code == cli::kExitUsage);
  CHECK(run({"eval", "--pred", "a.nii"}).code == cli::kExitUsage);
}

TEST_CASE("eval of a label file against itself") {
  oracle::TempDir dir("cli_eval");
  REQUIRE(small_phantom(dir.path / "ph").code == 0);
  const auto seg = (dir.path / "ph/records/phantom_0001_seg.nii").string();
  const auto r = run({"eval", "--pred", seg, "--gt", seg, "--out", (dir.path / "ev").string()});
  REQUIRE(r.code == 0);
  const auto j = nlohmann::json::parse(r.out);
  CHECK(j["summary"]["mean_dice"] == 1.0);
  for (const auto& [seg_name, d] : j["summary"]["dice"].items()) CHECK(d == 1.0);
  const auto csv = slurp(dir.path / "ev/metrics.csv");
  CHECK(csv.rfind("record_id,segment,dice,iou,hd,hd95\n", 0) == 0);
}

TEST_CASE("shape mismatch is a data error with a structured message") {
  oracle::TempDir dir("cli_mismatch");
  LabelVolume lab(Shape3{4, 4, 4}, Schema::Brats2018);
  lab[5] = 1;
  write_labels(lab, dir.path / "l.nii");
  write_volume(Volume(Shape3{4, 4, 5}, 1.0f), dir.path / "tc.nii");
  write_volume(Volume(Shape3{4, 4, 5}, 0.0f), dir.path / "et.nii");
  const auto r = run({"extract", "--labels", (dir.path / "l.nii").string(), "--tc", (dir.path / "tc.nii").string(),
                      "--et", (dir.path / "et.nii").string(), "--out", (dir.path / "x").string()});
  CHECK(r.code == cli::kExitData);
  const auto last = r.err.substr(r.err.rfind('{'));
  const auto j = nlohmann::json::parse(last);
  CHECK(j["error"] == "ShapeMismatch");
  CHECK(j["message"].get<std::string>().find("ShapeMismatch") != std::string::npos);

  const auto missing = run({"compose", "--labels", (dir.path / "nope.nii").string()});
  CHECK(missing.code == cli::kExitData);
}

TEST_CASE("numeric failures exit with 4") {
  oracle::TempDir dir("cli_numeric");
  std::ofstream(dir.path / "v.csv") << "record_id,net_voxels\na,5\nb,5\nc,5\n";
  const auto r = run({"stats", "--volumes", (dir.path / "v.csv").string(), "--out", (dir.path / "s").string()});
  CHECK(r.code == cli::kExitNumeric);
  CHECK(r.err.find("DegenerateData") != std::string::npos);
}

TEST_CASE("config file values yield to command line flags") {
  oracle::TempDir dir("cli_config");
  std::ofstream(dir.path / "c.json") << R"({"n": 2, "shape": [8, 16, 16], "gamma_scale": 60})";
  const auto cfg = (dir.path / "c.json").string();
  auto r = run({"phantom", "--config", cfg, "--out", (dir.path / "a").string()});
  REQUIRE(r.code == 0);
  CHECK(nlohmann::json::parse(r.out)["records"] == 2);
  CHECK(r.err.find("\"n\":\"2\"") != std::string::npos);
  r = run({"phantom", "--out", (dir.path / "b").string(), "--n", "1", "--config", cfg});
  REQUIRE(r.code == 0);
  CHECK(nlohmann::json::parse(r.out)["records"] == 1);

  std::ofstream(dir.path / "bad.json") << R"({"no_such_key": 1})";
  CHECK(run({"phantom", "--config", (dir.path / "bad.json").string(), "--out", (dir.path / "c").string()}).code ==
        cli::kExitUsage);
}

TEST_CASE("dry run writes nothing") {
  oracle::TempDir dir("cli_dry");
  const auto r = small_phantom(dir.path / "ph", {"--dry-run"});
  CHECK(r.code == 0);
  CHECK_FALSE(fs::exists(dir.path / "ph"));
  const auto p = run({"pipeline", "--out", (dir.path / "pl").string(), "--dry-run"});
  CHECK(p.code == 0);
  CHECK(p.out.find("train") != std::string::npos);
  CHECK_FALSE(fs::exists(dir.path / "pl"));
}

TEST_CASE("repeated runs produce identical artifacts") {
  oracle::TempDir dir("cli_idem");
  REQUIRE(small_phantom(dir.path / "a", {"--jobs", "1"}).code == 0);
  REQUIRE(small_phantom(dir.path / "b", {"--jobs", "3"}).code == 0);
  const auto first = tree(dir.path / "a");
  CHECK(first.size() == 3 * 5 + 1);
  CHECK(first == tree(dir.path / "b"));
  REQUIRE(small_phantom(dir.path / "a").code == 0);
  CHECK(first == tree(dir.path / "a"));

  // NET must survive the default filters for the volume grouping to be defined
  REQUIRE(run({"phantom", "--out", (dir.path / "big").string(), "--n", "4", "--shape", "16", "32", "32", "--gamma-scale",
               "250"})
              .code == 0);
  const auto manifest = (dir.path / "big/manifest.json").string();
  const auto ex1 = run({"extract", "--dataset", manifest, "--oracle", "--out", (dir.path / "x1").string()});
  const auto ex2 = run({"extract", "--dataset", manifest, "--oracle", "--out", (dir.path / "x2").string(), "--jobs", "2"});
  REQUIRE(ex1.code == 0);
  REQUIRE(ex2.code == 0);
  CHECK(ex1.out == ex2.out);
  CHECK(tree(dir.path / "x1") == tree(dir.path / "x2"));
}

TEST_CASE("compose writes one mask per segment") {
  oracle::TempDir dir("cli_compose");
  REQUIRE(small_phantom(dir.path / "ph").code == 0);
  const auto r = run({"compose", "--labels", (dir.path / "ph/records/phantom_0000_seg.nii").string(), "--out",
                      (dir.path / "co").string(), "--format", "csv", "--to", "brats2018"});
  REQUIRE(r.code == 0);
  CHECK(r.out.rfind("segment,voxels\n", 0) == 0);
  for (const char* s : {"ET", "TC", "WT", "NET", "TCN"}) CHECK(fs::exists(dir.path / "co" / (std::string(s) + ".nii")));
  const auto lab = read_labels(dir.path / "ph/records/phantom_0000_seg.nii", Schema::Unified4Label);
  const auto et = read_volume(dir.path / "co/ET.nii");
  for (std::size_t i = 0; i < lab.size(); ++i) CHECK((et[i] != 0) == (lab[i] == 4));
}

TEST_CASE("train then evaluate a dataset") {
  oracle::TempDir dir("cli_train");
  REQUIRE(run({"phantom", "--out", (dir.path / "ph").string(), "--n", "3", "--shape", "8", "16", "16", "--gamma-scale", "60"}).code == 0);
  const auto manifest = (dir.path / "ph/manifest.json").string();
  const auto t = run({"train", "--dataset", manifest, "--out", (dir.path / "m").string(), "--levels", "2", "--base-filters",
                      "4", "--norm-groups", "2", "--epochs", "2", "--holdout", "1", "--target-schema", "brats2021"});
  REQUIRE(t.code == 0);
  const auto meta = nlohmann::json::parse(slurp(dir.path / "m/model.json"));
  CHECK(fs::exists(dir.path / "m/model.bin"));
  CHECK(slurp(dir.path / "m/trainlog.csv").rfind("epoch,lr,loss,dice_ET,dice_TC,dice_WT\n", 0) == 0);
  CHECK(meta.dump().find("phantom_0002") != std::string::npos);

  const auto e = run({"eval", "--dataset", manifest, "--model", (dir.path / "m/model").string(), "--holdout", "1",
                      "--out", (dir.path / "ev").string()});
  REQUIRE(e.code == 0);
  const auto j = nlohmann::json::parse(e.out);
  CHECK(j["summary"]["records"] == 1);
  CHECK(j["records"][0]["record_id"] == "phantom_0002");
}
