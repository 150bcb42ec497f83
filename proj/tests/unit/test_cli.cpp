#include "cenkf/cli.hpp"
#include "cenkf/export.hpp"

#include <doctest.h>

#include <filesystem>
#include <sstream>

using namespace cenkf;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("cenkf_cli_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

int cli(const std::vector<std::string>& args, std::string* out = nullptr) {
  std::ostringstream o, e;
  const int rc = run_cli(args, o, e);
  if (out) *out = o.str() + e.str();
  return rc;
}

std::size_t count_files(const fs::path& dir, const std::string& ext) {
  std::size_t n = 0;
  for (const auto& e : fs::directory_iterator(dir)) n += e.path().extension() == ext;
  return n;
}

}  // namespace

TEST_SUITE("cli") {

TEST_CASE("generate") {
  const fs::path root = scratch("gen");
  CHECK(cli({"generate", "--out", (root / "one").string(), "--size", "1", "--days", "1"}) == 0);
  CHECK(count_files(root / "one", ".csv") == 1);
  CHECK(fs::exists(root / "one" / "truth" / "twin_01_truth.csv"));
  CHECK(cli({"generate", "--out", (root / "one_again").string(), "--size", "1", "--days", "1"}) == 0);
  CHECK(read_text_file(root / "one" / "twin_01.csv") == read_text_file(root / "one_again" / "twin_01.csv"));
  CHECK(cli({"generate", "--out", (root / "all").string(), "--days", "1"}) == 0);
  CHECK(count_files(root / "all", ".csv") == 20);
  fs::remove_all(root);
}

TEST_CASE("run writes one directory per experiment") {
  const fs::path root = scratch("run");
  REQUIRE(cli({"generate", "--out", (root / "in").string(), "--size", "1", "--days", "2"}) == 0);
  std::string text;
  const int rc = cli({"run", (root / "in").string(), "--experiments", "unconstrained,is", "--particles", "15",
                      "--out", (root / "out").string()},
                     &text);
  CHECK(rc == 0);
  CHECK(fs::exists(root / "out" / "twin_01" / "unconstrained" / "summary.json"));
  CHECK(fs::exists(root / "out" / "twin_01" / "is" / "forecasts.csv"));
  const std::string omega = read_text_file(root / "out" / "omega.csv");
  CHECK(omega.rfind("patient,is\ntwin_01,", 0) == 0);
  CHECK(text.find("2/2 experiments completed") != std::string::npos);
  fs::remove_all(root);
}

TEST_CASE("run validates before starting") {
  const fs::path root = scratch("missing");
  std::string text;
  CHECK(cli({"run", (root / "nope.csv").string(), "--out", (root / "out").string()}, &text) != 0);
  CHECK(text.find("not found") != std::string::npos);
  CHECK_FALSE(fs::exists(root / "out"));
  write_text_file(root / "bad.csv", "t_min,kind,value\n0,glucose_meas,100\n");
  CHECK(cli({"run", (root / "bad.csv").string(), "--out", (root / "out").string()}) != 0);
  CHECK(cli({"run", (root / "bad.csv").string(), "--experiments", "xyz"}) != 0);
  CHECK_FALSE(fs::exists(root / "out"));
  fs::remove_all(root);
}

TEST_CASE("validate reports per file") {
  const fs::path root = scratch("validate");
  write_text_file(root / "good.csv", "t_min,kind,value\n0,glucose_meas,100\n");
  write_text_file(root / "bad.csv", "t_min,kind,value\n0,glucose_meas,100\n5,sugar,1\n");
  std::string text;
  CHECK(cli({"validate", (root / "good.csv").string()}, &text) == 0);
  CHECK(text.find(": ok") != std::string::npos);
  CHECK(cli({"validate", (root / "bad.csv").string()}, &text) != 0);
  CHECK(text.find("line 3") != std::string::npos);
  fs::create_directories(root / "empty");
  CHECK(cli({"validate", (root / "empty").string()}, &text) == 0);
  CHECK(text.empty());
  fs::remove_all(root);
}

TEST_CASE("config file supplies defaults") {
  const fs::path root = scratch("config");
  write_text_file(root / "gen.ini", "[generate]\nsize=2\ndays=1\nout=\"" + (root / "cfg").string() + "\"\n");
  CHECK(cli({"--config", (root / "gen.ini").string(), "generate"}) == 0);
  CHECK(count_files(root / "cfg", ".csv") == 2);
  fs::remove_all(root);
}

TEST_CASE("usage errors") {
  CHECK(cli({}) != 0);
  CHECK(cli({"frobnicate"}) != 0);
  CHECK(cli({"run", "--particles", "abc"}) != 0);
}

}  // TEST_SUITE
