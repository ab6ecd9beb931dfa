#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "cli.hpp"
#include "otnas/errors.hpp"

namespace fs = std::filesystem;
using namespace otnas;

namespace {

const char* kConfig = R"({
  "zoo_root": "zoo",
  "dataset_dir": "data",
  "output_dir": "out",
  "seeds": [0],
  "embedding": {"kind": "random_projection", "output_dim": 8, "seed": 1},
  "ot": {"sample_count": 30},
  "search_space": {"cells": 1, "nodes_per_cell": 2, "channels": 4, "image_shape": [1, 8, 8]},
  "train": {"epochs": 1, "batch_size": 8, "curve_log_every": 2},
  "synthetic": [
    {"name": "shapes", "family": "shapes", "seed": 1, "samples_per_class": 12, "image_size": [1, 8, 8]},
    {"name": "shapes_rot", "family": "shapes", "seed": 1, "samples_per_class": 12, "image_size": [1, 8, 8],
     "transform": {"rotation_quarter_turns": 1}},
    {"name": "stripes", "family": "stripes", "seed": 2, "samples_per_class": 12, "image_size": [1, 8, 8]},
    {"name": "blobs", "family": "blobs", "seed": 3, "samples_per_class": 12, "image_size": [1, 8, 8]}
  ]
})";

fs::path workspace(const std::string& name, const std::string& config = kConfig) {
  const fs::path dir = fs::temp_directory_path() / ("otnas_cli_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  std::ofstream(dir / "config.json") << config;
  return dir;
}

struct Outcome {
  int code;
  std::string out;
  std::string err;
};

Outcome run(const fs::path& dir, std::vector<std::string> args) {
  args.insert(args.begin(), {"--config", (dir / "config.json").string()});
  std::ostringstream out, err;
  const int code = cli::run_cli(args, out, err);
  return {code, out.str(), err.str()};
}

std::string read_file(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

}  // namespace

TEST(Cli, UnknownConfigKeyIsAConfigError) {
  std::string bad = kConfig;
  bad.insert(1, "\"zoo_rot\": \"typo\",");
  const auto dir = workspace("unknown_key", bad);
  const auto r = run(dir, {"gen-data"});
  EXPECT_EQ(r.code, cli::kConfigError);
  EXPECT_NE(r.err.find("zoo_rot"), std::string::npos) << r.err;
}

TEST(Cli, MissingSubcommandOrConfig) {
  std::ostringstream out, err;
  EXPECT_EQ(cli::run_cli({"gen-data"}, out, err), cli::kConfigError);
  const auto dir = workspace("no_sub");
  EXPECT_EQ(run(dir, {}).code, cli::kConfigError);
  EXPECT_EQ(run(fs::path("/nonexistent/otnas"), {"gen-data"}).code, cli::kConfigError);
}

TEST(Cli, TransferOnEmptyZooFails) {
  const auto dir = workspace("empty_zoo");
  ASSERT_EQ(run(dir, {"gen-data"}).code, cli::kOk);
  const auto r = run(dir, {"transfer", "--target", "shapes"});
  EXPECT_EQ(r.code, cli::kConfigError);
  EXPECT_NE(r.err.find("zoo"), std::string::npos) << r.err;
}

TEST(Cli, ExitCodeMapping) {
  EXPECT_EQ(cli::exit_code_for(ConfigError("x")), cli::kConfigError);
  EXPECT_EQ(cli::exit_code_for(NotFoundError("x")), cli::kConfigError);
  EXPECT_EQ(cli::exit_code_for(IncompatibleError("x")), cli::kIncompatible);
  EXPECT_EQ(cli::exit_code_for(CorruptionError("x")), cli::kIncompatible);
  EXPECT_EQ(cli::exit_code_for(NumericalError("x")), cli::kNumerical);
  EXPECT_EQ(cli::exit_code_for(std::runtime_error("x")), cli::kFailure);
}

TEST(Cli, OracleAndReportsAreReproducible) {
  const auto dir = workspace("oracle");
  ASSERT_EQ(run(dir, {"gen-data"}).code, cli::kOk);
  for (const char* t : {"shapes_rot", "stripes", "blobs"}) {
    const auto r = run(dir, {"pretrain", "--target", t});
    ASSERT_EQ(r.code, cli::kOk) << r.err;
  }
  auto r = run(dir, {"oracle", "--target", "shapes"});
  ASSERT_EQ(r.code, cli::kOk) << r.err;
  int files = 0;
  for (const auto& e : fs::directory_iterator(dir / "out" / "runs")) {
    EXPECT_EQ(e.path().filename().string().rfind("grid_source__shapes__", 0), 0u) << e.path();
    ++files;
  }
  EXPECT_EQ(files, 3);

  ASSERT_EQ(run(dir, {"scratch", "--target", "shapes"}).code, cli::kOk);
  r = run(dir, {"transfer", "--target", "shapes"});
  ASSERT_EQ(r.code, cli::kOk) << r.err;
  EXPECT_NE(r.out.find("shapes_rot"), std::string::npos) << r.out;

  ASSERT_EQ(run(dir, {"report"}).code, cli::kOk);
  const std::string first = read_file(dir / "out" / "comparison.csv");
  const std::string gaps = read_file(dir / "out" / "gapcount.txt");
  ASSERT_FALSE(first.empty());

  // Re-running the same commands rewrites byte-identical files.
  ASSERT_EQ(run(dir, {"scratch", "--target", "shapes"}).code, cli::kOk);
  ASSERT_EQ(run(dir, {"oracle", "--target", "shapes"}).code, cli::kOk);
  ASSERT_EQ(run(dir, {"report"}).code, cli::kOk);
  EXPECT_EQ(read_file(dir / "out" / "comparison.csv"), first);
  EXPECT_EQ(read_file(dir / "out" / "gapcount.txt"), gaps);

  r = run(dir, {"dist", "--out", (dir / "dist_out").string()});
  ASSERT_EQ(r.code, cli::kOk) << r.err;
  EXPECT_EQ(read_file(dir / "dist_out" / "distances.csv").rfind("dataset,", 0), 0u);
}
