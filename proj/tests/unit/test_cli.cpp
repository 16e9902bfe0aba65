// Copyright 2026 The MVTF Authors
//
// Licensed under the Apache License, Version 2.0

#include <gtest/gtest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "cli.hpp"
#include "mvtf/data.hpp"
#include "mvtf/wav.hpp"

namespace fs = std::filesystem;

namespace {

struct CliRun {
  int code;
  std::string out, err;
};

CliRun run(std::vector<std::string> args) {
  args.insert(args.begin(), "mvtf");
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  std::ostringstream out, err;
  const int code = mvtf::cli::dispatch(static_cast<int>(argv.size()), argv.data(), out, err);
  return {code, out.str(), err.str()};
}

std::string result_line(const std::string& out) {
  const auto pos = out.rfind("RESULT ");
  return pos == std::string::npos ? "" : out.substr(pos, out.find('\n', pos) - pos);
}

std::string field(const std::string& line, const std::string& key) {
  const auto pos = line.find(" " + key + "=");
  if (pos == std::string::npos) return "";
  const auto start = pos + key.size() + 2;
  return line.substr(start, line.find(' ', start) - start);
}

class CliTest : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    setenv("MVTF_PRECISION", "f64", 1);
    dir_ = fs::temp_directory_path() / "mvtf_cli_test";
    fs::remove_all(dir_);
    fs::create_directories(dir_);
    std::ofstream(dir_ / "tiny.json") << R"({
      // comments are allowed
      "data": {"train": 4, "val": 2, "test": 3, "speakers": 10, "samples": 2000},
      "model": {"n_fft": 64, "hop": 32, "F": 33, "H": 4, "blocks": 1, "D": 8, "rnn_hidden": 3},
      "train": {"batch": 2, "max_epochs": 2, "seed": 3}
    })";
  }
  static fs::path dir_;
};

fs::path CliTest::dir_;

}  // namespace

TEST_F(CliTest, UsageErrorsExitOne) {
  EXPECT_EQ(run({}).code, 1);
  EXPECT_EQ(run({"frobnicate"}).code, 1);
  const auto r = run({"eval", "--ckpt", "a", "--data", "b", "--views", "front", "--bogus"});
  EXPECT_EQ(r.code, 1);
  EXPECT_NE(r.err.find("Usage"), std::string::npos);
  EXPECT_EQ(run({"eval", "--ckpt", "a", "--data", "b"}).code, 1);  // neither --views nor --injected
  setenv("MVTF_PRECISION", "f16", 1);
  EXPECT_EQ(run({"selftest", "--fast"}).code, 1);
  setenv("MVTF_PRECISION", "f64", 1);
}

TEST_F(CliTest, MissingFilesExitTwo) {
  const auto r = run({"eval", "--ckpt", (dir_ / "none.ckpt").string(), "--data", "x.jsonl", "--views", "front"});
  EXPECT_EQ(r.code, 2);
  EXPECT_FALSE(r.err.empty());
  EXPECT_EQ(run({"train", "--data", (dir_ / "none.jsonl").string(), "--out", (dir_ / "t").string()}).code, 2);
}

TEST_F(CliTest, SelftestFastPasses) {
  const auto r = run({"selftest", "--fast"});
  EXPECT_EQ(r.code, 0) << r.out;
  EXPECT_EQ(result_line(r.out), "RESULT command=selftest suites=5 passed=5 status=PASS");
}

TEST_F(CliTest, EndToEnd) {
  const auto cfg = (dir_ / "tiny.json").string();
  const auto a = run({"gen-data", "--config", cfg, "--out", (dir_ / "a").string(), "--seed", "5"});
  const auto b = run({"gen-data", "--config", cfg, "--out", (dir_ / "b").string(), "--seed", "5"});
  const auto c = run({"gen-data", "--config", cfg, "--out", (dir_ / "c").string(), "--seed", "6"});
  ASSERT_EQ(a.code, 0) << a.err;
  EXPECT_EQ(field(result_line(a.out), "records"), "9");
  EXPECT_EQ(field(result_line(a.out), "checksum"), field(result_line(b.out), "checksum"));
  EXPECT_NE(field(result_line(a.out), "checksum"), field(result_line(c.out), "checksum"));

  const auto manifest = (dir_ / "a" / mvtf::kManifestName).string();
  const auto tr = run({"train", "--config", cfg, "--data", manifest, "--out", (dir_ / "run").string()});
  ASSERT_EQ(tr.code, 0) << tr.err;
  EXPECT_EQ(field(result_line(tr.out), "epochs"), "2");
  const auto ckpt = (dir_ / "run" / "model.ckpt").string();
  ASSERT_TRUE(fs::exists(ckpt));
  std::ifstream hist(dir_ / "run" / "history.jsonl");
  std::size_t lines = 0;
  for (std::string l; std::getline(hist, l);) ++lines;
  EXPECT_EQ(lines, 2u);

  const auto report = (dir_ / "report.jsonl").string();
  const auto single = run({"eval", "--ckpt", ckpt, "--data", manifest, "--views", "front", "--report", report});
  const auto triple = run({"eval", "--ckpt", ckpt, "--data", manifest, "--views", "front,front,front"});
  ASSERT_EQ(single.code, 0) << single.err;
  EXPECT_EQ(result_line(single.out), result_line(triple.out));
  EXPECT_EQ(field(result_line(single.out), "views"), "front,front,front");
  EXPECT_EQ(field(result_line(single.out), "items"), "3");
  // Permuted combinations differ only in the echoed label order.
  auto metrics = [](const CliRun& r) { const auto l = result_line(r.out); return l.substr(l.find(" split=")); };
  EXPECT_EQ(metrics(run({"eval", "--ckpt", ckpt, "--data", manifest, "--views", "front,left30,right30"})),
            metrics(run({"eval", "--ckpt", ckpt, "--data", manifest, "--views", "right30,front,left30"})));
  const auto inj1 = run({"eval", "--ckpt", ckpt, "--data", manifest, "--injected", "--seed", "4", "--report", report});
  const auto inj2 = run({"eval", "--ckpt", ckpt, "--data", manifest, "--injected", "--seed", "4"});
  ASSERT_EQ(inj1.code, 0) << inj1.err;
  EXPECT_EQ(result_line(inj1.out), result_line(inj2.out));
  EXPECT_EQ(field(result_line(inj1.out), "views"), "injected");
  EXPECT_EQ(run({"eval", "--ckpt", ckpt, "--data", manifest, "--views", "side"}).code, 2);

  std::ifstream rep(report);
  std::vector<std::string> rows;
  for (std::string l; std::getline(rep, l);) rows.push_back(l);
  ASSERT_EQ(rows.size(), 2u);
  EXPECT_NE(rows[0].find("\"views\":\"front,front,front\""), std::string::npos);
  EXPECT_NE(rows[1].find("\"views\":\"injected\""), std::string::npos);

  const auto recs = mvtf::read_manifest(manifest);
  const auto& rec = recs.back();
  const fs::path root = dir_ / "a";
  const auto loaded = mvtf::load_record(root, rec);
  const auto mix = (dir_ / "mix.wav").string();
  mvtf::write_wav(mix, std::vector<float>(loaded.mixture.begin(), loaded.mixture.end()));
  const auto emb = (root / rec.view_paths.at("front")).string() + "," + (root / rec.view_paths.at("top")).string();
  const auto out_wav = (dir_ / "est.wav").string();
  const auto inf = run({"infer", "--ckpt", ckpt, "--mix", mix, "--emb", emb, "--out", out_wav});
  ASSERT_EQ(inf.code, 0) << inf.err;
  EXPECT_EQ(field(result_line(inf.out), "samples"), "2000");
  EXPECT_EQ(mvtf::read_wav(out_wav).size(), 2000u);
  EXPECT_EQ(run({"infer", "--ckpt", ckpt, "--mix", mix, "--emb", "nope.mvtf", "--out", out_wav}).code, 2);
}
