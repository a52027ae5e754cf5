// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 The patchot Authors

#include <gtest/gtest.h>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "patchot/patchot.h"

namespace {

namespace fs = std::filesystem;

fs::path scratch(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / ("patchot_test_capi_" + name);
  fs::remove_all(dir);
  return dir;
}

std::string tiny(const std::string& command, const fs::path& out) {
  return R"({"command": ")" + command + R"(", "seed": 5, "out": ")" + out.string() + R"(",
    "world": {"base_classes": 6, "val_classes": 0, "novel_classes": 5, "latent_dim": 6, "margin": 1.0},
    "model": {"encoder_hidden": 8, "feature_dim": 4, "modulate_hidden": 4},
    "pretrain": {"epochs": 2, "warmup_epochs": 1, "steps_per_epoch": 3, "batch_size": 4},
    "episode": {"ways": 3, "shots": 1, "queries": 2, "set_size": 3},
    "eval": {"episodes": 4, "threads": 1},
    "bench": {"episodes": 3, "patches": 3},
    "gradcheck": {"instances": 1}})";
}

TEST(CApi, VersionAndStatusNames) {
  EXPECT_STRNE(pot_version(), "");
  EXPECT_STREQ(pot_status_name(POT_OK), "ok");
  EXPECT_STRNE(pot_status_name(POT_ERR_CONFIG), pot_status_name(POT_ERR_IO));
}

TEST(CApi, ExitCodesAreDistinct) {
  const std::vector<int> codes = {POT_ERR_CONFIG, POT_ERR_DIVERGENCE, POT_ERR_IO, POT_ERR_VERSION};
  for (size_t i = 0; i < codes.size(); ++i) {
    EXPECT_NE(codes[i], 0);
    for (size_t j = i + 1; j < codes.size(); ++j) EXPECT_NE(codes[i], codes[j]);
  }
}

TEST(CApi, RunLifecycle) {
  const fs::path out = scratch("eval");
  pot_run* run = nullptr;
  ASSERT_EQ(pot_run_create(tiny("eval", out).c_str(), &run), POT_OK);
  const char* text = nullptr;
  EXPECT_EQ(pot_run_report_json(run, &text), POT_ERR_INVALID_ARGUMENT);
  ASSERT_EQ(pot_run_set(run, "eval.episodes", "5"), POT_OK);
  ASSERT_EQ(pot_run_config_json(run, &text), POT_OK);
  EXPECT_NE(std::string(text).find("\"episodes\": 5"), std::string::npos);
  ASSERT_EQ(pot_run_execute(run), POT_OK) << pot_last_error();
  ASSERT_EQ(pot_run_report_json(run, &text), POT_OK);
  EXPECT_NE(std::string(text).find("\"accuracy\""), std::string::npos);
  EXPECT_TRUE(fs::exists(out / "report.json"));
  EXPECT_TRUE(fs::exists(out / "metrics.jsonl"));
  pot_run_destroy(run);
}

TEST(CApi, ConfigErrorsCarryFieldName) {
  pot_run* run = nullptr;
  EXPECT_EQ(pot_run_create("{not json", &run), POT_ERR_CONFIG);
  EXPECT_EQ(run, nullptr);
  EXPECT_STRNE(pot_last_error(), "");

  ASSERT_EQ(pot_run_create(R"({"command": "eval"})", &run), POT_OK);
  EXPECT_EQ(pot_run_execute(run), POT_ERR_CONFIG);
  EXPECT_NE(std::string(pot_last_error()).find("seed"), std::string::npos);
  ASSERT_EQ(pot_run_set(run, "seed", "1"), POT_OK);
  ASSERT_EQ(pot_run_set(run, "world.colour", "\"blue\""), POT_OK);
  EXPECT_EQ(pot_run_execute(run), POT_ERR_CONFIG);
  EXPECT_NE(std::string(pot_last_error()).find("world.colour"), std::string::npos);
  pot_run_destroy(run);
}

TEST(CApi, MissingFilesAreIoErrors) {
  pot_run* run = nullptr;
  EXPECT_EQ(pot_run_create_from_file("/nonexistent/config.json", &run), POT_ERR_IO);
  ASSERT_EQ(pot_run_create(tiny("eval", scratch("io")).c_str(), &run), POT_OK);
  ASSERT_EQ(pot_run_set(run, "checkpoint", "\"/nonexistent/ckpt.json\""), POT_OK);
  EXPECT_EQ(pot_run_execute(run), POT_ERR_IO);
  pot_run_destroy(run);
}

TEST(CApi, LastErrorIsPerThread) {
  pot_run* run = nullptr;
  EXPECT_EQ(pot_run_create("[", &run), POT_ERR_CONFIG);
  std::string other;
  std::thread([&] { other = pot_last_error(); }).join();
  EXPECT_EQ(other, "");
  EXPECT_STRNE(pot_last_error(), "");
}

TEST(CApi, NullArgumentsRejected) {
  EXPECT_EQ(pot_run_create("{}", nullptr), POT_ERR_INVALID_ARGUMENT);
  EXPECT_EQ(pot_run_execute(nullptr), POT_ERR_INVALID_ARGUMENT);
  double out = 0.0;
  EXPECT_EQ(pot_kl(0, nullptr, nullptr, &out), POT_ERR_INVALID_ARGUMENT);
  pot_run_destroy(nullptr);
}

TEST(CApi, KlMatchesDirectSum) {
  const double p[] = {0.5, 0.3, 0.2}, q[] = {0.2, 0.2, 0.6};
  double out = 0.0;
  ASSERT_EQ(pot_kl(3, p, q, &out), POT_OK);
  double expected = 0.0;
  for (int i = 0; i < 3; ++i) expected += p[i] * std::log(p[i] / q[i]);
  EXPECT_NEAR(out, expected, 1e-15);
}

TEST(CApi, DecomposedKlEqualsKl) {
  const double zt[] = {1.5, -0.3, 0.2, 2.0}, zs[] = {0.1, 0.4, -1.0, 0.9};
  double p[4], q[4], zp = 0, zq = 0;
  for (int i = 0; i < 4; ++i) zp += std::exp(zt[i]), zq += std::exp(zs[i]);
  for (int i = 0; i < 4; ++i) p[i] = std::exp(zt[i]) / zp, q[i] = std::exp(zs[i]) / zq;
  double kl = 0.0, decomposed = 0.0, ukd = 0.0;
  ASSERT_EQ(pot_kl(4, p, q, &kl), POT_OK);
  ASSERT_EQ(pot_decomposed_kl(4, zt, zs, &decomposed), POT_OK);
  ASSERT_EQ(pot_ukd_div(4, zt, zs, &ukd), POT_OK);
  EXPECT_NEAR(kl, decomposed, 1e-12);
  EXPECT_GE(ukd, 0.0);
}

TEST(CApi, SinkhornMarginalsAndEmdVertex) {
  const double r[] = {0.3, 0.7}, c[] = {0.6, 0.4};
  const double cost[] = {0.0, 1.0, 2.0, 0.5};  // row-major 2x2
  double plan[4];
  int iterations = 0;
  ASSERT_EQ(pot_sinkhorn(2, 2, r, c, cost, 0.1, 1e-10, 10000, 1, plan, &iterations), POT_OK);
  EXPECT_NEAR(plan[0] + plan[1], 0.3, 1e-10);
  EXPECT_NEAR(plan[2] + plan[3], 0.7, 1e-10);
  EXPECT_NEAR(plan[0] + plan[2], 0.6, 1e-10);
  EXPECT_GT(iterations, 0);

  // The 2x2 polytope is P11 = t on [max(0, r1 - c2), min(r1, c1)]; the
  // objective is linear in t so the optimum is an endpoint.
  auto cost_at = [&](double t) {
    return t * cost[0] + (r[0] - t) * cost[1] + (c[0] - t) * cost[2] + (r[1] - c[0] + t) * cost[3];
  };
  const double lo = std::max(0.0, r[0] - c[1]), hi = std::min(r[0], c[0]);
  double emd = 0.0;
  ASSERT_EQ(pot_emd(2, 2, r, c, cost, plan, &emd), POT_OK);
  EXPECT_NEAR(emd, std::min(cost_at(lo), cost_at(hi)), 1e-12);
}

TEST(CApi, SolverFailuresMapToStatus) {
  const double r[] = {0.3, 0.7}, c[] = {0.6, 0.4};
  const double cost[] = {0.0, 1.0, 2.0, 0.5};
  double plan[4];
  EXPECT_EQ(pot_sinkhorn(2, 2, r, c, cost, 0.01, 1e-14, 1, 1, plan, nullptr), POT_ERR_NON_CONVERGENCE);
  EXPECT_NE(std::string(pot_last_error()).find("violation"), std::string::npos);
  EXPECT_EQ(pot_sinkhorn(2, 2, r, c, cost, -1.0, 1e-9, 100, 1, plan, nullptr), POT_ERR_INVALID_ARGUMENT);
  const double bad[] = {0.0, NAN, 1.0, 0.0};
  EXPECT_NE(pot_sinkhorn(2, 2, r, c, bad, 0.1, 1e-9, 100, 1, plan, nullptr), POT_OK);
}

TEST(CApi, AdaptiveScoreOfIdenticalSetsIsNearOne) {
  const double u[] = {1.0, 0.0, 0.0, 1.0, 0.6, 0.8};
  double score = 0.0;
  ASSERT_EQ(pot_adaptive_score(3, 2, u, u, 0.1, &score), POT_OK);
  EXPECT_LE(score, 1.0 + 1e-12);
  EXPECT_GT(score, 0.9);
}

}  // namespace
