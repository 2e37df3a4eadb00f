// SPDX-License-Identifier: Apache-2.0
// One PASS/FAIL line per acceptance criterion. Exit status is the number of
// failed criteria. Pass --skip-directional for a quick run.
#include <chrono>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <functional>
#include <sstream>
#include <string>
#include <vector>

#include "support/loss_cases.hpp"
#include "support/metric_checks.hpp"
#include "support/neck_checks.hpp"
#include "support/op_cases.hpp"
#include "support/roster_checks.hpp"
#include "support/split_checks.hpp"
#include "ub/config.hpp"
#include "ub/experiment.hpp"
#include "ub/gradcheck.hpp"
#include "ub/rng.hpp"

#ifndef UB_CONFIG_DIR
#define UB_CONFIG_DIR "configs"
#endif

using namespace ub;
namespace fs = std::filesystem;

namespace {

// Pinned tolerances and budgets.
constexpr double kGradTol = 1e-4;
constexpr double kGradEps = 1e-3;
constexpr std::size_t kGradInstances = 10;
constexpr double kGradBudgetSeconds = 120.0;
constexpr std::size_t kRosters = 1000;
constexpr std::size_t kMetricCases = 100;
constexpr std::size_t kSplitCorpora = 20;
constexpr std::size_t kScaleTrials = 200;
constexpr std::size_t kDirectionalSeeds = 5;
constexpr std::size_t kDirectionalMinWins = 4;
constexpr double kDirectionalBudgetSeconds = 1800.0;

struct Outcome {
  bool pass = false;
  std::string detail;
};

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

std::string first_of(const std::vector<std::string>& problems) {
  return problems.empty() ? "" : "; first: " + problems.front();
}

Outcome gradients() {
  const auto t0 = std::chrono::steady_clock::now();
  std::size_t checked = 0, failed = 0;
  double worst = 0.0;
  std::string worst_case;
  auto record = [&](const std::string& name, const GradCheckReport& r) {
    ++checked;
    if (!r.passed) ++failed;
    if (r.max_rel_error > worst) {
      worst = r.max_rel_error;
      worst_case = name + " (" + r.worst + ")";
    }
  };
  for (OpTag tag : all_op_tags()) {
    for (std::uint64_t seed = 0; seed < kGradInstances; ++seed) {
      auto c = ub::testing::make_op_case(tag, derive_seed(seed, {static_cast<std::uint64_t>(tag)}));
      record(c.name, grad_check(c.fn, c.inputs, {.eps = kGradEps, .tol = kGradTol}));
    }
  }
  for (auto kind : ub::testing::all_loss_kinds()) {
    for (std::uint64_t seed = 0; seed < kGradInstances; ++seed) {
      auto lc = ub::testing::make_loss_case(kind, seed);
      record(lc.name, grad_check(lc.fn, lc.inputs, {.eps = kGradEps, .tol = kGradTol}));
    }
  }
  const double took = seconds_since(t0);
  char buf[256];
  std::snprintf(buf, sizeof buf, "%zu instances, %zu failed, worst rel err %.2e, %.1fs (budget %.0fs)", checked,
                failed, worst, took, kGradBudgetSeconds);
  std::string detail = buf;
  if (failed) detail += "; worst at " + worst_case;
  return {failed == 0 && took < kGradBudgetSeconds, detail};
}

Outcome scheduler() {
  std::vector<std::string> problems;
  std::size_t bad_rosters = 0;
  for (std::uint64_t seed = 0; seed < kRosters; ++seed) {
    auto p = ub::testing::check_roster(seed);
    if (!p.empty()) {
      ++bad_rosters;
      problems.push_back("roster " + std::to_string(seed) + ": " + p.front());
    }
  }
  return {bad_rosters == 0,
          std::to_string(kRosters) + " rosters, " + std::to_string(bad_rosters) + " violating" + first_of(problems)};
}

Outcome metrics() {
  auto oracle = ub::testing::check_metric_oracle(kMetricCases);
  auto means = ub::testing::check_reference_means();
  oracle.insert(oracle.end(), means.begin(), means.end());
  return {oracle.empty(), std::to_string(kMetricCases) +
                              " random 8x8 cases plus reference means 56.6, 58.8, 32.9, 33.4, 45.3; " +
                              std::to_string(oracle.size()) + " mismatches" + first_of(oracle)};
}

Outcome splits() {
  auto problems = ub::testing::check_fold_partitions();
  auto oracle = ub::testing::check_token_split_oracle(kSplitCorpora);
  problems.insert(problems.end(), oracle.begin(), oracle.end());
  std::string detail = "fold partitions and " + std::to_string(kSplitCorpora) + " token-split corpora; " +
                       std::to_string(problems.size()) + " problems" + first_of(problems);
  const char* q = std::getenv("UB_VQA_QUESTIONS");
  const char* a = std::getenv("UB_VQA_ANNOTATIONS");
  if (q && a) {
    const auto recs = load_vqa_v2(q, a);
    const auto s = vqa_token_split(recs, VqaSplitSpec::standard(AnswerType::kNumber));
    detail += "; VQA v2 number split base " + std::to_string(s.base.size()) + " novel " +
              std::to_string(s.novel.size()) + " (want 46243 / 11363)";
    if (s.base.size() != 46243 || s.novel.size() != 11363) problems.push_back("VQA v2 counts");
  } else {
    detail += "; VQA v2 count check skipped (set UB_VQA_QUESTIONS and UB_VQA_ANNOTATIONS)";
  }
  return {problems.empty(), detail};
}

Outcome neck() {
  auto purity = ub::testing::check_route_purity();
  auto causal = ub::testing::check_generative_causality();
  auto scale = ub::testing::check_seg_scale_invariance(kScaleTrials);
  std::vector<std::string> all = purity;
  all.insert(all.end(), causal.begin(), causal.end());
  all.insert(all.end(), scale.begin(), scale.end());
  return {all.empty(), std::to_string(purity.size()) + " purity, " + std::to_string(causal.size()) +
                           " causality (n<=6), " + std::to_string(scale.size()) + " rescaling (" +
                           std::to_string(kScaleTrials) + " trials) failures" + first_of(all)};
}

ExperimentConfig stream_config(const std::string& file) {
  return load_config((fs::path(UB_CONFIG_DIR) / file).string());
}

Outcome directional() {
  const auto t0 = std::chrono::steady_clock::now();
  const auto a = stream_config("pair-contrastive.ini");
  const auto b = stream_config("masked-unimodal.ini");
  check_comparable({a, b});
  const std::size_t base_classes = default_shape_classes().size() - default_shape_classes().size() / a.data.folds;
  if (base_classes != 6 || default_shape_classes().size() != 8) return {false, "stream configs are not 6 base + 2 novel"};
  std::size_t wins = 0;
  double sum_a = 0.0, sum_b = 0.0;
  std::string per_seed;
  for (std::uint64_t seed = 0; seed < kDirectionalSeeds; ++seed) {
    const double ma = run_pipeline(a, seed).mean_miou();
    const double mb = run_pipeline(b, seed).mean_miou();
    wins += mb > ma;
    sum_a += ma;
    sum_b += mb;
    char buf[96];
    std::snprintf(buf, sizeof buf, "%sseed %llu A %.3f B %.3f", seed ? ", " : "", static_cast<unsigned long long>(seed),
                  ma, mb);
    per_seed += buf;
    std::fprintf(stderr, "  directional %s\n", buf);
  }
  const double diff = (sum_b - sum_a) / static_cast<double>(kDirectionalSeeds);
  const double took = seconds_since(t0);
  char buf[160];
  std::snprintf(buf, sizeof buf, "B > A in %zu/%zu seeds (need %zu), mean(B)-mean(A) = %+.4f, %.0fs (budget %.0fs); ",
                wins, kDirectionalSeeds, kDirectionalMinWins, diff, took, kDirectionalBudgetSeconds);
  return {wins >= kDirectionalMinWins && diff > 0.0 && took <= kDirectionalBudgetSeconds, buf + per_seed};
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

Outcome determinism() {
  auto a = stream_config("pair-contrastive.ini");
  auto b = stream_config("masked-unimodal.ini");
  // same code path as the full comparison at a fraction of the steps
  for (auto* c : {&a, &b}) {
    c->pretrain.steps = 20;
    c->finetune.steps = 20;
    c->data.unimodal_samples = 256;
    c->data.finetune_samples = 64;
    c->data.eval_samples = 16;
  }
  const fs::path root = fs::temp_directory_path() / "ub-acceptance-determinism";
  fs::remove_all(root);
  cmd_compare({a, b}, {0, 1}, root / "first");
  cmd_compare({a, b}, {0, 1}, root / "second");
  const std::string x = slurp(root / "first" / "report.csv");
  const std::string y = slurp(root / "second" / "report.csv");
  const bool same = !x.empty() && x == y;
  fs::remove_all(root);
  return {same, "two compare runs, 2 streams x 2 seeds x 4 folds: CSV " + std::to_string(x.size()) + " bytes, " +
                    (same ? "byte-identical" : "differs")};
}

}  // namespace

int main(int argc, char** argv) {
  bool skip_directional = false;
  for (int i = 1; i < argc; ++i) skip_directional |= std::strcmp(argv[i], "--skip-directional") == 0;

  struct Criterion {
    const char* name;
    std::function<Outcome()> run;
  };
  const std::vector<Criterion> criteria = {
      {"gradient suite", gradients},
      {"scheduler suite", scheduler},
      {"metric oracle suite", metrics},
      {"split suite", splits},
      {"neck suite", neck},
      {"directional zero-shot experiment", directional},
      {"end-to-end determinism", determinism},
  };
  int failed = 0;
  for (const auto& c : criteria) {
    if (skip_directional && c.run.target<Outcome (*)()>() && *c.run.target<Outcome (*)()>() == directional) {
      std::printf("SKIP %s\n", c.name);
      continue;
    }
    Outcome o;
    try {
      o = c.run();
    } catch (const std::exception& e) {
      o = {false, std::string("threw: ") + e.what()};
    }
    failed += !o.pass;
    std::printf("%s %s: %s\n", o.pass ? "PASS" : "FAIL", c.name, o.detail.c_str());
    std::fflush(stdout);
  }
  return failed;
}
