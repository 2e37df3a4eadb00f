// SPDX-License-Identifier: Apache-2.0
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <boost/math/distributions/chi_squared.hpp>
#include <algorithm>
#include <map>
#include <set>
#include <sstream>

#include "support/roster_checks.hpp"
#include "ub/error.hpp"
#include "ub/scheduler.hpp"

using namespace ub;

namespace {

std::vector<std::string> ids(std::size_t n, const std::string& prefix = "s") {
  std::vector<std::string> out;
  for (std::size_t i = 0; i < n; ++i) out.push_back(prefix + std::to_string(i));
  return out;
}

}  // namespace

TEST_CASE("ten samples in batches of four") {
  auto d = TaskDataset::from_ids("seg", RouteKind::kLanguageGuidedVision, ids(10), 4, 3);
  for (std::size_t round = 1; round <= 20; ++round) {
    auto batches = build_batches(d, round);
    REQUIRE(batches.size() == 3);
    std::set<std::string> first_two;
    for (int i = 0; i < 2; ++i)
      for (auto& s : batches[i].sample_ids) first_two.insert(s);
    CHECK(first_two.size() == 8);
    const auto& last = batches[2].sample_ids;
    REQUIRE(last.size() == 4);
    // the two leftovers are exactly the samples not in the first two batches
    std::set<std::string> leftovers;
    for (auto& s : ids(10))
      if (!first_two.count(s)) leftovers.insert(s);
    CHECK(leftovers.count(last[0]));
    CHECK(leftovers.count(last[1]));
    CHECK(first_two.count(last[2]));
    CHECK(first_two.count(last[3]));
    CHECK(last[2] != last[3]);
  }
}

TEST_CASE("eight samples in batches of four need no resampling") {
  auto d = TaskDataset::from_ids("cap", RouteKind::kImageToTextGen, ids(8), 4, 1);
  auto batches = build_batches(d, 1);
  REQUIRE(batches.size() == 2);
  std::map<std::string, int> count;
  for (auto& b : batches)
    for (auto& s : b.sample_ids) ++count[s];
  CHECK(count.size() == 8);
  for (auto& [id, c] : count) CHECK(c == 1);
}

TEST_CASE("every sample appears once or twice per round") {
  Rng rng(17);
  for (int trial = 0; trial < 500; ++trial) {
    const std::size_t n = 1 + rng.index(40), b = 1 + rng.index(n);
    auto d = TaskDataset::from_ids("t", RouteKind::kImageOnly, ids(n), b, trial);
    std::map<std::string, int> count;
    for (auto& batch : build_batches(d, 1))
      for (auto& s : batch.sample_ids) ++count[s];
    CHECK(count.size() == n);
    for (auto& [id, c] : count) {
      CHECK(c >= 1);
      CHECK(c <= 2);
    }
  }
}

TEST_CASE("oversized batch is rejected") {
  auto d = TaskDataset::from_ids("t", RouteKind::kImageOnly, ids(3), 4, 1);
  CHECK_THROWS_AS(build_batches(d, 1), DataError);
  auto dup = TaskDataset::from_ids("t", RouteKind::kImageOnly, {"a", "a"}, 1, 1);
  CHECK_THROWS_AS(dup.validate(), DataError);
}

TEST_CASE("round queue mixes tasks without splitting batches") {
  auto a = TaskDataset::from_ids("A", RouteKind::kImageOnly, ids(8, "a"), 4, 1);
  auto b = TaskDataset::from_ids("B", RouteKind::kTextOnly, ids(9, "b"), 3, 2);
  auto q = build_round({a, b}, 5, 1);
  REQUIRE(q.batches.size() == 5);
  std::map<std::string, int> tasks;
  for (auto& batch : q.batches) {
    ++tasks[batch.task_id];
    for (auto& s : batch.sample_ids) CHECK(s[0] == (batch.task_id == "A" ? 'a' : 'b'));
  }
  CHECK(tasks["A"] == 2);
  CHECK(tasks["B"] == 3);

  auto single = build_round({a}, 9, 1);
  auto plain = build_batches(a, 1);
  REQUIRE(single.batches.size() == plain.size());
  std::multiset<std::vector<std::string>> x, y;
  for (auto& batch : single.batches) x.insert(batch.sample_ids);
  for (auto& batch : plain) y.insert(batch.sample_ids);
  CHECK(x == y);
}

TEST_CASE("round permutation is uniform over five positions") {
  std::vector<TaskBatch> five;
  for (std::size_t i = 0; i < 5; ++i) five.push_back({"t", RouteKind::kImageOnly, {i}, {std::to_string(i)}});
  std::map<std::string, double> freq;
  const int draws = 10000;
  for (int s = 0; s < draws; ++s) {
    auto q = build_round({five}, static_cast<std::uint64_t>(s), 1);
    std::string key;
    for (auto& b : q.batches) key += b.sample_ids[0];
    freq[key] += 1.0;
  }
  CHECK(freq.size() == 120);
  const double expect = draws / 120.0;
  double chi2 = 0.0;
  for (auto& [k, v] : freq) chi2 += (v - expect) * (v - expect) / expect;
  chi2 += (120.0 - static_cast<double>(freq.size())) * expect;
  boost::math::chi_squared dist(119);
  const double p = 1.0 - boost::math::cdf(dist, chi2);
  INFO("chi2 = " << chi2 << ", p = " << p);
  CHECK(p > 0.001);
}

TEST_CASE("stream rebuilds on empty and counts rounds") {
  auto a = TaskDataset::from_ids("A", RouteKind::kImageOnly, ids(8, "a"), 4, 1);
  auto b = TaskDataset::from_ids("B", RouteKind::kTextOnly, ids(9, "b"), 3, 2);
  MultitaskStream stream({a, b}, 11);
  CHECK(stream.round_length() == 5);
  for (int i = 0; i < 5; ++i) CHECK(stream.next_batch().round == 1);
  CHECK(stream.remaining() == 0);
  auto next = stream.next_batch();
  CHECK(next.round == 2);
  CHECK(next.position == 0);
  CHECK(stream.remaining() == 4);

  MultitaskStream again({a, b}, 11);
  for (int i = 0; i < 10; ++i) again.next_batch();
  CHECK(again.round() == 2);
  CHECK(again.remaining() == 0);
}

TEST_CASE("round two differs from round one") {
  int differs = 0;
  const int seeds = 200;
  for (int s = 0; s < seeds; ++s) {
    auto a = TaskDataset::from_ids("A", RouteKind::kImageOnly, ids(20, "a"), 4, s);
    auto b = TaskDataset::from_ids("B", RouteKind::kTextOnly, ids(15, "b"), 5, s + 1000);
    MultitaskStream stream({a, b}, s);
    std::vector<std::vector<std::string>> r1, r2;
    for (int i = 0; i < 8; ++i) r1.push_back(stream.next_batch().batch.sample_ids);
    for (int i = 0; i < 8; ++i) r2.push_back(stream.next_batch().batch.sample_ids);
    differs += r1 != r2;
  }
  CHECK(differs >= seeds * 99 / 100);
}

TEST_CASE("rebalance by augmented copies") {
  auto d = TaskDataset::from_ids("small", RouteKind::kLanguageGuidedVision, ids(100), 8, 4);
  RebalancePolicy policy;
  auto r = rebalance(d, policy);
  CHECK(r.size() == 700);
  for (std::size_t i = 0; i < 100; ++i) {
    CHECK(r.samples[i].id == d.samples[i].id);
    CHECK_FALSE(r.samples[i].augmentation.has_value());
  }
  std::set<std::uint64_t> seeds;
  std::set<std::string> unique;
  for (auto& s : r.samples) unique.insert(s.id);
  CHECK(unique.size() == 700);
  for (std::size_t i = 100; i < 700; ++i) {
    REQUIRE(r.samples[i].augmentation.has_value());
    seeds.insert(r.samples[i].augmentation->seed);
    CHECK(r.samples[i].source == d.samples[i % 100].id);
  }
  CHECK(seeds.size() == 600);

  auto big = TaskDataset::from_ids("big", RouteKind::kImageOnly, ids(700), 8, 4);
  auto same = rebalance(big, policy);
  CHECK(same.size() == 700);

  policy.threshold = 1100;
  auto many = rebalance(TaskDataset::from_ids("x", RouteKind::kImageOnly, ids(1), 1, 9), policy);
  REQUIRE(many.size() == 1100);
  for (std::size_t i = 1; i < many.size(); ++i) {
    CHECK(many.samples[i].augmentation->scale >= 0.8);
    CHECK(many.samples[i].augmentation->scale <= 1.2);
  }
  policy.scale_low = 1.3;
  CHECK_THROWS_AS(rebalance(d, policy), ConfigError);
}

TEST_CASE("trace round trip and audit") {
  auto a = TaskDataset::from_ids("A", RouteKind::kImageOnly, ids(10, "a"), 4, 1);
  auto b = TaskDataset::from_ids("B", RouteKind::kTextOnly, ids(6, "b"), 2, 2);
  MultitaskStream stream({a, b}, 3);
  std::ostringstream out;
  std::vector<EmittedBatch> emitted;
  for (int i = 0; i < 15; ++i) {
    emitted.push_back(stream.next_batch());
    write_trace_line(out, emitted.back());
  }
  std::istringstream in(out.str());
  auto trace = parse_trace(in);
  REQUIRE(trace.size() == 15);
  CHECK(trace[7].round == emitted[7].round);
  CHECK(trace[7].sample_ids == emitted[7].batch.sample_ids);
  CHECK(audit_trace(trace, {a, b}).empty());

  auto broken = trace;
  broken[1].task_id = broken[1].task_id == "A" ? "B" : "A";
  CHECK_FALSE(audit_trace(broken, {a, b}).empty());
  auto short_round = trace;
  short_round.erase(short_round.begin() + 2);
  CHECK_FALSE(audit_trace(short_round, {a, b}).empty());
}

TEST_CASE("randomized rosters keep every scheduler law") {
  for (std::uint64_t seed = 0; seed < 200; ++seed) {
    auto bad = ub::testing::check_roster(seed);
    INFO("roster " << seed << ": " << (bad.empty() ? "" : bad.front()));
    CHECK(bad.empty());
  }
}
