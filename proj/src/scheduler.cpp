// SPDX-License-Identifier: Apache-2.0
#include "ub/scheduler.hpp"

#include <algorithm>
#include <istream>
#include <map>
#include <ostream>
#include <set>
#include <sstream>
#include <unordered_set>

#include "ub/error.hpp"
#include "ub/rng.hpp"

namespace ub {

TaskDataset TaskDataset::from_ids(std::string task_id, RouteKind route, const std::vector<std::string>& ids,
                                  std::size_t batch_size, std::uint64_t seed) {
  TaskDataset d{std::move(task_id), route, {}, batch_size, seed};
  for (const auto& id : ids) d.samples.push_back({id, id, std::nullopt});
  return d;
}

void TaskDataset::validate() const {
  if (samples.empty()) throw DataError("task '" + task_id + "' has no samples");
  if (batch_size == 0) throw DataError("task '" + task_id + "' has batch size 0");
  std::unordered_set<std::string> seen;
  for (const auto& s : samples) {
    if (!seen.insert(s.id).second) throw DataError("task '" + task_id + "' repeats sample id '" + s.id + "'");
  }
}

std::size_t batches_per_round(const TaskDataset& d) { return (d.size() + d.batch_size - 1) / d.batch_size; }

std::vector<TaskBatch> build_batches(const TaskDataset& dataset, std::size_t round) {
  dataset.validate();
  const std::size_t n = dataset.size(), b = dataset.batch_size;
  if (b > n) {
    throw DataError("task '" + dataset.task_id + "': batch size " + std::to_string(b) + " exceeds its " +
                    std::to_string(n) + " samples");
  }
  Rng rng(derive_seed(dataset.seed, {round}));
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  rng.shuffle(order);

  std::vector<TaskBatch> out;
  for (std::size_t start = 0; start < n; start += b) {
    TaskBatch batch{dataset.task_id, dataset.route, {}, {}};
    const std::size_t end = std::min(n, start + b);
    batch.indices.assign(order.begin() + static_cast<std::ptrdiff_t>(start),
                         order.begin() + static_cast<std::ptrdiff_t>(end));
    if (batch.indices.size() < b) {
      // fill from the shuffled prefix, which excludes the leftovers
      for (std::size_t pick : rng.sample_without_replacement(start, b - batch.indices.size())) {
        batch.indices.push_back(order[pick]);
      }
    }
    for (std::size_t i : batch.indices) batch.sample_ids.push_back(dataset.samples[i].id);
    out.push_back(std::move(batch));
  }
  return out;
}

DataQueue build_round(std::vector<std::vector<TaskBatch>> per_task, std::uint64_t seed, std::size_t round) {
  std::vector<TaskBatch> all;
  for (auto& list : per_task)
    for (auto& b : list) all.push_back(std::move(b));
  Rng rng(derive_seed(seed, {0x5c4ed, round}));
  rng.shuffle(all);
  DataQueue q;
  q.round = round;
  for (auto& b : all) q.batches.push_back(std::move(b));
  return q;
}

DataQueue build_round(const std::vector<TaskDataset>& datasets, std::uint64_t seed, std::size_t round) {
  if (datasets.empty()) throw DataError("no task datasets");
  std::vector<std::vector<TaskBatch>> per_task;
  for (const auto& d : datasets) per_task.push_back(build_batches(d, round));
  return build_round(std::move(per_task), seed, round);
}

MultitaskStream::MultitaskStream(std::vector<TaskDataset> datasets, std::uint64_t seed)
    : datasets_(std::move(datasets)), seed_(seed) {
  std::set<std::string> ids;
  for (const auto& d : datasets_) {
    if (!ids.insert(d.task_id).second) throw DataError("duplicate task id '" + d.task_id + "'");
  }
  queue_ = build_round(datasets_, seed_, 1);
}

EmittedBatch MultitaskStream::next_batch() {
  if (queue_.batches.empty()) {
    queue_ = build_round(datasets_, seed_, queue_.round + 1);
    position_ = 0;
  }
  EmittedBatch out{queue_.round, position_++, std::move(queue_.batches.front())};
  queue_.batches.pop_front();
  return out;
}

std::size_t MultitaskStream::round_length() const {
  std::size_t n = 0;
  for (const auto& d : datasets_) n += batches_per_round(d);
  return n;
}

const TaskDataset& MultitaskStream::dataset(const std::string& task_id) const {
  for (const auto& d : datasets_)
    if (d.task_id == task_id) return d;
  throw DataError("unknown task id '" + task_id + "'");
}

void RebalancePolicy::validate() const {
  if (threshold < 1) throw ConfigError("rebalance threshold must be at least 1");
  if (!(scale_low < scale_high)) throw ConfigError("rebalance scale range must have low < high");
}

TaskDataset rebalance(const TaskDataset& dataset, const RebalancePolicy& policy) {
  policy.validate();
  dataset.validate();
  const std::size_t n = dataset.size();
  if (n >= policy.threshold) return dataset;
  const std::size_t copies = (policy.threshold + n - 1) / n;
  TaskDataset out = dataset;
  for (std::size_t c = 1; c < copies; ++c) {
    for (std::size_t i = 0; i < n; ++i) {
      const auto& orig = dataset.samples[i];
      Augmentation aug;
      aug.seed = derive_seed(dataset.seed, {hash_string(orig.id), c});
      Rng rng(aug.seed);
      aug.scale = rng.uniform(policy.scale_low, policy.scale_high);
      aug.crop = policy.crop;
      if (policy.crop) {
        aug.crop_x = rng.uniform();
        aug.crop_y = rng.uniform();
      }
      out.samples.push_back({orig.id + "~aug" + std::to_string(c), orig.source, aug});
    }
  }
  return out;
}

void write_trace_line(std::ostream& out, const EmittedBatch& b) {
  out << b.round << '\t' << b.position << '\t' << b.batch.task_id << '\t';
  for (std::size_t i = 0; i < b.batch.sample_ids.size(); ++i) out << (i ? "," : "") << b.batch.sample_ids[i];
  out << '\n';
}

std::vector<TraceLine> parse_trace(std::istream& in) {
  std::vector<TraceLine> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::vector<std::string> fields;
    std::stringstream ss(line);
    std::string f;
    while (std::getline(ss, f, '\t')) fields.push_back(f);
    if (fields.size() != 4) throw DataError("trace line " + std::to_string(lineno) + ": expected 4 fields");
    TraceLine t;
    try {
      t.round = std::stoul(fields[0]);
      t.position = std::stoul(fields[1]);
    } catch (const std::exception&) {
      throw DataError("trace line " + std::to_string(lineno) + ": bad round or position");
    }
    t.task_id = fields[2];
    std::stringstream ids(fields[3]);
    while (std::getline(ids, f, ',')) t.sample_ids.push_back(f);
    out.push_back(std::move(t));
  }
  return out;
}

std::vector<std::string> audit_trace(const std::vector<TraceLine>& trace, const std::vector<TaskDataset>& datasets) {
  std::vector<std::string> issues;
  std::map<std::string, const TaskDataset*> by_task;
  std::map<std::string, std::map<std::string, bool>> members;
  std::size_t expected_len = 0;
  for (const auto& d : datasets) {
    by_task[d.task_id] = &d;
    for (const auto& s : d.samples) members[d.task_id][s.id] = true;
    expected_len += batches_per_round(d);
  }
  std::map<std::size_t, std::vector<const TraceLine*>> rounds;
  for (const auto& t : trace) {
    const std::string where = "round " + std::to_string(t.round) + " position " + std::to_string(t.position);
    auto it = by_task.find(t.task_id);
    if (it == by_task.end()) {
      issues.push_back(where + ": unknown task '" + t.task_id + "'");
      continue;
    }
    if (t.sample_ids.size() != it->second->batch_size) {
      issues.push_back(where + ": batch holds " + std::to_string(t.sample_ids.size()) + " samples, expected " +
                       std::to_string(it->second->batch_size));
    }
    std::set<std::string> seen;
    for (const auto& id : t.sample_ids) {
      if (!members[t.task_id].count(id)) issues.push_back(where + ": sample '" + id + "' is not in task '" + t.task_id + "'");
      if (!seen.insert(id).second) issues.push_back(where + ": sample '" + id + "' repeated in one batch");
    }
    rounds[t.round].push_back(&t);
  }
  std::size_t prev = 0;
  for (const auto& [round, lines] : rounds) {
    if (round != prev + 1) issues.push_back("round " + std::to_string(round) + " does not follow round " + std::to_string(prev));
    prev = round;
    for (std::size_t i = 0; i < lines.size(); ++i) {
      if (lines[i]->position != i) {
        issues.push_back("round " + std::to_string(round) + ": position " + std::to_string(lines[i]->position) +
                         " out of order");
        break;
      }
    }
    const bool last = round == rounds.rbegin()->first;
    if (last && lines.size() < expected_len) continue;  // trace may stop mid-round
    if (lines.size() != expected_len) {
      issues.push_back("round " + std::to_string(round) + " has " + std::to_string(lines.size()) +
                       " batches, expected " + std::to_string(expected_len));
    }
    std::map<std::string, std::set<std::string>> covered;
    for (const auto* l : lines) covered[l->task_id].insert(l->sample_ids.begin(), l->sample_ids.end());
    for (const auto& d : datasets) {
      for (const auto& s : d.samples) {
        if (!covered[d.task_id].count(s.id)) {
          issues.push_back("round " + std::to_string(round) + " misses sample '" + s.id + "' of task '" + d.task_id + "'");
        }
      }
    }
  }
  return issues;
}

}  // namespace ub
