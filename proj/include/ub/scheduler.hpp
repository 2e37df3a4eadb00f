// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <cstdint>
#include <deque>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "ub/neck.hpp"

namespace ub {

struct Augmentation {
  std::uint64_t seed = 0;
  double scale = 1.0;
  // Crop offset as a fraction of the slack left after resizing, per axis.
  double crop_x = 0.0;
  double crop_y = 0.0;
  bool crop = true;
};

struct SampleEntry {
  std::string id;
  std::string source;  // original id; equals id for originals
  std::optional<Augmentation> augmentation;
};

struct TaskDataset {
  std::string task_id;
  RouteKind route = RouteKind::kImageOnly;
  std::vector<SampleEntry> samples;
  std::size_t batch_size = 8;
  std::uint64_t seed = 0;

  static TaskDataset from_ids(std::string task_id, RouteKind route, const std::vector<std::string>& ids,
                              std::size_t batch_size, std::uint64_t seed);
  std::size_t size() const { return samples.size(); }
  // Throws DataError on an empty dataset, zero batch size or duplicate ids.
  void validate() const;
};

struct TaskBatch {
  std::string task_id;
  RouteKind route = RouteKind::kImageOnly;
  std::vector<std::size_t> indices;  // into TaskDataset::samples
  std::vector<std::string> sample_ids;
};

std::size_t batches_per_round(const TaskDataset& dataset);

// Seeded shuffle chunked into full batches; a short final chunk is topped up
// by drawing without replacement from the samples not already in it.
std::vector<TaskBatch> build_batches(const TaskDataset& dataset, std::size_t round);

struct DataQueue {
  std::deque<TaskBatch> batches;
  std::size_t round = 0;
};

// Seeded uniform permutation of the concatenated per-task batch lists.
DataQueue build_round(std::vector<std::vector<TaskBatch>> per_task, std::uint64_t seed, std::size_t round);
DataQueue build_round(const std::vector<TaskDataset>& datasets, std::uint64_t seed, std::size_t round);

struct EmittedBatch {
  std::size_t round = 0;
  std::size_t position = 0;
  TaskBatch batch;
};

// Endless batch stream; a fresh round is built whenever the queue drains.
class MultitaskStream {
 public:
  MultitaskStream(std::vector<TaskDataset> datasets, std::uint64_t seed);

  EmittedBatch next_batch();
  std::size_t round() const { return queue_.round; }
  std::size_t remaining() const { return queue_.batches.size(); }
  std::size_t round_length() const;
  const std::vector<TaskDataset>& datasets() const { return datasets_; }
  const TaskDataset& dataset(const std::string& task_id) const;

 private:
  std::vector<TaskDataset> datasets_;
  std::uint64_t seed_;
  DataQueue queue_;
  std::size_t position_ = 0;
};

struct RebalancePolicy {
  std::size_t threshold = 640;
  double scale_low = 0.8;
  double scale_high = 1.2;
  bool crop = true;

  void validate() const;
};

// Appends augmented copies until the dataset holds at least `threshold`
// samples: every original gets ceil(threshold / n) - 1 copies.
TaskDataset rebalance(const TaskDataset& dataset, const RebalancePolicy& policy);

// One line per batch: round, position, task id, comma-joined sample ids.
void write_trace_line(std::ostream& out, const EmittedBatch& b);
struct TraceLine {
  std::size_t round = 0;
  std::size_t position = 0;
  std::string task_id;
  std::vector<std::string> sample_ids;
};
std::vector<TraceLine> parse_trace(std::istream& in);

// Replays a trace against the datasets it came from and returns every
// violated scheduler invariant (empty when clean). Only complete rounds are
// checked for coverage and length.
std::vector<std::string> audit_trace(const std::vector<TraceLine>& trace, const std::vector<TaskDataset>& datasets);

}  // namespace ub
