// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "ub/encoder.hpp"
#include "ub/rng.hpp"
#include "ub/scheduler.hpp"
#include "ub/splits.hpp"

namespace ub {

inline constexpr std::uint8_t kIgnoreLabel = 255;

struct ShapeClass {
  std::string name;
  bool square = false;
  bool hollow = false;
  bool small = false;
};

struct ColorSpec {
  std::string name;
  double r = 0.0, g = 0.0, b = 0.0;
};

// disc box ring tile dot frame loop block: every consecutive pair differs in
// all three attributes, so each two-class fold block is attribute-balanced.
std::vector<ShapeClass> default_shape_classes();
std::vector<ColorSpec> default_colors();

struct ShapeWorldConfig {
  std::size_t image_side = 16;
  std::size_t grid = 2;  // grid x grid cells, one shape per cell at most
  std::size_t shapes_per_image = 2;
  std::vector<ShapeClass> classes = default_shape_classes();
  std::vector<ColorSpec> colors = default_colors();
  std::size_t unimodal_samples = 2048;
  double paired_fraction = 0.25;
  double gloss_fraction = 0.25;  // share of text-only lines that describe a class
  std::vector<std::size_t> novel;
  std::uint64_t seed = 0;

  void validate() const;
  std::size_t cell_side() const { return image_side / grid; }
  std::size_t paired_samples() const;
  std::vector<std::size_t> base() const;
};

// Pixel area of a rendered shape in exact geometry, for a cell of the given side.
double analytic_area(const ShapeClass& shape, std::size_t cell_side);

struct ShapeSample {
  std::string id;
  Image image;                      // empty for text-only samples
  std::vector<std::uint8_t> mask;   // side*side, 0 background, class+1 foreground
  std::string caption;
  std::string question;
  std::string answer;

  bool operator==(const ShapeSample&) const = default;
};

// Labels present in a mask, ignore label excluded, sorted.
std::vector<std::uint8_t> present_labels(const std::vector<std::uint8_t>& mask);

struct CorpusTriple {
  std::vector<ShapeSample> image_only;
  std::vector<ShapeSample> text_only;
  std::vector<ShapeSample> paired;
};

CorpusTriple gen_shapeworld(const ShapeWorldConfig& config);

// n rendered samples drawing classes from `pool`, ids "<prefix>-<i>". Each
// stream tag gives an independent deterministic sequence.
std::vector<ShapeSample> gen_samples(const ShapeWorldConfig& config, const std::vector<std::size_t>& pool,
                                     std::size_t n, const std::string& prefix, std::uint64_t stream);

std::string gloss_sentence(const ShapeClass& shape);

// Every word the generator can emit, in first-use order, plus "background".
std::vector<std::string> shapeworld_words(const ShapeWorldConfig& config);

AnswerType qa_answer_type(const std::string& question);

// Nearest-neighbour rescale then crop (or pad with background) back to size.
// Text fields are kept.
ShapeSample augment_sample(const ShapeSample& sample, const Augmentation& aug);

// Mentions of novel classes by name in text fields or by label in the mask.
std::vector<std::string> leakage_report(const std::vector<ShapeSample>& samples, const ShapeWorldConfig& config);

using TaskSamples = std::map<std::string, std::vector<ShapeSample>>;

std::set<std::string> default_task_ids();

// Writes UBTN payloads under dir/<task>/ and dir/manifest.tsv. Returns the
// manifest path.
std::filesystem::path write_corpus(const std::filesystem::path& dir, const TaskSamples& tasks);

// Manifest fields: task-id, sample-id, image-path, mask-path, caption,
// question, answer. Paths are relative to the manifest's directory.
TaskSamples ingest(const std::filesystem::path& manifest, std::size_t image_side, std::size_t channels = 3,
                   const std::set<std::string>& known_tasks = default_task_ids());

}  // namespace ub
