// SPDX-License-Identifier: Apache-2.0
#include "ub/shapeworld.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>
#include <sstream>

#include "ub/error.hpp"
#include "ub/tensor_io.hpp"
#include "ub/vocab.hpp"

namespace ub {

std::vector<ShapeClass> default_shape_classes() {
  return {
      {"disc", false, false, false}, {"box", true, true, true},    {"ring", false, true, false},
      {"tile", true, false, true},   {"dot", false, false, true},  {"frame", true, true, false},
      {"loop", false, true, true},   {"block", true, false, false},
  };
}

std::vector<ColorSpec> default_colors() {
  return {{"red", 1, 0, 0}, {"green", 0, 1, 0}, {"blue", 0, 0, 1},
          {"yellow", 1, 1, 0}, {"cyan", 0, 1, 1}, {"magenta", 1, 0, 1}};
}

namespace {

const std::vector<std::string> kCountWords = {"zero", "one", "two", "three", "four", "five",
                                              "six",  "seven", "eight", "nine"};

// Radii and ring thickness relative to the side of the region a shape fills.
constexpr double kLargeOuter = 0.475, kLargeInner = 0.25;
constexpr double kSmallOuter = 0.5, kSmallInner = 0.275;

struct Instance {
  std::size_t cls = 0;
  std::size_t color = 0;
  std::size_t cell = 0;
  std::size_t sub = 0;  // quadrant of the cell used by small shapes
};

std::string form_word(const ShapeClass& s) { return s.square ? "square" : "round"; }
std::string fill_word(const ShapeClass& s) { return s.hollow ? "hollow" : "solid"; }
std::string size_word(const ShapeClass& s) { return s.small ? "small" : "large"; }

bool inside(const ShapeClass& s, double region, double py, double px) {
  if (s.square) {
    if (!s.hollow) return true;
    const double t = region / 4.0;
    const double edge = std::min({py, px, region - py, region - px});
    return edge < t;
  }
  const double c = region / 2.0;
  const double d2 = (py - c) * (py - c) + (px - c) * (px - c);
  const double outer = region * (s.small ? kSmallOuter : kLargeOuter);
  const double inner = region * (s.small ? kSmallInner : kLargeInner);
  if (d2 > outer * outer) return false;
  return !s.hollow || d2 > inner * inner;
}

std::vector<Instance> layout(const ShapeWorldConfig& cfg, const std::vector<std::size_t>& pool, Rng& rng) {
  const std::size_t k = cfg.shapes_per_image;
  auto cells = rng.sample_without_replacement(cfg.grid * cfg.grid, k);
  auto colors = rng.sample_without_replacement(cfg.colors.size(), k);
  std::vector<std::size_t> classes;
  if (pool.size() >= k) {
    for (std::size_t i : rng.sample_without_replacement(pool.size(), k)) classes.push_back(pool[i]);
  } else {
    for (std::size_t i = 0; i < k; ++i) classes.push_back(pool[rng.index(pool.size())]);
  }
  std::vector<Instance> out;
  for (std::size_t i = 0; i < k; ++i) out.push_back({classes[i], colors[i], cells[i], rng.index(4)});
  return out;
}

void render(const ShapeWorldConfig& cfg, const std::vector<Instance>& shapes, ShapeSample& out) {
  const std::size_t side = cfg.image_side, cs = cfg.cell_side();
  out.image = Image{side, side, 3, std::vector<double>(side * side * 3, 0.0)};
  out.mask.assign(side * side, 0);
  for (const auto& inst : shapes) {
    const auto& shape = cfg.classes[inst.cls];
    std::size_t y0 = (inst.cell / cfg.grid) * cs, x0 = (inst.cell % cfg.grid) * cs, region = cs;
    if (shape.small) {
      region = cs / 2;
      y0 += (inst.sub / 2) * region;
      x0 += (inst.sub % 2) * region;
    }
    const auto& col = cfg.colors[inst.color];
    for (std::size_t y = 0; y < region; ++y) {
      for (std::size_t x = 0; x < region; ++x) {
        if (!inside(shape, static_cast<double>(region), y + 0.5, x + 0.5)) continue;
        const std::size_t yy = y0 + y, xx = x0 + x;
        out.image.at(yy, xx, 0) = col.r;
        out.image.at(yy, xx, 1) = col.g;
        out.image.at(yy, xx, 2) = col.b;
        out.mask[yy * side + xx] = static_cast<std::uint8_t>(inst.cls + 1);
      }
    }
  }
}

std::string relation(const ShapeWorldConfig& cfg, const Instance& a, const Instance& b) {
  const std::size_t ra = a.cell / cfg.grid, rb = b.cell / cfg.grid;
  if (ra < rb) return "above";
  if (ra > rb) return "below";
  return (a.cell % cfg.grid) < (b.cell % cfg.grid) ? "left-of" : "right-of";
}

std::string caption(const ShapeWorldConfig& cfg, const std::vector<Instance>& shapes) {
  const auto& a = shapes[0];
  std::string out = cfg.colors[a.color].name + " " + cfg.classes[a.cls].name;
  if (shapes.size() < 2) return out;
  const auto& b = shapes[1];
  return out + " " + relation(cfg, a, b) + " " + cfg.colors[b.color].name + " " + cfg.classes[b.cls].name;
}

void make_qa(const ShapeWorldConfig& cfg, const std::vector<Instance>& shapes, const std::vector<std::size_t>& pool,
             Rng& rng, ShapeSample& out) {
  const auto& pick = shapes[rng.index(shapes.size())];
  switch (rng.index(4)) {
    case 0:
      out.question = "what color is the " + cfg.classes[pick.cls].name;
      out.answer = cfg.colors[pick.color].name;
      return;
    case 1:
      out.question = "what is the " + cfg.colors[pick.color].name + " shape";
      out.answer = cfg.classes[pick.cls].name;
      return;
    case 2: {
      std::vector<std::size_t> absent;
      for (std::size_t c : pool) {
        if (std::none_of(shapes.begin(), shapes.end(), [&](const Instance& s) { return s.cls == c; })) {
          absent.push_back(c);
        }
      }
      const bool yes = absent.empty() || rng.index(2) == 0;
      const std::size_t cls = yes ? pick.cls : absent[rng.index(absent.size())];
      out.question = "is there a " + cfg.classes[cls].name;
      out.answer = yes ? "yes" : "no";
      return;
    }
    default: {
      const bool square = rng.index(2) == 1;
      std::size_t n = 0;
      for (const auto& s : shapes) n += cfg.classes[s.cls].square == square;
      out.question = std::string("how many ") + (square ? "square" : "round") + " shapes";
      out.answer = kCountWords[n];
      return;
    }
  }
}

ShapeSample make_sample(const ShapeWorldConfig& cfg, const std::vector<std::size_t>& pool, Rng& rng,
                        std::string id) {
  ShapeSample s;
  s.id = std::move(id);
  auto shapes = layout(cfg, pool, rng);
  render(cfg, shapes, s);
  s.caption = caption(cfg, shapes);
  make_qa(cfg, shapes, pool, rng, s);
  return s;
}

std::vector<std::size_t> all_classes(const ShapeWorldConfig& cfg) {
  std::vector<std::size_t> out(cfg.classes.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = i;
  return out;
}

std::string text_line(const ShapeWorldConfig& cfg, Rng& rng) {
  if (rng.uniform() < cfg.gloss_fraction) {
    const auto& s = cfg.classes[rng.index(cfg.classes.size())];
    switch (rng.index(4)) {
      case 0: return gloss_sentence(s);
      case 1: return "a " + s.name + " is " + size_word(s);
      case 2: return "a " + s.name + " is " + fill_word(s);
      default: return "a " + s.name + " is " + form_word(s);
    }
  }
  return caption(cfg, layout(cfg, all_classes(cfg), rng));
}

}  // namespace

void ShapeWorldConfig::validate() const {
  if (grid == 0 || image_side == 0 || image_side % grid != 0) throw ConfigError("image side must split into grid cells");
  if (cell_side() < 4 || cell_side() % 2 != 0) throw ConfigError("grid cells must be an even size of at least 4 pixels");
  if (shapes_per_image == 0) throw ConfigError("shapes per image must be at least 1");
  if (shapes_per_image > grid * grid) {
    throw ConfigError(std::to_string(shapes_per_image) + " shapes do not fit in " + std::to_string(grid * grid) +
                      " grid cells");
  }
  if (shapes_per_image > colors.size()) throw ConfigError("fewer colors than shapes per image");
  if (shapes_per_image >= kCountWords.size()) throw ConfigError("too many shapes per image to count in words");
  if (classes.empty() || classes.size() >= kIgnoreLabel) throw ConfigError("need between 1 and 254 shape classes");
  std::set<std::string> names;
  for (const auto& c : classes)
    if (!names.insert(c.name).second) throw ConfigError("duplicate shape class '" + c.name + "'");
  std::set<std::size_t> seen;
  for (std::size_t n : novel) {
    if (n >= classes.size()) throw ConfigError("novel class " + std::to_string(n) + " out of range");
    if (!seen.insert(n).second) throw ConfigError("novel class " + std::to_string(n) + " listed twice");
  }
  if (!(paired_fraction >= 0.0 && paired_fraction <= 1.0)) throw ConfigError("paired fraction must be in [0, 1]");
  if (!(gloss_fraction >= 0.0 && gloss_fraction <= 1.0)) throw ConfigError("gloss fraction must be in [0, 1]");
  if (paired_samples() > 0 && base().empty()) throw ConfigError("paired corpus needs at least one base class");
}

std::size_t ShapeWorldConfig::paired_samples() const {
  return static_cast<std::size_t>(std::llround(paired_fraction * static_cast<double>(unimodal_samples)));
}

std::vector<std::size_t> ShapeWorldConfig::base() const {
  std::vector<std::size_t> out;
  for (std::size_t c = 0; c < classes.size(); ++c)
    if (std::find(novel.begin(), novel.end(), c) == novel.end()) out.push_back(c);
  return out;
}

double analytic_area(const ShapeClass& shape, std::size_t cell_side) {
  const double region = shape.small ? cell_side / 2.0 : static_cast<double>(cell_side);
  if (shape.square) {
    const double inner = region - 2.0 * (region / 4.0);
    return region * region - (shape.hollow ? inner * inner : 0.0);
  }
  const double outer = region * (shape.small ? kSmallOuter : kLargeOuter);
  const double inner = region * (shape.small ? kSmallInner : kLargeInner);
  return std::numbers::pi * (outer * outer - (shape.hollow ? inner * inner : 0.0));
}

std::vector<std::uint8_t> present_labels(const std::vector<std::uint8_t>& mask) {
  std::set<std::uint8_t> s(mask.begin(), mask.end());
  s.erase(kIgnoreLabel);
  return {s.begin(), s.end()};
}

std::vector<ShapeSample> gen_samples(const ShapeWorldConfig& config, const std::vector<std::size_t>& pool,
                                     std::size_t n, const std::string& prefix, std::uint64_t stream) {
  config.validate();
  if (pool.empty() && n > 0) throw ConfigError("no classes to draw '" + prefix + "' samples from");
  Rng rng(derive_seed(config.seed, {stream}));
  std::vector<ShapeSample> out;
  out.reserve(n);
  for (std::size_t i = 0; i < n; ++i) out.push_back(make_sample(config, pool, rng, prefix + "-" + std::to_string(i)));
  return out;
}

CorpusTriple gen_shapeworld(const ShapeWorldConfig& config) {
  config.validate();
  CorpusTriple out;
  out.image_only = gen_samples(config, all_classes(config), config.unimodal_samples, "img", 1);
  for (auto& s : out.image_only) s.caption = s.question = s.answer = "";
  Rng text_rng(derive_seed(config.seed, {2}));
  for (std::size_t i = 0; i < config.unimodal_samples; ++i) {
    ShapeSample s;
    s.id = "txt-" + std::to_string(i);
    s.caption = text_line(config, text_rng);
    out.text_only.push_back(std::move(s));
  }
  out.paired = gen_samples(config, config.base(), config.paired_samples(), "pair", 3);
  return out;
}

std::string gloss_sentence(const ShapeClass& s) {
  return "a " + s.name + " is a " + size_word(s) + " " + fill_word(s) + " " + form_word(s) + " shape";
}

std::vector<std::string> shapeworld_words(const ShapeWorldConfig& config) {
  std::vector<std::string> words = {"background"};
  auto add = [&](const std::string& w) {
    if (std::find(words.begin(), words.end(), w) == words.end()) words.push_back(w);
  };
  for (const auto& c : config.colors) add(c.name);
  for (const auto& c : config.classes) add(c.name);
  for (const char* w : {"above", "below", "left-of", "right-of", "a", "is", "shape", "small", "large", "hollow",
                        "solid", "round", "square", "what", "color", "the", "there", "yes", "no", "how", "many",
                        "shapes"}) {
    add(w);
  }
  for (std::size_t i = 0; i <= config.shapes_per_image; ++i) add(kCountWords[i]);
  return words;
}

AnswerType qa_answer_type(const std::string& question) {
  const auto words = split_whitespace(question);
  if (!words.empty() && words[0] == "how") return AnswerType::kNumber;
  if (!words.empty() && words[0] == "is") return AnswerType::kYesNo;
  return AnswerType::kOther;
}

ShapeSample augment_sample(const ShapeSample& sample, const Augmentation& aug) {
  if (!(aug.scale > 0.0)) throw ConfigError("augmentation scale must be positive");
  ShapeSample out = sample;
  if (sample.image.pixels.empty()) return out;
  const std::size_t h = sample.image.height, w = sample.image.width, ch = sample.image.channels;
  const auto resized = [&](std::size_t n) {
    return std::max<std::size_t>(1, static_cast<std::size_t>(std::llround(static_cast<double>(n) * aug.scale)));
  };
  const std::size_t rh = resized(h), rw = resized(w);
  // Signed offset of the output window inside the resized image.
  const auto offset = [&](std::size_t out_n, std::size_t res_n, double frac) -> long {
    const long slack = static_cast<long>(res_n) - static_cast<long>(out_n);
    const double f = aug.crop ? frac : 0.5;
    const long span = std::labs(slack) + 1;
    const long pick = std::min(span - 1, static_cast<long>(std::floor(f * static_cast<double>(span))));
    return slack >= 0 ? pick : -pick;
  };
  const long oy = offset(h, rh, aug.crop_y), ox = offset(w, rw, aug.crop_x);
  std::fill(out.image.pixels.begin(), out.image.pixels.end(), 0.0);
  std::fill(out.mask.begin(), out.mask.end(), 0);
  for (std::size_t y = 0; y < h; ++y) {
    const long ry = static_cast<long>(y) + oy;
    if (ry < 0 || ry >= static_cast<long>(rh)) continue;
    const std::size_t sy = std::min(h - 1, static_cast<std::size_t>(ry) * h / rh);
    for (std::size_t x = 0; x < w; ++x) {
      const long rx = static_cast<long>(x) + ox;
      if (rx < 0 || rx >= static_cast<long>(rw)) continue;
      const std::size_t sx = std::min(w - 1, static_cast<std::size_t>(rx) * w / rw);
      for (std::size_t c = 0; c < ch; ++c) out.image.at(y, x, c) = sample.image.at(sy, sx, c);
      if (!sample.mask.empty()) out.mask[y * w + x] = sample.mask[sy * w + sx];
    }
  }
  return out;
}

std::vector<std::string> leakage_report(const std::vector<ShapeSample>& samples, const ShapeWorldConfig& config) {
  std::vector<std::string> issues;
  for (const auto& s : samples) {
    for (const std::string* field : {&s.caption, &s.question, &s.answer}) {
      for (const auto& word : split_whitespace(*field)) {
        for (std::size_t n : config.novel) {
          if (word == config.classes[n].name) issues.push_back(s.id + ": text mentions novel class '" + word + "'");
        }
      }
    }
    for (std::uint8_t label : present_labels(s.mask)) {
      for (std::size_t n : config.novel) {
        if (label == n + 1) issues.push_back(s.id + ": mask labels novel class '" + config.classes[n].name + "'");
      }
    }
  }
  return issues;
}

std::set<std::string> default_task_ids() { return {"image-only", "text-only", "paired", "finetune", "eval"}; }

namespace {

void check_field(const std::string& value, const std::string& what) {
  if (value.find_first_of("\t\n\r") != std::string::npos) {
    throw DataError(what + " contains a tab or line break");
  }
}

std::vector<std::string> split_tabs(const std::string& line) {
  std::vector<std::string> out;
  std::size_t start = 0;
  for (;;) {
    const auto tab = line.find('\t', start);
    out.push_back(line.substr(start, tab == std::string::npos ? std::string::npos : tab - start));
    if (tab == std::string::npos) return out;
    start = tab + 1;
  }
}

}  // namespace

std::filesystem::path write_corpus(const std::filesystem::path& dir, const TaskSamples& tasks) {
  namespace fs = std::filesystem;
  fs::create_directories(dir);
  const fs::path manifest = dir / "manifest.tsv";
  std::ofstream out(manifest);
  if (!out) throw DataError("cannot write '" + manifest.string() + "'");
  for (const auto& [task, samples] : tasks) {
    check_field(task, "task id");
    for (const auto& s : samples) {
      check_field(s.id, "sample id");
      check_field(s.caption, s.id + " caption");
      check_field(s.question, s.id + " question");
      check_field(s.answer, s.id + " answer");
      std::string image_rel, mask_rel;
      if (!s.image.pixels.empty()) {
        fs::create_directories(dir / task);
        image_rel = task + "/" + s.id + ".img.ubtn";
        save_tensor(dir / image_rel, Tensor::constant({s.image.height, s.image.width, s.image.channels}, s.image.pixels));
      }
      if (!s.mask.empty()) {
        fs::create_directories(dir / task);
        mask_rel = task + "/" + s.id + ".mask.ubtn";
        const std::size_t h = s.image.height ? s.image.height : static_cast<std::size_t>(std::sqrt(s.mask.size()));
        save_tensor(dir / mask_rel,
                    Tensor::constant({h, s.mask.size() / h}, std::vector<double>(s.mask.begin(), s.mask.end())));
      }
      out << task << '\t' << s.id << '\t' << image_rel << '\t' << mask_rel << '\t' << s.caption << '\t' << s.question
          << '\t' << s.answer << '\n';
    }
  }
  if (!out) throw DataError("failed writing '" + manifest.string() + "'");
  return manifest;
}

TaskSamples ingest(const std::filesystem::path& manifest, std::size_t image_side, std::size_t channels,
                   const std::set<std::string>& known_tasks) {
  namespace fs = std::filesystem;
  std::ifstream in(manifest);
  if (!in) throw DataError("cannot open manifest '" + manifest.string() + "'");
  const fs::path root = manifest.parent_path();
  TaskSamples out;
  std::string line;
  std::size_t lineno = 0, records = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const std::string where = manifest.string() + " line " + std::to_string(lineno);
    auto f = split_tabs(line);
    if (f.size() != 7) {
      throw DataError(where + ": expected 7 tab-separated fields, found " + std::to_string(f.size()));
    }
    if (!known_tasks.count(f[0])) throw DataError(where + ": unknown task-id field '" + f[0] + "'");
    if (f[1].empty()) throw DataError(where + ": empty sample-id field");
    ShapeSample s;
    s.id = f[1];
    auto load = [&](const std::string& rel, const char* what) {
      const fs::path p = root / rel;
      if (!fs::exists(p)) throw DataError(where + ": missing " + what + " file '" + p.string() + "'");
      try {
        return load_tensor(p);
      } catch (const DataError& e) {
        throw DataError(where + ": " + e.what());
      }
    };
    if (!f[2].empty()) {
      auto t = load(f[2], "image");
      if (t.shape() != Shape{image_side, image_side, channels}) {
        throw DataError(where + ": image is not " + std::to_string(image_side) + "x" + std::to_string(image_side) +
                        "x" + std::to_string(channels));
      }
      s.image = Image{image_side, image_side, channels, {t.values().begin(), t.values().end()}};
    }
    if (!f[3].empty()) {
      auto t = load(f[3], "mask");
      if (t.shape() != Shape{image_side, image_side}) {
        throw DataError(where + ": mask is not " + std::to_string(image_side) + "x" + std::to_string(image_side));
      }
      for (double v : t.values()) {
        if (v < 0.0 || v > 255.0 || v != std::floor(v)) throw DataError(where + ": mask holds a non-label value");
        s.mask.push_back(static_cast<std::uint8_t>(v));
      }
    }
    s.caption = f[4];
    s.question = f[5];
    s.answer = f[6];
    out[f[0]].push_back(std::move(s));
    ++records;
  }
  if (records == 0) throw DataError("manifest '" + manifest.string() + "' has no records");
  return out;
}

}  // namespace ub
