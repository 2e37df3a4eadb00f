// SPDX-License-Identifier: Apache-2.0
#include "ub/config.hpp"

#include <charconv>
#include <fstream>
#include <functional>
#include <map>
#include <set>
#include <sstream>

#include "ub/error.hpp"

namespace ub {

std::string_view task_head_name(TaskHead head) {
  switch (head) {
    case TaskHead::kSegmentation: return "seg";
    case TaskHead::kCaption: return "caption";
    case TaskHead::kVqa: return "vqa";
  }
  return "?";
}

TaskHead parse_task_head(std::string_view text) {
  for (auto h : {TaskHead::kSegmentation, TaskHead::kCaption, TaskHead::kVqa})
    if (task_head_name(h) == text) return h;
  throw ConfigError("unknown task head '" + std::string(text) + "' (expected seg, caption or vqa)");
}

std::vector<TaskSpec> ExperimentConfig::default_tasks() {
  return {{"seg", RouteKind::kLanguageGuidedVision, TaskHead::kSegmentation, 8},
          {"caption", RouteKind::kImageToTextGen, TaskHead::kCaption, 8}};
}

void ExperimentConfig::validate() const {
  if (name.empty()) throw ConfigError("experiment name is empty");
  image_encoder.validate();
  text_encoder.validate();
  NeckConfig fitted = neck;
  fitted.image_width = image_encoder.width;
  fitted.text_width = text_encoder.width;
  fitted.validate();
  for (auto l : neck.image_layers) {
    if (l > image_encoder.layers) throw ConfigError("neck reads image layer " + std::to_string(l) + " of " +
                                                    std::to_string(image_encoder.layers));
  }
  if (data.image_side != image_encoder.image_side) throw ConfigError("data image_side differs from image_encoder");
  if (image_encoder.channels != 3) throw ConfigError("shape-world images have 3 channels");
  if (data.folds == 0) throw ConfigError("folds must be at least 1");
  if (data.finetune_samples == 0 || data.eval_samples == 0) throw ConfigError("finetune and eval sets need samples");
  if (pretrain.batch_size == 0) throw ConfigError("pretrain batch_size must be at least 1");
  if (finetune.encoder_lr_ratio < 0.0) throw ConfigError("encoder_lr_ratio must be non-negative");
  if (finetune.tasks.empty()) throw ConfigError("no finetune tasks");
  std::set<std::string> ids;
  for (const auto& t : finetune.tasks) {
    if (!ids.insert(t.id).second) throw ConfigError("task '" + t.id + "' defined twice");
    if (t.batch_size == 0) throw ConfigError("task '" + t.id + "' has batch size 0");
    const bool ok = t.head == TaskHead::kSegmentation ? t.route == RouteKind::kLanguageGuidedVision
                                                      : route_is_generative(t.route);
    if (!ok) {
      throw ConfigError("task '" + t.id + "': head " + std::string(task_head_name(t.head)) + " cannot use route " +
                        std::string(route_name(t.route)));
    }
  }
}

namespace {

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

std::size_t parse_size(const std::string& v) {
  std::size_t out = 0;
  auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc{} || p != v.data() + v.size()) throw ConfigError("expected a non-negative integer, got '" + v + "'");
  return out;
}

std::uint64_t parse_u64(const std::string& v) {
  std::uint64_t out = 0;
  auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc{} || p != v.data() + v.size()) throw ConfigError("expected a non-negative integer, got '" + v + "'");
  return out;
}

double parse_double(const std::string& v) {
  double out = 0.0;
  auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc{} || p != v.data() + v.size()) throw ConfigError("expected a number, got '" + v + "'");
  return out;
}

bool parse_bool(const std::string& v) {
  if (v == "true") return true;
  if (v == "false") return false;
  throw ConfigError("expected true or false, got '" + v + "'");
}

std::string format_double(double v) {
  char buf[64];
  auto [p, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, p);
}

std::vector<std::size_t> parse_list(const std::string& v) {
  std::vector<std::size_t> out;
  std::stringstream ss(v);
  std::string item;
  while (std::getline(ss, item, ',')) out.push_back(parse_size(trim(item)));
  if (out.empty()) throw ConfigError("expected a comma-separated list, got '" + v + "'");
  return out;
}

std::string format_list(const std::vector<std::size_t>& v) {
  std::string out;
  for (std::size_t i = 0; i < v.size(); ++i) out += (i ? "," : "") + std::to_string(v[i]);
  return out;
}

struct Binding {
  std::string section;
  std::string key;
  std::function<void(const std::string&)> set;
  std::function<std::string()> get;
  bool required = false;
};

void bind_size(std::vector<Binding>& b, const std::string& sec, const std::string& key, std::size_t& ref) {
  b.push_back({sec, key, [&ref](const std::string& v) { ref = parse_size(v); }, [&ref] { return std::to_string(ref); }});
}

void bind_double(std::vector<Binding>& b, const std::string& sec, const std::string& key, double& ref) {
  b.push_back({sec, key, [&ref](const std::string& v) { ref = parse_double(v); }, [&ref] { return format_double(ref); }});
}

void bind_bool(std::vector<Binding>& b, const std::string& sec, const std::string& key, bool& ref) {
  b.push_back({sec, key, [&ref](const std::string& v) { ref = parse_bool(v); },
               [&ref] { return std::string(ref ? "true" : "false"); }});
}

void bind_encoder(std::vector<Binding>& b, const std::string& sec, EncoderConfig& e) {
  bind_size(b, sec, "layers", e.layers);
  bind_size(b, sec, "width", e.width);
  bind_size(b, sec, "heads", e.heads);
  bind_size(b, sec, "max_tokens", e.max_tokens);
  bind_size(b, sec, "patch_size", e.patch_size);
  bind_size(b, sec, "channels", e.channels);
  bind_size(b, sec, "image_side", e.image_side);
  bind_size(b, sec, "vocab_size", e.vocab_size);
  bind_size(b, sec, "ffn_mult", e.ffn_mult);
}

std::vector<Binding> bind(ExperimentConfig& c) {
  std::vector<Binding> b;
  b.push_back({"experiment", "name", [&c](const std::string& v) { c.name = v; }, [&c] { return c.name; }, true});
  b.push_back({"experiment", "seed", [&c](const std::string& v) { c.seed = parse_u64(v); },
               [&c] { return std::to_string(c.seed); }});
  b.push_back({"experiment", "out", [&c](const std::string& v) { c.out = v; }, [&c] { return c.out; }});
  bind_encoder(b, "image_encoder", c.image_encoder);
  bind_encoder(b, "text_encoder", c.text_encoder);
  b.push_back({"neck", "image_layers", [&c](const std::string& v) { c.neck.image_layers = parse_list(v); },
               [&c] { return format_list(c.neck.image_layers); }});
  bind_size(b, "neck", "common_width", c.neck.common_width);
  bind_size(b, "neck", "fusion_layers", c.neck.fusion_layers);
  bind_size(b, "neck", "fusion_heads", c.neck.fusion_heads);
  bind_size(b, "neck", "ffn_mult", c.neck.ffn_mult);
  bind_size(b, "neck", "max_tokens", c.neck.max_tokens);
  bind_double(b, "neck", "seg_temperature", c.neck.seg_temperature);
  bind_size(b, "data", "image_side", c.data.image_side);
  bind_size(b, "data", "grid", c.data.grid);
  bind_size(b, "data", "shapes_per_image", c.data.shapes_per_image);
  bind_size(b, "data", "unimodal_samples", c.data.unimodal_samples);
  bind_double(b, "data", "paired_fraction", c.data.paired_fraction);
  bind_double(b, "data", "gloss_fraction", c.data.gloss_fraction);
  bind_size(b, "data", "finetune_samples", c.data.finetune_samples);
  bind_size(b, "data", "eval_samples", c.data.eval_samples);
  bind_size(b, "data", "folds", c.data.folds);
  bind_bool(b, "data", "finetune_includes_novel", c.data.finetune_includes_novel);
  b.push_back({"pretrain", "mode", [&c](const std::string& v) { c.pretrain.mode = parse_pretrain_mode(v); },
               [&c] { return std::string(pretrain_mode_name(c.pretrain.mode)); }, true});
  bind_size(b, "pretrain", "steps", c.pretrain.steps);
  bind_size(b, "pretrain", "batch_size", c.pretrain.batch_size);
  bind_double(b, "pretrain", "peak_lr", c.pretrain.peak_lr);
  bind_size(b, "pretrain", "warmup_steps", c.pretrain.warmup_steps);
  bind_double(b, "pretrain", "weight_decay", c.pretrain.weight_decay);
  bind_double(b, "pretrain", "mim_ratio", c.pretrain.mim_ratio);
  bind_double(b, "pretrain", "mlm_ratio", c.pretrain.mlm_ratio);
  bind_double(b, "pretrain", "temperature", c.pretrain.temperature);
  bind_size(b, "finetune", "steps", c.finetune.steps);
  bind_double(b, "finetune", "peak_lr", c.finetune.peak_lr);
  bind_size(b, "finetune", "warmup_steps", c.finetune.warmup_steps);
  bind_double(b, "finetune", "weight_decay", c.finetune.weight_decay);
  bind_double(b, "finetune", "encoder_lr_ratio", c.finetune.encoder_lr_ratio);
  bind_bool(b, "finetune", "freeze_encoders", c.finetune.freeze_encoders);
  bind_size(b, "finetune", "rebalance_threshold", c.finetune.rebalance_threshold);
  return b;
}

constexpr std::string_view kTaskPrefix = "task.";

}  // namespace

ExperimentConfig parse_config(std::string_view text) {
  ExperimentConfig c;
  auto bindings = bind(c);
  std::map<std::pair<std::string, std::string>, Binding*> index;
  for (auto& b : bindings) index[{b.section, b.key}] = &b;

  std::set<std::pair<std::string, std::string>> seen;
  std::map<std::string, std::set<std::string>> task_keys;
  std::string section;
  TaskSpec* task = nullptr;
  std::size_t lineno = 0;
  std::istringstream in{std::string(text)};
  std::string raw;
  while (std::getline(in, raw)) {
    ++lineno;
    const std::string where = "config line " + std::to_string(lineno) + ": ";
    std::string line = trim(raw);
    if (line.empty() || line[0] == '#' || line[0] == ';') continue;
    if (line.front() == '[') {
      if (line.back() != ']') throw ConfigError(where + "unterminated section header");
      section = trim(std::string_view(line).substr(1, line.size() - 2));
      task = nullptr;
      if (section.rfind(kTaskPrefix, 0) == 0) {
        const std::string id = section.substr(kTaskPrefix.size());
        if (id.empty()) throw ConfigError(where + "task section needs an id");
        for (auto& t : c.finetune.tasks)
          if (t.id == id) throw ConfigError(where + "task '" + id + "' defined twice");
        c.finetune.tasks.push_back({id, RouteKind::kLanguageGuidedVision, TaskHead::kSegmentation, 8});
        task = &c.finetune.tasks.back();
      } else {
        bool known = false;
        for (const auto& b : bindings) known = known || b.section == section;
        if (!known) throw ConfigError(where + "unknown section [" + section + "]");
      }
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ConfigError(where + "expected 'key = value'");
    const std::string key = trim(std::string_view(line).substr(0, eq));
    const std::string value = trim(std::string_view(line).substr(eq + 1));
    if (section.empty()) throw ConfigError(where + "key '" + key + "' outside any section");
    try {
      if (task) {
        if (!task_keys[task->id].insert(key).second) throw ConfigError("key '" + key + "' repeated");
        if (key == "route") task->route = parse_route(value);
        else if (key == "head") task->head = parse_task_head(value);
        else if (key == "batch_size") task->batch_size = parse_size(value);
        else throw ConfigError("unknown key '" + key + "' in [" + section + "]");
        continue;
      }
      auto it = index.find({section, key});
      if (it == index.end()) throw ConfigError("unknown key '" + key + "' in [" + section + "]");
      if (!seen.insert({section, key}).second) throw ConfigError("key '" + key + "' repeated");
      it->second->set(value);
    } catch (const ConfigError& e) {
      throw ConfigError(where + e.what());
    }
  }
  for (const auto& b : bindings) {
    if (b.required && !seen.count({b.section, b.key})) {
      throw ConfigError("config line " + std::to_string(lineno) + ": missing required key '" + b.key + "' in [" +
                        b.section + "]");
    }
  }
  if (c.finetune.tasks.empty()) c.finetune.tasks = ExperimentConfig::default_tasks();
  c.validate();
  return c;
}

ExperimentConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config '" + path + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str());
}

std::vector<std::pair<std::string, std::string>> config_fields(const ExperimentConfig& config) {
  ExperimentConfig copy = config;
  std::vector<std::pair<std::string, std::string>> out;
  for (const auto& b : bind(copy)) out.emplace_back(b.section + "." + b.key, b.get());
  for (const auto& t : copy.finetune.tasks) {
    const std::string sec = std::string(kTaskPrefix) + t.id;
    out.emplace_back(sec + ".route", std::string(route_name(t.route)));
    out.emplace_back(sec + ".head", std::string(task_head_name(t.head)));
    out.emplace_back(sec + ".batch_size", std::to_string(t.batch_size));
  }
  return out;
}

std::string serialize_config(const ExperimentConfig& config) {
  std::string out, section;
  for (const auto& [name, value] : config_fields(config)) {
    const auto dot = name.rfind('.');
    const std::string sec = name.substr(0, dot);
    if (sec != section) {
      out += (out.empty() ? "[" : "\n[") + sec + "]\n";
      section = sec;
    }
    out += name.substr(dot + 1) + " = " + value + "\n";
  }
  return out;
}

std::uint64_t config_hash(const ExperimentConfig& config) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char ch : serialize_config(config)) {
    h ^= ch;
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::string hex64(std::uint64_t v) {
  static const char* digits = "0123456789abcdef";
  std::string out(16, '0');
  for (int i = 15; i >= 0; --i, v >>= 4) out[static_cast<std::size_t>(i)] = digits[v & 0xf];
  return out;
}

}  // namespace ub
