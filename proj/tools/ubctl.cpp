// SPDX-License-Identifier: Apache-2.0
// ubctl: data generation, training stages, evaluation and reports.
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>

#include "CLI11.hpp"
#include "json.hpp"
#include "ub/config.hpp"
#include "ub/error.hpp"
#include "ub/experiment.hpp"
#include "ub/splits.hpp"
#include "ub/tensor_io.hpp"

using namespace ub;
namespace fs = std::filesystem;

namespace {

struct Globals {
  std::vector<std::string> configs;
  std::vector<std::uint64_t> seeds;
  std::string out;
  std::optional<std::size_t> steps;
  std::optional<std::size_t> fold;
};

std::string text_of(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw DataError("cannot read '" + p.string() + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_text(const fs::path& p, const std::string& text) {
  fs::create_directories(p.parent_path());
  std::ofstream out(p, std::ios::binary);
  if (!out || !(out << text)) throw DataError("cannot write '" + p.string() + "'");
}

ExperimentConfig the_config(const Globals& g) {
  if (g.configs.size() != 1) throw ConfigError("this command takes exactly one --config");
  return load_config(g.configs[0]);
}

std::uint64_t the_seed(const Globals& g, const ExperimentConfig& c) {
  if (g.seeds.size() > 1) throw ConfigError("this command takes one --seed");
  return g.seeds.empty() ? c.seed : g.seeds[0];
}

fs::path out_root(const Globals& g, const ExperimentConfig* c) {
  if (const char* env = std::getenv("UNIBOOST_OUT"); env && *env) return env;
  if (!g.out.empty()) return g.out;
  return c ? c->out : "runs";
}

std::vector<std::size_t> folds_of(const Globals& g, const ExperimentConfig& c) {
  if (g.fold) {
    if (*g.fold >= c.data.folds) throw ConfigError("--fold " + std::to_string(*g.fold) + " is outside the fold range");
    return {*g.fold};
  }
  std::vector<std::size_t> all(c.data.folds);
  for (std::size_t f = 0; f < all.size(); ++f) all[f] = f;
  return all;
}

fs::path run_dir(const Globals& g, const ExperimentConfig& c, std::uint64_t seed) {
  return out_root(g, &c) / c.name / ("seed" + std::to_string(seed));
}

fs::path pretrain_dir(const fs::path& run, const ExperimentConfig& c, std::size_t fold) {
  return run / (pretrain_uses_fold(c.pretrain.mode) ? "pretrain-fold" + std::to_string(fold) : "pretrain");
}

ConfigEcho echo(const ExperimentConfig& c, std::uint64_t seed, std::size_t fold) {
  ConfigEcho e = config_fields(c);
  e.emplace_back("run.seed", std::to_string(seed));
  e.emplace_back("run.fold", std::to_string(fold));
  return e;
}

ParamList model_params(const UniModel& m) {
  ParamList p = m.encoder_parameters();
  for (auto& x : m.neck_parameters()) p.push_back(x);
  return p;
}

UniModel blank_model(const ExperimentConfig& c) {
  return UniModel(EncoderStack(Modality::kImage, c.image_encoder, 0), EncoderStack(Modality::kText, c.text_encoder, 0),
                  c.neck, 0);
}

void load_stacks(const fs::path& dir, EncoderStack& image, EncoderStack& text) {
  ParamList p = image.parameters("image");
  for (auto& x : text.parameters("text")) p.push_back(x);
  load_checkpoint(dir, p);
}

std::string trace_text(const std::vector<EmittedBatch>& trace) {
  std::ostringstream t;
  for (const auto& b : trace) write_trace_line(t, b);
  return t.str();
}

std::string losses_json(const std::map<std::string, std::vector<double>>& losses) {
  return nlohmann::json(losses).dump() + "\n";
}

int cmd_gen_data(const Globals& g) {
  const auto c = the_config(g);
  const auto seed = the_seed(g, c);
  for (auto fold : folds_of(g, c)) {
    const auto data = build_fold_data(c, seed, fold);
    TaskSamples tasks;
    tasks["image-only"] = data.corpora.image_only;
    tasks["text-only"] = data.corpora.text_only;
    tasks["paired"] = data.corpora.paired;
    tasks["finetune"] = data.finetune;
    tasks["eval"] = data.eval;
    const auto dir = run_dir(g, c, seed) / "data" / ("fold" + std::to_string(fold));
    const auto manifest = write_corpus(dir, tasks);
    const auto leaks = leakage_report(data.corpora.paired, data.world);
    std::printf("fold %zu: %s (%zu image-only, %zu text-only, %zu paired, %zu finetune, %zu eval)\n", fold,
                manifest.string().c_str(), data.corpora.image_only.size(), data.corpora.text_only.size(),
                data.corpora.paired.size(), data.finetune.size(), data.eval.size());
    if (!leaks.empty()) throw InvariantError("paired corpus of fold " + std::to_string(fold) + " shows novel classes");
  }
  return 0;
}

int cmd_split(const Globals& g, const std::string& questions, const std::string& annotations) {
  if (!questions.empty() || !annotations.empty()) {
    if (questions.empty() || annotations.empty()) throw ConfigError("VQA split needs both question and annotation files");
    const auto records = load_vqa_v2(questions, annotations);
    for (auto type : {AnswerType::kNumber, AnswerType::kYesNo, AnswerType::kOther}) {
      const auto s = vqa_token_split(records, VqaSplitSpec::standard(type));
      std::printf("%s\tbase %zu\tnovel %zu\n", std::string(answer_type_name(type)).c_str(), s.base.size(),
                  s.novel.size());
    }
    return 0;
  }
  const auto c = the_config(g);
  const auto classes = default_shape_classes();
  for (auto fold : folds_of(g, c)) {
    const auto split = fold_split({classes.size(), c.data.folds, fold});
    std::string novel, base;
    for (auto k : split.novel) novel += (novel.empty() ? "" : ",") + classes[k].name;
    for (auto k : split.base) base += (base.empty() ? "" : ",") + classes[k].name;
    std::printf("fold %zu\tnovel %s\tbase %s\n", fold, novel.c_str(), base.c_str());
  }
  return 0;
}

int cmd_pretrain(const Globals& g) {
  auto c = the_config(g);
  const auto seed = the_seed(g, c);
  const auto run = run_dir(g, c, seed);
  auto folds = folds_of(g, c);
  if (!pretrain_uses_fold(c.pretrain.mode)) folds.resize(1);
  for (auto fold : folds) {
    const auto data = build_fold_data(c, seed, fold);
    const auto pr = run_pretrain(c, data, seed, g.steps);
    const auto dir = pretrain_dir(run, c, fold);
    ParamList p = pr.image.parameters("image");
    for (auto& x : pr.text.parameters("text")) p.push_back(x);
    save_checkpoint(dir, p, echo(c, seed, fold));
    std::map<std::string, std::vector<double>> losses;
    for (const auto& t : pr.traces) {
      losses[t.name] = t.steps;
      std::printf("%s: probe %.4f -> %.4f\n", t.name.c_str(), t.probe_initial, t.probe_final);
    }
    write_text(dir / "losses.json", losses_json(losses));
    std::printf("checkpoint %s\n", dir.string().c_str());
  }
  return 0;
}

int cmd_finetune(const Globals& g, const std::string& task_id) {
  auto c = the_config(g);
  const auto seed = the_seed(g, c);
  const auto run = run_dir(g, c, seed);
  std::vector<TaskSpec> roster = c.finetune.tasks;
  if (!task_id.empty()) {
    auto it = std::find_if(roster.begin(), roster.end(), [&](const TaskSpec& t) { return t.id == task_id; });
    if (it == roster.end()) throw ConfigError("no task '" + task_id + "' in the config");
    roster = {*it};
  }
  for (auto fold : folds_of(g, c)) {
    const auto data = build_fold_data(c, seed, fold);
    const fs::path fold_dir = run / ("fold" + std::to_string(fold));
    const fs::path dest = task_id.empty() ? fold_dir / "finetune" : fold_dir / ("task-" + task_id);
    std::optional<FinetuneResult> result;
    if (task_id.empty()) {
      EncoderStack image(Modality::kImage, c.image_encoder, 0);
      EncoderStack text(Modality::kText, c.text_encoder, 0);
      load_stacks(pretrain_dir(run, c, fold), image, text);
      result.emplace(run_finetune(c, data, std::move(image), std::move(text), seed, g.steps, &roster));
    } else {
      UniModel start = blank_model(c);
      ParamList p = model_params(start);
      load_checkpoint(fold_dir / "finetune", p);
      result.emplace(run_finetune(c, data, std::move(start), seed, g.steps, &roster));
    }
    const FinetuneResult& ft = *result;
    save_checkpoint(dest, model_params(ft.model), echo(c, seed, fold));
    write_text(dest / "trace.tsv", trace_text(ft.trace));
    write_text(dest / "losses.json", losses_json(ft.losses));
    std::vector<TraceLine> lines;
    for (const auto& b : ft.trace) lines.push_back({b.round, b.position, b.batch.task_id, b.batch.sample_ids});
    const auto problems = audit_trace(lines, finetune_datasets(c, roster, data, seed));
    if (!problems.empty()) throw InvariantError("schedule audit: " + problems.front());
    std::printf("checkpoint %s (%zu batches)\n", dest.string().c_str(), ft.trace.size());
  }
  return 0;
}

int cmd_eval(const Globals& g, const std::string& split_name, const std::string& checkpoint) {
  const auto c = the_config(g);
  const auto seed = the_seed(g, c);
  const auto split = parse_eval_split(split_name);
  const auto run = run_dir(g, c, seed);
  nlohmann::json report = nlohmann::json::array();
  for (auto fold : folds_of(g, c)) {
    const auto data = build_fold_data(c, seed, fold);
    const fs::path fold_dir = run / ("fold" + std::to_string(fold));
    const fs::path ckpt = checkpoint.empty() ? fold_dir / "finetune" : fs::path(checkpoint);
    if (!fs::exists(fold_dir)) throw DataError("no fine-tuning output in '" + fold_dir.string() + "'");
    for (const auto& entry : fs::recursive_directory_iterator(fold_dir)) {
      if (entry.path().filename() != "trace.tsv") continue;
      std::ifstream in(entry.path());
      check_no_leakage(parse_trace(in), data);
    }
    UniModel model = blank_model(c);
    ParamList p = model_params(model);
    load_checkpoint(ckpt, p);
    const auto e = evaluate_segmentation(model, c, data, split);
    report.push_back({{"fold", fold},
                      {"split", eval_split_name(split)},
                      {"miou", e.miou},
                      {"fb_iou", e.fb_iou},
                      {"pix_acc", e.pix_acc}});
    std::printf("fold %zu %s: mIoU %.4f FB-IoU %.4f pixAcc %.4f\n", fold, std::string(eval_split_name(split)).c_str(),
                e.miou, e.fb_iou, e.pix_acc);
  }
  write_text(run / ("eval-" + split_name + ".json"), report.dump(1) + "\n");
  return 0;
}

int cmd_compare(const Globals& g) {
  if (g.configs.size() < 2) throw ConfigError("compare needs one --config per pretraining stream");
  std::vector<ExperimentConfig> configs;
  for (const auto& p : g.configs) {
    configs.push_back(load_config(p));
    if (g.steps) configs.back().finetune.steps = *g.steps;
  }
  std::vector<std::uint64_t> seeds = g.seeds;
  if (seeds.empty()) seeds = {configs[0].seed};
  const auto out = out_root(g, &configs[0]);
  const auto report = ub::cmd_compare(configs, seeds, out);
  std::fputs(report_table(report).c_str(), stdout);
  return 0;
}

int cmd_report(const Globals& g, const std::vector<std::string>& inputs) {
  const auto out = out_root(g, nullptr);
  std::vector<fs::path> roots;
  for (const auto& i : inputs) roots.emplace_back(i);
  if (roots.empty()) roots.push_back(out);
  std::vector<fs::path> files;
  for (const auto& r : roots) {
    if (!fs::exists(r)) throw DataError("no run directory '" + r.string() + "'");
    for (const auto& entry : fs::recursive_directory_iterator(r))
      if (entry.path().filename() == "run.json") files.push_back(entry.path());
  }
  std::sort(files.begin(), files.end());
  if (files.empty()) throw DataError("no run records found");
  std::vector<RunRecord> records;
  for (const auto& f : files) records.push_back(parse_run_record(text_of(f)));
  const auto report = build_report(records);
  emit_report(report, out);
  std::fputs(report_table(report).c_str(), stdout);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"ubctl: unimodal pretraining, multitask fine-tuning and zero-shot evaluation"};
  app.require_subcommand(1);
  Globals g;
  std::size_t steps = 0, fold = 0;
  auto* steps_opt = app.add_option("--steps", steps, "override the step count of the stage being run");
  auto* fold_opt = app.add_option("--fold", fold, "run a single fold");
  app.add_option("--config", g.configs, "experiment config (repeat for compare)");
  app.add_option("--seed", g.seeds, "seed (repeat for compare)");
  app.add_option("--out", g.out, "output directory (UNIBOOST_OUT wins)");
  for (auto* o : {steps_opt, fold_opt}) o->configurable(false);
  app.fallthrough();

  std::string questions, annotations, split = "novel", checkpoint, task;
  std::vector<std::string> inputs;
  auto* gen = app.add_subcommand("gen-data", "write the shape-world corpora for each fold");
  auto* sp = app.add_subcommand("split", "print fold splits or the VQA token-frequency split");
  sp->add_option("--vqa-questions", questions, "VQA v2 questions JSON");
  sp->add_option("--vqa-annotations", annotations, "VQA v2 annotations JSON");
  auto* pre = app.add_subcommand("pretrain", "pretrain the encoders");
  auto* ftm = app.add_subcommand("finetune-multitask", "multitask intermediate fine-tuning");
  auto* ftt = app.add_subcommand("finetune-task", "single-task fine-tuning from the intermediate checkpoint");
  ftt->add_option("--task", task, "task id from the config")->required();
  auto* ev = app.add_subcommand("eval", "evaluate segmentation on the base or novel split");
  ev->add_option("--split", split, "base or novel");
  ev->add_option("--checkpoint", checkpoint, "model checkpoint (default: fold<k>/finetune)");
  auto* cmp = app.add_subcommand("compare", "run every stream for every seed and emit the report");
  auto* rep = app.add_subcommand("report", "rebuild the report from run records");
  rep->add_option("runs", inputs, "directories to search for run.json");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }
  if (steps_opt->count()) g.steps = steps;
  if (fold_opt->count()) g.fold = fold;

  try {
    if (gen->parsed()) return cmd_gen_data(g);
    if (sp->parsed()) return cmd_split(g, questions, annotations);
    if (pre->parsed()) return cmd_pretrain(g);
    if (ftm->parsed()) return cmd_finetune(g, "");
    if (ftt->parsed()) return cmd_finetune(g, task);
    if (ev->parsed()) return cmd_eval(g, split, checkpoint);
    if (cmp->parsed()) return cmd_compare(g);
    if (rep->parsed()) return cmd_report(g, inputs);
  } catch (const ConfigError& e) {
    std::fprintf(stderr, "config error: %s\n", e.what());
    return 2;
  } catch (const DataError& e) {
    std::fprintf(stderr, "data error: %s\n", e.what());
    return 3;
  } catch (const InvariantError& e) {
    std::fprintf(stderr, "invariant violated: %s\n", e.what());
    return 4;
  } catch (const ShapeError& e) {
    std::fprintf(stderr, "data error: %s\n", e.what());
    return 3;
  }
  return 2;
}
