// SPDX-License-Identifier: Apache-2.0
#include "ub/experiment.hpp"

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <fstream>
#include <set>
#include <sstream>

#include "json.hpp"
#include "ub/error.hpp"
#include "ub/optim.hpp"
#include "ub/rng.hpp"
#include "ub/tensor_io.hpp"

namespace ub {

namespace fs = std::filesystem;

std::vector<std::uint8_t> FoldData::base_labels() const {
  std::vector<std::uint8_t> out;
  for (auto c : split.base) out.push_back(static_cast<std::uint8_t>(c + 1));
  return out;
}

std::vector<std::uint8_t> FoldData::novel_labels() const {
  std::vector<std::uint8_t> out;
  for (auto c : split.novel) out.push_back(static_cast<std::uint8_t>(c + 1));
  return out;
}

std::vector<std::size_t> FoldData::prompt(std::uint8_t label) const {
  if (label == 0) return vocab.encode("background");
  if (label > world.classes.size()) throw DataError("no class for label " + std::to_string(label));
  return vocab.encode(world.classes[label - 1u].name);
}

FoldData build_fold_data(const ExperimentConfig& config, std::uint64_t seed, std::size_t fold) {
  const auto& d = config.data;
  FoldData out;
  out.fold = fold;
  out.world.image_side = d.image_side;
  out.world.grid = d.grid;
  out.world.shapes_per_image = d.shapes_per_image;
  out.world.unimodal_samples = d.unimodal_samples;
  out.world.paired_fraction = d.paired_fraction;
  out.world.gloss_fraction = d.gloss_fraction;
  out.world.seed = derive_seed(seed, {0xda7a});
  out.split = fold_split({out.world.classes.size(), d.folds, fold});
  if (out.split.base.empty()) throw ConfigError("a single fold leaves no base classes");
  out.world.novel = out.split.novel;
  out.world.validate();
  out.vocab = Vocabulary::with_specials(shapeworld_words(out.world));
  if (out.vocab.size() > config.text_encoder.vocab_size) {
    throw ConfigError("shape-world vocabulary has " + std::to_string(out.vocab.size()) +
                      " tokens, text encoder vocab_size is " + std::to_string(config.text_encoder.vocab_size));
  }
  out.corpora = gen_shapeworld(out.world);
  std::vector<std::size_t> all(out.world.classes.size());
  for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
  out.finetune = gen_samples(out.world, d.finetune_includes_novel ? all : out.split.base, d.finetune_samples, "ft", 4);
  out.eval = gen_samples(out.world, out.split.novel, d.eval_samples, "ev", 5);
  return out;
}

Tensor image_patches(const Image& image, std::size_t patch_size) { return patchify(image, patch_size).patches; }

bool pretrain_uses_fold(PretrainMode mode) { return mode == PretrainMode::kPairContrastive; }

namespace {

std::size_t dominant_class(const ShapeSample& s) {
  std::map<std::uint8_t, std::size_t> count;
  for (auto l : s.mask)
    if (l != 0 && l != kIgnoreLabel) ++count[l];
  if (count.empty()) throw DataError("sample '" + s.id + "' has no foreground");
  auto best = std::max_element(count.begin(), count.end(),
                               [](const auto& a, const auto& b) { return a.second < b.second; });
  return best->first - 1u;
}

}  // namespace

PretrainCorpora pretrain_corpora(PretrainMode mode, const FoldData& data, std::size_t patch_size) {
  PretrainCorpora c;
  switch (mode) {
    case PretrainMode::kSupervised:
      for (const auto& s : data.corpora.image_only) {
        c.images.push_back(image_patches(s.image, patch_size));
        c.labels.push_back(dominant_class(s));
      }
      break;
    case PretrainMode::kPairContrastive:
      for (const auto& s : data.corpora.paired) {
        c.pair_images.push_back(image_patches(s.image, patch_size));
        c.pair_texts.push_back(data.vocab.encode(s.caption));
      }
      break;
    case PretrainMode::kMaskedUnimodal:
      for (const auto& s : data.corpora.image_only) c.images.push_back(image_patches(s.image, patch_size));
      for (const auto& s : data.corpora.text_only) c.texts.push_back(data.vocab.encode(s.caption));
      break;
  }
  return c;
}

PretrainResult run_pretrain(const ExperimentConfig& config, const FoldData& data, std::uint64_t seed,
                            std::optional<std::size_t> steps) {
  const auto& p = config.pretrain;
  const std::size_t n = steps.value_or(p.steps);
  PretrainHyper h;
  h.mim_ratio = p.mim_ratio;
  h.mlm_ratio = p.mlm_ratio;
  h.temperature = p.temperature;
  h.batch_size = p.batch_size;
  h.num_classes = data.world.classes.size();
  h.weight_decay = p.weight_decay;
  h.schedule.peak_lr = p.peak_lr;
  h.schedule.warmup_steps = std::min(p.warmup_steps, n);
  h.schedule.total_steps = std::max<std::size_t>(n, 1);
  return pretrain_run(p.mode, pretrain_corpora(p.mode, data, config.image_encoder.patch_size), config.image_encoder,
                      config.text_encoder, data.vocab, h, n, derive_seed(seed, {0x9e7}));
}

namespace {

// Per-task view of the training samples, keyed by scheduler sample id.
struct TaskMaterial {
  TaskSpec spec;
  std::map<std::string, ShapeSample> samples;
  std::map<std::string, Tensor> patches;
  std::vector<std::uint8_t> candidates;
  std::vector<std::vector<std::size_t>> prompts;
};

std::map<std::string, const ShapeSample*> index_by_id(const std::vector<ShapeSample>& samples) {
  std::map<std::string, const ShapeSample*> out;
  for (const auto& s : samples) out[s.id] = &s;
  return out;
}

std::string source_id(const std::string& id) { return id.substr(0, id.find('~')); }

Tensor task_loss(Tape& tape, const UniModel& model, const TaskMaterial& m, const std::string& id,
                 const Vocabulary& vocab) {
  const auto& s = m.samples.at(id);
  const Tensor& patches = m.patches.at(id);
  switch (m.spec.head) {
    case TaskHead::kSegmentation:
      return model.seg_loss(tape, patches, s.mask, m.candidates, m.prompts);
    case TaskHead::kCaption:
      return model.lm_loss(tape, m.spec.route, patches, {}, vocab.encode(s.caption), vocab);
    case TaskHead::kVqa:
      return model.lm_loss(tape, m.spec.route, patches, vocab.encode(s.question), vocab.encode(s.answer), vocab);
  }
  throw std::logic_error("unhandled task head");
}

}  // namespace

std::vector<TaskDataset> finetune_datasets(const ExperimentConfig& config, const std::vector<TaskSpec>& tasks,
                                           const FoldData& data, std::uint64_t seed) {
  std::vector<std::string> ids;
  for (const auto& s : data.finetune) ids.push_back(s.id);
  RebalancePolicy policy;
  policy.threshold = config.finetune.rebalance_threshold;
  std::vector<TaskDataset> out;
  for (const auto& t : tasks) {
    auto d = TaskDataset::from_ids(t.id, t.route, ids, t.batch_size,
                                   derive_seed(seed, {0xf7, data.fold, hash_string(t.id)}));
    out.push_back(policy.threshold > 0 ? rebalance(d, policy) : d);
  }
  return out;
}

FinetuneResult run_finetune(const ExperimentConfig& config, const FoldData& data, EncoderStack image,
                            EncoderStack text, std::uint64_t seed, std::optional<std::size_t> steps,
                            const std::vector<TaskSpec>* tasks) {
  return run_finetune(config, data,
                      UniModel(std::move(image), std::move(text), config.neck, derive_seed(seed, {0x4ec, data.fold})),
                      seed, steps, tasks);
}

FinetuneResult run_finetune(const ExperimentConfig& config, const FoldData& data, UniModel model, std::uint64_t seed,
                            std::optional<std::size_t> steps, const std::vector<TaskSpec>* tasks) {
  const auto& f = config.finetune;
  const auto& roster = tasks ? *tasks : f.tasks;
  if (roster.empty()) throw ConfigError("no finetune tasks");
  const std::size_t n_steps = steps.value_or(f.steps);
  FinetuneResult out{std::move(model), {}, {}};
  const auto datasets = finetune_datasets(config, roster, data, seed);
  const auto originals = index_by_id(data.finetune);
  const std::size_t patch = config.image_encoder.patch_size;

  std::map<std::string, TaskMaterial> material;
  for (std::size_t t = 0; t < roster.size(); ++t) {
    TaskMaterial m;
    m.spec = roster[t];
    std::set<std::uint8_t> labels = {0};
    for (const auto& entry : datasets[t].samples) {
      const ShapeSample& src = *originals.at(entry.source);
      ShapeSample s = entry.augmentation ? augment_sample(src, *entry.augmentation) : src;
      s.id = entry.id;
      for (auto l : present_labels(s.mask)) labels.insert(l);
      m.patches.emplace(entry.id, image_patches(s.image, patch));
      m.samples.emplace(entry.id, std::move(s));
    }
    m.candidates.assign(labels.begin(), labels.end());
    for (auto l : m.candidates) m.prompts.push_back(data.prompt(l));
    material.emplace(m.spec.id, std::move(m));
  }

  AdamWOptions opts;
  opts.schedule.peak_lr = f.peak_lr;
  opts.schedule.warmup_steps = std::min(f.warmup_steps, n_steps);
  opts.schedule.total_steps = std::max<std::size_t>(n_steps, 1);
  ParamList encoder_params = out.model.encoder_parameters();
  const bool frozen = f.freeze_encoders || f.encoder_lr_ratio == 0.0;
  std::vector<ParamGroup> groups(frozen ? 1 : 2);
  groups[0] = {"neck", out.model.neck_parameters(), 1.0, f.weight_decay};
  if (!frozen) groups[1] = {"encoders", encoder_params, f.encoder_lr_ratio, f.weight_decay};
  AdamW optimizer(opts, std::move(groups));

  MultitaskStream stream(datasets, derive_seed(seed, {0x57e, data.fold}));
  for (std::size_t step = 0; step < n_steps; ++step) {
    EmittedBatch b = stream.next_batch();
    const auto& m = material.at(b.batch.task_id);
    const double weight = 1.0 / static_cast<double>(b.batch.sample_ids.size());
    double total = 0.0;
    for (const auto& id : b.batch.sample_ids) {
      Tape tape;
      Tensor loss = task_loss(tape, out.model, m, id, data.vocab);
      total += loss.item();
      tape.backward(tape.scale(loss, weight));
    }
    optimizer.step();
    if (frozen)
      for (auto& p : encoder_params) p.tensor.zero_grad();
    out.losses[b.batch.task_id].push_back(total * weight);
    out.trace.push_back(std::move(b));
  }
  return out;
}

void check_no_leakage(const std::vector<TraceLine>& trace, const FoldData& data) {
  const auto originals = index_by_id(data.finetune);
  std::set<std::string> novel_names;
  for (auto c : data.split.novel) novel_names.insert(data.world.classes[c].name);
  const auto novel = data.novel_labels();
  for (const auto& line : trace) {
    const std::string where = "round " + std::to_string(line.round) + " position " + std::to_string(line.position);
    for (const auto& id : line.sample_ids) {
      auto it = originals.find(source_id(id));
      if (it == originals.end()) throw InvariantError(where + ": trace names unknown training sample '" + id + "'");
      const ShapeSample& s = *it->second;
      for (auto l : present_labels(s.mask)) {
        if (std::find(novel.begin(), novel.end(), l) != novel.end()) {
          throw InvariantError(where + ": training sample '" + id + "' contains novel class '" +
                               data.world.classes[l - 1u].name + "'");
        }
      }
      for (const auto& w : split_whitespace(s.caption + " " + s.question + " " + s.answer)) {
        if (novel_names.count(w)) {
          throw InvariantError(where + ": training sample '" + id + "' mentions novel class '" + w + "'");
        }
      }
    }
  }
}

std::string_view eval_split_name(EvalSplit split) { return split == EvalSplit::kBase ? "base" : "novel"; }

EvalSplit parse_eval_split(std::string_view text) {
  if (text == "base") return EvalSplit::kBase;
  if (text == "novel") return EvalSplit::kNovel;
  throw ConfigError("unknown split '" + std::string(text) + "' (expected base or novel)");
}

std::vector<ShapeSample> eval_samples(const ExperimentConfig& config, const FoldData& data, EvalSplit split) {
  if (split == EvalSplit::kNovel) return data.eval;
  return gen_samples(data.world, data.split.base, config.data.eval_samples, "eb", 6);
}

std::vector<std::uint8_t> eval_candidates(const FoldData& data, EvalSplit split) {
  std::vector<std::uint8_t> out = {0};
  for (auto l : split == EvalSplit::kNovel ? data.novel_labels() : data.base_labels()) out.push_back(l);
  return out;
}

SegEval score_masks(const std::vector<std::vector<std::uint8_t>>& predictions, const std::vector<ShapeSample>& samples,
                    const std::vector<std::uint8_t>& candidates) {
  if (predictions.size() != samples.size()) throw ShapeError("one prediction per evaluation sample");
  SegEval e{ConfusionCounts(candidates), {}, 0.0, 0.0, 0.0};
  for (auto l : candidates)
    if (l != 0) e.scored.push_back(l);
  for (std::size_t i = 0; i < samples.size(); ++i) accumulate(e.counts, predictions[i], samples[i].mask);
  e.miou = miou(e.counts, e.scored);
  e.fb_iou = fb_iou(e.counts, e.scored);
  e.pix_acc = pix_acc(e.counts);
  return e;
}

SegEval evaluate_segmentation(const UniModel& model, const ExperimentConfig& config, const FoldData& data,
                              EvalSplit split) {
  const auto samples = eval_samples(config, data, split);
  const auto candidates = eval_candidates(data, split);
  std::vector<std::vector<std::size_t>> prompts;
  for (auto l : candidates) prompts.push_back(data.prompt(l));
  std::vector<std::vector<std::uint8_t>> preds;
  for (const auto& s : samples) {
    preds.push_back(model.predict_mask(image_patches(s.image, config.image_encoder.patch_size), candidates, prompts));
  }
  return score_masks(preds, samples, candidates);
}

double RunRecord::mean_miou() const {
  if (folds.empty()) throw DataError("run record has no folds");
  double s = 0.0;
  for (const auto& f : folds) s += f.miou;
  return s / static_cast<double>(folds.size());
}

std::string run_record_json(const RunRecord& r) {
  nlohmann::json j;
  j["name"] = r.name;
  j["config_hash"] = r.config_hash;
  j["mode"] = r.mode;
  j["image_tag"] = r.image_tag;
  j["text_tag"] = r.text_tag;
  j["seed"] = r.seed;
  j["pretrain_losses"] = r.pretrain_losses;
  j["finetune_losses"] = r.finetune_losses;
  j["checkpoints"] = r.checkpoints;
  j["folds"] = nlohmann::json::array();
  for (const auto& f : r.folds) {
    j["folds"].push_back({{"fold", f.fold}, {"miou", f.miou}, {"fb_iou", f.fb_iou}, {"pix_acc", f.pix_acc}});
  }
  j["wall_seconds"] = r.wall_seconds;
  return j.dump(1) + "\n";
}

RunRecord parse_run_record(const std::string& text) {
  try {
    const auto j = nlohmann::json::parse(text);
    RunRecord r;
    r.name = j.at("name").get<std::string>();
    r.config_hash = j.at("config_hash").get<std::string>();
    r.mode = j.at("mode").get<std::string>();
    r.image_tag = j.at("image_tag").get<std::string>();
    r.text_tag = j.at("text_tag").get<std::string>();
    r.seed = j.at("seed").get<std::uint64_t>();
    r.pretrain_losses = j.at("pretrain_losses").get<std::map<std::string, std::vector<double>>>();
    r.finetune_losses = j.at("finetune_losses").get<std::map<std::string, std::vector<double>>>();
    r.checkpoints = j.at("checkpoints").get<std::vector<std::string>>();
    for (const auto& f : j.at("folds")) {
      r.folds.push_back({f.at("fold").get<std::size_t>(), f.at("miou").get<double>(), f.at("fb_iou").get<double>(),
                         f.at("pix_acc").get<double>()});
    }
    r.wall_seconds = j.at("wall_seconds").get<double>();
    return r;
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("malformed run record: ") + e.what());
  }
}

std::string encoder_tag(const EncoderConfig& c, Modality modality) {
  return std::string(modality == Modality::kImage ? "vit" : "tf") + "-" + std::to_string(c.layers) + "x" +
         std::to_string(c.width);
}

namespace {

ConfigEcho echo(const ExperimentConfig& config, std::uint64_t seed, std::size_t fold) {
  ConfigEcho e;
  for (auto& [k, v] : config_fields(config)) e.emplace_back(k, v);
  e.emplace_back("run.seed", std::to_string(seed));
  e.emplace_back("run.fold", std::to_string(fold));
  return e;
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write '" + path.string() + "'");
  out << text;
  if (!out) throw DataError("failed writing '" + path.string() + "'");
}

std::vector<TraceLine> to_trace_lines(const std::vector<EmittedBatch>& emitted) {
  std::vector<TraceLine> out;
  for (const auto& b : emitted) out.push_back({b.round, b.position, b.batch.task_id, b.batch.sample_ids});
  return out;
}

}  // namespace

RunRecord run_pipeline(const ExperimentConfig& config, std::uint64_t seed, const std::optional<fs::path>& out) {
  config.validate();
  const auto start = std::chrono::steady_clock::now();
  RunRecord rec;
  rec.name = config.name;
  rec.config_hash = hex64(config_hash(config));
  rec.mode = std::string(pretrain_mode_name(config.pretrain.mode));
  rec.image_tag = encoder_tag(config.image_encoder, Modality::kImage);
  rec.text_tag = encoder_tag(config.text_encoder, Modality::kText);
  rec.seed = seed;
  const std::optional<fs::path> root =
      out ? std::optional<fs::path>(*out / config.name / ("seed" + std::to_string(seed))) : std::nullopt;

  std::optional<PretrainResult> shared;
  for (std::size_t fold = 0; fold < config.data.folds; ++fold) {
    const FoldData data = build_fold_data(config, seed, fold);
    const bool per_fold = pretrain_uses_fold(config.pretrain.mode);
    std::optional<PretrainResult> local;
    if (per_fold || !shared) {
      PretrainResult pr = run_pretrain(config, data, seed);
      for (const auto& t : pr.traces) {
        rec.pretrain_losses[per_fold ? "fold" + std::to_string(fold) + "/" + t.name : t.name] = t.steps;
      }
      if (root) {
        const fs::path dir = *root / (per_fold ? "pretrain-fold" + std::to_string(fold) : std::string("pretrain"));
        ParamList params = pr.image.parameters("image");
        for (auto& p : pr.text.parameters("text")) params.push_back(p);
        save_checkpoint(dir, params, echo(config, seed, fold));
        rec.checkpoints.push_back(dir.string());
      }
      (per_fold ? local : shared) = std::move(pr);
    }
    const PretrainResult& pre = per_fold ? *local : *shared;
    FinetuneResult ft = run_finetune(config, data, pre.image.clone(), pre.text.clone(), seed);
    const auto trace = to_trace_lines(ft.trace);
    if (root) {
      const fs::path dir = *root / ("fold" + std::to_string(fold));
      ParamList params = ft.model.encoder_parameters();
      for (auto& p : ft.model.neck_parameters()) params.push_back(p);
      save_checkpoint(dir / "finetune", params, echo(config, seed, fold));
      rec.checkpoints.push_back((dir / "finetune").string());
      std::ostringstream t;
      for (const auto& b : ft.trace) write_trace_line(t, b);
      write_text(dir / "trace.tsv", t.str());
    }
    check_no_leakage(trace, data);
    for (const auto& [task, losses] : ft.losses) rec.finetune_losses["fold" + std::to_string(fold) + "/" + task] = losses;
    const SegEval ev = evaluate_segmentation(ft.model, config, data, EvalSplit::kNovel);
    rec.folds.push_back({fold, ev.miou, ev.fb_iou, ev.pix_acc});
  }
  rec.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  if (root) write_text(*root / "run.json", run_record_json(rec));
  return rec;
}

void check_comparable(const std::vector<ExperimentConfig>& configs) {
  if (configs.empty()) throw ConfigError("compare needs at least one config");
  static const std::set<std::string> free_fields = {"experiment.name", "experiment.out", "pretrain.mode"};
  const auto ref = config_fields(configs[0]);
  std::set<PretrainMode> modes;
  for (std::size_t i = 0; i < configs.size(); ++i) {
    if (!modes.insert(configs[i].pretrain.mode).second) {
      throw ConfigError("two configs use the " + std::string(pretrain_mode_name(configs[i].pretrain.mode)) +
                        " pretraining stream");
    }
    const auto fields = config_fields(configs[i]);
    if (fields.size() != ref.size()) {
      throw ConfigError("config '" + configs[i].name + "' has a different task roster from '" + configs[0].name + "'");
    }
    for (std::size_t k = 0; k < fields.size(); ++k) {
      if (fields[k].first != ref[k].first) {
        throw ConfigError("config '" + configs[i].name + "' differs in field '" + fields[k].first + "'");
      }
      if (fields[k].second != ref[k].second && !free_fields.count(fields[k].first)) {
        throw ConfigError("config '" + configs[i].name + "' differs in field '" + fields[k].first + "' (" +
                          fields[k].second + " vs " + ref[k].second + ")");
      }
    }
  }
}

ComparisonReport build_report(const std::vector<RunRecord>& records) {
  ComparisonReport rep;
  if (records.empty()) return rep;
  rep.fold_count = records[0].folds.size();
  std::vector<std::string> streams;
  std::map<std::string, std::vector<const RunRecord*>> by_stream;
  for (const auto& r : records) {
    if (r.folds.size() != rep.fold_count) throw DataError("run records disagree on the number of folds");
    if (!by_stream.count(r.mode)) streams.push_back(r.mode);
    by_stream[r.mode].push_back(&r);
  }
  auto row_from = [&](const std::string& stream, const std::string& seed, const std::vector<const RunRecord*>& runs) {
    ReportRow row{stream, runs[0]->image_tag, runs[0]->text_tag, seed, {}, 0.0, 0.0};
    double fb = 0.0;
    for (std::size_t f = 0; f < rep.fold_count; ++f) {
      double m = 0.0;
      for (const auto* r : runs) {
        m += r->folds[f].miou;
        fb += r->folds[f].fb_iou;
      }
      row.folds.push_back(round_half_up(100.0 * m / static_cast<double>(runs.size()), 1));
    }
    row.mean = fold_mean(row.folds);
    row.fb_iou = round_half_up(100.0 * fb / static_cast<double>(runs.size() * rep.fold_count), 1);
    return row;
  };
  for (const auto& s : streams) {
    const auto& runs = by_stream[s];
    rep.rows.push_back(row_from(s, "all", runs));
    for (const auto* r : runs) rep.rows.push_back(row_from(s, std::to_string(r->seed), {r}));
    rep.wins[s] = 0;
  }
  std::map<std::uint64_t, std::vector<const RunRecord*>> by_seed;
  for (const auto& r : records) by_seed[r.seed].push_back(&r);
  for (const auto& [seed, runs] : by_seed) {
    if (runs.size() < 2) continue;
    const RunRecord* best = nullptr;
    bool tie = false;
    for (const auto* r : runs) {
      if (!best || r->mean_miou() > best->mean_miou()) {
        best = r;
        tie = false;
      } else if (r->mean_miou() == best->mean_miou()) {
        tie = true;
      }
    }
    if (!tie) ++rep.wins[best->mode];
  }
  return rep;
}

ComparisonReport cmd_compare(const std::vector<ExperimentConfig>& configs, const std::vector<std::uint64_t>& seeds,
                             const std::optional<fs::path>& out) {
  check_comparable(configs);
  if (seeds.empty()) throw ConfigError("compare needs at least one seed");
  std::vector<RunRecord> records;
  for (const auto& c : configs)
    for (auto s : seeds) records.push_back(run_pipeline(c, s, out));
  auto report = build_report(records);
  if (out) emit_report(report, *out);
  return report;
}

namespace {

std::string fmt1(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.1f", v);
  return buf;
}

std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\r\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) out += c == '"' ? std::string("\"\"") : std::string(1, c);
  return out + "\"";
}

std::vector<std::string> header(const ComparisonReport& rep) {
  std::vector<std::string> h = {"stream", "image_encoder", "text_encoder", "seed"};
  for (std::size_t f = 0; f < rep.fold_count; ++f) h.push_back("fold" + std::to_string(f));
  h.push_back("mean");
  h.push_back("fb_iou");
  return h;
}

std::vector<std::string> cells(const ReportRow& r) {
  std::vector<std::string> c = {r.stream, r.image_tag, r.text_tag, r.seed};
  for (double v : r.folds) c.push_back(fmt1(v));
  c.push_back(fmt1(r.mean));
  c.push_back(fmt1(r.fb_iou));
  return c;
}

}  // namespace

std::string report_csv(const ComparisonReport& report) {
  std::string out;
  auto line = [&](const std::vector<std::string>& fields) {
    for (std::size_t i = 0; i < fields.size(); ++i) out += (i ? "," : "") + csv_field(fields[i]);
    out += "\r\n";
  };
  line(header(report));
  for (const auto& r : report.rows) line(cells(r));
  return out;
}

std::string report_table(const ComparisonReport& report) {
  std::vector<std::vector<std::string>> grid = {header(report)};
  for (const auto& r : report.rows) grid.push_back(cells(r));
  std::vector<std::size_t> width(grid[0].size(), 0);
  for (const auto& row : grid)
    for (std::size_t i = 0; i < row.size(); ++i) width[i] = std::max(width[i], row[i].size());
  std::string out;
  for (const auto& row : grid) {
    std::string line;
    for (std::size_t i = 0; i < row.size(); ++i) {
      const std::string pad(width[i] - row[i].size(), ' ');
      line += (i ? "  " : "") + (i < 4 ? row[i] + pad : pad + row[i]);
    }
    while (!line.empty() && line.back() == ' ') line.pop_back();
    out += line + "\n";
  }
  for (const auto& [stream, n] : report.wins) out += "wins " + stream + ": " + std::to_string(n) + "\n";
  return out;
}

std::vector<std::vector<std::string>> parse_csv(const std::string& text) {
  std::vector<std::vector<std::string>> rows;
  std::vector<std::string> row;
  std::string field;
  bool quoted = false, any = false;
  for (std::size_t i = 0; i < text.size(); ++i) {
    const char c = text[i];
    if (quoted) {
      if (c == '"' && i + 1 < text.size() && text[i + 1] == '"') {
        field += '"';
        ++i;
      } else if (c == '"') {
        quoted = false;
      } else {
        field += c;
      }
      continue;
    }
    if (c == '"') {
      quoted = true;
      any = true;
    } else if (c == ',') {
      row.push_back(std::move(field));
      field.clear();
      any = true;
    } else if (c == '\r' || c == '\n') {
      if (c == '\r' && i + 1 < text.size() && text[i + 1] == '\n') ++i;
      row.push_back(std::move(field));
      field.clear();
      rows.push_back(std::move(row));
      row.clear();
      any = false;
    } else {
      field += c;
      any = true;
    }
  }
  if (quoted) throw DataError("CSV ends inside a quoted field");
  if (any || !field.empty()) {
    row.push_back(std::move(field));
    rows.push_back(std::move(row));
  }
  return rows;
}

void emit_report(const ComparisonReport& report, const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw DataError("cannot create report directory '" + dir.string() + "': " + ec.message());
  write_text(dir / "report.csv", report_csv(report));
  write_text(dir / "report.txt", report_table(report));
}

}  // namespace ub
