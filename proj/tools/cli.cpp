// Copyright 2026 The pitl Authors
// SPDX-License-Identifier: Apache-2.0

#include "cli.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <chrono>
#include <ctime>
#include <fstream>
#include <iomanip>
#include <iterator>
#include <memory>
#include <sstream>

#include "pitl/corpus.hpp"
#include "pitl/errors.hpp"
#include "pitl/evalkit.hpp"
#include "pitl/log.hpp"
#include "pitl/promptgen.hpp"
#include "pitl/random.hpp"
#include "pitl/trainer.hpp"

namespace pitl::cli {

namespace fs = std::filesystem;
using nlohmann::json;

json RunManifest::to_json() const {
  return json{{"subcommand", subcommand}, {"config", config},   {"config_hash", config_hash}, {"seeds", seeds},
              {"inputs", inputs},         {"outputs", outputs}, {"tool_version", tool_version}};
}

void RunManifest::write(const fs::path& path) const {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << to_json().dump(2) << '\n';
}

std::string config_hash(const std::map<std::string, std::string>& config) {
  std::string canonical;
  for (const auto& [k, v] : config) {
    if (k == "out-dir" || k == "runs-root" || k == "config") continue;
    canonical += k + "=" + v + "\n";
  }
  return hex64(fnv1a64(canonical));
}

namespace {

std::string file_hash(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return hex64(fnv1a64(bytes));
}

/// Every option of `app` with its parsed value, or its default when absent.
std::map<std::string, std::string> resolved_options(const CLI::App& app) {
  std::map<std::string, std::string> out;
  for (const auto* opt : app.get_options()) {
    const std::string name = opt->get_single_name();
    if (name.empty() || name == "help" || name == "config") continue;
    std::string value;
    if (opt->count() > 0) {
      for (const auto& r : opt->results()) value += (value.empty() ? "" : ",") + r;
    } else {
      value = opt->get_default_str();
    }
    out[name] = value;
  }
  return out;
}

void write_resolved_config(const fs::path& path, const std::map<std::string, std::string>& config) {
  std::ofstream out(path, std::ios::trunc);
  for (const auto& [k, v] : config) {
    if (k == "out-dir" || k == "runs-root") continue;
    out << k << " = " << (v.empty() ? "\"\"" : v) << '\n';
  }
}

fs::path make_run_dir(const std::string& out_dir, const std::string& runs_root, const std::string& hash) {
  if (!out_dir.empty()) {
    fs::create_directories(out_dir);
    return out_dir;
  }
  const auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  std::ostringstream name;
  name << std::put_time(&tm, "%Y%m%d-%H%M%S") << "-" << hash.substr(0, 8);
  fs::path dir = fs::path(runs_root) / name.str();
  fs::create_directories(dir);
  return dir;
}

// ---------------------------------------------------------------------------
// Shared option groups

struct OutputFlags {
  std::string out_dir;
  std::string runs_root = "runs";
};

void add_output_options(CLI::App* sub, OutputFlags& o) {
  sub->add_option("--out-dir", o.out_dir, "Run directory (default: <runs-root>/<timestamp>-<config hash>)");
  sub->add_option("--runs-root", o.runs_root, "Parent of generated run directories");
}

void add_model_options(CLI::App* sub, ModelConfig& m) {
  auto* g = "Model";
  sub->add_option("--vision-layers", m.vision_layers)->group(g);
  sub->add_option("--text-layers", m.text_layers)->group(g);
  sub->add_option("--fusion-layers", m.fusion_layers)->group(g);
  sub->add_option("--hidden-dim", m.hidden_dim)->group(g);
  sub->add_option("--heads", m.heads)->group(g);
  sub->add_option("--patch-size", m.patch_size)->group(g);
  sub->add_option("--image-size", m.image_size)->group(g);
  sub->add_option("--channels", m.channels)->group(g);
  sub->add_option("--vocab-size", m.vocab_size)->group(g);
  sub->add_option("--max-text-len", m.max_text_len)->group(g);
  sub->add_option("--projection-dim", m.projection_dim)->group(g);
  sub->add_option("--mlp-ratio", m.mlp_ratio)->group(g);
}

struct TrainFlags {
  TrainConfig config;
  std::string prompt_filter = "all";
  std::string target = "uniform";
  std::string similarity = "projected";
  std::string negatives = "uniform";

  TrainConfig resolve() const {
    TrainConfig c = config;
    c.set("prompt_filter", prompt_filter);
    c.target = parse_target_mode(target);
    c.similarity = parse_similarity_mode(similarity);
    c.negatives = parse_negative_strategy(negatives);
    return c;
  }
};

void add_train_options(CLI::App* sub, TrainFlags& t, bool with_ablation_flags) {
  auto* g = "Training";
  auto& c = t.config;
  sub->add_option("--steps", c.steps)->group(g);
  sub->add_option("--batch-size", c.batch_size)->group(g);
  sub->add_option("--lr", c.learning_rate, "Peak learning rate")->group(g);
  sub->add_option("--weight-decay", c.weight_decay)->group(g);
  sub->add_option("--warmup-steps", c.warmup_steps, "Negative: 10% of steps")->group(g);
  sub->add_option("--seed", c.seed)->group(g);
  sub->add_option("--queue-size", c.queue_size)->group(g);
  sub->add_option("--mask-rate", c.mask_rate)->group(g);
  sub->add_option("--checkpoint-interval", c.checkpoint_interval)->group(g);
  sub->add_option("--target", t.target, "uniform | binary_sum")->group(g);
  sub->add_option("--similarity", t.similarity, "projected | raw")->group(g);
  sub->add_option("--negatives", t.negatives, "uniform | hard")->group(g);
  sub->add_option("--ema-momentum", c.ema_momentum, "0 disables the EMA queue encoder")->group(g);
  if (with_ablation_flags) {
    sub->add_option("--prompt-filter", t.prompt_filter, "Comma-separated prompt ids, or 'all'")->group(g);
    sub->add_flag("--shuffled", c.shuffled, "Shuffle descriptions across categories before training")->group(g);
  }
}

struct EvalFlags {
  std::string split = "eval";
  std::string mode = "category";
  std::string pairs;
  int rerank_k = 0;
};

void add_eval_options(CLI::App* sub, EvalFlags& e) {
  auto* g = "Evaluation";
  sub->add_option("--split", e.split, "eval | pretrain")->group(g);
  sub->add_option("--mode", e.mode, "category | instance")->group(g);
  sub->add_option("--pairs", e.pairs, "image_id<TAB>description_id lines (instance mode)")
      ->check(CLI::ExistingFile)
      ->group(g);
  sub->add_option("--rerank-k", e.rerank_k, "Rerank the top k with the matching head (0: off)")->group(g);
}

std::vector<std::pair<std::string, std::string>> read_pairs(const std::string& path) {
  std::vector<std::pair<std::string, std::string>> out;
  if (path.empty()) return out;
  std::ifstream in(path);
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty() || line[0] == '#') continue;
    const auto tab = line.find('\t');
    if (tab == std::string::npos) throw ContractError("pairs file line without a tab: " + line);
    out.emplace_back(line.substr(0, tab), line.substr(tab + 1));
  }
  return out;
}

std::map<std::string, std::uint64_t> seed_table(std::uint64_t master) {
  std::map<std::string, std::uint64_t> s{{"master", master}};
  for (const char* name : {"sampler", "mask", "init", "negatives", "shuffle"}) s[name] = substream_seed(master, name);
  return s;
}

evalkit::EvaluationResult evaluate_checkpoint(const fs::path& checkpoint, const corpus::Manifest& manifest,
                                              const EvalFlags& e, const std::string& hash) {
  auto ckpt = load_checkpoint(checkpoint);
  auto set = evalkit::retrieval_set(manifest, corpus::parse_split(e.split));
  evalkit::ModelEvalOptions options;
  options.mode = evalkit::parse_relevance_mode(e.mode);
  options.similarity = ckpt.train_config.similarity;
  options.rerank_k = e.rerank_k;
  options.instance_pairs = read_pairs(e.pairs);
  options.config_hash = hash;
  return evalkit::evaluate_model(ckpt.model, ckpt.tokenizer, set, options);
}

void write_reports(const fs::path& dir, const evalkit::EvaluationResult& result, const EvalFlags& e,
                   const std::string& checkpoint) {
  json report = result.to_json();
  report["split"] = e.split;
  report["checkpoint"] = checkpoint;
  std::ofstream(dir / "report.json", std::ios::trunc) << report.dump(2) << '\n';
  std::ofstream(dir / "report_i2t.json", std::ios::trunc) << result.i2t.to_json().dump(2) << '\n';
  std::ofstream(dir / "report_t2i.json", std::ios::trunc) << result.t2i.to_json().dump(2) << '\n';
}

constexpr const char* kTableHeader = "(R@1 R@5 R@10 AvgR per direction, then overall AvgR)";

struct PretrainOutcome {
  PretrainResult result;
  std::optional<std::uint64_t> shuffle_seed;
  double cross_category_fraction = 0.0;
};

PretrainOutcome pretrain_into(const fs::path& dir, const corpus::Manifest& manifest, const ModelConfig& model,
                              const TrainConfig& train) {
  Trainer trainer(model, train, prepare_training_data(manifest, train, model));
  PretrainOutcome out;
  out.shuffle_seed = trainer.data().shuffle_seed;
  out.cross_category_fraction = trainer.data().cross_category_fraction;
  out.result = run_pretraining(trainer, dir);
  return out;
}

// ---------------------------------------------------------------------------
// Subcommands

struct BuildCorpusFlags {
  std::string categories;
  std::string templates;
  int responses_per_prompt = 5;
  std::string backend = "fixture";
  std::string fixture_file;
  std::string cache_dir;
  std::string cache_version = "v1";
  std::string images;
  int images_per_category = 8;
  std::string split_policy = "category-holdout";
  double eval_fraction = 0.25;
  std::uint64_t seed = 0;
  int retries = 3;
  int timeout_ms = 30000;
  double max_rps = 0.0;
  int max_in_flight = 4;
  OutputFlags output;
};

int cmd_build_corpus(const CLI::App& sub, const BuildCorpusFlags& f, std::ostream& out) {
  auto entries = promptgen::read_categories(f.categories);
  auto templates = f.templates.empty() ? promptgen::default_templates() : promptgen::read_templates(f.templates);

  std::unique_ptr<promptgen::LanguageModelBackend> backend;
  promptgen::GenerationOptions gen;
  gen.responses_per_prompt = f.responses_per_prompt;
  gen.backend.max_retries = f.retries;
  gen.backend.timeout = std::chrono::milliseconds(f.timeout_ms);
  gen.backend.max_requests_per_second = f.max_rps;
  gen.backend.max_in_flight = f.max_in_flight;
  if (f.backend == "live") {
    backend = std::make_unique<promptgen::LiveBackend>(promptgen::LiveBackend::from_environment(gen.backend));
  } else if (!f.fixture_file.empty()) {
    backend = promptgen::FixtureBackend::from_file(f.fixture_file);
  } else {
    backend = std::make_unique<promptgen::FixtureBackend>(templates);
  }
  promptgen::PromptCache cache(f.cache_version,
                               f.cache_dir.empty() ? std::nullopt : std::optional<fs::path>(f.cache_dir));

  auto config = resolved_options(sub);
  const auto hash = config_hash(config);
  const auto dir = make_run_dir(f.output.out_dir, f.output.runs_root, hash);

  auto text = promptgen::build_text_corpus(entries, templates, *backend, cache, gen);

  corpus::Manifest manifest;
  if (!f.images.empty()) {
    manifest.images = corpus::read_image_records(f.images);
  } else {
    std::vector<std::string> ids;
    for (const auto& e : entries) ids.push_back(e.category_id);
    manifest.images = corpus::synthetic_image_records(ids, f.images_per_category);
  }
  manifest.descriptions = text.records;
  std::set<std::string> known;
  for (const auto& e : entries) known.insert(e.category_id);
  auto index = corpus::build_manifest(manifest.images, manifest.descriptions, known);
  for (const auto& c : index.incomplete_categories()) log::warn("category without images or descriptions: " + c);
  corpus::assign_splits(manifest, corpus::parse_split_policy(f.split_policy), f.eval_fraction, f.seed);

  promptgen::write_description_corpus(dir / "descriptions.jsonl", text.records);
  corpus::write_manifest(dir / "manifest.jsonl", manifest);
  std::ofstream(dir / "stats.json", std::ios::trunc) << text.statistics.to_json().dump(2) << '\n';

  RunManifest run;
  run.subcommand = "build-corpus";
  run.config = config;
  run.config_hash = hash;
  run.seeds = {{"master", f.seed}};
  run.inputs[f.categories] = file_hash(f.categories);
  if (!f.templates.empty()) run.inputs[f.templates] = file_hash(f.templates);
  if (!f.images.empty()) run.inputs[f.images] = file_hash(f.images);
  run.outputs = {(dir / "descriptions.jsonl").string(), (dir / "manifest.jsonl").string(),
                 (dir / "stats.json").string()};
  run.write(dir / "run_manifest.json");
  write_resolved_config(dir / "config.ini", config);

  std::map<promptgen::PromptId, std::string> focus;
  for (const auto& t : templates) focus[t.id] = t.focus;
  out << "prompt  focus                         descriptions\n";
  for (const auto& [id, count] : text.statistics.descriptions_per_prompt) {
    out << std::left << std::setw(8) << promptgen::to_string(id) << std::setw(30) << focus[id] << count << '\n';
  }
  out << "categories " << text.statistics.categories << ", descriptions " << text.statistics.total_texts
      << ", images " << manifest.images.size() << '\n';
  out << "run directory " << dir.string() << '\n';
  return kExitOk;
}

struct PretrainFlags {
  std::string manifest;
  std::string resume;
  ModelConfig model;
  TrainFlags train;
  OutputFlags output;
};

int cmd_pretrain(const CLI::App& sub, const PretrainFlags& f, std::ostream& out, std::ostream& err) {
  auto manifest = corpus::read_manifest(f.manifest);
  ModelConfig model = f.model;
  TrainConfig train = f.train.resolve();
  std::optional<Tokenizer> vocab;
  if (!f.resume.empty()) {
    auto ckpt = load_checkpoint(f.resume);
    model = ckpt.model_config;
    const int steps = sub.get_option("--steps")->count() > 0 ? train.steps : ckpt.train_config.steps;
    train = ckpt.train_config;
    train.steps = steps;
    vocab = ckpt.tokenizer;
  }
  model.validate();
  train.validate();

  auto config = resolved_options(sub);
  const auto hash = config_hash(config);
  fs::path dir;
  if (!f.resume.empty() && f.output.out_dir.empty()) {
    dir = fs::path(f.resume).parent_path().parent_path();
  } else {
    dir = make_run_dir(f.output.out_dir, f.output.runs_root, hash);
  }

  auto data = vocab ? prepare_training_data(manifest, train, *vocab) : prepare_training_data(manifest, train, model);
  const auto shuffle_seed = data.shuffle_seed;
  const auto cross = data.cross_category_fraction;
  Trainer trainer(model, train, std::move(data));
  if (!f.resume.empty()) trainer.load_state(f.resume);

  RunManifest run;
  run.subcommand = "pretrain";
  run.config = config;
  run.config_hash = hash;
  run.seeds = seed_table(train.seed);
  if (shuffle_seed) {
    run.seeds["permutation"] = *shuffle_seed;
    run.config["shuffle.cross_category_fraction"] = std::to_string(cross);
  }
  run.inputs[f.manifest] = file_hash(f.manifest);
  if (!f.resume.empty()) run.inputs[f.resume] = file_hash(fs::path(f.resume) / "parameters.bin");

  try {
    auto result = run_pretraining(trainer, dir);
    run.outputs = {result.metrics.string(), result.checkpoint.string()};
    run.write(dir / "run_manifest.json");
    write_resolved_config(dir / "config.ini", config);
    const auto& last = result.rows.empty() ? StepMetrics{} : result.rows.back();
    out << "steps " << trainer.step() << ", final loss " << last.total << " (itc " << last.itc << ", itm "
        << last.itm << ", mlm " << last.mlm << ", imc " << last.imc << "), tau " << last.tau << '\n';
    out << "checkpoint " << result.checkpoint.string() << '\n';
    out << "run directory " << dir.string() << '\n';
    return kExitOk;
  } catch (const NonFiniteLossError& e) {
    const auto diag = dir / "diagnostics.json";
    std::ofstream(diag, std::ios::trunc)
        << json{{"error", e.what()}, {"step", e.step()}, {"last_good_checkpoint", e.last_good_checkpoint()}}.dump(2)
        << '\n';
    run.outputs = {(dir / "metrics.jsonl").string(), diag.string()};
    run.write(dir / "run_manifest.json");
    err << "error: " << e.what() << "\ndiagnostics: " << diag.string() << '\n';
    return kExitRuntime;
  }
}

struct EvaluateFlags {
  std::string checkpoint;
  std::string manifest;
  EvalFlags eval;
  OutputFlags output;
};

int cmd_evaluate(const CLI::App& sub, const EvaluateFlags& f, std::ostream& out) {
  auto manifest = corpus::read_manifest(f.manifest);
  auto config = resolved_options(sub);
  const auto hash = config_hash(config);
  const auto dir = make_run_dir(f.output.out_dir, f.output.runs_root, hash);
  auto result = evaluate_checkpoint(f.checkpoint, manifest, f.eval, hash);
  write_reports(dir, result, f.eval, f.checkpoint);

  RunManifest run;
  run.subcommand = "evaluate";
  run.config = config;
  run.config_hash = hash;
  run.inputs[f.manifest] = file_hash(f.manifest);
  run.inputs[f.checkpoint] = file_hash(fs::path(f.checkpoint) / "parameters.bin");
  run.outputs = {(dir / "report.json").string(), (dir / "report_i2t.json").string(),
                 (dir / "report_t2i.json").string()};
  run.write(dir / "run_manifest.json");
  write_resolved_config(dir / "config.ini", config);

  out << "mode " << f.eval.mode << ", split " << f.eval.split << ", rerank-k " << f.eval.rerank_k << '\n';
  out << kTableHeader << '\n';
  out << result.table_row() << '\n';
  out << "overall AvgR " << std::fixed << std::setprecision(1) << result.overall_avgr << '\n';
  out << "report " << (dir / "report.json").string() << '\n';
  return kExitOk;
}

struct AblationFlags {
  std::string manifest;
  ModelConfig model;
  TrainFlags train;
  EvalFlags eval;
  OutputFlags output;
};

struct AblationRow {
  std::string label;
  evalkit::EvaluationResult result;
};

void print_table(std::ostream& out, const std::vector<AblationRow>& rows) {
  std::size_t width = 8;
  for (const auto& r : rows) width = std::max(width, r.label.size() + 2);
  const auto w = static_cast<int>(width);
  out << std::left << std::setw(w) << "variant" << kTableHeader << '\n';
  for (const auto& r : rows) out << std::left << std::setw(w) << r.label << r.result.table_row() << '\n';
}

void write_summary(const fs::path& dir, const std::vector<AblationRow>& rows) {
  json j = json::array();
  std::ofstream tsv(dir / "summary.tsv", std::ios::trunc);
  tsv << "variant\ti2t_r1\ti2t_r5\ti2t_r10\ti2t_avgr\tt2i_r1\tt2i_r5\tt2i_r10\tt2i_avgr\toverall_avgr\n";
  for (const auto& r : rows) {
    const auto& a = r.result.i2t;
    const auto& b = r.result.t2i;
    tsv << r.label << '\t' << a.r1 << '\t' << a.r5 << '\t' << a.r10 << '\t' << a.avgr << '\t' << b.r1 << '\t' << b.r5
        << '\t' << b.r10 << '\t' << b.avgr << '\t' << r.result.overall_avgr << '\n';
    auto row = r.result.to_json();
    row["variant"] = r.label;
    j.push_back(row);
  }
  std::ofstream(dir / "summary.json", std::ios::trunc) << j.dump(2) << '\n';
}

int cmd_ablate_prompts(const CLI::App& sub, const AblationFlags& f, std::ostream& out) {
  auto manifest = corpus::read_manifest(f.manifest);
  auto config = resolved_options(sub);
  const auto hash = config_hash(config);
  const auto dir = make_run_dir(f.output.out_dir, f.output.runs_root, hash);
  const auto base = f.train.resolve();

  std::vector<AblationRow> rows;
  std::vector<std::string> outputs;
  const auto templates = promptgen::default_templates();
  std::vector<std::pair<std::string, std::optional<promptgen::PromptId>>> variants;
  for (const auto& t : templates) variants.emplace_back(promptgen::to_string(t.id) + ": " + t.focus, t.id);
  variants.emplace_back("All", std::nullopt);
  for (const auto& [label, id] : variants) {
    TrainConfig train = base;
    if (id) train.prompt_filter = std::set<promptgen::PromptId>{*id};
    else train.prompt_filter.reset();
    const auto sub_dir = dir / (id ? promptgen::to_string(*id) : std::string("All"));
    auto trained = pretrain_into(sub_dir, manifest, f.model, train);
    auto result = evaluate_checkpoint(trained.result.checkpoint, manifest, f.eval, hash);
    write_reports(sub_dir, result, f.eval, trained.result.checkpoint.string());
    outputs.push_back(sub_dir.string());
    rows.push_back({label, result});
    out << label << ": " << result.table_row() << '\n';
  }
  write_summary(dir, rows);
  print_table(out, rows);

  RunManifest run;
  run.subcommand = "ablate-prompts";
  run.config = config;
  run.config_hash = hash;
  run.seeds = seed_table(base.seed);
  run.inputs[f.manifest] = file_hash(f.manifest);
  run.outputs = outputs;
  run.outputs.push_back((dir / "summary.tsv").string());
  run.write(dir / "run_manifest.json");
  write_resolved_config(dir / "config.ini", config);
  return kExitOk;
}

int cmd_ablate_shuffle(const CLI::App& sub, const AblationFlags& f, std::ostream& out) {
  auto manifest = corpus::read_manifest(f.manifest);
  auto config = resolved_options(sub);
  const auto hash = config_hash(config);
  const auto dir = make_run_dir(f.output.out_dir, f.output.runs_root, hash);

  std::vector<AblationRow> rows;
  RunManifest run;
  run.subcommand = "ablate-shuffle";
  for (bool shuffled : {false, true}) {
    TrainConfig train = f.train.resolve();
    train.shuffled = shuffled;
    const auto sub_dir = dir / (shuffled ? "shuffled" : "aligned");
    auto trained = pretrain_into(sub_dir, manifest, f.model, train);
    if (trained.shuffle_seed) run.seeds["permutation"] = *trained.shuffle_seed;
    auto result = evaluate_checkpoint(trained.result.checkpoint, manifest, f.eval, hash);
    write_reports(sub_dir, result, f.eval, trained.result.checkpoint.string());
    run.outputs.push_back(sub_dir.string());
    rows.push_back({shuffled ? "shuffled" : "aligned", result});
  }
  write_summary(dir, rows);
  print_table(out, rows);
  out << std::fixed << std::setprecision(1) << "R@1 gap (aligned - shuffled): I2T "
      << rows[0].result.i2t.r1 - rows[1].result.i2t.r1 << ", T2I " << rows[0].result.t2i.r1 - rows[1].result.t2i.r1
      << '\n';

  run.config = config;
  run.config_hash = hash;
  auto seeds = seed_table(f.train.config.seed);
  run.seeds.insert(seeds.begin(), seeds.end());
  run.inputs[f.manifest] = file_hash(f.manifest);
  run.outputs.push_back((dir / "summary.tsv").string());
  run.write(dir / "run_manifest.json");
  write_resolved_config(dir / "config.ini", config);
  return kExitOk;
}

bool is_input_error(const std::exception& e) {
  return dynamic_cast<const std::invalid_argument*>(&e) != nullptr ||
         dynamic_cast<const ManifestError*>(&e) != nullptr || dynamic_cast<const TemplateError*>(&e) != nullptr ||
         dynamic_cast<const CLI::Error*>(&e) != nullptr;
}

}  // namespace

/// Appends `--key=value` for every key of the `--config` file that the
/// command line does not set, so flags take precedence over the file.
std::vector<std::string> expand_config_file(std::vector<std::string> args) {
  std::string path;
  for (std::size_t i = 0; i < args.size(); ++i) {
    if (args[i] == "--config" && i + 1 < args.size()) path = args[i + 1];
    if (args[i].rfind("--config=", 0) == 0) path = args[i].substr(9);
  }
  if (path.empty()) return args;
  if (!fs::is_regular_file(path)) throw CLI::FileError::Missing(path);
  const auto given = [&](const std::string& key) {
    const std::string flag = "--" + key;
    return std::any_of(args.begin(), args.end(),
                       [&](const std::string& a) { return a == flag || a.rfind(flag + "=", 0) == 0; });
  };
  std::vector<std::string> extra;
  for (const auto& item : CLI::ConfigINI().from_file(path)) {
    if (!item.parents.empty() || item.name == "++" || item.name == "--" || given(item.name)) continue;
    for (const auto& value : item.inputs) extra.push_back("--" + item.name + "=" + value);
  }
  args.insert(args.end(), extra.begin(), extra.end());
  return args;
}

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  std::vector<std::string> expanded;
  try {
    expanded = expand_config_file(std::vector<std::string>(argv + std::min(argc, 1), argv + argc));
  } catch (const CLI::Error& e) {
    err << "error: " << e.what() << '\n';
    return kExitUsage;
  }
  std::vector<const char*> expanded_argv{argc > 0 ? argv[0] : "pitl"};
  for (const auto& a : expanded) expanded_argv.push_back(a.c_str());

  CLI::App app{"Prompt-generated weak supervision for vision-language pre-training", "pitl"};
  app.require_subcommand(1);
  app.option_defaults()->always_capture_default();
  app.set_version_flag("--version", std::string(kToolVersion));

  BuildCorpusFlags bc;
  auto* build = app.add_subcommand("build-corpus", "Generate descriptions and write a corpus manifest");
  build->add_option("--config", "Flat key = value file; flags override it")->type_name("FILE");
  build->add_option("--categories", bc.categories, "category_id<TAB>label[<TAB>syn,syn]")
      ->required()
      ->check(CLI::ExistingFile);
  build->add_option("--templates", bc.templates, "P<n><TAB>template<TAB>focus (default: built-in)")
      ->check(CLI::ExistingFile);
  build->add_option("--responses-per-prompt", bc.responses_per_prompt);
  build->add_option("--backend", bc.backend)->check(CLI::IsMember({"fixture", "live"}));
  build->add_option("--fixture-file", bc.fixture_file, "JSON object: prompt -> responses")
      ->check(CLI::ExistingFile);
  build->add_option("--cache-dir", bc.cache_dir);
  build->add_option("--cache-version", bc.cache_version);
  build->add_option("--images", bc.images, "Image records (JSON lines); default: synthetic")
      ->check(CLI::ExistingFile);
  build->add_option("--images-per-category", bc.images_per_category);
  build->add_option("--split-policy", bc.split_policy)->check(CLI::IsMember({"category-holdout", "instance-holdout"}));
  build->add_option("--eval-fraction", bc.eval_fraction);
  build->add_option("--seed", bc.seed);
  build->add_option("--retries", bc.retries);
  build->add_option("--timeout-ms", bc.timeout_ms);
  build->add_option("--max-rps", bc.max_rps);
  build->add_option("--max-in-flight", bc.max_in_flight);
  add_output_options(build, bc.output);

  PretrainFlags pf;
  auto* pretrain = app.add_subcommand("pretrain", "Pre-train on a corpus manifest");
  pretrain->add_option("--config", "Flat key = value file; flags override it")->type_name("FILE");
  pretrain->add_option("--manifest", pf.manifest)->required()->check(CLI::ExistingFile);
  pretrain->add_option("--resume", pf.resume, "Checkpoint directory to continue from")
      ->check(CLI::ExistingDirectory);
  add_model_options(pretrain, pf.model);
  add_train_options(pretrain, pf.train, true);
  add_output_options(pretrain, pf.output);

  EvaluateFlags ef;
  auto* evaluate = app.add_subcommand("evaluate", "Retrieval evaluation of a checkpoint");
  evaluate->add_option("--config", "Flat key = value file; flags override it")->type_name("FILE");
  evaluate->add_option("--checkpoint", ef.checkpoint)->required()->check(CLI::ExistingDirectory);
  evaluate->add_option("--manifest", ef.manifest)->required()->check(CLI::ExistingFile);
  add_eval_options(evaluate, ef.eval);
  add_output_options(evaluate, ef.output);

  AblationFlags apf;
  auto* ablate_prompts = app.add_subcommand("ablate-prompts", "Train and evaluate per prompt type and on all");
  ablate_prompts->add_option("--config", "Flat key = value file; flags override it")->type_name("FILE");
  ablate_prompts->add_option("--manifest", apf.manifest)->required()->check(CLI::ExistingFile);
  add_model_options(ablate_prompts, apf.model);
  add_train_options(ablate_prompts, apf.train, false);
  add_eval_options(ablate_prompts, apf.eval);
  add_output_options(ablate_prompts, apf.output);

  AblationFlags asf;
  auto* ablate_shuffle = app.add_subcommand("ablate-shuffle", "Paired aligned and shuffled runs");
  ablate_shuffle->add_option("--config", "Flat key = value file; flags override it")->type_name("FILE");
  ablate_shuffle->add_option("--manifest", asf.manifest)->required()->check(CLI::ExistingFile);
  add_model_options(ablate_shuffle, asf.model);
  add_train_options(ablate_shuffle, asf.train, true);
  add_eval_options(ablate_shuffle, asf.eval);
  add_output_options(ablate_shuffle, asf.output);

  try {
    app.parse(static_cast<int>(expanded_argv.size()), expanded_argv.data());
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kExitOk : kExitUsage;
  }

  try {
    if (build->parsed()) return cmd_build_corpus(*build, bc, out);
    if (pretrain->parsed()) return cmd_pretrain(*pretrain, pf, out, err);
    if (evaluate->parsed()) return cmd_evaluate(*evaluate, ef, out);
    if (ablate_prompts->parsed()) return cmd_ablate_prompts(*ablate_prompts, apf, out);
    if (ablate_shuffle->parsed()) return cmd_ablate_shuffle(*ablate_shuffle, asf, out);
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return is_input_error(e) ? kExitUsage : kExitRuntime;
  }
  return kExitUsage;
}

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  std::vector<const char*> argv{"pitl"};
  for (const auto& a : args) argv.push_back(a.c_str());
  return run(static_cast<int>(argv.size()), argv.data(), out, err);
}

}  // namespace pitl::cli
