// SPDX-License-Identifier: Apache-2.0

#include "slam/pipeline.hpp"

#include <algorithm>
#include <chrono>
#include <sstream>

#include "json_io.hpp"
#include "slam/checkpoint.hpp"
#include "slam/error.hpp"

namespace slam {

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

std::uint64_t fnv1a64(std::string_view bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

// Rethrows the active exception with the phase name prepended, keeping its
// concrete type.
[[noreturn]] void rethrow_tagged(const std::string& phase) {
  const auto tag = [&](const Error& e) { return phase + ": " + e.what(); };
  try {
    throw;
  } catch (const OutputExistsError& e) {
    throw OutputExistsError(tag(e));
  } catch (const ConfigError& e) {
    throw ConfigError(tag(e));
  } catch (const ShapeError& e) {
    throw ShapeError(tag(e));
  } catch (const DataError& e) {
    throw DataError(tag(e));
  } catch (const NumericError& e) {
    throw NumericError(tag(e));
  } catch (const UndefinedError& e) {
    throw UndefinedError(tag(e));
  } catch (const SelectionError& e) {
    throw SelectionError(tag(e));
  } catch (const Error& e) {
    throw Error(tag(e));
  } catch (...) {
    throw;
  }
}

void say(const Logger& log, const std::string& msg) {
  if (log) log(msg);
}

nlohmann::json corpus_to_json(const CorpusConfig& c) {
  nlohmann::json langs = nlohmann::json::array();
  for (const auto& l : c.languages) {
    langs.push_back({{"tag", l.tag}, {"order", std::string(to_string(l.order))}, {"low_resource", l.low_resource}});
  }
  return {{"n_train", c.n_train},
          {"n_translation", c.n_translation},
          {"n_english_translation", c.n_english_translation},
          {"n_test", c.n_test},
          {"low_resource_divisor", c.low_resource_divisor},
          {"ood_template_fraction", c.ood_template_fraction},
          {"min_steps", c.min_steps},
          {"max_steps", c.max_steps},
          {"numbers",
           {{"max_start", c.numbers.max_start},
            {"max_operand", c.numbers.max_operand},
            {"max_value", c.numbers.max_value}}},
          {"seed", c.seed},
          {"languages", langs}};
}

void corpus_from_json(const nlohmann::json& j, CorpusConfig& c) {
  c.n_train = j.value("n_train", c.n_train);
  c.n_translation = j.value("n_translation", c.n_translation);
  c.n_english_translation = j.value("n_english_translation", c.n_english_translation);
  c.n_test = j.value("n_test", c.n_test);
  c.low_resource_divisor = j.value("low_resource_divisor", c.low_resource_divisor);
  c.ood_template_fraction = j.value("ood_template_fraction", c.ood_template_fraction);
  c.min_steps = j.value("min_steps", c.min_steps);
  c.max_steps = j.value("max_steps", c.max_steps);
  if (j.contains("numbers")) {
    const auto& n = j.at("numbers");
    c.numbers.max_start = n.value("max_start", c.numbers.max_start);
    c.numbers.max_operand = n.value("max_operand", c.numbers.max_operand);
    c.numbers.max_value = n.value("max_value", c.numbers.max_value);
  }
  if (j.contains("languages")) {
    c.languages.clear();
    for (const auto& l : j.at("languages")) {
      c.languages.push_back({l.at("tag").get<std::string>(),
                             order_rule_from_string(l.value("order", std::string("identity"))),
                             l.value("low_resource", false)});
    }
  }
}

nlohmann::json train_to_json(const TrainConfig& t) {
  nlohmann::json j = {{"epochs", t.epochs},
                      {"batch_size", t.batch_size},
                      {"learning_rate", t.learning_rate},
                      {"max_seq_len", t.max_seq_len},
                      {"optimizer", t.optimizer == OptimizerKind::adam ? "adam" : "sgd"},
                      {"beta1", t.beta1},
                      {"beta2", t.beta2},
                      {"epsilon", t.epsilon},
                      {"warmup_steps", t.warmup_steps},
                      {"max_steps", t.max_steps},
                      {"seed", t.seed}};
  j["grad_clip"] = t.grad_clip ? nlohmann::json(*t.grad_clip) : nlohmann::json(nullptr);
  return j;
}

void train_from_json(const nlohmann::json& j, TrainConfig& t) {
  t.epochs = j.value("epochs", t.epochs);
  t.batch_size = j.value("batch_size", t.batch_size);
  t.learning_rate = j.value("learning_rate", t.learning_rate);
  t.max_seq_len = j.value("max_seq_len", t.max_seq_len);
  if (j.contains("optimizer")) {
    const auto name = j.at("optimizer").get<std::string>();
    if (name == "adam") {
      t.optimizer = OptimizerKind::adam;
    } else if (name == "sgd") {
      t.optimizer = OptimizerKind::sgd;
    } else {
      throw ConfigError("unknown optimizer '" + name + "'");
    }
  }
  t.beta1 = j.value("beta1", t.beta1);
  t.beta2 = j.value("beta2", t.beta2);
  t.epsilon = j.value("epsilon", t.epsilon);
  t.warmup_steps = j.value("warmup_steps", t.warmup_steps);
  t.max_steps = j.value("max_steps", t.max_steps);
  if (j.contains("grad_clip")) {
    if (j.at("grad_clip").is_null()) {
      t.grad_clip.reset();
    } else {
      t.grad_clip = j.at("grad_clip").get<double>();
    }
  }
}

nlohmann::json run_to_json(const RunConfig& c) {
  nlohmann::json j = {{"workdir", c.workdir.string()},
                      {"data_dir", c.data_dir.string()},
                      {"corpus", corpus_to_json(c.corpus)},
                      {"model", c.model},
                      {"base_train", train_to_json(c.base_train)},
                      {"align_train", train_to_json(c.align_train)},
                      {"tau", c.tau},
                      {"profile_samples", c.profile_samples},
                      {"policy", c.policy},
                      {"max_new_tokens", c.max_new_tokens},
                      {"seed", c.seed}};
  j["layers"] = c.layers ? nlohmann::json(*c.layers) : nlohmann::json(nullptr);
  return j;
}

RunConfig run_from_json(const nlohmann::json& j) {
  RunConfig c;
  try {
    c.workdir = j.value("workdir", c.workdir.string());
    c.data_dir = j.value("data_dir", c.data_dir.string());
    if (j.contains("corpus")) corpus_from_json(j.at("corpus"), c.corpus);
    if (j.contains("model")) from_json(j.at("model"), c.model);
    if (j.contains("base_train")) train_from_json(j.at("base_train"), c.base_train);
    if (j.contains("align_train")) train_from_json(j.at("align_train"), c.align_train);
    c.tau = j.value("tau", c.tau);
    c.profile_samples = j.value("profile_samples", c.profile_samples);
    c.policy = j.value("policy", c.policy);
    if (j.contains("layers") && !j.at("layers").is_null()) c.layers = j.at("layers").get<std::string>();
    c.max_new_tokens = j.value("max_new_tokens", c.max_new_tokens);
    c.seed = j.value("seed", c.seed);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("malformed run config: ") + e.what());
  }
  c.propagate_seed();
  return c;
}

std::vector<TrainingExample> encode_all(const Tokenizer& tok, const std::vector<Sample>& samples) {
  std::vector<TrainingExample> out;
  out.reserve(samples.size());
  for (const Sample& s : samples) out.push_back(encode_for_training(tok, s));
  return out;
}

void guard_output(const std::filesystem::path& path, bool overwrite) {
  if (!overwrite && std::filesystem::exists(path)) {
    throw OutputExistsError(path.string() + " exists; pass --overwrite to replace it");
  }
}

std::filesystem::path corpus_echo(const RunPaths& p) { return p.data_dir / "corpus.json"; }

// Query text between the instruction header and the response header.
std::string query_of(const std::string& prompt) {
  static constexpr std::string_view head = "### Instruction:\n";
  static constexpr std::string_view tail = "\n\n### Response:";
  const auto a = prompt.find(head);
  const auto b = prompt.rfind(tail);
  if (a == std::string::npos || b == std::string::npos || b < a + head.size()) {
    throw DataError("reasoning prompt does not follow the inference template");
  }
  return prompt.substr(a + head.size(), b - a - head.size());
}

nlohmann::json eval_summary(const EvalReport& r) {
  nlohmann::json acc;
  for (const auto& l : r.languages) acc[l.lang] = l.accuracy;
  return {{"accuracy", acc},
          {"pcr", r.pcr},
          {"avg_non_english_accuracy", r.avg_non_english_accuracy()},
          {"avg_pcr", r.avg_pcr()}};
}

nlohmann::json eval_delta(const EvalReport& after, const EvalReport& before) {
  return {{"english_accuracy", after.result(kEnglishTag).accuracy - before.result(kEnglishTag).accuracy},
          {"avg_non_english_accuracy", after.avg_non_english_accuracy() - before.avg_non_english_accuracy()},
          {"avg_pcr", after.avg_pcr() - before.avg_pcr()}};
}

std::string layers_label(const std::vector<int>& layers) {
  std::string s;
  for (int l : layers) s += (s.empty() ? "" : " ") + std::to_string(l);
  return s;
}

SweepRow sweep_row(const RunConfig& config, const Model& base, const Dataset& data, std::string label,
                   const TrainPlan& plan, const Logger& log) {
  Model m = base;
  align(config, m, plan, data);
  const auto rep = evaluate_model(m, data.tokenizer, data.test_in_domain, "in_domain", config.max_new_tokens);
  SweepRow row;
  row.label = std::move(label);
  row.layers = plan.layers;
  row.policy = plan.policy.to_string();
  row.trainable_fraction = count_parameters(m.config(), plan).fraction;
  row.english_accuracy = rep.result(kEnglishTag).accuracy;
  row.avg_non_english_accuracy = rep.avg_non_english_accuracy();
  row.avg_pcr = rep.avg_pcr();
  say(log, "sweep: " + row.label + " en=" + std::to_string(row.english_accuracy) +
               " avg_x=" + std::to_string(row.avg_non_english_accuracy));
  return row;
}

}  // namespace

void RunConfig::propagate_seed() {
  corpus.seed = seed;
  model.seed = seed;
  base_train.seed = seed + 1;
  align_train.seed = seed + 2;
}

void RunConfig::validate() const {
  if (workdir.empty()) throw ConfigError("workdir must not be empty");
  if (corpus.n_test < 1) throw ConfigError("corpus.n_test must be >= 1");
  if (corpus.n_train < 1) throw ConfigError("corpus.n_train must be >= 1");
  if (!(tau >= 0.0 && tau < 1.0)) throw ConfigError("tau must lie in [0, 1)");
  if (profile_samples < 1) throw ConfigError("profile_samples must be >= 1");
  if (max_new_tokens < 1) throw ConfigError("max_new_tokens must be >= 1");
  ModelConfig m = model;
  m.vocab_size = std::max(m.vocab_size, 1);
  m.validate();
  base_train.validate();
  align_train.validate();
  Policy::parse(policy, seed);
  if (layers) parse_layer_spec(*layers);
}

RunConfig load_run_config(const std::filesystem::path& path) {
  try {
    return run_from_json(read_json_file(path));
  } catch (const DataError& e) {
    throw ConfigError(e.what());
  }
}

RunConfig run_config_from_json_text(std::string_view text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("malformed run config: ") + e.what());
  }
  return run_from_json(j);
}

std::string run_config_to_json_text(const RunConfig& config) { return run_to_json(config).dump(2); }

RunPaths::RunPaths(const RunConfig& config)
    : workdir(config.workdir), data_dir(config.data_dir.empty() ? config.workdir / "data" : config.data_dir) {
  reasoning_train = data_dir / "train_reasoning.jsonl";
  translation_train = data_dir / "train_translation.jsonl";
  test_in_domain = data_dir / "test_in_domain.jsonl";
  test_out_of_domain = data_dir / "test_out_of_domain.jsonl";
  base_checkpoint = workdir / "checkpoints" / "base.ckpt";
  aligned_checkpoint = workdir / "checkpoints" / "aligned.ckpt";
  base_train_log = workdir / "logs" / "base_train.json";
  align_train_log = workdir / "logs" / "align_train.json";
  selection = workdir / "selection.json";
  report = workdir / "report.json";
  config_echo = workdir / "config.json";
  sweep_layers = workdir / "sweeps" / "layers.csv";
  sweep_sublayers = workdir / "sweeps" / "sublayers.csv";
}

std::filesystem::path RunPaths::profile(std::string_view stage) const {
  return workdir / "profile" / (std::string(stage) + ".json");
}
std::filesystem::path RunPaths::profile_csv(std::string_view stage) const {
  return workdir / "profile" / (std::string(stage) + ".csv");
}
std::filesystem::path RunPaths::eval(std::string_view stage, std::string_view split) const {
  return workdir / "eval" / (std::string(stage) + "_" + std::string(split) + ".json");
}
std::filesystem::path RunPaths::eval_csv(std::string_view stage, std::string_view split) const {
  return workdir / "eval" / (std::string(stage) + "_" + std::string(split) + ".csv");
}

Dataset gen_data(const RunConfig& config, bool overwrite, const Logger& log) {
  config.validate();
  const RunPaths paths(config);
  for (const auto& p : {paths.reasoning_train, paths.translation_train, paths.test_in_domain,
                        paths.test_out_of_domain}) {
    guard_output(p, overwrite);
  }
  Corpus corpus = build_datasets(config.corpus);
  write_jsonl(paths.reasoning_train, corpus.reasoning_train);
  write_jsonl(paths.translation_train, corpus.translation_train);
  write_jsonl(paths.test_in_domain, corpus.test_in_domain);
  write_jsonl(paths.test_out_of_domain, corpus.test_out_of_domain);
  write_json_file(corpus_echo(paths), corpus_to_json(config.corpus));
  say(log, "gen-data: " + std::to_string(corpus.reasoning_train.size()) + " reasoning, " +
               std::to_string(corpus.translation_train.size()) + " translation, " +
               std::to_string(corpus.test_in_domain.size()) + " + " +
               std::to_string(corpus.test_out_of_domain.size()) + " test samples, vocabulary " +
               std::to_string(corpus.tokenizer.size()));
  return Dataset{std::move(corpus.languages), std::move(corpus.tokenizer), std::move(corpus.reasoning_train),
                 std::move(corpus.translation_train), std::move(corpus.test_in_domain),
                 std::move(corpus.test_out_of_domain)};
}

Dataset load_dataset(const RunConfig& config) {
  const RunPaths paths(config);
  if (!std::filesystem::exists(corpus_echo(paths))) {
    throw DataError("no dataset in " + paths.data_dir.string() + "; run gen-data first");
  }
  if (read_json_file(corpus_echo(paths)) != corpus_to_json(config.corpus)) {
    throw DataError("dataset in " + paths.data_dir.string() +
                    " was generated from a different corpus config; rerun gen-data with --overwrite");
  }
  Dataset d;
  d.languages = build_languages(config.corpus);
  d.tokenizer = build_tokenizer(d.languages);
  d.reasoning_train = read_jsonl(paths.reasoning_train);
  d.translation_train = read_jsonl(paths.translation_train);
  d.test_in_domain = read_jsonl(paths.test_in_domain);
  d.test_out_of_domain = read_jsonl(paths.test_out_of_domain);
  return d;
}

std::map<std::string, std::vector<std::vector<TokenId>>> profiling_prompts(const Dataset& data, int n) {
  std::map<std::string, std::vector<std::vector<TokenId>>> out;
  const auto count = std::min(static_cast<std::size_t>(std::max(n, 0)), data.reasoning_train.size());
  for (const ToyLanguage& lang : data.languages) {
    auto& prompts = out[lang.tag()];
    for (std::size_t i = 0; i < count; ++i) {
      Sample s;
      s.prompt = render_inference_prompt(lang.encode(query_of(data.reasoning_train[i].prompt)));
      prompts.push_back(encode_prompt(data.tokenizer, s));
    }
  }
  return out;
}

ModelConfig resolved_model_config(const RunConfig& config, const Tokenizer& tok) {
  ModelConfig m = config.model;
  m.vocab_size = static_cast<int>(tok.size());
  m.validate();
  return m;
}

Model train_base(const RunConfig& config, const Dataset& data, TrainLog* log_out, const Logger& log) {
  Model model(resolved_model_config(config, data.tokenizer));
  const auto examples = encode_all(data.tokenizer, data.reasoning_train);
  const auto plan = build_train_plan(model.config(), std::vector<int>{}, Policy::parse("all_layers"));
  TrainLog tl = train(model, examples, plan, config.base_train, [&](std::uint64_t step, double loss) {
    if (step % 50 == 0) say(log, "train-base: step " + std::to_string(step) + " loss " + std::to_string(loss));
  });
  if (log_out) *log_out = std::move(tl);
  return model;
}

ActivationProfile profile(const RunConfig& config, const Model& model, const Dataset& data) {
  return profile_model(model, profiling_prompts(data, config.profile_samples), config.tau);
}

Selection select(const RunConfig& config, const ActivationProfile& profile) {
  Selection s;
  const Policy policy = Policy::parse(config.policy, config.seed);
  const bool needs_scores = !config.layers && policy.kind != PolicyKind::all_layers &&
                            policy.kind != PolicyKind::random_layers;
  try {
    s.result = select_layers(profile);
  } catch (const SelectionError&) {
    if (needs_scores) throw;
  }
  const ModelConfig& mc = config.model;
  ModelConfig shape = mc;
  shape.n_layers = profile.n_layers();
  shape.d_inter = profile.d_inter();
  shape.vocab_size = std::max(shape.vocab_size, 1);
  if (config.layers) {
    s.plan = build_train_plan(shape, parse_layer_spec(*config.layers), policy);
  } else if (!s.result.empty() || policy.kind == PolicyKind::all_layers ||
             policy.kind == PolicyKind::random_layers) {
    s.plan = build_train_plan(shape, s.result, policy);
  } else {
    s.plan.policy = policy;
  }
  return s;
}

TrainLog align(const RunConfig& config, Model& model, const TrainPlan& plan, const Dataset& data,
               const Logger& log) {
  const auto examples = encode_all(data.tokenizer, data.translation_train);
  return train(model, examples, plan, config.align_train, [&](std::uint64_t step, double loss) {
    if (step % 50 == 0) say(log, "align: step " + std::to_string(step) + " loss " + std::to_string(loss));
  });
}

StageEval evaluate_stage(const RunConfig& config, const Model& model, const Dataset& data) {
  return {evaluate_model(model, data.tokenizer, data.test_in_domain, "in_domain", config.max_new_tokens),
          evaluate_model(model, data.tokenizer, data.test_out_of_domain, "out_of_domain", config.max_new_tokens)};
}

OverlapShift overlap_shift(const ActivationProfile& before, const ActivationProfile& after,
                           const std::vector<int>& layers) {
  const auto a = overlap_curve(before);
  const auto b = overlap_curve(after);
  OverlapShift s;
  for (int l : layers) {
    s.before[l] = a.avg.at(static_cast<std::size_t>(l - 1));
    s.after[l] = b.avg.at(static_cast<std::size_t>(l - 1));
  }
  return s;
}

std::pair<double, double> step_time_comparison(const RunConfig& config, const Model& model,
                                               const TrainPlan& plan, const Dataset& data, int steps) {
  const auto examples = encode_all(data.tokenizer, data.translation_train);
  if (examples.empty()) throw DataError("no translation data for the timing comparison");
  const auto n = std::min(examples.size(), static_cast<std::size_t>(config.align_train.batch_size));
  const std::span<const TrainingExample> batch(examples.data(), n);
  Model a = model;
  Model b = model;
  SelectiveTrainer selective(a, plan.trainable, config.align_train);
  SelectiveTrainer full(b, build_train_plan(model.config(), std::vector<int>{}, Policy::parse("all_layers")).trainable,
                        config.align_train);
  selective.step(batch);
  full.step(batch);
  double ts = 0.0;
  double tf = 0.0;
  // Interleaved so that drift in machine load hits both plans alike.
  for (int i = 0; i < steps; ++i) {
    auto t0 = Clock::now();
    selective.step(batch);
    ts += seconds_since(t0);
    t0 = Clock::now();
    full.step(batch);
    tf += seconds_since(t0);
  }
  return {1000.0 * ts / steps, 1000.0 * tf / steps};
}

PipelineResult run_pipeline(const RunConfig& config, bool overwrite, const Logger& log) {
  config.validate();
  const RunPaths paths(config);
  for (const auto& p : {paths.base_checkpoint, paths.aligned_checkpoint, paths.selection, paths.report}) {
    guard_output(p, overwrite);
  }
  write_text_file(paths.config_echo, run_config_to_json_text(config) + "\n");
  PipelineResult r;
  auto phase = [&](const std::string& name, auto&& fn) {
    say(log, "== " + name);
    const auto t0 = Clock::now();
    try {
      fn();
    } catch (const Error&) {
      rethrow_tagged(name);
    }
    r.phase_seconds[name] = seconds_since(t0);
  };

  Dataset data;
  phase("gen-data", [&] {
    data = std::filesystem::exists(corpus_echo(paths)) && !overwrite ? load_dataset(config)
                                                                     : gen_data(config, true, log);
  });
  std::optional<Model> model;
  phase("train-base", [&] {
    model.emplace(train_base(config, data, &r.base_log, log));
    save_checkpoint(*model, paths.base_checkpoint);
    save_train_log(paths.base_train_log, r.base_log);
  });
  phase("eval-base", [&] {
    r.base = evaluate_stage(config, *model, data);
    save_report(paths.eval("base", "in_domain"), r.base.in_domain);
    save_report(paths.eval("base", "out_of_domain"), r.base.out_of_domain);
    write_report_csv(paths.eval_csv("base", "in_domain"), r.base.in_domain);
    write_report_csv(paths.eval_csv("base", "out_of_domain"), r.base.out_of_domain);
  });
  ActivationProfile before;
  phase("profile-base", [&] {
    before = profile(config, *model, data);
    save_profile(paths.profile("base"), before);
    write_profile_csv(paths.profile_csv("base"), before);
  });
  phase("select", [&] {
    r.selection = select(config, before);
    if (r.selection.plan.trainable.empty()) {
      save_selection(paths.selection, r.selection.result, nullptr, nullptr);
      throw SelectionError("no layer scored above theta; nothing to align");
    }
    save_selection(paths.selection, r.selection.result, &r.selection.plan, &model->config());
    r.fraction = count_parameters(model->config(), r.selection.plan);
    say(log, "select: layers " + layers_label(r.selection.plan.layers) + " policy " +
                 r.selection.plan.policy.to_string() + " fraction " + std::to_string(r.fraction.fraction));
  });
  phase("align", [&] {
    r.align_log = align(config, *model, r.selection.plan, data, log);
    save_checkpoint(*model, paths.aligned_checkpoint);
    save_train_log(paths.align_train_log, r.align_log);
  });
  phase("eval-aligned", [&] {
    r.aligned = evaluate_stage(config, *model, data);
    save_report(paths.eval("aligned", "in_domain"), r.aligned.in_domain, &r.base.in_domain);
    save_report(paths.eval("aligned", "out_of_domain"), r.aligned.out_of_domain, &r.base.out_of_domain);
    write_report_csv(paths.eval_csv("aligned", "in_domain"), r.aligned.in_domain);
    write_report_csv(paths.eval_csv("aligned", "out_of_domain"), r.aligned.out_of_domain);
  });
  phase("profile-aligned", [&] {
    const auto after = profile(config, *model, data);
    save_profile(paths.profile("aligned"), after);
    write_profile_csv(paths.profile_csv("aligned"), after);
    r.overlap = overlap_shift(before, after, r.selection.plan.layers);
  });
  phase("timing", [&] {
    const Model base = load_checkpoint(paths.base_checkpoint);
    std::tie(r.selective_step_ms, r.all_layers_step_ms) =
        step_time_comparison(config, base, r.selection.plan, data, 5);
  });
  save_pipeline_report(paths.report, r, config);
  say(log, "report: " + paths.report.string());
  return r;
}

PipelineResult assemble_pipeline_result(const RunConfig& config, const Logger& log) {
  const RunPaths paths(config);
  const Dataset data = load_dataset(config);
  PipelineResult r;
  const Model base = load_checkpoint(paths.base_checkpoint);
  const Model aligned = load_checkpoint(paths.aligned_checkpoint);
  const ActivationProfile before = load_profile(paths.profile("base"));
  r.selection = select(config, before);
  if (r.selection.plan.trainable.empty()) throw SelectionError("no layer scored above theta; nothing was aligned");
  r.fraction = count_parameters(base.config(), r.selection.plan);
  r.base = {load_report(paths.eval("base", "in_domain")), load_report(paths.eval("base", "out_of_domain"))};
  r.aligned = {load_report(paths.eval("aligned", "in_domain")), load_report(paths.eval("aligned", "out_of_domain"))};
  r.base_log = load_train_log(paths.base_train_log);
  r.align_log = load_train_log(paths.align_train_log);
  std::vector<ParamRef> frozen;
  for (const ParamRef& ref : base.registry()) {
    if (std::find(r.selection.plan.trainable.begin(), r.selection.plan.trainable.end(), ref) ==
        r.selection.plan.trainable.end()) {
      frozen.push_back(ref);
    }
  }
  r.align_log.frozen_checksum_before = frozen.empty() ? 0 : parameter_checksum(base, frozen);
  r.align_log.frozen_checksum_after = frozen.empty() ? 0 : parameter_checksum(aligned, frozen);
  const auto after_path = paths.profile("aligned");
  const ActivationProfile after = std::filesystem::exists(after_path) ? load_profile(after_path)
                                                                      : profile(config, aligned, data);
  r.overlap = overlap_shift(before, after, r.selection.plan.layers);
  say(log, "report: timing the selective and all-layer plans");
  std::tie(r.selective_step_ms, r.all_layers_step_ms) = step_time_comparison(config, base, r.selection.plan, data, 5);
  return r;
}

void save_pipeline_report(const std::filesystem::path& path, const PipelineResult& r, const RunConfig& config) {
  nlohmann::json det;
  det["selection"] = {{"K", r.selection.result.K},
                      {"msd", r.selection.result.msd_per_layer},
                      {"theta", r.selection.result.theta},
                      {"selected", r.selection.result.selected},
                      {"trained_layers", r.selection.plan.layers},
                      {"policy", r.selection.plan.policy.to_string()}};
  det["trainable_params"] = r.fraction.trainable;
  det["total_params"] = r.fraction.total;
  det["trainable_param_fraction"] = r.fraction.fraction;
  det["frozen_checksum_before"] = r.align_log.frozen_checksum_before;
  det["frozen_checksum_after"] = r.align_log.frozen_checksum_after;
  det["frozen_region_unchanged"] = r.align_log.frozen_checksum_before == r.align_log.frozen_checksum_after;
  det["base"] = {{"in_domain", eval_summary(r.base.in_domain)},
                 {"out_of_domain", eval_summary(r.base.out_of_domain)},
                 {"final_loss", r.base_log.losses.empty() ? 0.0 : r.base_log.losses.back()},
                 {"steps", r.base_log.losses.size()},
                 {"skipped", r.base_log.skipped}};
  det["aligned"] = {{"in_domain", eval_summary(r.aligned.in_domain)},
                    {"out_of_domain", eval_summary(r.aligned.out_of_domain)},
                    {"final_loss", r.align_log.losses.empty() ? 0.0 : r.align_log.losses.back()},
                    {"steps", r.align_log.losses.size()},
                    {"skipped", r.align_log.skipped}};
  det["deltas"] = {{"in_domain", eval_delta(r.aligned.in_domain, r.base.in_domain)},
                   {"out_of_domain", eval_delta(r.aligned.out_of_domain, r.base.out_of_domain)}};
  nlohmann::json shift = nlohmann::json::array();
  for (const auto& [layer, b] : r.overlap.before) {
    shift.push_back({{"layer", layer}, {"before", b}, {"after", r.overlap.after.at(layer)}});
  }
  det["overlap_shift"] = shift;
  det["seed"] = config.seed;

  nlohmann::json j;
  j["results"] = det;
  // Wall-clock values vary between identical runs and stay out of the checksum.
  j["report_checksum"] = fnv1a64(det.dump());
  j["timing"] = {{"selective_step_ms", r.selective_step_ms},
                 {"all_layers_step_ms", r.all_layers_step_ms},
                 {"cost_ratio_all_over_selective",
                  r.selective_step_ms > 0.0 ? r.all_layers_step_ms / r.selective_step_ms : 0.0},
                 {"base_mean_step_ms", r.base_log.mean_step_ms()},
                 {"align_mean_step_ms", r.align_log.mean_step_ms()},
                 {"phase_seconds", r.phase_seconds}};
  write_json_file(path, j);
}

std::vector<SweepRow> sweep_layers(const RunConfig& config, const Model& base, const Dataset& data,
                                   const Logger& log) {
  std::vector<SweepRow> rows;
  const ModelConfig& mc = base.config();
  const Policy up_down = Policy::parse("ffn_up_down");
  for (int k = 1; k <= mc.n_layers; ++k) {
    std::vector<int> layers;
    for (int l = 1; l <= k; ++l) layers.push_back(l);
    rows.push_back(sweep_row(config, base, data, "1.." + std::to_string(k), build_train_plan(mc, layers, up_down), log));
  }
  const int r = std::max(1, mc.n_layers / 2);
  rows.push_back(sweep_row(config, base, data, "R",
                           build_train_plan(mc, std::vector<int>{}, Policy::parse("random:" + std::to_string(r), config.seed)),
                           log));
  std::vector<int> every;
  for (int l = 1; l <= mc.n_layers; ++l) every.push_back(l);
  rows.push_back(sweep_row(config, base, data, "A", build_train_plan(mc, every, up_down), log));
  return rows;
}

std::vector<SweepRow> sweep_sublayers(const RunConfig& config, const Model& base, const Dataset& data,
                                      const std::vector<int>& layers, const Logger& log) {
  std::vector<SweepRow> rows;
  for (const char* p : {"ffn_up_down", "ffn_all", "attention_only", "attention_and_ffn"}) {
    rows.push_back(sweep_row(config, base, data, p, build_train_plan(base.config(), layers, Policy::parse(p)), log));
  }
  return rows;
}

void write_sweep_csv(const std::filesystem::path& path, const std::vector<SweepRow>& rows) {
  std::ostringstream out;
  out.precision(17);
  out << "label,layers,policy,trainable_fraction,english_accuracy,avg_non_english_accuracy,avg_pcr\n";
  for (const auto& r : rows) {
    out << r.label << ',' << layers_label(r.layers) << ',' << r.policy << ',' << r.trainable_fraction << ','
        << r.english_accuracy << ',' << r.avg_non_english_accuracy << ',' << r.avg_pcr << '\n';
  }
  write_text_file(path, out.str());
}

}  // namespace slam
