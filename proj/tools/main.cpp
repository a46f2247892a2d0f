// SPDX-License-Identifier: Apache-2.0
//
// slam: command-line driver for the selective-layer alignment pipeline.

#include <cstdlib>
#include <iostream>
#include <optional>
#include <string>

#include "CLI11.hpp"
#include "slam/checkpoint.hpp"
#include "slam/error.hpp"
#include "slam/pipeline.hpp"

namespace {

enum ExitCode : int { kOk = 0, kUsage = 2, kData = 3, kNumeric = 4, kEmptySelection = 5 };

struct Options {
  std::string config_path;
  std::optional<std::string> workdir;
  std::optional<std::uint64_t> seed;
  std::optional<double> tau;
  std::optional<std::string> policy;
  std::optional<std::string> layers;
  bool overwrite = false;
  bool quiet = false;
  std::string stage = "base";
};

slam::RunConfig resolve(const Options& o) {
  slam::RunConfig c = o.config_path.empty() ? slam::RunConfig{} : slam::load_run_config(o.config_path);
  if (o.workdir) c.workdir = *o.workdir;
  if (o.seed) c.seed = *o.seed;
  if (o.tau) c.tau = *o.tau;
  if (o.policy) c.policy = *o.policy;
  if (o.layers) c.layers = *o.layers;
  c.propagate_seed();
  c.validate();
  return c;
}

slam::Logger logger(const Options& o) {
  if (o.quiet) return {};
  return [](const std::string& line) { std::cerr << line << '\n'; };
}

void guard(const std::filesystem::path& p, bool overwrite) {
  if (!overwrite && std::filesystem::exists(p)) {
    throw slam::OutputExistsError(p.string() + " exists; pass --overwrite to replace it");
  }
}

slam::Model load_stage(const slam::RunPaths& paths, const std::string& stage) {
  if (stage == "base") return slam::load_checkpoint(paths.base_checkpoint);
  if (stage == "aligned") return slam::load_checkpoint(paths.aligned_checkpoint);
  throw slam::ConfigError("--stage must be 'base' or 'aligned'");
}

void print_eval(const slam::EvalReport& r) {
  std::cout << r.split << ":";
  for (const auto& l : r.languages) std::cout << ' ' << l.lang << '=' << l.accuracy;
  std::cout << "  avg_non_english=" << r.avg_non_english_accuracy() << " avg_pcr=" << r.avg_pcr() << '\n';
}

void cmd_gen_data(const Options& o) {
  const auto c = resolve(o);
  slam::gen_data(c, o.overwrite, logger(o));
}

void cmd_train_base(const Options& o) {
  const auto c = resolve(o);
  const slam::RunPaths paths(c);
  guard(paths.base_checkpoint, o.overwrite);
  const auto data = slam::load_dataset(c);
  slam::TrainLog log;
  const slam::Model m = slam::train_base(c, data, &log, logger(o));
  slam::save_checkpoint(m, paths.base_checkpoint);
  slam::save_train_log(paths.base_train_log, log);
  std::cout << "steps=" << log.losses.size() << " final_loss=" << (log.losses.empty() ? 0.0 : log.losses.back())
            << " skipped=" << log.skipped << '\n';
}

void cmd_profile(const Options& o) {
  const auto c = resolve(o);
  const slam::RunPaths paths(c);
  guard(paths.profile(o.stage), o.overwrite);
  const auto data = slam::load_dataset(c);
  const auto p = slam::profile(c, load_stage(paths, o.stage), data);
  slam::save_profile(paths.profile(o.stage), p);
  slam::write_profile_csv(paths.profile_csv(o.stage), p);
  const auto curve = slam::overlap_curve(p);
  std::cout << "avg_overlap:";
  for (double v : curve.avg) std::cout << ' ' << v;
  std::cout << '\n';
}

int cmd_select(const Options& o) {
  const auto c = resolve(o);
  const slam::RunPaths paths(c);
  guard(paths.selection, o.overwrite);
  const auto p = slam::load_profile(paths.profile("base"));
  const auto s = slam::select(c, p);
  std::cout << "K:";
  for (int k : s.result.K) std::cout << ' ' << k;
  std::cout << "  theta=" << s.result.theta << "  selected:";
  for (int k : s.result.selected) std::cout << ' ' << k;
  std::cout << '\n';
  if (s.plan.trainable.empty()) {
    slam::save_selection(paths.selection, s.result, nullptr, nullptr);
    std::cerr << "warning: no layer scored above theta; align will refuse this selection\n";
    return kOk;
  }
  const auto base = slam::load_checkpoint(paths.base_checkpoint);
  slam::save_selection(paths.selection, s.result, &s.plan, &base.config());
  std::cout << "trainable_fraction=" << slam::count_parameters(base.config(), s.plan).fraction << '\n';
  return kOk;
}

void cmd_align(const Options& o) {
  const auto c = resolve(o);
  const slam::RunPaths paths(c);
  guard(paths.aligned_checkpoint, o.overwrite);
  const auto data = slam::load_dataset(c);
  slam::Model m = slam::load_checkpoint(paths.base_checkpoint);
  const auto s = slam::select(c, slam::load_profile(paths.profile("base")));
  if (s.plan.trainable.empty()) throw slam::SelectionError("no layer scored above theta; refusing to train");
  const auto log = slam::align(c, m, s.plan, data, logger(o));
  slam::save_checkpoint(m, paths.aligned_checkpoint);
  slam::save_train_log(paths.align_train_log, log);
  std::cout << "steps=" << log.losses.size() << " final_loss=" << (log.losses.empty() ? 0.0 : log.losses.back())
            << " frozen_unchanged=" << (log.frozen_checksum_before == log.frozen_checksum_after ? "yes" : "no")
            << '\n';
}

void cmd_eval(const Options& o) {
  const auto c = resolve(o);
  const slam::RunPaths paths(c);
  guard(paths.eval(o.stage, "in_domain"), o.overwrite);
  const auto data = slam::load_dataset(c);
  const auto r = slam::evaluate_stage(c, load_stage(paths, o.stage), data);
  std::optional<slam::StageEval> base;
  if (o.stage == "aligned" && std::filesystem::exists(paths.eval("base", "in_domain"))) {
    base = slam::StageEval{slam::load_report(paths.eval("base", "in_domain")),
                           slam::load_report(paths.eval("base", "out_of_domain"))};
  }
  slam::save_report(paths.eval(o.stage, "in_domain"), r.in_domain, base ? &base->in_domain : nullptr);
  slam::save_report(paths.eval(o.stage, "out_of_domain"), r.out_of_domain, base ? &base->out_of_domain : nullptr);
  slam::write_report_csv(paths.eval_csv(o.stage, "in_domain"), r.in_domain);
  slam::write_report_csv(paths.eval_csv(o.stage, "out_of_domain"), r.out_of_domain);
  print_eval(r.in_domain);
  print_eval(r.out_of_domain);
}

void print_summary(const slam::PipelineResult& r) {
  print_eval(r.base.in_domain);
  print_eval(r.aligned.in_domain);
  print_eval(r.base.out_of_domain);
  print_eval(r.aligned.out_of_domain);
  std::cout << "trained_layers:";
  for (int l : r.selection.plan.layers) std::cout << ' ' << l;
  std::cout << "  trainable_fraction=" << r.fraction.fraction << "  frozen_unchanged="
            << (r.align_log.frozen_checksum_before == r.align_log.frozen_checksum_after ? "yes" : "no") << '\n';
  std::cout << "step_ms selective=" << r.selective_step_ms << " all_layers=" << r.all_layers_step_ms << '\n';
}

void cmd_report(const Options& o) {
  const auto c = resolve(o);
  const slam::RunPaths paths(c);
  guard(paths.report, o.overwrite);
  const auto r = slam::assemble_pipeline_result(c, logger(o));
  slam::save_pipeline_report(paths.report, r, c);
  print_summary(r);
}

void cmd_pipeline(const Options& o) {
  const auto c = resolve(o);
  const auto r = slam::run_pipeline(c, o.overwrite, logger(o));
  print_summary(r);
}

void cmd_sweep(const Options& o, bool sublayers) {
  const auto c = resolve(o);
  const slam::RunPaths paths(c);
  const auto out = sublayers ? paths.sweep_sublayers : paths.sweep_layers;
  guard(out, o.overwrite);
  const auto data = slam::load_dataset(c);
  const slam::Model base = slam::load_checkpoint(paths.base_checkpoint);
  std::vector<slam::SweepRow> rows;
  if (sublayers) {
    const auto s = slam::select(c, slam::load_profile(paths.profile("base")));
    if (s.plan.layers.empty()) throw slam::SelectionError("no layers selected for the sub-layer sweep");
    rows = slam::sweep_sublayers(c, base, data, s.plan.layers, logger(o));
  } else {
    rows = slam::sweep_layers(c, base, data, logger(o));
  }
  slam::write_sweep_csv(out, rows);
  for (const auto& r : rows) {
    std::cout << r.label << ": en=" << r.english_accuracy << " avg_non_english=" << r.avg_non_english_accuracy
              << " fraction=" << r.trainable_fraction << '\n';
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Selective-layer multilingual reasoning alignment"};
  app.require_subcommand(1);
  Options o;
  app.add_option("--config", o.config_path, "Run configuration (JSON)")->check(CLI::ExistingFile);
  app.add_option("--workdir", o.workdir, "Output directory (overrides the config)");
  app.add_option("--seed", o.seed, "Global seed");
  app.add_option("--tau", o.tau, "Activation frequency threshold");
  app.add_option("--policy", o.policy,
                 "ffn_up_down|ffn_all|attention_only|attention_and_ffn|all_layers|random:K");
  app.add_option("--layers", o.layers, "Explicit layers, e.g. 1..3 or 1,4");
  app.add_flag("--overwrite", o.overwrite, "Replace existing outputs");
  app.add_flag("-q,--quiet", o.quiet, "No progress output");

  auto* gen = app.add_subcommand("gen-data", "Generate the synthetic corpus");
  auto* base = app.add_subcommand("train-base", "Train the base model on English reasoning");
  auto* prof = app.add_subcommand("profile", "Profile neuron activations per language");
  prof->add_option("--stage", o.stage, "base or aligned")->check(CLI::IsMember({"base", "aligned"}));
  auto* sel = app.add_subcommand("select", "Select layers from the base profile");
  auto* align = app.add_subcommand("align", "Selective alignment on translation data");
  auto* ev = app.add_subcommand("eval", "Evaluate a checkpoint on both test splits");
  ev->add_option("--stage", o.stage, "base or aligned")->check(CLI::IsMember({"base", "aligned"}));
  auto* rep = app.add_subcommand("report", "Summarise a completed run");
  auto* pipe = app.add_subcommand("pipeline", "Run every phase end to end");
  auto* sweep_l = app.add_subcommand("sweep-layers", "Accuracy per end training layer");
  auto* sweep_s = app.add_subcommand("sweep-sublayers", "Accuracy per trained sub-layer set");
  for (auto* sub : app.get_subcommands({})) sub->fallthrough();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kUsage;
  }

  try {
    if (gen->parsed()) cmd_gen_data(o);
    if (base->parsed()) cmd_train_base(o);
    if (prof->parsed()) cmd_profile(o);
    if (sel->parsed()) return cmd_select(o);
    if (align->parsed()) cmd_align(o);
    if (ev->parsed()) cmd_eval(o);
    if (rep->parsed()) cmd_report(o);
    if (pipe->parsed()) cmd_pipeline(o);
    if (sweep_l->parsed()) cmd_sweep(o, false);
    if (sweep_s->parsed()) cmd_sweep(o, true);
  } catch (const slam::ConfigError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kUsage;
  } catch (const slam::NumericError& e) {
    std::cerr << "numeric failure: " << e.what() << '\n';
    return kNumeric;
  } catch (const slam::SelectionError& e) {
    std::cerr << "empty selection: " << e.what() << '\n';
    return kEmptySelection;
  } catch (const slam::Error& e) {
    std::cerr << "data error: " << e.what() << '\n';
    return kData;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return kOk;
}
