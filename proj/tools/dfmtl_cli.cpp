// dfmtl: corpus generation, training, evaluation, self-checks and reports.
//
// Exit codes: 0 success, 1 check failure, 2 usage or configuration error.

#include "dfmtl/config.hpp"
#include "dfmtl/eval.hpp"
#include "dfmtl/selfcheck.hpp"
#include "dfmtl/synth.hpp"
#include "dfmtl/train.hpp"

#include <CLI11.hpp>
#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

#include <iostream>

namespace fs = std::filesystem;
using namespace dfmtl;

namespace {

constexpr int kOk = 0;
constexpr int kCheckFailed = 1;
constexpr int kUsage = 2;

int cmd_synth(std::uint64_t seed, int per_class, int frames, int size, const std::string& out) {
  synth::CorpusOptions o;
  o.seed = seed;
  o.videos_per_class = per_class;
  o.frames = frames;
  o.height = size;
  o.width = size;
  const fs::path dir = resolve_output_path(out);
  const Manifest m = synth::generate_synthetic_corpus(o, dir);
  std::cout << "wrote " << m.rows.size() << " videos and " << (dir / "manifest.csv").string() << "\n";
  return kOk;
}

int cmd_train(const std::string& config_path, const std::string& resume) {
  const TrainConfig c = load_train_config(config_path);
  RunOptions opts;
  if (!resume.empty()) opts.resume = resume;
  const RunReport r = run(c, opts);
  if (c.regime == Regime::BinConMultiCon) spdlog::info("two key queues (binary, multi-class) in use");
  std::cout << "run " << c.run_label() << " finished: " << r.epochs.size() << " epoch record(s), best val accuracy "
            << r.best_val_accuracy << " (epoch " << r.best_epoch << ")\n"
            << "outputs in " << r.output_dir.string() << "\n";
  return kOk;
}

int cmd_eval(const std::string& ckpt, const std::string& manifest_path, const std::string& held_out, int k,
             const std::string& report_path) {
  const LoadedModel lm = load_for_inference(ckpt);
  const Manifest manifest = load_manifest(manifest_path);
  const SplitSpec split = build_split(manifest, held_out);
  VideoStore store;
  const int clip_length = static_cast<int>(lm.model.spec().encoder.input.frames);
  const EvalResult r = evaluate(lm.model, lm.weights, split.test, store, clip_length, k);
  if (r.scores.empty()) {
    std::cerr << "error: no test video could be scored\n";
    return kUsage;
  }
  ReportRow row{join_methods(split.train_methods), held_out, lm.meta.value("label", to_string(lm.model.spec().regime)),
                r.accuracy};
  const fs::path csv = report_path.empty() ? fs::path(ckpt).parent_path() / "cross_manipulation.csv"
                                           : resolve_output_path(report_path);
  append_report_row(csv, row);
  std::cout << "held-out " << held_out << ": accuracy " << r.accuracy << " over " << r.scores.size()
            << " videos (" << r.excluded << " excluded); appended to " << csv.string() << "\n";
  return kOk;
}

int cmd_selfcheck(bool as_json, bool inject_sign_error) {
  AnchorGradient g = analytic_anchor_gradient();
  if (inject_sign_error) {
    g = [inner = g](const VecR& a, const MatR& k, const PoolIndex& p, Temperature<Real> t) -> VecR {
      return -inner(a, k, p, t);
    };
  }
  const SelfcheckReport rep = run_selfcheck(g);
  if (as_json)
    std::cout << rep.to_json().dump(2) << "\n";
  else
    std::cout << rep.to_text();
  return rep.all_passed() ? kOk : kCheckFailed;
}

int cmd_report(const std::vector<std::string>& inputs, const std::string& out) {
  std::vector<ReportRow> rows;
  for (const auto& in : inputs)
    for (auto& r : read_report_rows(in)) rows.push_back(std::move(r));
  if (rows.empty()) {
    std::cerr << "error: no completed runs in the inputs\n";
    return kUsage;
  }
  const CrossManipReport rep = build_report(std::move(rows));
  const fs::path dir = resolve_output_path(out);
  emit_report(rep, dir);
  std::cout << format_report(rep);
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  spdlog::set_default_logger(spdlog::stderr_color_mt("dfmtl"));  // stdout stays machine-readable
  CLI::App app{"Multi-task and label-informed contrastive training for manipulated-video detection"};
  app.require_subcommand(1);

  auto* synth = app.add_subcommand("synth", "Generate the synthetic desk-scale corpus");
  std::uint64_t seed = 7;
  int per_class = 20, frames = 32, size = 32;
  std::string out;
  synth->add_option("--seed", seed, "Generator seed")->capture_default_str();
  synth->add_option("--videos-per-class", per_class, "Videos per class")->capture_default_str()->check(CLI::NonNegativeNumber);
  synth->add_option("--frames", frames, "Frames per video")->capture_default_str()->check(CLI::PositiveNumber);
  synth->add_option("--size", size, "Frame height and width")->capture_default_str()->check(CLI::PositiveNumber);
  synth->add_option("--out", out, "Output directory")->required();

  auto* train = app.add_subcommand("train", "Train one regime from a JSON config");
  std::string config_path, resume;
  train->add_option("--config", config_path, "Run config (JSON)")->required()->check(CLI::ExistingFile);
  train->add_option("--resume", resume, "Checkpoint to resume from")->check(CLI::ExistingFile);

  auto* eval = app.add_subcommand("eval", "Score a checkpoint on a held-out manipulation");
  std::string ckpt, manifest, held_out, report_csv;
  int k = 3;
  eval->add_option("--ckpt", ckpt, "Checkpoint file")->required()->check(CLI::ExistingFile);
  eval->add_option("--manifest", manifest, "Manifest CSV")->required()->check(CLI::ExistingFile);
  eval->add_option("--held-out", held_out, "Held-out method")->required();
  eval->add_option("--k", k, "Uniform clips per video")->capture_default_str()->check(CLI::PositiveNumber);
  eval->add_option("--report", report_csv, "Report CSV to append to (default: next to the checkpoint)");

  auto* selfcheck = app.add_subcommand("selfcheck", "Analytic loss values and gradient checks");
  bool as_json = false, inject = false;
  selfcheck->add_flag("--json", as_json, "Machine-readable output");
  selfcheck->add_flag("--inject-sign-error", inject, "Flip the analytic gradient sign (fixture)")->group("");

  auto* report = app.add_subcommand("report", "Assemble report CSVs into cross-manipulation tables");
  std::vector<std::string> inputs;
  std::string report_out;
  report->add_option("--inputs", inputs, "Report CSV files")->required()->check(CLI::ExistingFile);
  report->add_option("--out", report_out, "Output directory")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kUsage;
  }

  try {
    if (*synth) return cmd_synth(seed, per_class, frames, size, out);
    if (*train) return cmd_train(config_path, resume);
    if (*eval) return cmd_eval(ckpt, manifest, held_out, k, report_csv);
    if (*selfcheck) return cmd_selfcheck(as_json, inject);
    if (*report) return cmd_report(inputs, report_out);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kUsage;
  } catch (const IngestionError& e) {
    std::cerr << "input error: " << e.what() << "\n";
    return kUsage;
  } catch (const TrainingError& e) {
    std::cerr << "training aborted: " << e.what() << "\n";
    return kCheckFailed;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kCheckFailed;
  }
  return kUsage;
}
