// biasal: RGB-D salient object detection with bilateral attention refinement.
// Subcommands: synth, train, infer, eval, bench, gradcheck, report.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "bianet/bench.hpp"
#include "bianet/checkpoint.hpp"
#include "bianet/cost.hpp"
#include "bianet/dataio.hpp"
#include "bianet/gradcheck_suite.hpp"
#include "bianet/metrics.hpp"
#include "bianet/network.hpp"
#include "bianet/train.hpp"

namespace fs = std::filesystem;
using namespace bianet;

namespace {

struct NetFlags {
  bool toy = false;
  int mbam = -1;
  bool no_depth = false;
  bool ff_only = false;
  bool bf_only = false;
  bool plain_conv = false;
  std::vector<int> input_size;
  std::string config_path;

  void attach(CLI::App* cmd) {
    cmd->add_flag("--toy", toy, "Small preset: toy backbone, 64x64 input");
    cmd->add_option("--mbam", mbam, "Number of multi-scale levels (0..5)")
        ->check(CLI::Range(0, 5));
    cmd->add_flag("--no-depth", no_depth, "RGB stream only");
    cmd->add_flag("--ff-only", ff_only, "Foreground-first branch only");
    cmd->add_flag("--bf-only", bf_only, "Background-first branch only");
    cmd->add_flag("--plain-conv", plain_conv,
                  "No attention weighting in the refinement modules");
    cmd->add_option("--input-size", input_size,
                    "Network input H W (divisible by 32)")
        ->expected(2);
    cmd->add_option("--config", config_path,
                    "JSON config file; flags override its values");
  }

  nlohmann::json config_json() const {
    if (config_path.empty()) return nlohmann::json::object();
    std::ifstream f(config_path);
    if (!f) throw IoError("config: cannot open " + config_path);
    return nlohmann::json::parse(f);
  }

  NetConfig net_config() const {
    const auto j = config_json();
    NetConfig cfg;
    if (j.contains("net")) cfg = j["net"].get<NetConfig>();
    if (toy) {
      NetConfig t = NetConfig::toy();
      t.mbam_count = cfg.mbam_count;
      cfg = t;
    }
    if (mbam >= 0) cfg.mbam_count = mbam;
    if (no_depth) cfg.depth_stream = false;
    if (ff_only && bf_only) {
      throw ConfigError("--ff-only and --bf-only are mutually exclusive");
    }
    if (ff_only) {
      cfg.ff = true;
      cfg.bf = false;
    }
    if (bf_only) {
      cfg.ff = false;
      cfg.bf = true;
    }
    if (plain_conv) cfg.ff = cfg.bf = false;
    if (!input_size.empty()) {
      cfg.input_h = input_size[0];
      cfg.input_w = input_size[1];
    }
    cfg.validate();
    return cfg;
  }
};

std::vector<TrainSample<float>> load_training_set(const Manifest& manifest,
                                                  const NetConfig& cfg) {
  std::vector<TrainSample<float>> set;
  for (const auto& row : manifest.rows) {
    set.push_back(to_train_sample(
        load_sample(manifest, row, cfg.input_h, cfg.input_w)));
  }
  return set;
}

int cmd_synth(std::uint64_t seed, int n, int size, const std::string& out) {
  auto manifest = synth_generate(seed, n, size, out);
  std::printf("wrote %zu samples to %s\n", manifest.rows.size(), out.c_str());
  return 0;
}

int cmd_train(const NetFlags& flags, std::uint64_t seed,
              const std::string& manifest_path, const std::string& out,
              int epochs, int batch, int steps) {
  const NetConfig cfg = flags.net_config();
  TrainConfig tc;
  const auto j = flags.config_json();
  if (j.contains("train")) {
    const auto& t = j["train"];
    tc.batch_size = t.value("batch_size", tc.batch_size);
    tc.epochs = t.value("epochs", tc.epochs);
    tc.max_steps = t.value("max_steps", tc.max_steps);
    tc.checkpoint_every = t.value("checkpoint_every", tc.checkpoint_every);
    tc.adam.lr = t.value("lr", tc.adam.lr);
    tc.adam.beta1 = t.value("beta1", tc.adam.beta1);
    tc.adam.beta2 = t.value("beta2", tc.adam.beta2);
  }
  if (epochs > 0) tc.epochs = epochs;
  if (batch > 0) tc.batch_size = batch;
  if (steps > 0) tc.max_steps = steps;
  tc.seed = seed;

  auto manifest = read_manifest(manifest_path);
  auto dataset = load_training_set(manifest, cfg);
  BiANet<float> model(cfg, seed);
  const auto result = train_loop(tc, dataset, model, out);
  std::printf("trained %zu steps; final loss %.6f\n", result.losses.size(),
              result.losses.empty() ? 0.0 : result.losses.back());
  std::printf("checkpoint: %s\nloss log: %s\n",
              result.checkpoint_path.string().c_str(),
              result.loss_log_path.string().c_str());
  return 0;
}

int cmd_infer(const std::string& checkpoint, const std::string& manifest_path,
              const std::string& out) {
  BiANet<float> model = model_from_checkpoint(checkpoint);
  const NetConfig& cfg = model.config();
  auto manifest = read_manifest(manifest_path);
  fs::create_directories(out);
  NoGradGuard off;
  for (const auto& row : manifest.rows) {
    Sample s = load_sample(manifest, row, cfg.input_h, cfg.input_w);
    auto result = model.forward(s.rgb, s.depth);
    save_saliency(result.final, s.original_h, s.original_w,
                  fs::path(out) / (row.name + ".pgm"));
  }
  std::printf("wrote %zu saliency maps to %s\n", manifest.rows.size(),
              out.c_str());
  return 0;
}

int cmd_eval(const std::string& manifest_path, const std::string& pred,
             const std::string& out, bool max_per_image) {
  auto manifest = read_manifest(manifest_path);
  EvalOptions opt;
  opt.max_from_mean_curves = !max_per_image;
  auto report = evaluate_dataset(manifest, pred, opt);
  fs::create_directories(out);
  write_report_csv(report, fs::path(out) / "report.csv");
  write_pr_csv(report.mean_pr, fs::path(out) / "pr.csv");
  write_pr_svg(report.mean_pr, fs::path(out) / "pr.svg");

  const MetricReport& r = report.aggregate;
  std::printf("%s\n", kReportHeader);
  std::printf("dataset,%.4f,%.4f,%.4f,%.4f,%.4f,%.4f,%.4f,%.4f\n", r.s_alpha,
              r.max_f, r.mean_f, r.adp_f, r.max_e, r.mean_e, r.adp_e, r.mae);
  for (const auto& err : report.errors) {
    std::fprintf(stderr, "error: %s\n", err.c_str());
  }
  return report.errors.empty() ? 0 : 1;
}

int cmd_bench(const NetFlags& flags, std::uint64_t seed, int warmup, int iters,
              int threads) {
  const auto r = bench_throughput(flags.net_config(), warmup, iters, seed,
                                  threads);
  std::printf("iters %d  mean %.4f s  stddev %.4f s  p50 %.4f s  p95 %.4f s\n",
              r.iters, r.mean_s, r.stddev_s, r.p50_s, r.p95_s);
  std::printf("throughput %.3f images/s\n", r.images_per_sec);
  return 0;
}

int cmd_gradcheck(std::uint64_t seed, int seeds, double eps, double tol) {
  const auto summary = run_gradcheck_suite(seeds, seed, eps);
  for (const auto& [name, err] : summary.cases) {
    std::printf("%-22s %.3e %s\n", name.c_str(), err,
                err <= tol ? "ok" : "FAIL");
  }
  std::printf("worst %.3e (tolerance %.1e)\n", summary.worst, tol);
  return summary.passed(tol) ? 0 : 1;
}

int cmd_report(const NetFlags& flags, bool as_json) {
  const NetConfig cfg = flags.net_config();
  const CostReport r = count_cost(cfg);
  if (as_json) {
    nlohmann::json j{{"param_count", r.param_count},
                     {"mac_count", r.mac_count},
                     {"flop_estimate", r.flop_estimate},
                     {"input_h", cfg.input_h},
                     {"input_w", cfg.input_w},
                     {"mbam_count", cfg.mbam_count}};
    std::printf("%s\n", j.dump(2).c_str());
  } else {
    std::printf("input %dx%d, %d multi-scale level(s)\n", cfg.input_h,
                cfg.input_w, cfg.mbam_count);
    std::printf("parameters      %lld\n",
                static_cast<long long>(r.param_count));
    std::printf("MACs            %lld\n", static_cast<long long>(r.mac_count));
    std::printf("FLOPs (2xMAC)   %lld\n",
                static_cast<long long>(r.flop_estimate));
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"BiANet-style RGB-D salient object detection"};
  app.require_subcommand(1);

  std::uint64_t seed = 0;
  app.add_option("--seed", seed, "Global random seed")->capture_default_str();

  // synth
  auto* synth = app.add_subcommand("synth", "Generate a synthetic RGB-D dataset");
  int synth_n = 4, synth_size = 64;
  std::string synth_out = "synth";
  synth->add_option("--n", synth_n, "Sample count")->capture_default_str();
  synth->add_option("--size", synth_size, "Image extent")->capture_default_str();
  synth->add_option("--out", synth_out, "Output directory")->capture_default_str();

  // train
  auto* train = app.add_subcommand("train", "Train a model");
  NetFlags train_flags;
  train_flags.attach(train);
  std::string train_manifest = "synth/manifest.csv", train_out = "out";
  int train_epochs = 0, train_batch = 0, train_steps = 0;
  train->add_option("--manifest", train_manifest, "Training manifest CSV")
      ->capture_default_str();
  train->add_option("--out", train_out, "Output directory")->capture_default_str();
  train->add_option("--epochs", train_epochs, "Override epoch count");
  train->add_option("--batch", train_batch, "Override batch size");
  train->add_option("--steps", train_steps, "Stop after this many steps");

  // infer
  auto* infer = app.add_subcommand("infer", "Write saliency maps for a manifest");
  std::string infer_ckpt, infer_manifest, infer_out = "pred";
  infer->add_option("--checkpoint", infer_ckpt, "Model checkpoint")->required();
  infer->add_option("--manifest", infer_manifest, "Manifest CSV")->required();
  infer->add_option("--out", infer_out, "Output directory")->capture_default_str();

  // eval
  auto* eval = app.add_subcommand("eval", "Evaluate saliency maps");
  std::string eval_manifest, eval_pred, eval_out = "eval";
  bool eval_max_per_image = false;
  eval->add_option("--manifest", eval_manifest, "Manifest CSV")->required();
  eval->add_option("--pred", eval_pred, "Directory of <name>.pgm predictions")
      ->required();
  eval->add_option("--out", eval_out, "Report directory")->capture_default_str();
  eval->add_flag("--max-per-image", eval_max_per_image,
                 "Average per-image maxima instead of maximizing mean curves");

  // bench
  auto* bench = app.add_subcommand("bench", "Measure forward throughput");
  NetFlags bench_flags;
  bench_flags.attach(bench);
  int bench_warmup = 1, bench_iters = 5, bench_threads = 1;
  bench->add_option("--warmup", bench_warmup, "Warmup passes")
      ->capture_default_str();
  bench->add_option("--iters", bench_iters, "Timed passes")->capture_default_str();
  bench->add_option("--threads", bench_threads, "Worker threads inside kernels")
      ->capture_default_str();

  // gradcheck
  auto* gradcheck = app.add_subcommand("gradcheck",
                                       "Finite-difference gradient sweep");
  int gc_seeds = 5;
  double gc_eps = 1e-4, gc_tol = 1e-4;
  gradcheck->add_option("--seeds", gc_seeds, "Random seeds per case")
      ->capture_default_str();
  gradcheck->add_option("--eps", gc_eps, "Probe step")->capture_default_str();
  gradcheck->add_option("--tol", gc_tol, "Pass tolerance")->capture_default_str();

  // report
  auto* report = app.add_subcommand("report", "Parameter and FLOP report");
  NetFlags report_flags;
  report_flags.attach(report);
  bool report_json = false;
  report->add_flag("--json", report_json, "Emit JSON");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << e.what() << "\n\n" << app.help() << std::flush;
    return 2;
  }

  try {
    if (synth->parsed()) return cmd_synth(seed, synth_n, synth_size, synth_out);
    if (train->parsed()) {
      return cmd_train(train_flags, seed, train_manifest, train_out,
                       train_epochs, train_batch, train_steps);
    }
    if (infer->parsed()) return cmd_infer(infer_ckpt, infer_manifest, infer_out);
    if (eval->parsed()) {
      return cmd_eval(eval_manifest, eval_pred, eval_out, eval_max_per_image);
    }
    if (bench->parsed()) {
      if (bench_iters < 1) {
        std::cerr << "bench: --iters must be >= 1\n";
        return 2;
      }
      return cmd_bench(bench_flags, seed, bench_warmup, bench_iters,
                       bench_threads);
    }
    if (gradcheck->parsed()) return cmd_gradcheck(seed, gc_seeds, gc_eps, gc_tol);
    if (report->parsed()) return cmd_report(report_flags, report_json);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
