#include <chrono>
#include <cstdio>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "madm/error.hpp"
#include "madm/experiments.hpp"
#include "madm/store.hpp"

namespace {

using namespace madm;

enum ExitCode { kOk = 0, kFailure = 1, kConfig = 2, kDependency = 3, kNumerical = 4 };

struct Globals {
  std::string config;
  std::string preset;
  std::optional<std::uint64_t> seed;
  std::string out;
  std::optional<std::size_t> workers;
  int threads = 1;
  bool quiet = false;
};

struct TrainArgs {
  std::string target;
  std::optional<int> replicate;
  std::optional<std::size_t> context;
  std::optional<int> stop_after;
};

struct SampleArgs {
  std::string mode = "averaging";
  std::vector<std::string> views;
  std::optional<int> t_s;
  bool no_prior = false;
  std::optional<std::size_t> context;
  int replicate = 0;
};

Logger make_logger(bool quiet) {
  if (quiet) return {};
  const auto start = std::chrono::steady_clock::now();
  return [start](const std::string& message) {
    const double s = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    std::fprintf(stderr, "[%8.1fs] %s\n", s, message.c_str());
  };
}

RunConfig resolve(const Globals& g) {
  ConfigSources src;
  src.preset = g.preset;
  if (!g.config.empty()) src.config_file = g.config;
  src.seed = g.seed;
  if (!g.out.empty()) src.output_dir = g.out;
  auto config = resolve_run_config(src);
  if (g.workers) {
    if (*g.workers == 0) throw ConfigError("--workers", "must be positive");
    config.workers = *g.workers;
    config.dataset.workers = *g.workers;
  }
  return config;
}

void print_file(const std::filesystem::path& path) { std::cout << read_text(path); }

void run_train(Experiment& ex, const TrainArgs& a, const Logger& log) {
  TrainControl control;
  if (a.stop_after) control.stop_after = *a.stop_after;
  control.on_step = [&](const TrainLogRow& row) {
    if (log && (row.step + 1) % 200 == 0) {
      char buf[128];
      std::snprintf(buf, sizeof buf, "  step %d loss %.5f lr %.3g", row.step + 1, row.loss, row.lr);
      log(buf);
    }
  };
  std::vector<Experiment::TrainJob> jobs;
  const std::size_t s = a.context.value_or(ex.config().context_radius);
  if (a.target == "all") {
    if (!a.replicate && !a.context) {
      jobs = ex.training_plan();
    } else {
      const int r = a.replicate.value_or(0);
      jobs.push_back({TrainTarget::kPrior, r, 0});
      for (auto v : kAllViews) jobs.push_back({parse_train_target(to_string(v)), r, s});
    }
  } else {
    const auto target = parse_train_target(a.target);
    jobs.push_back({target, a.replicate.value_or(0), target == TrainTarget::kPrior ? 0 : s});
  }
  for (const auto& job : jobs) {
    const auto result = ex.cmd_train(job.target, job.replicate, job.context_radius, control);
    if (log) {
      log("  " + result.checkpoint.string() + (result.finished ? " finished" : " stopped") + " after " +
          std::to_string(result.completed_steps) + " steps");
    }
  }
}

void run_sample(Experiment& ex, const SampleArgs& a) {
  Variant v = ex.main_variant();
  v.mode = parse_sampler_mode(a.mode);
  if (!a.views.empty()) {
    v.views.clear();
    for (const auto& name : a.views) v.views.push_back(parse_view_axis(name));
  }
  if (a.t_s) v.t_s = *a.t_s;
  if (a.context) v.context_radius = *a.context;
  if (a.no_prior) {
    v.use_prior = false;
    v.t_s = ex.config().schedule.steps();
  }
  SamplerConfig check;
  check.t_s = v.t_s;
  check.views = v.views;
  check.use_prior = v.use_prior;
  try {
    check.validate(ex.config().schedule.steps());
  } catch (const ConfigError& e) {
    throw ConfigError("--" + std::string(e.path() == "t_s" ? "ts" : e.path()), e.what());
  }
  std::cout << ex.cmd_sample(v, a.replicate).string() << "\n";
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Multi-view averaging diffusion for low-count PET phantoms"};
  app.require_subcommand(1);
  Globals g;
  app.add_option("--config", g.config, "Run configuration (JSON); merged onto --preset when both are given");
  app.add_option("--preset", g.preset, "Built-in configuration")->check(CLI::IsMember(preset_names()));
  app.add_option("--seed", g.seed, "Override master_seed");
  app.add_option("--out", g.out, "Override output_dir");
  app.add_option("--workers", g.workers, "Override execution.workers");
  app.add_option("--threads", g.threads, "Tensor backend threads")->check(CLI::PositiveNumber);
  app.add_flag("-q,--quiet", g.quiet, "No progress output");

  auto* dataset = app.add_subcommand("dataset", "Build the phantom dataset");

  TrainArgs train_args;
  auto* train = app.add_subcommand("train", "Train the prior or one view denoiser");
  train->add_option("target", train_args.target, "prior, coronal, sagittal, axial or all")
      ->required()
      ->check(CLI::IsMember({"prior", "coronal", "sagittal", "axial", "all"}));
  train->add_option("--replicate", train_args.replicate, "Training replicate");
  train->add_option("--context", train_args.context, "Context radius s of view denoisers");
  train->add_option("--stop-after", train_args.stop_after, "Stop (resumably) after this many steps");

  SampleArgs sample_args;
  auto* sample = app.add_subcommand("sample", "Sample the test set with one sampler variant");
  sample->add_option("--mode", sample_args.mode, "averaging or sequential")
      ->check(CLI::IsMember({"averaging", "sequential"}));
  sample->add_option("--views", sample_args.views, "Views (sequential: in order)")
      ->delimiter(',')
      ->check(CLI::IsMember({"coronal", "sagittal", "axial"}));
  sample->add_option("--ts", sample_args.t_s, "Start timestep (0: prior only)");
  sample->add_flag("--no-prior", sample_args.no_prior, "Start from pure noise at t = T");
  sample->add_option("--context", sample_args.context, "Context radius s");
  sample->add_option("--replicate", sample_args.replicate, "Training replicate");

  auto* eval = app.add_subcommand("eval", "Score input, prior and the configured sampler");

  std::string study;
  auto* ablate = app.add_subcommand("ablate", "Run an ablation study");
  ablate->add_option("study", study, "views, sequential, context, ts or all")
      ->required()
      ->check(CLI::IsMember({"views", "sequential", "context", "ts", "all"}));

  auto* report = app.add_subcommand("report", "Write report.md from the tables produced so far");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kConfig;
  }

  try {
    set_compute_threads(g.threads);
    const auto log = make_logger(g.quiet);
    Experiment ex(resolve(g), log);
    if (log) log("config " + ex.config().hash().substr(0, 12) + ", output " + ex.config().output_dir.string());
    if (dataset->parsed()) {
      std::cout << ex.cmd_dataset().root.string() << "\n";
    } else if (train->parsed()) {
      run_train(ex, train_args, log);
    } else if (sample->parsed()) {
      run_sample(ex, sample_args);
    } else if (eval->parsed()) {
      ex.cmd_eval();
      print_file(ex.eval_dir() / "table.csv");
    } else if (ablate->parsed()) {
      const std::vector<std::string> studies =
          study == "all" ? std::vector<std::string>{"views", "sequential", "context", "ts"}
                         : std::vector<std::string>{study};
      for (const auto& s : studies) {
        const auto result = ex.cmd_ablate(s);
        print_file(result.dir / "table.csv");
      }
    } else if (report->parsed()) {
      std::cout << ex.cmd_report().string() << "\n";
    }
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kConfig;
  } catch (const DependencyError& e) {
    std::cerr << "missing dependency: " << e.what() << "\n";
    return kDependency;
  } catch (const MissingReference& e) {
    std::cerr << "missing dependency: " << e.what() << "\n";
    return kDependency;
  } catch (const NumericalError& e) {
    std::cerr << "numerical failure: " << e.what() << "\n";
    return kNumerical;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kFailure;
  }
  return kOk;
}
