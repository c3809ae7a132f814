// SPDX-License-Identifier: Apache-2.0
// kdkit command-line interface.
#include <CLI11.hpp>

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include "kdkit/errors.hpp"
#include "kdkit/report.hpp"
#include "kdkit/train/analysis.hpp"
#include "kdkit/train/trainer.hpp"

namespace fs = std::filesystem;
using namespace kd;

namespace {

std::string read_file(const fs::path& file) {
  std::ifstream in(file, std::ios::binary);
  if (!in) fail(ErrorKind::Config, "cannot read " + file.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file(const fs::path& file, const std::string& text) {
  if (file.has_parent_path()) fs::create_directories(file.parent_path());
  std::ofstream out(file, std::ios::binary);
  out << text;
  if (!out) fail(ErrorKind::Data, "cannot write " + file.string());
}

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  for (std::string item; std::getline(ss, item, ',');) {
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

// Run directories named on the command line; a directory without a manifest
// stands for all runs inside it.
std::vector<fs::path> collect_runs(const std::vector<std::string>& args) {
  std::vector<fs::path> runs;
  for (const auto& a : args) {
    const fs::path p(a);
    if (fs::exists(p / "manifest")) {
      runs.push_back(p);
    } else if (fs::is_directory(p)) {
      std::vector<fs::path> inside;
      for (const auto& e : fs::directory_iterator(p)) {
        if (e.is_directory() && fs::exists(e.path() / "manifest")) inside.push_back(e.path());
      }
      std::sort(inside.begin(), inside.end());
      runs.insert(runs.end(), inside.begin(), inside.end());
    } else {
      fail(ErrorKind::Data, "no run at " + a);
    }
  }
  return runs;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"kdkit: knowledge distillation training and analysis"};
  app.require_subcommand(1);

  // distill
  auto* distill = app.add_subcommand("distill", "Train a student from a job config");
  std::string config;
  std::vector<std::string> sets;
  train::TrainOptions topt;
  std::string runs_root = "runs", resume;
  bool nondeterministic = false;
  distill->add_option("config", config, "Job config (JSON)")->required();
  distill->add_option("--set", sets, "Override a field: path=value (repeatable)");
  distill->add_option("--run-id", topt.run_id, "Run directory name");
  distill->add_option("--runs-root", runs_root, "Parent of run directories");
  distill->add_option("--max-steps", topt.max_steps, "Stop after this many steps");
  distill->add_option("--resume", resume, "Checkpoint directory to resume from");
  distill->add_option("--workers", topt.num_workers, "Data preparation threads");
  distill->add_option("--eval-batches", topt.eval_max_batches, "Cap evaluation batches");
  distill->add_flag("--nondeterministic", nondeterministic, "Allow multi-threaded, nondeterministic kernels");
  distill->add_flag("-v,--verbose", topt.verbose, "Per-epoch progress");

  // eval
  auto* eval = app.add_subcommand("eval", "Evaluate a checkpoint on a split");
  std::string ckpt, split_name, eval_out;
  std::int64_t eval_batch = 0, eval_max = -1;
  eval->add_option("ckpt", ckpt, "Checkpoint or run directory")->required();
  eval->add_option("split", split_name, "train | val | test")->required();
  eval->add_option("--batch-size", eval_batch, "Evaluation batch size");
  eval->add_option("--max-batches", eval_max, "Cap evaluated batches");
  eval->add_option("--out", eval_out, "Also write the metrics record here");

  // cka
  auto* cka = app.add_subcommand("cka", "CKA similarity heatmap between two checkpoints");
  std::string ckpt_a, ckpt_b, probe, layers_a, layers_b, cka_out = "cka.csv";
  std::int64_t probe_samples = train::kDefaultProbeSamples, probe_batch = 128, cka_max = -1;
  cka->add_option("ckpt_a", ckpt_a, "Rows model checkpoint")->required();
  cka->add_option("ckpt_b", ckpt_b, "Columns model checkpoint")->required();
  cka->add_option("probe", probe, "Dataset root (layout of model A's job) or dataset JSON")->required();
  cka->add_option("--samples", probe_samples, "Probe images");
  cka->add_option("--batch-size", probe_batch, "Probe batch size");
  cka->add_option("--max-batches", cka_max, "Cap probe batches");
  cka->add_option("--layers-a", layers_a, "Comma-separated taps of model A");
  cka->add_option("--layers-b", layers_b, "Comma-separated taps of model B");
  cka->add_option("--out", cka_out, "Long-form CSV output");

  // grid
  auto* grid = app.add_subcommand("grid", "Run a configuration grid");
  std::string grid_config, grid_root = "runs", grid_csv_out;
  bool grid_verbose = false;
  grid->add_option("gridconfig", grid_config, "Grid config (JSON)")->required();
  grid->add_option("--runs-root", grid_root, "Parent of cell run directories");
  grid->add_option("--csv", grid_csv_out, "Consolidated CSV (default <runs-root>/grid.csv)");
  grid->add_flag("-v,--verbose", grid_verbose, "Per-cell progress");

  // report
  auto* report = app.add_subcommand("report", "Tabulate runs into CSV tables");
  std::vector<std::string> report_runs;
  std::string report_out = "report";
  report->add_option("runs", report_runs, "Run directories or directories of runs")->required();
  report->add_option("--out", report_out, "Output directory");

  // recipes
  auto* recipes = app.add_subcommand("recipes", "Builtin training recipes");
  recipes->require_subcommand(1);
  auto* rlist = recipes->add_subcommand("list", "List recipe names");
  auto* rshow = recipes->add_subcommand("show", "Show one recipe");
  std::string recipe_name;
  bool recipe_json = false;
  rshow->add_option("name", recipe_name, "Recipe name")->required();
  rshow->add_flag("--json", recipe_json, "Print as JSON");

  if (argc > 1 && argv[1][0] != '-') {
    bool known = false;
    for (const auto* sub : app.get_subcommands({})) known = known || sub->check_name(argv[1]);
    if (!known) {
      std::cerr << "kdkit: unknown subcommand '" << argv[1] << "'\n" << app.help();
      return 2;
    }
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    std::cerr << app.help();
    return 2;
  }

  try {
    if (distill->parsed()) {
      DistillJobSpec job = parse_job(read_file(config));
      std::map<std::string, std::string> overrides;
      for (const auto& s : sets) overrides.insert(parse_set_argument(s));
      if (!overrides.empty()) job = merge_overrides(job, overrides);
      topt.runs_root = runs_root;
      topt.resume_from = resume;
      topt.deterministic = !nondeterministic;
      const auto result = train::train_distill(job, topt);
      Json out{{"run_id", result.run_id}, {"run_dir", result.run_dir.string()}, {"steps", result.global_step}};
      if (result.final_eval) out["final_eval"] = to_json(*result.final_eval);
      std::cout << out.dump(2) << std::endl;
    } else if (eval->parsed()) {
      const auto loaded = train::load_checkpoint_model(ckpt);
      const Split split = split_from_string(split_name);
      const BatchLoader loader = train::eval_loader(loaded.job, split, eval_batch);
      MetricsRecord m = train::evaluate(*loaded.model, loader, eval_max);
      m.split = split_name;
      std::transform(m.split.begin(), m.split.end(), m.split.begin(), ::tolower);
      const fs::path run_dir = loaded.dir.parent_path();
      m.run_id = run_dir.filename().string();
      const std::string text = to_json(m).dump();
      std::cout << text << std::endl;
      if (!eval_out.empty()) write_file(eval_out, text + "\n");
    } else if (cka->parsed()) {
      const auto a = train::load_checkpoint_model(ckpt_a);
      const auto b = train::load_checkpoint_model(ckpt_b);
      DatasetRef ref = a.job.dataset;
      if (fs::is_regular_file(probe)) {
        ref = dataset_from_json(Json::parse(read_file(probe)));
      } else {
        ref.root = probe;
      }
      ref.split = Split::TRAIN;
      const BatchLoader loader =
          train::probe_loader(ref, a.job.recipe.student_resolution, probe_samples, probe_batch, a.job.seed);
      const CkaMatrix m =
          train::cka_heatmap(*a.model, *b.model, loader, split_list(layers_a), split_list(layers_b), cka_max);
      write_file(cka_out, cka_to_csv(m));
      std::cout << "wrote " << cka_out << " (" << m.row_layers.size() << "x" << m.col_layers.size() << ")"
                << std::endl;
    } else if (grid->parsed()) {
      const fs::path file(grid_config);
      const auto spec = train::parse_grid(Json::parse(read_file(file)), file.parent_path());
      train::GridOptions gopt;
      gopt.runs_root = grid_root;
      gopt.csv = grid_csv_out;
      gopt.verbose = grid_verbose;
      const auto results = train::grid_run(spec, gopt);
      std::cout << train::grid_csv(spec, results);
      for (const auto& r : results) {
        if (r.status == "failed") std::cerr << "cell " << r.index << " failed: " << r.error << "\n";
      }
    } else if (report->parsed()) {
      const auto files = emit_report(collect_runs(report_runs), report_out);
      std::cout << files.runs_csv.string() << "\n" << files.gap_csv.string() << "\n"
                << files.gap_vs_scale_csv.string() << std::endl;
    } else if (rlist->parsed()) {
      for (const auto& n : builtin_recipe_names()) std::cout << n << "\n";
    } else if (rshow->parsed()) {
      const TrainingRecipe r = builtin_recipe(recipe_name);
      std::cout << (recipe_json ? to_json(r).dump(2) + "\n" : describe_recipe(r));
    }
  } catch (const Error& e) {
    std::cerr << "kdkit: " << e.what() << std::endl;
    return exit_code_for(e.kind());
  } catch (const Json::exception& e) {
    std::cerr << "kdkit: ParseError: " << e.what() << std::endl;
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "kdkit: " << e.what() << std::endl;
    return 1;
  }
  return 0;
}
