// SPDX-License-Identifier: Apache-2.0
#include "kdkit/train/analysis.hpp"

#include <algorithm>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <numeric>
#include <sstream>

#include "kdkit/data.hpp"
#include "kdkit/errors.hpp"
#include "kdkit/train/trainer.hpp"

namespace kd::train {

namespace fs = std::filesystem;

BatchLoader probe_loader(const DatasetRef& ref, int resolution, std::int64_t samples, std::int64_t batch_size,
                         std::uint64_t seed) {
  auto base = open_dataset(ref);
  if (base->size() == 0) fail(ErrorKind::Data, "probe split is empty");
  // A seeded random order, so each minibatch is a random draw rather than a
  // run of neighbouring (often same-class) records.
  std::vector<std::int64_t> idx(static_cast<std::size_t>(base->size()));
  std::iota(idx.begin(), idx.end(), 0);
  auto rng = make_rng({seed, 0x70726f6265ULL});
  std::shuffle(idx.begin(), idx.end(), rng);
  if (samples > 0 && samples < base->size()) idx.resize(static_cast<std::size_t>(samples));
  std::shared_ptr<const Dataset> data = std::make_shared<SubsetDataset>(base, std::move(idx));
  TrainingRecipe eval_recipe;
  LoaderOptions lo;
  lo.batch_size = batch_size;
  lo.shuffle = false;
  lo.seed = seed;
  return BatchLoader(data, build_augmentation(eval_recipe, false, resolution, ref.mean, ref.std, ref.eval_crop_pct),
                     lo);
}

namespace {

// Gram matrix of the flattened activations with its diagonal zeroed.
torch::Tensor gram(const torch::Tensor& act) {
  auto x = act.detach().to(torch::kDouble).flatten(1);
  x = x - x.mean(0, true);
  return x.matmul(x.t()).fill_diagonal_(0.0);
}

// Unbiased HSIC of two zero-diagonal Gram matrices; same estimator as
// kd::hsic_unbiased.
double hsic_unbiased(const torch::Tensor& k, const torch::Tensor& l) {
  const double n = static_cast<double>(k.size(0));
  const double trace = (k * l).sum().item<double>();
  const double sums = k.sum().item<double>() * l.sum().item<double>() / ((n - 1) * (n - 2));
  const double mixed = 2.0 * k.sum(1).dot(l.sum(1)).item<double>() / (n - 2);
  return (trace + sums - mixed) / (n * (n - 3));
}

std::vector<std::string> resolve_layers(std::vector<std::string> layers, const Classifier& m) {
  return layers.empty() ? m.tap_names() : layers;
}

}  // namespace

CkaMatrix cka_heatmap(Classifier& a, Classifier& b, const BatchLoader& probe, std::vector<std::string> layers_a,
                      std::vector<std::string> layers_b, std::int64_t max_batches) {
  CkaMatrix out;
  out.row_layers = resolve_layers(std::move(layers_a), a);
  out.col_layers = resolve_layers(std::move(layers_b), b);
  if (out.row_layers.empty() || out.col_layers.empty()) fail(ErrorKind::Tap, "model exposes no activation taps");
  const std::size_t ra = out.row_layers.size(), cb = out.col_layers.size();
  std::vector<CkaAccumulator> acc(ra * cb);

  torch::NoGradGuard no_grad;
  a.eval();
  b.eval();
  probe.for_epoch(0, 0, [&](std::int64_t step, LabeledBatch&& batch) {
    if (batch.images.n < 4) return true;  // too few samples for the unbiased estimate
    const auto x = torch::from_blob(batch.images.data.data(),
                                    {batch.images.n, batch.images.c, batch.images.h, batch.images.w}, torch::kFloat)
                       .clone();
    const ModelOutput oa = a.forward_taps(x);
    const ModelOutput ob = b.forward_taps(x);
    std::vector<torch::Tensor> ka, kb;
    for (const auto& id : out.row_layers) ka.push_back(gram(oa.tap(id)));
    for (const auto& id : out.col_layers) kb.push_back(gram(ob.tap(id)));
    std::vector<double> sa, sb;
    for (const auto& k : ka) sa.push_back(hsic_unbiased(k, k));
    for (const auto& k : kb) sb.push_back(hsic_unbiased(k, k));
    for (std::size_t i = 0; i < ra; ++i) {
      for (std::size_t j = 0; j < cb; ++j) {
        acc[i * cb + j].add_terms(hsic_unbiased(ka[i], kb[j]), sa[i], sb[j]);
      }
    }
    return max_batches < 0 || step + 1 < max_batches;
  });
  out.values = Matrix(static_cast<Eigen::Index>(ra), static_cast<Eigen::Index>(cb));
  for (std::size_t i = 0; i < ra; ++i) {
    for (std::size_t j = 0; j < cb; ++j) {
      out.values(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = acc[i * cb + j].value();
    }
  }
  return out;
}

GridSpec parse_grid(const Json& tree, const fs::path& base_dir) {
  if (!tree.is_object()) fail(ErrorKind::Config, "grid config must be an object");
  GridSpec g;
  if (!tree.contains("base")) fail(ErrorKind::ConfigKey, "grid config needs a 'base' job");
  const Json& base = tree.at("base");
  if (base.is_string()) {
    fs::path file = base.get<std::string>();
    if (file.is_relative()) file = base_dir / file;
    std::ifstream in(file);
    if (!in) fail(ErrorKind::Config, "cannot read grid base " + file.string());
    try {
      g.base = Json::parse(in);
    } catch (const Json::exception& e) {
      fail(ErrorKind::Parse, file.string() + ": " + e.what());
    }
  } else if (base.is_object()) {
    g.base = base;
  } else {
    fail(ErrorKind::Config, "grid 'base' must be an object or a file path");
  }
  if (tree.contains("axes")) {
    if (!tree.at("axes").is_array()) fail(ErrorKind::Config, "grid 'axes' must be a list");
    for (const Json& a : tree.at("axes")) {
      GridAxis axis;
      axis.path = a.value("path", "");
      if (!a.contains("values") || !a.at("values").is_array() || a.at("values").empty()) {
        fail(ErrorKind::Config, "grid axis '" + axis.path + "' needs a non-empty 'values' list");
      }
      for (const Json& v : a.at("values")) {
        if (axis.path.empty() && !v.is_object()) {
          fail(ErrorKind::Config, "an axis without 'path' takes objects of path -> value");
        }
        axis.values.push_back(v);
      }
      g.axes.push_back(std::move(axis));
    }
  }
  if (tree.contains("budget")) {
    const Json& b = tree.at("budget");
    g.max_steps = b.value("max_steps", std::int64_t{-1});
    g.eval_max_batches = b.value("eval_max_batches", std::int64_t{-1});
    if (b.contains("overrides")) {
      for (const auto& [k, v] : b.at("overrides").items()) g.budget_overrides[k] = v;
    }
  }
  // Resolve once so a broken base fails before any cell runs.
  parse_job(g.base.dump());
  return g;
}

std::vector<std::map<std::string, Json>> grid_cells(const GridSpec& grid) {
  std::vector<std::map<std::string, Json>> cells{{}};
  for (const auto& axis : grid.axes) {
    std::vector<std::map<std::string, Json>> next;
    for (const auto& cell : cells) {
      for (const auto& v : axis.values) {
        auto c = cell;
        if (axis.path.empty()) {
          for (const auto& [k, val] : v.items()) c[k] = val;
        } else {
          c[axis.path] = v;
        }
        next.push_back(std::move(c));
      }
    }
    cells = std::move(next);
  }
  return cells;
}

namespace {

std::string fnv_hex(const std::string& text) {
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char c : text) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  std::ostringstream out;
  out << std::hex << std::setw(16) << std::setfill('0') << h;
  return out.str();
}

std::string cell_text(const Json& v) { return v.is_string() ? v.get<std::string>() : v.dump(); }

std::vector<std::string> axis_columns(const GridSpec& grid) {
  std::vector<std::string> cols;
  auto add = [&](const std::string& k) {
    if (std::find(cols.begin(), cols.end(), k) == cols.end()) cols.push_back(k);
  };
  for (const auto& axis : grid.axes) {
    if (!axis.path.empty()) {
      add(axis.path);
    } else {
      for (const auto& v : axis.values) {
        for (const auto& [k, _] : v.items()) add(k);
      }
    }
  }
  return cols;
}

}  // namespace

std::string grid_csv(const GridSpec& grid, const std::vector<GridCellResult>& results) {
  const auto cols = axis_columns(grid);
  std::ostringstream os;
  os.precision(10);
  os << "cell,run_id,status";
  for (const auto& c : cols) os << ',' << csv_escape(c);
  os << ",top1,top5,loss_total,error\n";
  for (const auto& r : results) {
    os << r.index << ',' << csv_escape(r.run_id) << ',' << r.status;
    for (const auto& c : cols) {
      os << ',';
      if (auto it = r.overrides.find(c); it != r.overrides.end()) os << csv_escape(cell_text(it->second));
    }
    if (r.metrics) {
      os << ',' << r.metrics->top1 << ',' << r.metrics->top5 << ',' << r.metrics->loss_total;
    } else {
      os << ",,,";
    }
    os << ',' << csv_escape(r.error) << '\n';
  }
  return os.str();
}

std::vector<GridCellResult> grid_run(const GridSpec& grid, const GridOptions& options) {
  const DistillJobSpec base = parse_job(grid.base.dump());
  const Json budget{{"max_steps", grid.max_steps}, {"eval_max_batches", grid.eval_max_batches}};
  std::vector<GridCellResult> results;
  const auto cells = grid_cells(grid);
  for (std::size_t i = 0; i < cells.size(); ++i) {
    GridCellResult r;
    r.index = i;
    r.overrides = cells[i];
    try {
      auto overrides = grid.budget_overrides;
      for (const auto& [k, v] : cells[i]) overrides[k] = v;
      const DistillJobSpec job = merge_overrides(base, overrides);
      r.run_id = "cell-" + fnv_hex(serialize_job(job) + budget.dump());
      const fs::path run_dir = options.runs_root / r.run_id;
      const fs::path marker = run_dir / "cell.json";
      if (fs::exists(marker)) {
        std::ifstream in(marker);
        const Json done = Json::parse(in);
        if (done.value("status", "") == "ok") {
          r.status = "cached";
          r.metrics = metrics_from_json(done.at("metrics"));
          results.push_back(std::move(r));
          continue;
        }
      }
      // A cell that did not finish starts over.
      fs::remove_all(run_dir);
      TrainOptions to;
      to.runs_root = options.runs_root;
      to.run_id = r.run_id;
      to.max_steps = grid.max_steps;
      to.eval_max_batches = grid.eval_max_batches;
      to.verbose = options.verbose;
      TrainResult tr = train_distill(job, to);
      if (!tr.final_eval) {
        // Step-capped cells end mid-training; evaluate what they reached.
        auto model = load_checkpoint_model(run_dir / "ckpt-last");
        BatchLoader loader = eval_loader(job, Split::VAL);
        MetricsRecord m = evaluate(*model.model, loader, grid.eval_max_batches);
        m.run_id = r.run_id;
        m.split = "val";
        append_metrics_jsonl(run_dir / "metrics.jsonl", m);
        tr.final_eval = m;
      }
      r.metrics = tr.final_eval;
      r.status = "ok";
      std::ofstream(marker) << Json{{"status", "ok"}, {"metrics", to_json(*r.metrics)}}.dump(2) << "\n";
    } catch (const std::exception& e) {
      r.status = "failed";
      r.error = e.what();
      if (!r.run_id.empty() && fs::exists(options.runs_root / r.run_id)) {
        std::ofstream(options.runs_root / r.run_id / "cell.json")
            << Json{{"status", "failed"}, {"error", r.error}}.dump(2) << "\n";
      }
    }
    if (options.verbose) std::cout << "cell " << i << " " << r.status << " " << r.run_id << std::endl;
    results.push_back(std::move(r));
  }
  fs::create_directories(options.runs_root);
  const fs::path csv = options.csv.empty() ? options.runs_root / "grid.csv" : options.csv;
  std::ofstream(csv, std::ios::binary) << grid_csv(grid, results);
  return results;
}

}  // namespace kd::train
