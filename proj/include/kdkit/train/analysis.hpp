// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "kdkit/cka.hpp"
#include "kdkit/report.hpp"
#include "kdkit/sampler.hpp"
#include "kdkit/train/models.hpp"

namespace kd::train {

inline constexpr std::int64_t kDefaultProbeSamples = 2048;

/// Eval-transformed probe batches: `samples` images drawn by a seeded
/// shuffle of the split (all of it when smaller), kept in shuffled order.
BatchLoader probe_loader(const DatasetRef& ref, int resolution, std::int64_t samples = kDefaultProbeSamples,
                         std::int64_t batch_size = 128, std::uint64_t seed = 0);

/// Linear CKA for every (tap of a, tap of b) pair, accumulated over the probe
/// batches with the unbiased HSIC estimator; batches under 4 samples are
/// skipped. Empty layer lists mean all taps. Throws TapError for a missing tap.
CkaMatrix cka_heatmap(Classifier& a, Classifier& b, const BatchLoader& probe,
                      std::vector<std::string> layers_a = {}, std::vector<std::string> layers_b = {},
                      std::int64_t max_batches = -1);

/// One grid axis: a dotted field path with its values, or (empty path) a list
/// of objects each setting several paths at once.
struct GridAxis {
  std::string path;
  std::vector<Json> values;
};

struct GridSpec {
  Json base;  // job config tree
  std::vector<GridAxis> axes;
  /// Applied to every cell, e.g. {"recipe.epochs": 1}.
  std::map<std::string, Json> budget_overrides;
  std::int64_t max_steps = -1;
  std::int64_t eval_max_batches = -1;
};

/// {"base": <job object or path to a job file>, "axes": [{"path", "values"}],
///  "budget": {"max_steps", "eval_max_batches", "overrides": {...}}}.
/// Relative base paths resolve against base_dir.
GridSpec parse_grid(const Json& tree, const std::filesystem::path& base_dir = {});

/// Row-major product of the axes (last axis fastest); no axes gives one empty cell.
std::vector<std::map<std::string, Json>> grid_cells(const GridSpec& grid);

struct GridCellResult {
  std::size_t index = 0;
  std::map<std::string, Json> overrides;
  std::string run_id;
  std::string status;  // "ok", "cached" or "failed"
  std::optional<MetricsRecord> metrics;
  std::string error;
};

struct GridOptions {
  std::filesystem::path runs_root = "runs";
  std::filesystem::path csv;  // empty: <runs_root>/grid.csv
  bool verbose = false;
};

/// Trains every cell in order. A cell's run id is derived from its resolved
/// job, so a finished cell is skipped on rerun. Failures are recorded and the
/// grid moves on. Writes the consolidated CSV.
std::vector<GridCellResult> grid_run(const GridSpec& grid, const GridOptions& options = {});

std::string grid_csv(const GridSpec& grid, const std::vector<GridCellResult>& results);

}  // namespace kd::train
