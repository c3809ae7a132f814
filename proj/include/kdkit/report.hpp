// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "kdkit/recipes.hpp"

namespace kd {

/// One line of runs/<run_id>/metrics.jsonl.
struct MetricsRecord {
  std::string run_id;
  int epoch = 0;
  std::string split;
  double top1 = 0.0;
  double top5 = 0.0;
  double loss_total = 0.0;
  double loss_hard = 0.0;
  double loss_soft = 0.0;
  double lr = 0.0;
  double wall_time_s = 0.0;

  bool operator==(const MetricsRecord&) const = default;
};

Json to_json(const MetricsRecord& r);
MetricsRecord metrics_from_json(const Json& j);
/// Throws ParseError naming the 1-based line number of a malformed line.
std::vector<MetricsRecord> read_metrics_jsonl(const std::filesystem::path& file);
void append_metrics_jsonl(const std::filesystem::path& file, const MetricsRecord& r);

/// Final accuracy of one method on one teacher-student pair at one data scale.
struct MethodResult {
  std::string scale;  // e.g. "cifar100" or "imagenet@0.3"
  std::string pair;   // e.g. "resnet56->resnet20"
  std::string method;
  double top1 = 0.0;
};

struct GapEntry {
  std::string scale;
  std::string pair;
  std::map<std::string, double> accuracy;  // method -> top-1
  std::string best_other;
  /// vanilla KD accuracy minus the best other method; negative = KD trails.
  double delta = 0.0;
};

struct GapReport {
  std::vector<GapEntry> entries;
};

/// Groups by (scale, pair). Each group needs a "KD" entry and at least one
/// other method, otherwise ReportError.
GapReport gap_table(const std::vector<MethodResult>& results);

std::string gap_table_csv(const GapReport& report);
/// Long form: scale,pair,method,top1,delta_vs_kd (one row per method).
std::string gap_vs_scale_csv(const GapReport& report);

struct RunSummary {
  std::string run_id;
  std::string teacher, student, method, dataset, scale;
  double subset_fraction = 1.0;
  std::optional<MetricsRecord> final_eval;
};

/// Reads runs/<id>/manifest and metrics.jsonl.
RunSummary summarize_run(const std::filesystem::path& run_dir);

struct ReportFiles {
  std::filesystem::path runs_csv, gap_csv, gap_vs_scale_csv;
};

/// Writes runs.csv, gap_table.csv and gap_vs_scale.csv into out_dir. Runs
/// that do not form a complete KD-vs-others group are left out of the gap
/// tables but still listed in runs.csv.
ReportFiles emit_report(const std::vector<std::filesystem::path>& run_dirs,
                        const std::filesystem::path& out_dir);

std::string csv_escape(const std::string& field);

}  // namespace kd
