// SPDX-License-Identifier: Apache-2.0
#include "kdkit/report.hpp"

#include <algorithm>
#include <fstream>
#include <sstream>
#include <tuple>

#include "kdkit/errors.hpp"

namespace kd {
namespace fs = std::filesystem;

namespace {

std::string fmt_double(double v) {
  std::ostringstream os;
  os.precision(10);
  os << v;
  return os.str();
}

void write_text(const fs::path& file, const std::string& text) {
  std::ofstream out(file, std::ios::binary | std::ios::trunc);
  if (!out) fail(ErrorKind::Data, "cannot write " + file.string());
  out << text;
}

}  // namespace

Json to_json(const MetricsRecord& r) {
  return Json{{"run_id", r.run_id},         {"epoch", r.epoch},
              {"split", r.split},           {"top1", r.top1},
              {"top5", r.top5},             {"loss_total", r.loss_total},
              {"loss_hard", r.loss_hard},   {"loss_soft", r.loss_soft},
              {"lr", r.lr},                 {"wall_time_s", r.wall_time_s}};
}

MetricsRecord metrics_from_json(const Json& j) {
  MetricsRecord r;
  r.run_id = j.at("run_id").get<std::string>();
  r.epoch = j.at("epoch").get<int>();
  r.split = j.at("split").get<std::string>();
  r.top1 = j.at("top1").get<double>();
  r.top5 = j.at("top5").get<double>();
  r.loss_total = j.at("loss_total").get<double>();
  r.loss_hard = j.at("loss_hard").get<double>();
  r.loss_soft = j.at("loss_soft").get<double>();
  r.lr = j.at("lr").get<double>();
  r.wall_time_s = j.at("wall_time_s").get<double>();
  return r;
}

std::vector<MetricsRecord> read_metrics_jsonl(const fs::path& file) {
  std::ifstream in(file);
  if (!in) fail(ErrorKind::Data, "cannot read metrics file " + file.string());
  std::vector<MetricsRecord> out;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    try {
      out.push_back(metrics_from_json(Json::parse(line)));
    } catch (const nlohmann::json::exception& e) {
      fail(ErrorKind::Parse, file.string() + ":" + std::to_string(line_no) + ": " + e.what());
    }
  }
  return out;
}

void append_metrics_jsonl(const fs::path& file, const MetricsRecord& r) {
  std::ofstream out(file, std::ios::binary | std::ios::app);
  if (!out) fail(ErrorKind::Data, "cannot append to " + file.string());
  out << to_json(r).dump() << '\n';
}

GapReport gap_table(const std::vector<MethodResult>& results) {
  std::map<std::pair<std::string, std::string>, std::map<std::string, double>> groups;
  for (const auto& r : results) groups[{r.scale, r.pair}][r.method] = r.top1;
  GapReport report;
  for (const auto& [key, accuracy] : groups) {
    const auto& [scale, pair] = key;
    auto kd = accuracy.find("KD");
    if (kd == accuracy.end()) {
      fail(ErrorKind::Report, "no vanilla KD result for " + pair + " at " + scale);
    }
    if (accuracy.size() < 2) {
      fail(ErrorKind::Report, "only vanilla KD present for " + pair + " at " + scale +
                                  "; the gap is undefined");
    }
    GapEntry e{scale, pair, accuracy, "", 0.0};
    double best = -1e300;
    for (const auto& [method, acc] : accuracy) {
      if (method == "KD") continue;
      if (acc > best) {
        best = acc;
        e.best_other = method;
      }
    }
    e.delta = kd->second - best;
    report.entries.push_back(std::move(e));
  }
  return report;
}

std::string csv_escape(const std::string& field) {
  if (field.find_first_of(",\"\n") == std::string::npos) return field;
  std::string out = "\"";
  for (char c : field) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + "\"";
}

std::string gap_table_csv(const GapReport& report) {
  std::ostringstream os;
  os << "scale,pair,kd_top1,best_other_method,best_other_top1,delta\n";
  for (const auto& e : report.entries) {
    os << csv_escape(e.scale) << ',' << csv_escape(e.pair) << ',' << fmt_double(e.accuracy.at("KD"))
       << ',' << csv_escape(e.best_other) << ',' << fmt_double(e.accuracy.at(e.best_other)) << ','
       << fmt_double(e.delta) << '\n';
  }
  return os.str();
}

std::string gap_vs_scale_csv(const GapReport& report) {
  std::ostringstream os;
  os << "scale,pair,method,top1,delta_vs_kd\n";
  for (const auto& e : report.entries) {
    const double kd = e.accuracy.at("KD");
    for (const auto& [method, acc] : e.accuracy) {
      os << csv_escape(e.scale) << ',' << csv_escape(e.pair) << ',' << csv_escape(method) << ','
         << fmt_double(acc) << ',' << fmt_double(acc - kd) << '\n';
    }
  }
  return os.str();
}

RunSummary summarize_run(const fs::path& run_dir) {
  RunSummary s;
  const fs::path manifest = run_dir / "manifest";
  std::ifstream in(manifest);
  if (!in) fail(ErrorKind::Data, "missing manifest in " + run_dir.string());
  Json m;
  try {
    m = Json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::Parse, manifest.string() + ": " + e.what());
  }
  s.run_id = m.value("run_id", run_dir.filename().string());
  const Json& job = m.at("job");
  s.teacher = job.at("teacher").at("arch").get<std::string>();
  s.student = job.at("student").at("arch").get<std::string>();
  s.method = job.at("method").get<std::string>();
  s.dataset = job.at("dataset").at("name").get<std::string>();
  if (job.contains("subset") && !job.at("subset").is_null()) {
    s.subset_fraction = job.at("subset").at("fraction").get<double>();
  }
  s.scale = s.subset_fraction < 1.0 ? s.dataset + "@" + fmt_double(s.subset_fraction) : s.dataset;
  const fs::path metrics = run_dir / "metrics.jsonl";
  if (fs::exists(metrics)) {
    for (const auto& r : read_metrics_jsonl(metrics)) {
      if (r.split == "val") s.final_eval = r;
    }
  }
  return s;
}

ReportFiles emit_report(const std::vector<fs::path>& run_dirs, const fs::path& out_dir) {
  fs::create_directories(out_dir);
  std::vector<RunSummary> runs;
  for (const auto& dir : run_dirs) runs.push_back(summarize_run(dir));
  std::sort(runs.begin(), runs.end(), [](const RunSummary& a, const RunSummary& b) {
    return std::tie(a.scale, a.teacher, a.student, a.method, a.run_id) <
           std::tie(b.scale, b.teacher, b.student, b.method, b.run_id);
  });

  std::ostringstream runs_csv;
  runs_csv << "run_id,scale,teacher,student,method,split,epoch,top1,top5,loss_total\n";
  std::vector<MethodResult> results;
  for (const auto& r : runs) {
    runs_csv << csv_escape(r.run_id) << ',' << csv_escape(r.scale) << ',' << csv_escape(r.teacher)
             << ',' << csv_escape(r.student) << ',' << csv_escape(r.method) << ',';
    if (r.final_eval) {
      runs_csv << r.final_eval->split << ',' << r.final_eval->epoch << ','
               << fmt_double(r.final_eval->top1) << ',' << fmt_double(r.final_eval->top5) << ','
               << fmt_double(r.final_eval->loss_total) << '\n';
      results.push_back({r.scale, r.teacher + "->" + r.student, r.method, r.final_eval->top1});
    } else {
      runs_csv << ",,,,\n";
    }
  }

  // Keep only groups that can form a gap.
  std::map<std::pair<std::string, std::string>, std::vector<MethodResult>> groups;
  for (const auto& r : results) groups[{r.scale, r.pair}].push_back(r);
  std::vector<MethodResult> complete;
  for (const auto& [key, members] : groups) {
    bool has_kd = std::any_of(members.begin(), members.end(),
                              [](const MethodResult& m) { return m.method == "KD"; });
    bool has_other = std::any_of(members.begin(), members.end(),
                                 [](const MethodResult& m) { return m.method != "KD"; });
    if (has_kd && has_other) complete.insert(complete.end(), members.begin(), members.end());
  }
  GapReport gap = complete.empty() ? GapReport{} : gap_table(complete);

  ReportFiles files{out_dir / "runs.csv", out_dir / "gap_table.csv", out_dir / "gap_vs_scale.csv"};
  write_text(files.runs_csv, runs_csv.str());
  write_text(files.gap_csv, gap_table_csv(gap));
  write_text(files.gap_vs_scale_csv, gap_vs_scale_csv(gap));
  return files;
}

}  // namespace kd
