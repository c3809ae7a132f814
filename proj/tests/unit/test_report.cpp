// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <filesystem>
#include <fstream>

#include "kdkit/errors.hpp"
#include "kdkit/report.hpp"

using namespace kd;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  fs::path p = fs::temp_directory_path() / ("kdkit_report_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

}  // namespace

TEST_CASE("metrics jsonl round-trip") {
  fs::path dir = scratch("jsonl");
  MetricsRecord r{"run1", 2, "val", 71.5, 91.0, 1.2, 0.7, 0.5, 0.01, 12.5};
  append_metrics_jsonl(dir / "metrics.jsonl", r);
  r.epoch = 3;
  append_metrics_jsonl(dir / "metrics.jsonl", r);
  auto all = read_metrics_jsonl(dir / "metrics.jsonl");
  REQUIRE(all.size() == 2);
  CHECK(all[1] == r);
  {
    std::ofstream out(dir / "metrics.jsonl", std::ios::app);
    out << "{not json\n";
  }
  try {
    read_metrics_jsonl(dir / "metrics.jsonl");
    FAIL("expected ParseError");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::Parse);
    CHECK(std::string(e.what()).find(":3") != std::string::npos);
  }
}

TEST_CASE("gap_table") {
  std::vector<MethodResult> rs{{"cifar100", "r56->r20", "KD", 70.66},
                               {"cifar100", "r56->r20", "DKD", 71.97},
                               {"cifar100", "r56->r20", "DIST", 71.75},
                               {"imagenet", "r50->r18", "KD", 71.0},
                               {"imagenet", "r50->r18", "DKD", 70.5}};
  auto rep = gap_table(rs);
  REQUIRE(rep.entries.size() == 2);
  const auto& c = rep.entries[0].scale == "cifar100" ? rep.entries[0] : rep.entries[1];
  CHECK(c.best_other == "DKD");
  CHECK(c.delta == doctest::Approx(70.66 - 71.97));
  const auto& i = rep.entries[0].scale == "imagenet" ? rep.entries[0] : rep.entries[1];
  CHECK(i.delta == doctest::Approx(0.5));
  CHECK(gap_table_csv(rep).rfind("scale,pair,kd_top1,best_other_method,best_other_top1,delta\n", 0) == 0);
  CHECK(gap_vs_scale_csv(rep).find("DIST") != std::string::npos);

  try {
    gap_table({{"s", "p", "KD", 1.0}});
    FAIL("expected ReportError");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::Report);
  }
  CHECK_THROWS_AS(gap_table({{"s", "p", "DKD", 1.0}}), Error);
  CHECK(csv_escape("a,b") == "\"a,b\"");
}
