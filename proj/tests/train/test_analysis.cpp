// SPDX-License-Identifier: Apache-2.0
#include "doctest_torch.hpp"

#include <fstream>

#include "common.hpp"
#include "kdkit/errors.hpp"
#include "kdkit/train/analysis.hpp"
#include "kdkit/train/objective.hpp"
#include "kdkit/train/trainer.hpp"

using namespace kd;
using namespace kd::train;
namespace fs = std::filesystem;

namespace {

DatasetRef probe_ref() {
  DatasetRef ref;
  ref.root = fixture::cifar_root().string();
  ref.split = Split::TRAIN;
  return ref;
}

}  // namespace

TEST_CASE("self-similarity heatmap has a unit diagonal") {
  torch::manual_seed(21);
  auto m = make_model("resnet8", 100);
  const auto loader = probe_loader(probe_ref(), 32, 64, 32);
  const CkaMatrix h = cka_heatmap(*m, *m, loader);
  REQUIRE(h.row_layers == m->tap_names());
  REQUIRE(h.values.rows() == 5);
  for (Eigen::Index i = 0; i < h.values.rows(); ++i) {
    CHECK(h.values(i, i) == doctest::Approx(1.0).epsilon(1e-9));
    for (Eigen::Index j = 0; j < h.values.cols(); ++j) {
      CHECK(h.values(i, j) >= 0.0);
      CHECK(h.values(i, j) <= 1.0 + 1e-6);
      CHECK(h.values(i, j) == doctest::Approx(h.values(j, i)).epsilon(1e-9));
    }
  }
  const std::string csv = cka_to_csv(h);
  CHECK(csv.rfind("row_layer,col_layer,value\n", 0) == 0);
}

TEST_CASE("heatmaps over selected taps and missing taps") {
  torch::manual_seed(22);
  auto a = make_model("resnet8", 100);
  auto b = make_model("resnet8x4", 100);
  const auto loader = probe_loader(probe_ref(), 32, 32, 16);
  const CkaMatrix h = cka_heatmap(*a, *b, loader, {"stage1", "pool"}, {"stage3"});
  CHECK(h.values.rows() == 2);
  CHECK(h.values.cols() == 1);
  try {
    cka_heatmap(*a, *b, loader, {"stage9"}, {});
    FAIL("expected TapError");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::Tap);
  }
}

TEST_CASE("minibatch accumulation approaches the full-probe value") {
  torch::manual_seed(23);
  auto a = make_model("resnet8", 100);
  auto b = make_model("resnet8x4", 100);
  DatasetRef ref = probe_ref();
  ref.root = fixture::scratch("cka_probe").string();
  synth::write_cifar(ref.root, 21, 1, 100, 23);
  const auto full = cka_heatmap(*a, *b, probe_loader(ref, 32, kDefaultProbeSamples, kDefaultProbeSamples));
  const auto batched = cka_heatmap(*a, *b, probe_loader(ref, 32, kDefaultProbeSamples, 40));
  CHECK(full.values.rows() == batched.values.rows());
  const double worst = (full.values - batched.values).cwiseAbs().maxCoeff();
  MESSAGE("largest entry difference over 52 batches: " << worst);
  CHECK(worst <= 0.05);
}

TEST_CASE("heatmap entries agree with the core accumulator") {
  torch::manual_seed(24);
  auto a = make_model("resnet8", 100);
  auto b = make_model("resnet14", 100);
  const auto loader = probe_loader(probe_ref(), 32, 48, 24);
  const CkaMatrix h = cka_heatmap(*a, *b, loader, {"stage2", "pool"}, {"stage3"});
  std::vector<CkaAccumulator> acc(2);
  torch::NoGradGuard no_grad;
  a->eval();
  b->eval();
  loader.for_epoch(0, 0, [&](std::int64_t, LabeledBatch&& batch) {
    const auto x = torch::from_blob(batch.images.data.data(),
                                    {batch.images.n, batch.images.c, batch.images.h, batch.images.w}, torch::kFloat)
                       .clone();
    const auto ta = a->forward_taps(x), tb = b->forward_taps(x);
    const Matrix y = to_matrix(tb.tap("stage3").flatten(1));
    acc[0].add_batch(to_matrix(ta.tap("stage2").flatten(1)), y, HsicEstimator::UNBIASED);
    acc[1].add_batch(to_matrix(ta.tap("pool").flatten(1)), y, HsicEstimator::UNBIASED);
    return true;
  });
  CHECK(h.values(0, 0) == doctest::Approx(acc[0].value()).epsilon(1e-6));
  CHECK(h.values(1, 0) == doctest::Approx(acc[1].value()).epsilon(1e-6));
}

TEST_CASE("grid cells are the row-major product of the axes") {
  Json base = to_json(fixture::tiny_job());
  GridSpec g = parse_grid(Json{{"base", base}});
  CHECK(grid_cells(g).size() == 1);
  CHECK(grid_cells(g)[0].empty());

  g = parse_grid(Json{{"base", base},
                      {"axes", Json::array({Json{{"path", "recipe.base_lr"}, {"values", {2e-3, 5e-3}}},
                                            Json{{"path", "recipe.weight_decay"}, {"values", {0.02, 0.03}}}})}});
  const auto cells = grid_cells(g);
  REQUIRE(cells.size() == 4);
  CHECK(cells[1].at("recipe.base_lr") == 2e-3);
  CHECK(cells[1].at("recipe.weight_decay") == 0.03);
  CHECK(cells[2].at("recipe.base_lr") == 5e-3);

  // Hard-label loss x soft-label loss; "no hard label" also sets alpha = 0.
  g = parse_grid(Json{
      {"base", base},
      {"axes", Json::array({Json{{"values", Json::array({Json{{"recipe.label_loss", "CE"}}, Json{{"recipe.label_loss", "BCE"}},
                                                          Json{{"recipe.label_loss", "NONE"}, {"alpha", 0.0}}})}},
                            Json{{"path", "soft_loss"}, {"values", {"KL", "BKL"}}}})}});
  const auto ablation = grid_cells(g);
  REQUIRE(ablation.size() == 6);
  CHECK(ablation[5].at("alpha") == 0.0);
  CHECK(ablation[5].at("soft_loss") == "BKL");

  CHECK_THROWS_AS(parse_grid(Json{{"axes", Json::array()}}), Error);
  CHECK_THROWS_AS(parse_grid(Json{{"base", base}, {"axes", Json::array({Json{{"path", "seed"}, {"values", Json::array()}}})}}),
                  Error);
}

TEST_CASE("grid runs record failures, resume finished cells and are order independent") {
  const fs::path runs = fixture::scratch("grid");
  auto job = fixture::tiny_job();
  const Json axes = Json::array({Json{{"path", "recipe.base_lr"}, {"values", {0.05, 0.01}}},
                                 Json{{"path", "recipe.label_loss"}, {"values", {"CE", "NONE"}}}});
  const Json budget{{"max_steps", 3}, {"eval_max_batches", 1}};
  GridSpec g = parse_grid(Json{{"base", to_json(job)}, {"axes", axes}, {"budget", budget}});
  GridOptions opt;
  opt.runs_root = runs;
  const auto first = grid_run(g, opt);
  REQUIRE(first.size() == 4);
  CHECK(first[0].status == "ok");
  CHECK(first[1].status == "failed");  // NONE with alpha 0.5
  CHECK(first[1].error.find("label_loss") != std::string::npos);
  CHECK(first[2].status == "ok");
  REQUIRE(first[0].metrics);

  std::ifstream csv(runs / "grid.csv");
  std::string header;
  std::getline(csv, header);
  CHECK(header == "cell,run_id,status,recipe.base_lr,recipe.label_loss,top1,top5,loss_total,error");

  const auto again = grid_run(g, opt);
  CHECK(again[0].status == "cached");
  CHECK(*again[0].metrics == *first[0].metrics);
  CHECK(again[1].status == "failed");

  // Reversed axis order runs the same cells in a different order.
  GridSpec reversed = parse_grid(Json{{"base", to_json(job)},
                                      {"axes", Json::array({axes[1], axes[0]})},
                                      {"budget", budget}});
  GridOptions other = opt;
  other.runs_root = runs / "reversed";
  const auto rev = grid_run(reversed, other);
  CHECK(rev[0].run_id == first[0].run_id);
  CHECK(rev[1].run_id == first[2].run_id);
  CHECK(*rev[1].metrics == *first[2].metrics);
}
