// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <algorithm>

#include "kdkit/errors.hpp"
#include "kdkit/recipes.hpp"

using namespace kd;

namespace {

DistillJobSpec sample_job() {
  return parse_job(R"({
    // comments are allowed
    "teacher": {"arch": "resnet56", "checkpoint": "t.pt"},
    "student": {"arch": "resnet20"},
    "method": "KD",
    "dataset": {"name": "cifar100", "root": "/data/cifar"},
    "recipe": "A2",
    "seed": 3
  })");
}

}  // namespace

TEST_CASE("builtin recipes carry the table values") {
  auto a2 = builtin_recipe("A2");
  CHECK(a2.optimizer == OptimizerKind::LAMB);
  CHECK(a2.base_lr == 5e-3);
  CHECK(a2.batch_size == 2048);
  CHECK(a2.warmup_epochs == 5);
  CHECK(a2.weight_decay == 0.03);
  CHECK(a2.label_smoothing == 0.0);
  CHECK(a2.mixup_alpha == 0.1);
  CHECK(a2.cutmix_alpha == 1.0);
  CHECK(a2.repeated_aug_count == 3);
  REQUIRE(a2.rand_augment.has_value());
  CHECK(a2.rand_augment->magnitude == 7);
  CHECK(a2.rand_augment->probability == 0.5);
  CHECK(a2.label_loss == LabelLoss::BCE);
  CHECK_FALSE(a2.ema);
  CHECK(a2.amp);
  CHECK(a2.teacher_resolution == 224);
  CHECK(a2.student_resolution == 224);

  auto c = builtin_recipe("C");
  CHECK(c.optimizer == OptimizerKind::SGD);
  CHECK(c.base_lr == 5e-2);
  CHECK(c.batch_size == 512);
  CHECK(c.warmup_epochs == 0);
  CHECK_FALSE(c.amp);
  CHECK(c.label_loss == LabelLoss::CE);
  CHECK(c.weight_decay == 5e-4);
  CHECK(c.hflip);
  CHECK(c.auto_augment);
  CHECK(c.mixup_alpha == 0.1);

  auto a1 = builtin_recipe("A1");
  auto a1_as_a2 = a1;
  a1_as_a2.name = "A2";
  a1_as_a2.weight_decay = 0.03;
  a1_as_a2.label_smoothing = 0.0;
  a1_as_a2.mixup_alpha = 0.1;
  CHECK(a1_as_a2 == a2);
  CHECK(a1.weight_decay == 0.01);
  CHECK(a1.label_smoothing == 0.1);
  CHECK(a1.mixup_alpha == 0.2);

  auto b = builtin_recipe("B");
  CHECK(b.optimizer == OptimizerKind::ADAMW);
  CHECK(b.label_loss == LabelLoss::CE);

  for (const auto& name : builtin_recipe_names()) {
    CHECK(validate_recipe(builtin_recipe(name)).empty());
    CHECK(builtin_recipe(name) == builtin_recipe(name));
  }
  try {
    builtin_recipe("Z");
    FAIL("expected NotFound");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::NotFound);
    CHECK(std::string(e.what()).find("A1") != std::string::npos);
  }
}

TEST_CASE("validate_recipe names violated fields") {
  auto r = builtin_recipe("A2");
  r.warmup_epochs = r.epochs;
  auto v = validate_recipe(r);
  REQUIRE(v.size() == 1);
  CHECK(v[0].field == "warmup_epochs");

  r = builtin_recipe("A2");
  r.auto_augment = true;
  v = validate_recipe(r);
  REQUIRE(v.size() == 1);
  CHECK(v[0].rule.find("auto_augment") != std::string::npos);

  r = builtin_recipe("C");
  r.base_lr = 0;
  r.batch_size = 0;
  CHECK(validate_recipe(r).size() == 2);
}

TEST_CASE("jobs validate, round-trip and reject unknown keys") {
  auto job = sample_job();
  CHECK(job.recipe == builtin_recipe("A2"));
  CHECK(job.alpha == 0.5);
  CHECK(job.temperature == 1.0);
  CHECK(job.dkd_alpha == 1.0);
  CHECK(job.dkd_beta == 2.0);
  auto again = parse_job(serialize_job(job));
  CHECK(again == job);
  CHECK(Json::parse(serialize_job(again)) == Json::parse(serialize_job(job)));

  try {
    parse_job(R"({"teacher": {"arch": "a"}, "student": {"arch": "b"}, "recipe": "C", "bogus": 1})");
    FAIL("expected ConfigKey");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::ConfigKey);
  }
  CHECK_THROWS_AS(parse_job(R"({"teacher": {"arch": "a"}, "student": {"arch": "b"}, "recipe": "C", "method": "CC"})"),
                  Error);
  try {
    parse_job(R"({"teacher": {"arch": "a"}, "student": {"arch": "b"}, "recipe": {"base": "C", "label_loss": "NONE"}})");
    FAIL("alpha > 0 with NONE must fail");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::Config);
  }
  auto soft_only = parse_job(
      R"({"teacher": {"arch": "a"}, "student": {"arch": "b"}, "alpha": 0, "recipe": {"base": "A2", "label_loss": "NONE"}})");
  CHECK(soft_only.recipe.label_loss == LabelLoss::NONE);
}

TEST_CASE("merge_overrides") {
  auto base = sample_job();
  CHECK(merge_overrides(base, std::map<std::string, std::string>{}) == base);

  auto cell = merge_overrides(base, std::map<std::string, std::string>{{"recipe.base_lr", "3e-3"},
                                                                       {"recipe.weight_decay", "0.02"}});
  CHECK(cell.recipe.base_lr == 3e-3);
  CHECK(cell.recipe.weight_decay == 0.02);
  auto expected = base;
  expected.recipe.base_lr = 3e-3;
  expected.recipe.weight_decay = 0.02;
  CHECK(cell == expected);

  auto dkd = merge_overrides(base, std::map<std::string, std::string>{{"dkd_beta", "8"}});
  CHECK(dkd.dkd_beta == 8.0);

  auto sub = merge_overrides(base, std::map<std::string, std::string>{{"subset.fraction", "0.3"}});
  REQUIRE(sub.subset.has_value());
  CHECK(sub.subset->fraction == 0.3);

  try {
    merge_overrides(base, std::map<std::string, std::string>{{"recipe.nope", "1"}});
    FAIL("expected ConfigKey");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::ConfigKey);
  }
  CHECK_THROWS_AS(merge_overrides(base, std::map<std::string, std::string>{{"recipe.warmup_epochs", "400"}}), Error);

  // Associative over disjoint keys.
  std::map<std::string, std::string> x{{"recipe.base_lr", "1e-3"}}, y{{"temperature", "2"}};
  std::map<std::string, std::string> xy = x;
  xy.insert(y.begin(), y.end());
  CHECK(merge_overrides(merge_overrides(base, x), y) == merge_overrides(base, xy));
  CHECK(merge_overrides(merge_overrides(base, y), x) == merge_overrides(base, xy));

  auto [k, v] = parse_set_argument("recipe.mixup_alpha=0.2");
  CHECK(k == "recipe.mixup_alpha");
  CHECK(v == "0.2");
  CHECK_THROWS_AS(parse_set_argument("novalue"), Error);
}

TEST_CASE("string forms") {
  CHECK(method_from_string("DIST") == Method::DIST);
  CHECK(split_from_string("val") == Split::VAL);
  CHECK(to_string(OptimizerKind::LAMB) == "LAMB");
  CHECK(describe_recipe(builtin_recipe("C")).find("SGD") != std::string::npos);
}
