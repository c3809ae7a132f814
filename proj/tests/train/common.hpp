// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <filesystem>
#include <string>

#include "kdkit/recipes.hpp"
#include "synthetic.hpp"

namespace fixture {

namespace fs = std::filesystem;

inline fs::path scratch(const std::string& name) {
  fs::path p = fs::temp_directory_path() / ("kdkit_train_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

/// Shared synthetic CIFAR-format archive: 100 classes, 2 train and 1 test
/// image each.
inline const fs::path& cifar_root() {
  static const fs::path root = [] {
    fs::path p = fs::temp_directory_path() / "kdkit_train_cifar";
    if (!fs::exists(p / "test.bin")) synth::write_cifar(p, 2, 1);
    return p;
  }();
  return root;
}

/// resnet8 -> resnet8 on the synthetic archive with a small recipe C variant.
inline kd::DistillJobSpec tiny_job(kd::Method method = kd::Method::KD) {
  kd::DistillJobSpec j;
  j.teacher = {"resnet8", ""};
  j.student = {"resnet8", ""};
  j.method = method;
  j.dataset.root = cifar_root().string();
  j.recipe = kd::builtin_recipe("C");
  j.recipe.batch_size = 16;
  j.recipe.epochs = 1;
  j.recipe.warmup_epochs = 0;
  j.seed = 5;
  if (method == kd::Method::HINT || method == kd::Method::CC || method == kd::Method::RKD) {
    j.hint_layer_pairs = {{"stage2", "stage2"}, {"pool", "pool"}};
  }
  return j;
}

}  // namespace fixture
