// SPDX-License-Identifier: Apache-2.0
#include "kdkit/train/trainer.hpp"

#include <ATen/autocast_mode.h>
#include <torch/version.h>

#include <chrono>
#include <cmath>
#include <ctime>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <sstream>
#include <thread>

#include "kdkit/data.hpp"
#include "kdkit/errors.hpp"
#include "kdkit/train/objective.hpp"
#include "kdkit/train/optim.hpp"

namespace kd::train {

namespace fs = std::filesystem;

namespace {

constexpr const char* kVersion = "kdkit 0.1.0";

std::string utc_now() {
  const std::time_t t = std::time(nullptr);
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

std::string compact_now() {
  const std::time_t t = std::time(nullptr);
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y%m%d-%H%M%S", &tm);
  return buf;
}

Json read_json(const fs::path& file) {
  std::ifstream in(file);
  if (!in) fail(ErrorKind::Data, "cannot read " + file.string());
  try {
    return Json::parse(in);
  } catch (const Json::exception& e) {
    fail(ErrorKind::Parse, file.string() + ": " + e.what());
  }
}

void write_text(const fs::path& file, const std::string& text) {
  std::ofstream out(file, std::ios::binary);
  out << text;
  if (!out) fail(ErrorKind::Data, "cannot write " + file.string());
}

torch::Tensor to_tensor(const ImageBatch& b) {
  return torch::from_blob(const_cast<float*>(b.data.data()), {b.n, b.c, b.h, b.w}, torch::kFloat).clone();
}

torch::Tensor label_tensor(const std::vector<std::int64_t>& labels) {
  return torch::tensor(labels, torch::kLong);
}

// Enables CPU bf16 autocast for the lifetime of the scope.
class AutocastScope {
 public:
  explicit AutocastScope(bool enabled) : enabled_(enabled) {
    if (!enabled_) return;
    at::autocast::set_autocast_dtype(at::kCPU, at::kBFloat16);
    at::autocast::set_autocast_enabled(at::kCPU, true);
  }
  ~AutocastScope() {
    if (!enabled_) return;
    at::autocast::set_autocast_enabled(at::kCPU, false);
    at::autocast::clear_cache();
  }
  AutocastScope(const AutocastScope&) = delete;
  AutocastScope& operator=(const AutocastScope&) = delete;

 private:
  bool enabled_;
};

std::vector<torch::Tensor> state_tensors(Classifier& m) {
  std::vector<torch::Tensor> out;
  for (auto& p : m.parameters()) out.push_back(p);
  for (auto& b : m.buffers()) out.push_back(b);
  return out;
}

void ema_step(Classifier& shadow, Classifier& live, double decay) {
  torch::NoGradGuard no_grad;
  auto sp = shadow.parameters();
  auto lp = live.parameters();
  for (std::size_t i = 0; i < sp.size(); ++i) {
    auto s = sp[i];
    const auto l = lp[i].detach().contiguous();
    ema_update(std::span<float>(s.data_ptr<float>(), static_cast<std::size_t>(s.numel())),
               std::span<const float>(l.data_ptr<float>(), static_cast<std::size_t>(l.numel())), decay);
  }
  auto sb = shadow.buffers();
  auto lb = live.buffers();
  for (std::size_t i = 0; i < sb.size(); ++i) sb[i].copy_(lb[i]);
}

std::uint64_t step_seed(std::uint64_t seed, std::int64_t global_step) {
  auto rng = make_rng({seed, static_cast<std::uint64_t>(global_step), 0x746f7263ULL});
  return rng() >> 1;
}

Json stats_of(const torch::Tensor& t) {
  const auto d = t.detach().to(torch::kDouble);
  const auto finite = torch::isfinite(d);
  return Json{{"numel", d.numel()},
              {"finite_fraction", finite.to(torch::kDouble).mean().item<double>()},
              {"mean", d.mean().item<double>()},
              {"std", d.numel() > 1 ? d.std().item<double>() : 0.0},
              {"min", d.min().item<double>()},
              {"max", d.max().item<double>()}};
}

// Everything a checkpoint records besides tensors.
struct TrainState {
  std::string run_id;
  std::string job_hash;
  std::string stage = "labeled";
  std::int64_t global_step = 0;
  int epoch = 0;  // completed labeled epochs
  ScheduleState schedule;
  double best_top1 = -1.0;
  // Partial sums of the current epoch's training metrics.
  double sum_total = 0.0, sum_hard = 0.0, sum_soft = 0.0;
  std::int64_t sum_steps = 0, train_correct = 0, train_seen = 0;
};

Json to_json(const TrainState& s) {
  return Json{{"run_id", s.run_id},
              {"job_hash", s.job_hash},
              {"stage", s.stage},
              {"global_step", s.global_step},
              {"epoch", s.epoch},
              {"schedule",
               {{"step", s.schedule.step},
                {"total_steps", s.schedule.total_steps},
                {"warmup_steps", s.schedule.warmup_steps},
                {"base_lr", s.schedule.base_lr},
                {"current_lr", s.schedule.current_lr}}},
              {"best_top1", s.best_top1},
              {"partial_epoch",
               {{"sum_total", s.sum_total},
                {"sum_hard", s.sum_hard},
                {"sum_soft", s.sum_soft},
                {"steps", s.sum_steps},
                {"train_correct", s.train_correct},
                {"train_seen", s.train_seen}}}};
}

TrainState state_from_json(const Json& j) {
  TrainState s;
  s.run_id = j.at("run_id").get<std::string>();
  s.job_hash = j.at("job_hash").get<std::string>();
  s.stage = j.at("stage").get<std::string>();
  s.global_step = j.at("global_step").get<std::int64_t>();
  s.epoch = j.at("epoch").get<int>();
  const Json& sc = j.at("schedule");
  s.schedule.step = sc.at("step").get<std::int64_t>();
  s.schedule.total_steps = sc.at("total_steps").get<std::int64_t>();
  s.schedule.warmup_steps = sc.at("warmup_steps").get<std::int64_t>();
  s.schedule.base_lr = sc.at("base_lr").get<double>();
  s.schedule.current_lr = sc.at("current_lr").get<double>();
  s.best_top1 = j.at("best_top1").get<double>();
  const Json& p = j.at("partial_epoch");
  s.sum_total = p.at("sum_total").get<double>();
  s.sum_hard = p.at("sum_hard").get<double>();
  s.sum_soft = p.at("sum_soft").get<double>();
  s.sum_steps = p.at("steps").get<std::int64_t>();
  s.train_correct = p.at("train_correct").get<std::int64_t>();
  s.train_seen = p.at("train_seen").get<std::int64_t>();
  return s;
}

void save_module(torch::nn::Module& m, const fs::path& file) {
  torch::serialize::OutputArchive archive;
  m.save(archive);
  archive.save_to(file.string());
}

void load_module(torch::nn::Module& m, const fs::path& file) {
  torch::serialize::InputArchive archive;
  archive.load_from(file.string());
  m.load(archive);
}

void copy_dir(const fs::path& from, const fs::path& to) {
  const fs::path tmp = to.string() + ".tmp";
  fs::remove_all(tmp);
  fs::copy(from, tmp, fs::copy_options::recursive);
  fs::remove_all(to);
  fs::rename(tmp, to);
}

std::shared_ptr<const Dataset> training_set(const DistillJobSpec& spec, const fs::path& run_dir) {
  DatasetRef ref = spec.dataset;
  ref.split = Split::TRAIN;
  auto base = open_dataset(ref);
  if (!spec.subset || spec.subset->fraction >= 1.0) return base;
  const auto labels = base->labels();
  auto indices = stratified_subset(labels, spec.dataset.class_count, *spec.subset);
  if (!run_dir.empty()) write_index_list(run_dir / "subset_indices.txt", indices);
  return std::make_shared<SubsetDataset>(base, std::move(indices));
}

class Trainer {
 public:
  Trainer(const DistillJobSpec& spec, const TrainOptions& options) : spec_(spec), opt_(options) {}

  TrainResult run();

 private:
  void setup();
  void write_or_check_manifest();
  void run_unlabeled_stage();
  void run_labeled_stage();
  bool train_step(const ImageBatch& images, const HardTargets& targets, bool hard_labels,
                  std::int64_t local_step, std::uint64_t mix_epoch);
  void end_epoch();
  MetricsRecord eval_pass(Classifier& model, const std::string& split);
  void save_checkpoint(const fs::path& dir);
  void restore(const fs::path& dir);
  [[noreturn]] void numeric_abort(const LossBreakdown& parts, const torch::Tensor& x,
                                  const torch::Tensor& logits, const std::string& reason);
  bool budget_reached() const { return opt_.max_steps >= 0 && state_.global_step >= opt_.max_steps; }
  double elapsed() const {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
  }

  DistillJobSpec spec_;
  TrainOptions opt_;
  TrainResult result_;
  TrainState state_;
  fs::path run_dir_;
  std::chrono::steady_clock::time_point start_ = std::chrono::steady_clock::now();

  ClassifierPtr student_, teacher_, ema_;
  std::shared_ptr<DistillObjective> objective_;
  std::unique_ptr<Optimizer> optimizer_;
  std::unique_ptr<BatchLoader> train_loader_;
  std::unique_ptr<BatchLoader> eval_loader_;
  std::unique_ptr<BatchMixer> mixer_;
  std::int64_t stage1_steps_ = 0;
  std::int64_t steps_per_epoch_ = 0;
  bool teacher_random_ = false;
};

void Trainer::setup() {
  const auto violations = validate_job(spec_);
  if (!violations.empty()) {
    std::string msg = "invalid job:";
    for (const auto& v : violations) msg += " " + v.field + " (" + v.rule + ");";
    fail(ErrorKind::Config, msg);
  }
  const auto& r = spec_.recipe;
  if (r.teacher_resolution != r.student_resolution) {
    fail(ErrorKind::Config, "teacher_resolution " + std::to_string(r.teacher_resolution) +
                                " != student_resolution " + std::to_string(r.student_resolution) +
                                "; teacher and student consume identical inputs");
  }
  if (opt_.deterministic) {
    torch::set_num_threads(1);
    at::globalContext().setDeterministicAlgorithms(true, false);
  }

  state_.job_hash = job_hash(spec_);
  state_.run_id = opt_.run_id.empty()
                      ? spec_.teacher.arch + "-" + spec_.student.arch + "-" + to_string(spec_.method) + "-" +
                            state_.job_hash.substr(0, 8) + "-" + compact_now()
                      : opt_.run_id;
  // A resumed checkpoint names its own run.
  if (!opt_.resume_from.empty()) {
    const fs::path state_file = opt_.resume_from / "state.json";
    if (!fs::exists(state_file)) fail(ErrorKind::Config, "not a checkpoint: " + opt_.resume_from.string());
    const TrainState saved = state_from_json(read_json(state_file));
    if (saved.job_hash != state_.job_hash) {
      fail(ErrorKind::Config, "checkpoint belongs to a different job (hash " + saved.job_hash + ")");
    }
    if (opt_.run_id.empty()) state_.run_id = saved.run_id;
  }
  run_dir_ = opt_.runs_root / state_.run_id;
  fs::create_directories(run_dir_);

  auto train_set = training_set(spec_, run_dir_);
  const int res = r.student_resolution;
  LoaderOptions lo;
  lo.batch_size = r.batch_size;
  lo.repeats = r.repeated_aug_count;
  lo.seed = spec_.seed;
  lo.num_workers = opt_.num_workers;
  train_loader_ = std::make_unique<BatchLoader>(
      train_set, build_augmentation(r, true, res, spec_.dataset.mean, spec_.dataset.std), lo);
  if (r.epochs > 0 && train_set->size() == 0) fail(ErrorKind::Data, "training split is empty");
  steps_per_epoch_ = train_loader_->steps_per_epoch();
  mixer_ = std::make_unique<BatchMixer>(r.mixup_alpha, r.cutmix_alpha, spec_.dataset.class_count);

  const int classes = spec_.dataset.class_count;
  torch::manual_seed(spec_.seed);
  student_ = make_model(spec_.student.arch, classes, r.drop_path_rate);
  if (!spec_.student.checkpoint.empty()) student_->load_from(resolve_weights(spec_.student.checkpoint).string());
  teacher_random_ = spec_.teacher.checkpoint.empty() && spec_.teacher.arch.rfind("torchscript:", 0) != 0;
  teacher_ = load_teacher(spec_.teacher, classes);

  // Shape probe for taps and projectors.
  {
    torch::NoGradGuard no_grad;
    student_->eval();
    const auto x = torch::zeros({2, 3, res, res});
    const auto s = student_->forward_taps(x);
    const auto t = teacher_->forward_taps(x);
    if (s.logits.size(1) != classes || t.logits.size(1) != classes) {
      fail(ErrorKind::Shape, "teacher and student must both predict " + std::to_string(classes) + " classes");
    }
    objective_ = std::make_shared<DistillObjective>(spec_, s, t);
    student_->train();
  }
  if (r.ema) {
    ema_ = make_model(spec_.student.arch, classes, r.drop_path_rate);
    copy_model_state(*ema_, *student_);
    ema_->eval();
  }
  stage1_steps_ = spec_.unlabeled_stage ? spec_.unlabeled_stage->iterations : 0;
}

void Trainer::write_or_check_manifest() {
  const fs::path file = run_dir_ / "manifest";
  if (fs::exists(file)) {
    const Json existing = read_json(file);
    if (existing.value("job_hash", "") != state_.job_hash) {
      fail(ErrorKind::Config, "run directory " + run_dir_.string() + " holds a different job");
    }
    if (opt_.resume_from.empty() && opt_.max_steps < 0 && fs::exists(run_dir_ / "ckpt-last")) {
      fail(ErrorKind::Config, "run " + state_.run_id + " already exists; resume from one of its checkpoints");
    }
    result_.manifest = existing;
    return;
  }
  const std::int64_t labeled = steps_per_epoch_ * spec_.recipe.epochs;
  Json m;
  m["run_id"] = state_.run_id;
  m["version"] = kVersion;
  m["job_hash"] = state_.job_hash;
  m["job"] = to_json(spec_);
  m["environment"] = {{"torch", TORCH_VERSION},
                      {"intra_op_threads", at::get_num_threads()},
                      {"hardware_threads", std::thread::hardware_concurrency()},
                      {"deterministic", opt_.deterministic},
                      {"device", "cpu"},
                      {"amp_dtype", spec_.recipe.amp ? "bfloat16" : "none"},
                      {"compiler", __VERSION__}};
  m["start_time"] = utc_now();
  m["teacher_weights"] = teacher_random_ ? "random-init" : spec_.teacher.checkpoint;
  m["steps_per_epoch"] = steps_per_epoch_;
  m["stages"] = Json::array({Json{{"name", "unlabeled"}, {"iterations", stage1_steps_}},
                             Json{{"name", "labeled"}, {"iterations", labeled}}});
  m["total_iterations"] = stage1_steps_ + labeled;
  write_text(file, m.dump(2) + "\n");
  result_.manifest = m;
}

MetricsRecord Trainer::eval_pass(Classifier& model, const std::string& split) {
  if (!eval_loader_) {
    eval_loader_ = std::make_unique<BatchLoader>(eval_loader(spec_, Split::VAL, 0, opt_.num_workers));
  }
  MetricsRecord m = evaluate(model, *eval_loader_, opt_.eval_max_batches);
  m.run_id = state_.run_id;
  m.epoch = state_.epoch;
  m.split = split;
  m.lr = state_.schedule.current_lr;
  m.wall_time_s = elapsed();
  return m;
}

void Trainer::numeric_abort(const LossBreakdown& parts, const torch::Tensor& x, const torch::Tensor& logits,
                            const std::string& reason) {
  Json d{{"run_id", state_.run_id},
         {"reason", reason},
         {"stage", state_.stage},
         {"global_step", state_.global_step},
         {"epoch", state_.epoch},
         {"lr", state_.schedule.current_lr},
         {"loss", {{"total", parts.total}, {"hard", parts.hard_component}, {"soft", parts.soft_component}}},
         {"batch", stats_of(x)},
         {"student_logits", stats_of(logits)}};
  Json extras = Json::object();
  for (const auto& [k, v] : parts.extra) extras[k] = v;
  d["loss"]["extra"] = extras;
  write_text(run_dir_ / "abort.json", d.dump(2) + "\n");
  fail(ErrorKind::Numeric, reason + " at step " + std::to_string(state_.global_step) +
                               "; diagnostics in " + (run_dir_ / "abort.json").string());
}

bool Trainer::train_step(const ImageBatch& images, const HardTargets& targets, bool hard_labels,
                         std::int64_t local_step, std::uint64_t mix_epoch) {
  auto mix_rng = make_rng({spec_.seed, mix_epoch, static_cast<std::uint64_t>(local_step), 0x6d6978ULL});
  const MixedBatch mixed = (*mixer_)(images, targets, mix_rng);
  const torch::Tensor x = to_tensor(mixed.images);
  torch::manual_seed(step_seed(spec_.seed, state_.global_step));

  const bool amp = spec_.recipe.amp;
  ModelOutput t_out, s_out;
  {
    AutocastScope autocast(amp);
    {
      torch::NoGradGuard no_grad;
      t_out = teacher_->forward_taps(x);
    }
    student_->train();
    s_out = student_->forward_taps(x);
  }
  StepLoss loss;
  try {
    loss = (*objective_)(s_out, t_out, mixed.targets, hard_labels);
  } catch (const Error& e) {
    if (e.kind() != ErrorKind::Numeric) throw;
    LossBreakdown unknown;
    unknown.total = unknown.hard_component = unknown.soft_component = std::nan("");
    numeric_abort(unknown, x, s_out.logits, e.what());
  }
  if (!std::isfinite(loss.parts.total)) numeric_abort(loss.parts, x, s_out.logits, "non-finite loss");

  state_.schedule.current_lr = lr_at(state_.schedule, local_step);
  state_.schedule.step = local_step;
  optimizer_->zero_grad();
  loss.total.backward();
  optimizer_->step(state_.schedule.current_lr);
  if (ema_) ema_step(*ema_, *student_, spec_.recipe.ema_decay);

  state_.sum_total += loss.parts.total;
  state_.sum_hard += loss.parts.hard_component;
  state_.sum_soft += loss.parts.soft_component;
  ++state_.sum_steps;
  if (hard_labels) {
    const auto pred = s_out.logits.detach().argmax(1);
    const auto truth = label_tensor(mixed.targets.dominant());
    state_.train_correct += pred.eq(truth).sum().item<std::int64_t>();
    state_.train_seen += pred.size(0);
  }

  StepRecord rec{state_.global_step, state_.epoch, state_.stage, loss.parts.total,
                 loss.parts.hard_component, loss.parts.soft_component, state_.schedule.current_lr};
  result_.steps.push_back(rec);
  if (opt_.on_step) opt_.on_step(rec);
  ++state_.global_step;
  state_.schedule.step = local_step + 1;
  return !budget_reached();
}

void Trainer::run_unlabeled_stage() {
  const auto& stage = *spec_.unlabeled_stage;
  if (stage.pool.root.empty()) fail(ErrorKind::Data, "unlabeled stage has no pool");
  auto pool = std::make_shared<UnlabeledView>(open_dataset(stage.pool));
  LoaderOptions lo;
  lo.batch_size = spec_.recipe.batch_size;
  lo.seed = spec_.seed ^ 0x756e6cULL;
  lo.num_workers = opt_.num_workers;
  const auto& r = spec_.recipe;
  UnlabeledStream stream(pool, build_augmentation(r, true, r.student_resolution, spec_.dataset.mean, spec_.dataset.std),
                         lo);
  stream.seek(state_.global_step);
  while (state_.global_step < stage1_steps_) {
    const std::int64_t local = state_.global_step;
    const ImageBatch images = stream.next();
    // Pseudo-targets from the teacher: the pool's labels are never used, and
    // DKD needs a distinguished class per sample.
    std::vector<std::int64_t> pseudo;
    {
      torch::NoGradGuard no_grad;
      AutocastScope autocast(r.amp);
      pseudo = std::vector<std::int64_t>(images.n, 0);
      const auto arg = teacher_->forward_taps(to_tensor(images)).logits.argmax(1).contiguous();
      std::copy(arg.data_ptr<std::int64_t>(), arg.data_ptr<std::int64_t>() + images.n, pseudo.begin());
    }
    if (!train_step(images, HardTargets(pseudo), false, local, 0xffffULL)) {
      if (state_.global_step < stage1_steps_) {
        save_checkpoint(run_dir_ / "ckpt-last");
        return;
      }
    }
  }
  MetricsRecord m;
  m.run_id = state_.run_id;
  m.epoch = 0;
  m.split = "unlabeled";
  const double n = static_cast<double>(std::max<std::int64_t>(1, state_.sum_steps));
  m.loss_total = state_.sum_total / n;
  m.loss_hard = state_.sum_hard / n;
  m.loss_soft = state_.sum_soft / n;
  m.lr = state_.schedule.current_lr;
  m.wall_time_s = elapsed();
  append_metrics_jsonl(run_dir_ / "metrics.jsonl", m);
  state_.sum_total = state_.sum_hard = state_.sum_soft = 0.0;
  state_.sum_steps = state_.train_correct = state_.train_seen = 0;
}

void Trainer::end_epoch() {
  ++state_.epoch;
  MetricsRecord train;
  train.run_id = state_.run_id;
  train.epoch = state_.epoch;
  train.split = "train";
  const double n = static_cast<double>(std::max<std::int64_t>(1, state_.sum_steps));
  train.loss_total = state_.sum_total / n;
  train.loss_hard = state_.sum_hard / n;
  train.loss_soft = state_.sum_soft / n;
  train.top1 = state_.train_seen ? 100.0 * static_cast<double>(state_.train_correct) / state_.train_seen : 0.0;
  train.lr = state_.schedule.current_lr;
  train.wall_time_s = elapsed();
  append_metrics_jsonl(run_dir_ / "metrics.jsonl", train);
  state_.sum_total = state_.sum_hard = state_.sum_soft = 0.0;
  state_.sum_steps = state_.train_correct = state_.train_seen = 0;

  const MetricsRecord val = eval_pass(*student_, "val");
  if (ema_) append_metrics_jsonl(run_dir_ / "metrics.jsonl", eval_pass(*ema_, "val_ema"));
  append_metrics_jsonl(run_dir_ / "metrics.jsonl", val);
  result_.final_eval = val;
  if (opt_.verbose) {
    std::cout << state_.run_id << " epoch " << state_.epoch << "/" << spec_.recipe.epochs << " loss "
              << train.loss_total << " val top1 " << val.top1 << " lr " << train.lr << std::endl;
  }

  const bool best = val.top1 > state_.best_top1;
  if (best) state_.best_top1 = val.top1;
  const fs::path dir = run_dir_ / ("ckpt-" + std::to_string(state_.epoch));
  save_checkpoint(dir);
  copy_dir(dir, run_dir_ / "ckpt-last");
  if (best) copy_dir(dir, run_dir_ / "ckpt-best");
  // Keep best plus last; the numbered copy of the previous epoch goes away.
  if (state_.epoch > 1) fs::remove_all(run_dir_ / ("ckpt-" + std::to_string(state_.epoch - 1)));
}

void Trainer::run_labeled_stage() {
  const auto& r = spec_.recipe;
  const std::int64_t total = steps_per_epoch_ * r.epochs;
  while (state_.epoch < r.epochs) {
    const std::int64_t start = state_.global_step - stage1_steps_ - state_.epoch * steps_per_epoch_;
    bool stopped = false;
    train_loader_->for_epoch(state_.epoch, start, [&](std::int64_t step, LabeledBatch&& batch) {
      const std::int64_t local = state_.epoch * steps_per_epoch_ + step;
      const bool more = train_step(batch.images, HardTargets(batch.labels), true, local,
                                   static_cast<std::uint64_t>(state_.epoch));
      if (!more && step + 1 < steps_per_epoch_) {
        stopped = true;
        return false;
      }
      return true;
    });
    if (stopped) {
      save_checkpoint(run_dir_ / "ckpt-last");
      return;
    }
    end_epoch();
    if (budget_reached() && state_.global_step - stage1_steps_ < total) return;
  }
}

void Trainer::save_checkpoint(const fs::path& dir) {
  const fs::path tmp = dir.string() + ".tmp";
  fs::remove_all(tmp);
  fs::create_directories(tmp);
  student_->save_to((tmp / "student.pt").string());
  if (ema_) ema_->save_to((tmp / "ema.pt").string());
  if (!objective_->parameters().empty() || !objective_->buffers().empty()) save_module(*objective_, tmp / "objective.pt");
  {
    torch::serialize::OutputArchive archive;
    optimizer_->save(archive);
    archive.save_to((tmp / "optimizer.pt").string());
  }
  write_text(tmp / "state.json", to_json(state_).dump(2) + "\n");
  write_text(tmp / "job.json", serialize_job(spec_));
  fs::remove_all(dir);
  fs::rename(tmp, dir);
}

void Trainer::restore(const fs::path& dir) {
  state_ = state_from_json(read_json(dir / "state.json"));
  student_->load_from((dir / "student.pt").string());
  if (ema_) {
    if (!fs::exists(dir / "ema.pt")) fail(ErrorKind::Config, "checkpoint lacks the EMA shadow");
    ema_->load_from((dir / "ema.pt").string());
  }
  if (fs::exists(dir / "objective.pt")) load_module(*objective_, dir / "objective.pt");
  torch::serialize::InputArchive archive;
  archive.load_from((dir / "optimizer.pt").string());
  optimizer_->load(archive);
}

TrainResult Trainer::run() {
  setup();
  write_or_check_manifest();
  result_.run_id = state_.run_id;
  result_.run_dir = run_dir_;
  const auto& r = spec_.recipe;

  auto make_opt = [&] {
    auto params = student_->parameters();
    for (auto& p : objective_->parameters()) params.push_back(p);
    optimizer_ = std::make_unique<Optimizer>(make_optimizer(r, params));
  };
  auto labeled_schedule = [&] {
    ScheduleState s;
    s.total_steps = std::max<std::int64_t>(1, steps_per_epoch_ * r.epochs);
    s.warmup_steps = steps_per_epoch_ * r.warmup_epochs;
    s.base_lr = r.base_lr;
    return s;
  };

  make_opt();
  if (stage1_steps_ > 0) {
    // The soft-label stage gets its own warmup+cosine over its iterations,
    // with the warmup share of the labeled recipe.
    state_.stage = "unlabeled";
    state_.schedule.total_steps = stage1_steps_;
    state_.schedule.warmup_steps =
        r.epochs > 0 ? static_cast<std::int64_t>(std::llround(static_cast<double>(stage1_steps_) * r.warmup_epochs / r.epochs)) : 0;
    state_.schedule.base_lr = r.base_lr;
  } else {
    state_.schedule = labeled_schedule();
  }
  const std::string run_id = state_.run_id;
  if (!opt_.resume_from.empty()) {
    restore(opt_.resume_from);
    state_.run_id = run_id;
  }

  if (state_.stage == "unlabeled") {
    run_unlabeled_stage();
    if (state_.global_step < stage1_steps_) return std::move(result_);
    state_.stage = "labeled";
    state_.schedule = labeled_schedule();
    make_opt();
  }

  if (r.epochs == 0) {
    result_.final_eval = eval_pass(*student_, "val");
    append_metrics_jsonl(run_dir_ / "metrics.jsonl", *result_.final_eval);
  } else if (!budget_reached()) {
    run_labeled_stage();
  } else {
    save_checkpoint(run_dir_ / "ckpt-last");
  }
  result_.global_step = state_.global_step;
  return std::move(result_);
}

}  // namespace

TrainResult train_distill(const DistillJobSpec& spec, const TrainOptions& options) {
  Trainer trainer(spec, options);
  return trainer.run();
}

TrainResult two_stage_distill(const DistillJobSpec& spec, const TrainOptions& options) {
  if (!spec.unlabeled_stage) fail(ErrorKind::Data, "job has no unlabeled stage configured");
  return train_distill(spec, options);
}

void EvalCounts::add(const torch::Tensor& logits, const torch::Tensor& labels) {
  const auto l = logits.detach().to(torch::kFloat);
  const auto y = labels.to(torch::kLong);
  if (l.size(0) != y.size(0)) fail(ErrorKind::Shape, "logits/labels size mismatch");
  if (y.numel() == 0) return;
  if ((y < 0).any().item<bool>()) fail(ErrorKind::Data, "evaluation split has unlabeled samples");
  const std::int64_t k = std::min<std::int64_t>(5, l.size(1));
  const auto top = std::get<1>(l.topk(k, 1));
  const auto hits = top.eq(y.unsqueeze(1));
  correct1_ += hits.select(1, 0).sum().item<std::int64_t>();
  correct5_ += hits.any(1).sum().item<std::int64_t>();
  loss_sum_ += torch::nn::functional::cross_entropy(
                   l.to(torch::kDouble), y, torch::nn::functional::CrossEntropyFuncOptions().reduction(torch::kSum))
                   .item<double>();
  samples_ += y.size(0);
}

MetricsRecord EvalCounts::record() const {
  MetricsRecord m;
  if (samples_ == 0) return m;
  const double n = static_cast<double>(samples_);
  m.top1 = 100.0 * static_cast<double>(correct1_) / n;
  m.top5 = 100.0 * static_cast<double>(correct5_) / n;
  m.loss_total = loss_sum_ / n;
  m.loss_hard = m.loss_total;
  return m;
}

MetricsRecord evaluate(Classifier& model, const BatchLoader& loader, std::int64_t max_batches) {
  if (loader.dataset_size() == 0) fail(ErrorKind::Data, "evaluation split is empty");
  torch::NoGradGuard no_grad;
  const bool was_training = model.is_training();
  model.eval();
  EvalCounts counts;
  loader.for_epoch(0, 0, [&](std::int64_t step, LabeledBatch&& b) {
    counts.add(model.forward_taps(to_tensor(b.images)).logits, label_tensor(b.labels));
    return max_batches < 0 || step + 1 < max_batches;
  });
  if (was_training) model.train();
  return counts.record();
}

BatchLoader eval_loader(const DistillJobSpec& spec, Split split, std::int64_t batch_size, int num_workers) {
  DatasetRef ref = spec.dataset;
  ref.split = split;
  auto data = open_dataset(ref);
  LoaderOptions lo;
  lo.batch_size = batch_size > 0 ? batch_size : std::max(1, spec.recipe.batch_size);
  lo.shuffle = false;
  lo.num_workers = num_workers;
  lo.seed = spec.seed;
  return BatchLoader(data,
                     build_augmentation(spec.recipe, false, spec.recipe.student_resolution, spec.dataset.mean,
                                        spec.dataset.std, spec.dataset.eval_crop_pct),
                     lo);
}

fs::path resolve_weights(const fs::path& ref) {
  if (fs::is_regular_file(ref)) return ref;
  if (fs::is_directory(ref)) {
    if (fs::exists(ref / "student.pt")) return ref / "student.pt";
    for (const char* sub : {"ckpt-best", "ckpt-last"}) {
      if (fs::exists(ref / sub / "student.pt")) return ref / sub / "student.pt";
    }
  }
  fail(ErrorKind::Config, "no model weights at " + ref.string());
}

ClassifierPtr load_teacher(const ModelRef& ref, int num_classes) {
  auto model = make_model(ref.arch, num_classes);
  if (!ref.checkpoint.empty() && ref.arch.rfind("torchscript:", 0) != 0) {
    model->load_from(resolve_weights(ref.checkpoint).string());
  }
  model->eval();
  for (auto& p : model->parameters()) p.set_requires_grad(false);
  return model;
}

LoadedCheckpoint load_checkpoint_model(const fs::path& ckpt) {
  const fs::path weights = resolve_weights(ckpt);
  const fs::path dir = weights.parent_path();
  fs::path job_file = dir / "job.json";
  if (!fs::exists(job_file)) fail(ErrorKind::Config, "checkpoint " + dir.string() + " has no job.json");
  std::ifstream in(job_file);
  std::stringstream text;
  text << in.rdbuf();
  LoadedCheckpoint out;
  out.job = parse_job(text.str());
  out.dir = dir;
  out.model = make_model(out.job.student.arch, out.job.dataset.class_count);
  out.model->load_from(weights.string());
  out.model->eval();
  return out;
}

std::string job_hash(const DistillJobSpec& spec) {
  // FNV-1a over the canonical serialization.
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char c : serialize_job(spec)) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  std::ostringstream out;
  out << std::hex << std::setw(16) << std::setfill('0') << h;
  return out.str();
}

void copy_model_state(Classifier& dst, Classifier& src) {
  torch::NoGradGuard no_grad;
  auto d = state_tensors(dst);
  auto s = state_tensors(src);
  if (d.size() != s.size()) fail(ErrorKind::Shape, "models differ in structure");
  for (std::size_t i = 0; i < d.size(); ++i) d[i].copy_(s[i]);
}

}  // namespace kd::train
