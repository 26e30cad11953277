#include "spg/pipeline.hpp"

#include <algorithm>
#include <chrono>
#include <fstream>

#include <fmt/format.h>

#include "spg/binary_io.hpp"

namespace spg {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct Splits {
  Dataset train, val, test;
};

Splits make_splits(const TaskSpec& task) {
  return {generate(task, Split::train), generate(task, Split::val), generate(task, Split::test)};
}

void write_text(const fs::path& path, const std::string& text) {
  io::write_file(path, std::span(reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
}

void write_jsonl(const fs::path& path, const std::vector<json>& records) {
  std::string text;
  for (const auto& r : records) text += r.dump() + '\n';
  write_text(path, text);
}

void append_timing(const fs::path& dir, const std::string& stage, double seconds) {
  std::ofstream out(dir / "timing.jsonl", std::ios::app);
  out << json{{"stage", stage}, {"seconds", seconds}}.dump() << '\n';
}

double seconds_since(std::chrono::steady_clock::time_point start) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
}

void say(const RunOptions& options, const std::string& line) {
  if (options.progress) options.progress(line);
}

TrainConfig baseline_train_config(const RunConfig& c) {
  TrainConfig t;
  t.seed = c.train.seed;
  t.epochs = c.baseline.epochs;
  t.lr = c.baseline.lr;
  t.optimizer = c.baseline.optimizer;
  t.weight_decay = c.baseline.weight_decay;
  t.batch_size = c.baseline.batch_size;
  t.beta1 = c.train.beta1;
  t.beta2 = c.train.beta2;
  t.eps = c.train.eps;
  return t;
}

json epoch_record(const char* stage, const EpochStats& st, bool chain) {
  json j{{"schema", kMetricsSchema}, {"stage", stage},    {"epoch", st.epoch}, {"split", "train"},
         {"lr", st.lr},              {"loss", st.loss},    {"accuracy", st.accuracy}};
  if (chain) {
    j["cold"] = st.cold;
    j["mean_step_length"] = st.mean_step_length;
    j["survival"] = st.survival;
  }
  return j;
}

json eval_record(const char* stage, std::size_t epoch, const EvalMetrics& m) {
  json j{{"schema", kMetricsSchema}, {"stage", stage}, {"epoch", epoch}, {"split", "val"}};
  j.update(to_json(m));
  return j;
}

bool non_increasing(const std::vector<double>& v) {
  for (std::size_t t = 1; t < v.size(); ++t)
    if (v[t] > v[t - 1]) return false;
  return true;
}

json summary_json(const RunConfig& c, const char* mode, const RunResult& r) {
  json j{{"schema", kMetricsSchema},
         {"mode", mode},
         {"seed", c.train.seed},
         {"task", std::string(to_string(c.task.kind))},
         {"baseline", to_json(r.baseline)}};
  if (r.spg) {
    j["spg"] = to_json(*r.spg);
    j["gain_pp"] = 100.0 * (r.spg->accuracy - r.baseline.accuracy);
    j["survival_monotone"] = r.survival_monotone;
  }
  if (r.attach) {
    j["attach"] = {{"base_accuracy", r.attach->base_accuracy},
                   {"depth_accuracy", r.attach->depth_accuracy},
                   {"identical", r.attach->identical}};
  }
  return j;
}

std::string progress_line(const char* stage, const EpochStats& st, std::size_t epochs, const EvalMetrics& val) {
  return fmt::format("{} epoch {}/{}{} lr {:.3g} loss {:.4f} train acc {:.4f} val acc {:.4f}", stage, st.epoch + 1,
                     epochs, st.cold ? " (cold)" : "", st.lr, st.loss, st.accuracy, val.accuracy);
}

}  // namespace

json to_json(const EvalMetrics& m) {
  json j{{"units", m.units}, {"loss", m.loss}, {"accuracy", m.accuracy}};
  if (!m.iou.empty()) {
    j["iou"] = m.iou;
    j["mean_iou"] = m.mean_iou;
  }
  if (m.clean_accuracy > 0.0) j["clean_accuracy"] = m.clean_accuracy;
  if (!m.depth_accuracy.empty()) {
    j["depth_accuracy"] = m.depth_accuracy;
    j["survival"] = m.survival;
    j["mean_step_length"] = m.mean_step_length;
  }
  return j;
}

std::string baseline_config_text(const RunConfig& config) {
  RunConfig c = config;
  c.train = TrainConfig{};
  c.train.seed = config.train.seed;
  c.trp = TrpConfig{};
  c.trp.width = config.width;
  c.trp.classes = config.task.output_classes();
  c.eval_unstripped = false;
  return echo_config(c);
}

SpgModel baseline_finetune(const RunConfig& config, const Dataset& train, const Dataset& val,
                           std::vector<json>* records, const RunOptions& options) {
  RngStream init(config.train.seed, streams::init);
  SpgModel model(BaseNetwork(config.network(), init));
  Trainer trainer(model, baseline_train_config(config), train);
  while (!trainer.done()) {
    const auto st = trainer.run_epoch();
    const auto v = evaluate(model, val);
    if (records) {
      records->push_back(epoch_record("baseline", st, false));
      records->push_back(eval_record("baseline", st.epoch, v));
    }
    say(options, progress_line("baseline", st, config.baseline.epochs, v));
  }
  return model;
}

RunResult retrain(SpgModel& model, const RunConfig& config, const Dataset& train, const Dataset& val,
                  const Dataset& test, std::vector<json>* records, const RunOptions& options,
                  const std::function<void(SpgModel&, const TrainerState&)>& on_trained) {
  RunResult result;
  result.baseline = evaluate(model, test);
  const auto& spec = model.base().spec();
  if (config.trp.width != spec.width || config.trp.classes != spec.classes)
    throw ConfigError(fmt::format("chain expects D={} V={} but the baseline network has D={} V={}", config.trp.width,
                                  config.trp.classes, spec.width, spec.classes));

  AttachCheck attach;
  attach.base_accuracy = evaluate(model, val).accuracy;
  RngStream init(config.train.seed, streams::trp_init);
  try {
    model.attach(config.trp, init);
  } catch (const std::invalid_argument& e) {
    throw ConfigError(fmt::format("cannot attach chain: {}", e.what()));
  }
  attach.depth_accuracy = evaluate(model, val, true).depth_accuracy;
  attach.identical = std::all_of(attach.depth_accuracy.begin(), attach.depth_accuracy.end(),
                                 [&](double a) { return a == attach.base_accuracy; });
  result.attach = attach;

  Trainer trainer(model, config.train, train);
  while (!trainer.done()) {
    const auto st = trainer.run_epoch();
    const auto v = evaluate(model, val, config.eval_unstripped);
    result.survival_monotone = result.survival_monotone && non_increasing(st.survival);
    if (records) {
      records->push_back(epoch_record("spg", st, true));
      records->push_back(eval_record("spg", st.epoch, v));
    }
    say(options, progress_line("spg", st, config.train.epochs, v));
  }
  if (on_trained) on_trained(model, trainer.state());
  model.strip();
  result.spg = evaluate(model, test);
  return result;
}

RunResult run_baseline(const RunConfig& config, const fs::path& dir, const RunOptions& options) {
  fs::create_directories(dir);
  fs::remove(dir / "timing.jsonl");
  write_text(dir / "config.ini", echo_config(config));
  const auto start = std::chrono::steady_clock::now();
  const auto data = make_splits(config.task);
  std::vector<json> records;
  auto model = baseline_finetune(config, data.train, data.val, &records, options);
  save_checkpoint(dir / "baseline.ckpt", model, nullptr, baseline_config_text(config));
  write_jsonl(dir / "baseline.jsonl", records);
  RunResult r;
  r.dir = dir;
  r.baseline = evaluate(model, data.test);
  write_text(dir / "summary.json", summary_json(config, "baseline", r).dump(2) + '\n');
  append_timing(dir, "baseline", seconds_since(start));
  return r;
}

RunResult run_retrain(const RunConfig& config, RunMode mode, const fs::path& dir, const RunOptions& options) {
  fs::create_directories(dir);
  fs::remove(dir / "timing.jsonl");
  write_text(dir / "config.ini", echo_config(config));
  const auto data = make_splits(config.task);

  const auto expected = baseline_config_text(config);
  std::optional<SpgModel> model;
  if (fs::exists(dir / "baseline.ckpt") && fs::exists(dir / "baseline.jsonl")) {
    try {
      auto ck = load_checkpoint(dir / "baseline.ckpt");
      if (ck.config_text == expected && !ck.model.attached()) {
        model = std::move(ck.model);
        say(options, fmt::format("reusing {}", (dir / "baseline.ckpt").string()));
      }
    } catch (const io::IoError&) {
    }
  }
  if (!model) {
    const auto start = std::chrono::steady_clock::now();
    std::vector<json> records;
    model = baseline_finetune(config, data.train, data.val, &records, options);
    save_checkpoint(dir / "baseline.ckpt", *model, nullptr, expected);
    write_jsonl(dir / "baseline.jsonl", records);
    append_timing(dir, "baseline", seconds_since(start));
  }

  const auto start = std::chrono::steady_clock::now();
  std::vector<json> records;
  const auto echo = echo_config(config);
  auto result = retrain(*model, config, data.train, data.val, data.test, &records, options,
                        [&](SpgModel& m, const TrainerState& st) { save_checkpoint(dir / "spg.ckpt", m, &st, echo); });
  save_checkpoint(dir / "stripped.ckpt", *model, nullptr, echo);
  write_jsonl(dir / "metrics.jsonl", records);
  result.dir = dir;
  const char* name = mode == RunMode::nas ? "nas" : "retrain";
  write_text(dir / "summary.json", summary_json(config, name, result).dump(2) + '\n');
  append_timing(dir, name, seconds_since(start));
  return result;
}

EvalMetrics evaluate_checkpoint(const fs::path& checkpoint, Split split) {
  auto ck = load_checkpoint(checkpoint);
  if (ck.config_text.empty())
    throw io::FormatError(fmt::format("{}: no echoed configuration to rebuild the data from", checkpoint.string()));
  const auto file = parse_config(ck.config_text, checkpoint.string() + "[CONF]");
  const auto mode = ck.model.variant_tag() == static_cast<std::uint32_t>(TrpVariant::nas_depth) ? RunMode::nas
                                                                                                : RunMode::retrain;
  const auto config = load_run_config(file, mode);
  return evaluate(ck.model, generate(config.task, split));
}

}  // namespace spg
