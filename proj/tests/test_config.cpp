#include <string>

#include "doctest.h"
#include "spg/config.hpp"

using namespace spg;

namespace {

std::string error_of(const std::string& text, RunMode mode = RunMode::retrain) {
  try {
    load_run_config(parse_config(text, "run.ini"), mode);
  } catch (const ConfigError& e) {
    return e.what();
  }
  return "";
}

bool contains(const std::string& s, const std::string& part) { return s.find(part) != std::string::npos; }

}  // namespace

TEST_CASE("parses sections, comments and lists") {
  const auto f = parse_config("# top\n[task]\nkind = classification  # trailing\n\n[trp]\nrates = 0.1, 0.2,0.3\n", "x.ini");
  REQUIRE(f.sections.count("task"));
  CHECK(f.sections.at("task").at("kind").value == "classification");
  CHECK(f.sections.at("task").at("kind").line == 3);
  const auto c = load_run_config(f, RunMode::retrain);
  CHECK(c.trp.rates == std::vector<double>{0.1, 0.2, 0.3});
  CHECK(c.task.kind == TaskKind::classification);
}

TEST_CASE("diagnostics name file, line and key") {
  CHECK(contains(error_of("[task]\nkind = classification\n[train]\nlr = fast\n"), "run.ini:4"));
  CHECK(contains(error_of("[task]\nkind = classification\n[train]\nlr = fast\n"), "lr"));
  CHECK(contains(error_of("[train]\nlearning_rate = 0.1\n"), "run.ini:2: unknown key 'learning_rate'"));
  CHECK(contains(error_of("[train]\nepochs = 3\nepochs = 4\n"), "run.ini:3: [train] epochs: duplicate key"));
  CHECK(contains(error_of("epochs = 3\n"), "run.ini:1: key 'epochs' appears before any [section]"));
  CHECK(contains(error_of("[optimiser]\nlr = 1\n"), "unknown section [optimiser]"));
  CHECK(contains(error_of("[train]\nepochs\n"), "run.ini:2: expected 'key = value'"));
  CHECK(contains(error_of("[train\n"), "run.ini:1: malformed section header"));
  CHECK(contains(error_of("[task]\nkind = images\n"), "run.ini:2: [task] kind"));
  CHECK(contains(error_of("[train]\nepochs = -3\n"), "non-negative integer"));
  CHECK(contains(error_of("[train]\nreturn = discounted\n"), "[train] return"));
  CHECK(contains(error_of("[trp]\nvariant = hpo\n", RunMode::nas), "[trp] variant"));
}

TEST_CASE("semantic validation is a config error") {
  CHECK(contains(error_of("[trp]\ndepth = 3\nrates = 0.2, 0.2\n"), "invalid configuration"));
  CHECK(contains(error_of("[train]\nepochs = 2\ncold_start_epochs = 3\n"), "cold_start_epochs"));
  CHECK(contains(error_of("[task]\nkind = segmentation\n[model]\nhidden_layers = 1\n"), "invalid configuration"));
}

TEST_CASE("mode-dependent defaults") {
  const auto hpo = load_run_config(parse_config(""), RunMode::retrain);
  CHECK(hpo.trp.variant == TrpVariant::hpo_dropout);
  CHECK(hpo.train.schedule.kind == ScheduleKind::constant);
  CHECK(hpo.train.cold_start_epochs == 3);
  const auto nas = load_run_config(parse_config(""), RunMode::nas);
  CHECK(nas.trp.variant == TrpVariant::nas_depth);
  CHECK(nas.train.schedule.kind == ScheduleKind::step_decay);
  CHECK(nas.train.lr == 4e-4);
  CHECK(nas.train.schedule.factor == 0.5);
  CHECK(nas.train.schedule.interval == 2);
  const auto seg = load_run_config(parse_config("[task]\nkind = segmentation\n"), RunMode::retrain);
  CHECK(seg.hidden_layers == 2);
  CHECK(seg.trp.classes == 3);
  CHECK(seg.trp.width == seg.width);
}

TEST_CASE("echo round-trips") {
  for (const char* text : {"[task]\nkind = classification\nnoise = 0.7\n[train]\nlr = 0.00123\nseed = 9\n",
                           "[task]\nkind = segmentation\n[trp]\nrates = 0.1, 0.05\ndepth = 2\n[train]\nlambdas = 0.5, 0.25\n",
                           "[task]\nkind = language_model\n[train]\nreturn = unweighted\neval_unstripped = true\n"}) {
    for (auto mode : {RunMode::retrain, RunMode::nas}) {
      if (mode == RunMode::nas && std::string(text).find("rates") != std::string::npos) continue;
      const auto c = load_run_config(parse_config(text), mode);
      const auto echo = echo_config(c);
      const auto again = load_run_config(parse_config(echo, "echo"), mode);
      CHECK(echo_config(again) == echo);
      CHECK(again.task.content_hash() == c.task.content_hash());
      CHECK(again.train.lr == c.train.lr);
    }
  }
}
