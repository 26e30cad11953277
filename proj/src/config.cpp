#include "spg/config.hpp"

#include "spg/binary_io.hpp"

#include <charconv>
#include <fstream>
#include <set>
#include <sstream>
#include <vector>

#include <fmt/format.h>
#include <fmt/ranges.h>

namespace spg {

namespace {

std::string_view trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

/// Typed access to one section with key-level diagnostics.
class SectionReader {
 public:
  SectionReader(const ConfigFile& file, std::string name, std::set<std::string> allowed)
      : file_(file), name_(std::move(name)) {
    const auto it = file.sections.find(name_);
    if (it == file.sections.end()) return;
    entries_ = &it->second;
    for (const auto& [key, e] : *entries_)
      if (!allowed.count(key))
        throw ConfigError(fmt::format("{}:{}: unknown key '{}' in section [{}] (allowed: {})", file_.origin, e.line,
                                      key, name_, fmt::join(allowed, ", ")));
  }

  const ConfigEntry* find(const std::string& key) const {
    if (!entries_) return nullptr;
    const auto it = entries_->find(key);
    return it == entries_->end() ? nullptr : &it->second;
  }
  bool has(const std::string& key) const { return find(key) != nullptr; }

  [[noreturn]] void fail(const std::string& key, const std::string& what) const {
    const auto* e = find(key);
    throw ConfigError(fmt::format("{}:{}: [{}] {}: {}", file_.origin, e ? e->line : 0, name_, key, what));
  }

  void size(const std::string& key, std::size_t& out) const {
    if (const auto* e = find(key)) out = parse_size(key, e->value);
  }
  void u64(const std::string& key, std::uint64_t& out) const {
    if (const auto* e = find(key)) out = parse_size(key, e->value);
  }
  void real(const std::string& key, double& out) const {
    if (const auto* e = find(key)) out = parse_real(key, e->value);
  }
  void flag(const std::string& key, bool& out) const {
    if (const auto* e = find(key)) {
      if (e->value == "true" || e->value == "yes" || e->value == "1") out = true;
      else if (e->value == "false" || e->value == "no" || e->value == "0") out = false;
      else fail(key, fmt::format("expected true or false, got '{}'", e->value));
    }
  }
  void reals(const std::string& key, std::vector<double>& out) const {
    const auto* e = find(key);
    if (!e) return;
    out.clear();
    std::string_view rest = e->value;
    while (true) {
      const auto comma = rest.find(',');
      const auto item = trim(rest.substr(0, comma));
      if (item.empty()) fail(key, "empty list element");
      out.push_back(parse_real(key, item));
      if (comma == std::string_view::npos) break;
      rest.remove_prefix(comma + 1);
    }
  }
  template <class F>
  void parsed(const std::string& key, F&& parse) const {
    if (const auto* e = find(key)) {
      try {
        parse(e->value);
      } catch (const std::invalid_argument& ex) {
        fail(key, ex.what());
      }
    }
  }

 private:
  std::uint64_t parse_size(const std::string& key, std::string_view v) const {
    std::uint64_t out = 0;
    const auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
    if (ec != std::errc{} || p != v.data() + v.size())
      fail(key, fmt::format("expected a non-negative integer, got '{}'", v));
    return out;
  }
  double parse_real(const std::string& key, std::string_view v) const {
    double out = 0;
    const auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
    if (ec != std::errc{} || p != v.data() + v.size()) fail(key, fmt::format("expected a number, got '{}'", v));
    return out;
  }

  const ConfigFile& file_;
  std::string name_;
  const std::map<std::string, ConfigEntry>* entries_ = nullptr;
};

}  // namespace

ConfigFile parse_config(std::string_view text, std::string origin) {
  ConfigFile file;
  file.origin = std::move(origin);
  std::string section;
  std::size_t line_no = 0;
  while (!text.empty()) {
    const auto nl = text.find('\n');
    std::string_view line = text.substr(0, nl);
    text = nl == std::string_view::npos ? std::string_view{} : text.substr(nl + 1);
    ++line_no;
    if (const auto hash = line.find('#'); hash != std::string_view::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    if (line.front() == '[') {
      if (line.back() != ']' || line.size() < 3)
        throw ConfigError(fmt::format("{}:{}: malformed section header '{}'", file.origin, line_no, line));
      section = std::string(trim(line.substr(1, line.size() - 2)));
      file.sections[section];
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string_view::npos)
      throw ConfigError(fmt::format("{}:{}: expected 'key = value', got '{}'", file.origin, line_no, line));
    const std::string key(trim(line.substr(0, eq)));
    const std::string value(trim(line.substr(eq + 1)));
    if (key.empty()) throw ConfigError(fmt::format("{}:{}: missing key before '='", file.origin, line_no));
    if (section.empty())
      throw ConfigError(fmt::format("{}:{}: key '{}' appears before any [section]", file.origin, line_no, key));
    if (value.empty()) throw ConfigError(fmt::format("{}:{}: [{}] {}: missing value", file.origin, line_no, section, key));
    auto& entries = file.sections[section];
    if (const auto it = entries.find(key); it != entries.end())
      throw ConfigError(fmt::format("{}:{}: [{}] {}: duplicate key (first set on line {})", file.origin, line_no,
                                    section, key, it->second.line));
    entries[key] = {value, line_no};
  }
  return file;
}

ConfigFile read_config_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw io::IoError(fmt::format("cannot read config file {}", path.string()));
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str(), path.string());
}

NetworkSpec RunConfig::network() const {
  NetworkSpec n;
  n.kind = task.kind;
  n.input_dim = task.input_dim();
  n.width = width;
  n.hidden_layers = hidden_layers;
  n.classes = task.output_classes();
  n.vocab = task.kind == TaskKind::language_model ? task.vocab : 0;
  return n;
}

void RunConfig::validate() const {
  try {
    task.validate();
    network().validate();
    auto t = trp;
    t.width = width;
    t.classes = task.output_classes();
    t.validate();
    train.validate(trp.depth);
    if (baseline.batch_size == 0 || !(baseline.lr >= 0.0)) throw std::invalid_argument("baseline: bad batch size or lr");
  } catch (const std::invalid_argument& e) {
    throw ConfigError(fmt::format("invalid configuration: {}", e.what()));
  }
}

RunConfig load_run_config(const ConfigFile& file, RunMode mode) {
  for (const auto& [name, entries] : file.sections) {
    static const std::set<std::string> known{"task", "model", "baseline", "train", "trp"};
    if (!known.count(name)) {
      const std::size_t line = entries.empty() ? 0 : entries.begin()->second.line;
      throw ConfigError(fmt::format("{}:{}: unknown section [{}]", file.origin, line, name));
    }
  }
  RunConfig c;

  SectionReader task(file, "task",
                     {"kind", "seed", "train", "val", "test", "noise", "classes", "features", "radius", "height",
                      "width", "shapes", "vocab", "context", "period", "motifs"});
  if (task.has("kind")) task.parsed("kind", [&](const std::string& v) { c.task = TaskSpec::preset(parse_task_kind(v)); });
  task.u64("seed", c.task.seed);
  task.size("train", c.task.train_samples);
  task.size("val", c.task.val_samples);
  task.size("test", c.task.test_samples);
  task.real("noise", c.task.noise);
  task.size("classes", c.task.classes);
  task.size("features", c.task.features);
  task.real("radius", c.task.radius);
  task.size("height", c.task.height);
  task.size("width", c.task.width);
  task.size("shapes", c.task.shapes);
  task.size("vocab", c.task.vocab);
  task.size("context", c.task.context);
  task.size("period", c.task.period);
  task.size("motifs", c.task.motifs);
  if (c.task.kind == TaskKind::segmentation) c.hidden_layers = 2;

  SectionReader model(file, "model", {"width", "hidden_layers"});
  model.size("width", c.width);
  model.size("hidden_layers", c.hidden_layers);

  SectionReader base(file, "baseline", {"epochs", "lr", "batch_size", "optimizer", "weight_decay"});
  base.size("epochs", c.baseline.epochs);
  base.real("lr", c.baseline.lr);
  base.size("batch_size", c.baseline.batch_size);
  base.parsed("optimizer", [&](const std::string& v) { c.baseline.optimizer = ad::parse_optimizer_kind(v); });
  base.real("weight_decay", c.baseline.weight_decay);

  SectionReader trp(file, "trp", {"variant", "depth", "rates", "blocks"});
  c.trp.variant = mode == RunMode::nas ? TrpVariant::nas_depth : TrpVariant::hpo_dropout;
  trp.parsed("variant", [&](const std::string& v) { c.trp.variant = parse_trp_variant(v); });
  if (mode == RunMode::nas && c.trp.variant != TrpVariant::nas_depth) trp.fail("variant", "the nas command needs variant = nas");
  trp.size("depth", c.trp.depth);
  trp.size("blocks", c.trp.blocks);
  if (trp.has("rates")) {
    trp.reals("rates", c.trp.rates);
  } else {
    c.trp.rates.assign(c.trp.depth, 0.2);
  }
  if (c.trp.variant == TrpVariant::nas_depth && !trp.has("rates")) c.trp.rates.assign(c.trp.depth, 0.0);

  SectionReader train(file, "train",
                      {"seed", "epochs", "cold_start_epochs", "lr", "schedule", "decay_factor", "decay_interval",
                       "optimizer", "batch_size", "beta1", "beta2", "eps", "weight_decay", "return", "lambdas",
                       "eval_unstripped"});
  c.train.cold_start_epochs = 3;
  c.train.epochs = 13;
  c.train.lr = 5e-4;
  if (c.trp.variant == TrpVariant::nas_depth) {
    c.train.lr = 4e-4;
    c.train.schedule.kind = ScheduleKind::step_decay;
  }
  train.u64("seed", c.train.seed);
  train.size("epochs", c.train.epochs);
  train.size("cold_start_epochs", c.train.cold_start_epochs);
  train.real("lr", c.train.lr);
  train.parsed("schedule", [&](const std::string& v) { c.train.schedule.kind = parse_schedule_kind(v); });
  train.real("decay_factor", c.train.schedule.factor);
  train.size("decay_interval", c.train.schedule.interval);
  train.parsed("optimizer", [&](const std::string& v) { c.train.optimizer = ad::parse_optimizer_kind(v); });
  train.size("batch_size", c.train.batch_size);
  train.real("beta1", c.train.beta1);
  train.real("beta2", c.train.beta2);
  train.real("eps", c.train.eps);
  train.real("weight_decay", c.train.weight_decay);
  train.parsed("return", [&](const std::string& v) {
    if (v == "weighted") c.train.form = traj::ReturnForm::weighted;
    else if (v == "unweighted") c.train.form = traj::ReturnForm::unweighted;
    else throw std::invalid_argument(fmt::format("expected weighted or unweighted, got '{}'", v));
  });
  train.reals("lambdas", c.train.weights.lambdas);
  train.flag("eval_unstripped", c.eval_unstripped);

  c.trp.width = c.width;
  c.trp.classes = c.task.output_classes();
  c.validate();
  return c;
}

std::string echo_config(const RunConfig& c) {
  const auto& t = c.task;
  std::string s;
  s += "[task]\n";
  s += fmt::format("kind = {}\nseed = {}\ntrain = {}\nval = {}\ntest = {}\nnoise = {}\n", to_string(t.kind), t.seed,
                   t.train_samples, t.val_samples, t.test_samples, t.noise);
  switch (t.kind) {
    case TaskKind::classification:
      s += fmt::format("classes = {}\nfeatures = {}\nradius = {}\n", t.classes, t.features, t.radius);
      break;
    case TaskKind::segmentation:
      s += fmt::format("height = {}\nwidth = {}\nshapes = {}\n", t.height, t.width, t.shapes);
      break;
    case TaskKind::language_model:
      s += fmt::format("vocab = {}\ncontext = {}\nperiod = {}\nmotifs = {}\n", t.vocab, t.context, t.period, t.motifs);
      break;
  }
  s += fmt::format("\n[model]\nwidth = {}\nhidden_layers = {}\n", c.width, c.hidden_layers);
  const auto& b = c.baseline;
  s += fmt::format("\n[baseline]\nepochs = {}\nlr = {}\nbatch_size = {}\noptimizer = {}\nweight_decay = {}\n", b.epochs,
                   b.lr, b.batch_size, ad::to_string(b.optimizer), b.weight_decay);
  s += fmt::format("\n[trp]\nvariant = {}\ndepth = {}\n", to_string(c.trp.variant), c.trp.depth);
  if (!c.trp.rates.empty()) s += fmt::format("rates = {}\n", fmt::join(c.trp.rates, ", "));
  s += fmt::format("blocks = {}\n", c.trp.blocks);
  const auto& r = c.train;
  s += fmt::format(
      "\n[train]\nseed = {}\nepochs = {}\ncold_start_epochs = {}\nlr = {}\nschedule = {}\ndecay_factor = {}\n"
      "decay_interval = {}\noptimizer = {}\nbatch_size = {}\nbeta1 = {}\nbeta2 = {}\neps = {}\nweight_decay = {}\n"
      "return = {}\n",
      r.seed, r.epochs, r.cold_start_epochs, r.lr, to_string(r.schedule.kind), r.schedule.factor, r.schedule.interval,
      ad::to_string(r.optimizer), r.batch_size, r.beta1, r.beta2, r.eps, r.weight_decay,
      r.form == traj::ReturnForm::weighted ? "weighted" : "unweighted");
  if (!r.weights.lambdas.empty()) s += fmt::format("lambdas = {}\n", fmt::join(r.weights.lambdas, ", "));
  s += fmt::format("eval_unstripped = {}\n", c.eval_unstripped ? "true" : "false");
  return s;
}

}  // namespace spg
