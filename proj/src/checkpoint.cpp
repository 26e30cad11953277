#include "spg/checkpoint.hpp"

#include <map>

#include <fmt/format.h>

#include "spg/binary_io.hpp"

namespace spg {

namespace {

void write_section(io::Writer& out, const char* tag, const io::Writer& body) {
  out.raw(std::string_view(tag, 4));
  out.put<std::uint64_t>(body.bytes().size());
  out.raw(std::string_view(reinterpret_cast<const char*>(body.bytes().data()), body.bytes().size()));
}

io::Writer arch_section(const SpgModel& model) {
  io::Writer w;
  const auto& s = model.base().spec();
  w.put<std::uint32_t>(static_cast<std::uint32_t>(s.kind));
  for (std::size_t v : {s.input_dim, s.width, s.hidden_layers, s.classes, s.vocab}) w.put<std::uint64_t>(v);
  const auto& trp = model.trp_config();
  w.put<std::uint8_t>(trp ? 1 : 0);
  if (trp) {
    w.put<std::uint32_t>(static_cast<std::uint32_t>(trp->variant));
    w.put<std::uint64_t>(trp->depth);
    w.array<double>(trp->rates);
    w.put<std::uint64_t>(trp->blocks);
  }
  return w;
}

io::Writer optimizer_section(const ad::OptimizerState& o) {
  io::Writer w;
  w.put<std::uint32_t>(static_cast<std::uint32_t>(o.kind));
  for (double v : {o.hyper.lr, o.hyper.beta1, o.hyper.beta2, o.hyper.eps, o.hyper.weight_decay}) w.put<double>(v);
  w.put<std::uint64_t>(o.steps);
  w.put<std::uint8_t>(o.initialized() ? 1 : 0);
  w.put<std::uint64_t>(o.first_moment.size());
  for (std::size_t i = 0; i < o.first_moment.size(); ++i) {
    w.array<double>(o.first_moment[i]);
    w.array<double>(i < o.second_moment.size() ? std::span<const double>(o.second_moment[i]) : std::span<const double>{});
  }
  return w;
}

io::Writer rng_section(const TrainerState& t) {
  io::Writer w;
  w.put<std::uint64_t>(t.dropout.seed());
  w.put<std::uint64_t>(t.dropout.stream());
  w.put<std::uint64_t>(t.dropout.counter());
  w.put<std::uint64_t>(t.epoch);
  w.put<std::uint64_t>(t.cursor);
  w.put<double>(t.acc.loss_sum);
  for (auto v : {t.acc.steps, t.acc.units, t.acc.correct, t.acc.episodes}) w.put<std::uint64_t>(v);
  w.put<double>(t.acc.step_length_sum);
  w.array<double>(t.acc.survivors);
  return w;
}

}  // namespace

std::vector<std::uint8_t> serialize_checkpoint(SpgModel& model, const TrainerState* trainer,
                                               const std::string& config_text) {
  io::Writer w;
  w.raw("SPG1");
  w.put<std::uint32_t>(kCheckpointVersion);
  w.put<std::uint32_t>(model.variant_tag());
  w.put<std::uint64_t>(model.depth());
  w.put<std::uint64_t>(model.base().spec().width);
  w.put<std::uint64_t>(model.base().spec().classes);
  const auto params = model.parameters();
  w.put<std::uint64_t>(params.size());
  for (const auto& p : params) {
    w.str(p.name);
    w.put<std::uint64_t>(p.tensor->rank());
    for (auto d : p.tensor->shape()) w.put<std::uint64_t>(d);
    for (double v : p.tensor->data()) w.put<double>(v);
  }
  write_section(w, "ARCH", arch_section(model));
  if (trainer) {
    write_section(w, "OPTM", optimizer_section(trainer->optimizer));
    write_section(w, "RNG_", rng_section(*trainer));
  }
  io::Writer conf;
  conf.raw(config_text);
  write_section(w, "CONF", conf);
  return w.bytes();
}

void save_checkpoint(const std::filesystem::path& path, SpgModel& model, const TrainerState* trainer,
                     const std::string& config_text) {
  io::write_file(path, serialize_checkpoint(model, trainer, config_text));
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  return parse_checkpoint(io::read_file(path), path.string());
}

Checkpoint parse_checkpoint(std::vector<std::uint8_t> bytes, const std::string& origin) {
  io::Reader r(std::move(bytes));
  auto fail = [&](const std::string& what) { return io::FormatError(fmt::format("{}: {}", origin, what)); };
  if (r.remaining() < 4 || r.raw(4) != "SPG1") throw fail("not a checkpoint (bad magic)");
  if (const auto v = r.get<std::uint32_t>(); v != kCheckpointVersion)
    throw fail(fmt::format("checkpoint format version {} is not supported (expected {})", v, kCheckpointVersion));
  const auto variant = r.get<std::uint32_t>();
  const auto depth = r.get<std::uint64_t>();
  const auto width = r.get<std::uint64_t>();
  const auto classes = r.get<std::uint64_t>();
  if (variant > 2) throw fail(fmt::format("unknown variant tag {}", variant));

  struct Record {
    ad::Shape shape;
    std::vector<double> values;
  };
  std::vector<std::pair<std::string, Record>> records;
  const auto nparams = r.get<std::uint64_t>();
  for (std::uint64_t i = 0; i < nparams; ++i) {
    const auto name = r.str();
    const auto rank = r.get<std::uint64_t>();
    if (rank > 8) throw fail(fmt::format("parameter '{}' has implausible rank {}", name, rank));
    Record rec;
    std::size_t count = 1;
    for (std::uint64_t k = 0; k < rank; ++k) {
      rec.shape.push_back(static_cast<std::size_t>(r.get<std::uint64_t>()));
      count *= rec.shape.back();
    }
    if (count > r.remaining() / sizeof(double)) throw fail(fmt::format("parameter '{}' is truncated", name));
    rec.values.resize(count);
    for (auto& v : rec.values) v = r.get<double>();
    records.emplace_back(name, std::move(rec));
  }

  std::map<std::string, std::string> sections;
  while (!r.at_end()) {
    const auto tag = r.raw(4);
    const auto len = r.get<std::uint64_t>();
    if (len > r.remaining()) throw fail(fmt::format("section {} is truncated", tag));
    sections[tag] = r.raw(static_cast<std::size_t>(len));
  }
  auto section = [&](const char* tag) {
    const auto& s = sections.at(tag);
    return io::Reader(std::vector<std::uint8_t>(s.begin(), s.end()));
  };
  if (!sections.count("ARCH")) throw fail("missing ARCH section");

  Checkpoint ck;
  auto arch = section("ARCH");
  NetworkSpec spec;
  spec.kind = static_cast<TaskKind>(arch.get<std::uint32_t>());
  for (std::size_t* v : {&spec.input_dim, &spec.width, &spec.hidden_layers, &spec.classes, &spec.vocab})
    *v = static_cast<std::size_t>(arch.get<std::uint64_t>());
  if (spec.width != width || spec.classes != classes) throw fail("header D/V disagree with ARCH section");
  RngStream scratch(0, streams::init);
  try {
    ck.model = SpgModel(BaseNetwork(spec, scratch));
    if (arch.get<std::uint8_t>()) {
      TrpConfig trp;
      trp.variant = static_cast<TrpVariant>(arch.get<std::uint32_t>());
      trp.depth = static_cast<std::size_t>(arch.get<std::uint64_t>());
      trp.rates = arch.array<double>();
      trp.blocks = static_cast<std::size_t>(arch.get<std::uint64_t>());
      trp.width = spec.width;
      trp.classes = spec.classes;
      ck.model.attach(trp, scratch);
    }
  } catch (const std::invalid_argument& e) {
    throw fail(fmt::format("invalid architecture: {}", e.what()));
  }
  if (ck.model.variant_tag() != variant || ck.model.depth() != depth)
    throw fail("header variant/T disagree with ARCH section");

  auto params = ck.model.parameters();
  if (params.size() != records.size())
    throw fail(fmt::format("{} parameter records for an architecture with {}", records.size(), params.size()));
  for (std::size_t i = 0; i < params.size(); ++i) {
    const auto& [name, rec] = records[i];
    if (name != params[i].name) throw fail(fmt::format("parameter {} is '{}', expected '{}'", i, name, params[i].name));
    if (rec.shape != params[i].tensor->shape())
      throw fail(fmt::format("parameter '{}' has shape {}, expected {}", name, ad::shape_string(rec.shape),
                             ad::shape_string(params[i].tensor->shape())));
    std::copy(rec.values.begin(), rec.values.end(), params[i].tensor->data().begin());
  }

  if (sections.count("OPTM") && sections.count("RNG_")) {
    TrainerState st;
    auto o = section("OPTM");
    st.optimizer.kind = static_cast<ad::OptimizerKind>(o.get<std::uint32_t>());
    for (double* v : {&st.optimizer.hyper.lr, &st.optimizer.hyper.beta1, &st.optimizer.hyper.beta2,
                      &st.optimizer.hyper.eps, &st.optimizer.hyper.weight_decay})
      *v = o.get<double>();
    const auto steps = o.get<std::uint64_t>();
    const bool initialized = o.get<std::uint8_t>() != 0;
    const auto n = o.get<std::uint64_t>();
    std::vector<std::vector<double>> first, second;
    for (std::uint64_t i = 0; i < n; ++i) {
      first.push_back(o.array<double>());
      second.push_back(o.array<double>());
    }
    if (initialized) {
      std::vector<ad::Tensor*> ptrs;
      for (auto& p : params) ptrs.push_back(p.tensor);
      st.optimizer.initialize(ptrs);
      if (st.optimizer.kind == ad::OptimizerKind::adamw && first.size() != ptrs.size()) throw fail("optimizer moments do not match the parameter list");
    }
    st.optimizer.steps = steps;
    st.optimizer.first_moment = std::move(first);
    st.optimizer.second_moment = std::move(second);

    auto g = section("RNG_");
    const auto seed = g.get<std::uint64_t>();
    const auto stream = g.get<std::uint64_t>();
    const auto counter = g.get<std::uint64_t>();
    st.dropout = RngStream(seed, stream, counter);
    st.epoch = static_cast<std::size_t>(g.get<std::uint64_t>());
    st.cursor = static_cast<std::size_t>(g.get<std::uint64_t>());
    st.acc.loss_sum = g.get<double>();
    for (std::uint64_t* v : {&st.acc.steps, &st.acc.units, &st.acc.correct, &st.acc.episodes}) *v = g.get<std::uint64_t>();
    st.acc.step_length_sum = g.get<double>();
    st.acc.survivors = g.array<double>();
    ck.trainer = std::move(st);
  }
  if (sections.count("CONF")) ck.config_text = sections.at("CONF");
  return ck;
}

}  // namespace spg
