#include "spg/tasks.hpp"

#include <cmath>
#include <numbers>
#include <numeric>
#include <stdexcept>

#include <fmt/format.h>

#include "spg/binary_io.hpp"
#include "spg/rng.hpp"

namespace spg {

namespace {

constexpr std::uint32_t kDatasetVersion = 1;

RngStream split_stream(const TaskSpec& spec, Split split) {
  return RngStream(spec.seed, streams::data_train + static_cast<std::uint64_t>(split));
}

double normal_cdf(double x) { return 0.5 * std::erfc(-x / std::numbers::sqrt2); }

}  // namespace

Split parse_split(std::string_view name) {
  if (name == "train") return Split::train;
  if (name == "val" || name == "validation") return Split::val;
  if (name == "test") return Split::test;
  throw std::invalid_argument(fmt::format("unknown split '{}' (expected train, val or test)", name));
}

std::string_view to_string(Split split) {
  switch (split) {
    case Split::train: return "train";
    case Split::val: return "val";
    case Split::test: return "test";
  }
  return "?";
}

TaskSpec TaskSpec::preset(TaskKind kind) {
  TaskSpec s;
  s.kind = kind;
  switch (kind) {
    case TaskKind::classification:
      s.noise = 1.0;
      break;
    case TaskKind::segmentation:
      s.noise = 0.5;
      s.train_samples = 200;
      s.val_samples = 50;
      s.test_samples = 100;
      break;
    case TaskKind::language_model:
      s.noise = 0.1;
      s.train_samples = 1500;
      s.val_samples = 300;
      s.test_samples = 1000;
      break;
  }
  return s;
}

void TaskSpec::validate() const {
  if (train_samples == 0 || val_samples == 0 || test_samples == 0)
    throw std::invalid_argument("task: every split needs at least one sample");
  switch (kind) {
    case TaskKind::classification:
      if (classes < 2) throw std::invalid_argument(fmt::format("blobs: need K >= 2 classes, got {}", classes));
      if (features < 2 || features > 16)
        throw std::invalid_argument(fmt::format("blobs: features must be in 2..16, got {}", features));
      if (!(noise > 0.0) || !std::isfinite(noise))
        throw std::invalid_argument(fmt::format("blobs: degenerate covariance (sigma = {})", noise));
      if (!(radius > 0.0) || !std::isfinite(radius)) throw std::invalid_argument("blobs: radius must be positive");
      break;
    case TaskKind::segmentation: {
      if (height < 4 || width < 4) throw std::invalid_argument(fmt::format("shapes: grid {}x{} below 4x4", height, width));
      const std::size_t capacity = (height / 4) * (width / 4);
      if (shapes > capacity)
        throw std::invalid_argument(fmt::format("shapes: {} shapes exceed grid capacity {}", shapes, capacity));
      if (!(noise >= 0.0) || !std::isfinite(noise)) throw std::invalid_argument("shapes: noise must be >= 0");
      break;
    }
    case TaskKind::language_model:
      if (vocab < 2) throw std::invalid_argument("pattern: vocab must be >= 2");
      if (context < 2) throw std::invalid_argument("pattern: context length must be >= 2");
      if (period < 1 || motifs < 1) throw std::invalid_argument("pattern: period and motifs must be >= 1");
      if (motifs * period > vocab)
        throw std::invalid_argument(
            fmt::format("pattern: {} motifs of period {} need more than {} tokens", motifs, period, vocab));
      if (!(noise >= 0.0 && noise < 1.0)) throw std::invalid_argument("pattern: substitution rate must be in [0,1)");
      break;
  }
}

std::size_t TaskSpec::samples(Split split) const {
  switch (split) {
    case Split::train: return train_samples;
    case Split::val: return val_samples;
    case Split::test: return test_samples;
  }
  return 0;
}

std::size_t TaskSpec::output_classes() const {
  switch (kind) {
    case TaskKind::classification: return classes;
    case TaskKind::segmentation: return 3;
    case TaskKind::language_model: return vocab;
  }
  return 0;
}

std::size_t TaskSpec::input_dim() const {
  switch (kind) {
    case TaskKind::classification: return features;
    case TaskKind::segmentation: return 9;
    case TaskKind::language_model: return context;
  }
  return 0;
}

std::size_t TaskSpec::units_per_sample() const {
  switch (kind) {
    case TaskKind::classification: return 1;
    case TaskKind::segmentation: return height * width;
    case TaskKind::language_model: return context;
  }
  return 0;
}

std::string TaskSpec::canonical() const {
  std::string s = fmt::format("kind={};seed={};train={};val={};test={};noise={:.17g}", to_string(kind), seed,
                              train_samples, val_samples, test_samples, noise);
  switch (kind) {
    case TaskKind::classification:
      s += fmt::format(";classes={};features={};radius={:.17g}", classes, features, radius);
      break;
    case TaskKind::segmentation:
      s += fmt::format(";height={};width={};shapes={}", height, width, shapes);
      break;
    case TaskKind::language_model:
      s += fmt::format(";vocab={};context={};period={};motifs={}", vocab, context, period, motifs);
      break;
  }
  return s;
}

std::uint64_t TaskSpec::content_hash() const {
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (unsigned char c : canonical()) {
    h ^= c;
    h *= 0x100000001b3ull;
  }
  return h;
}

std::vector<double> blob_mean(const TaskSpec& spec, std::size_t k) {
  std::vector<double> mu(spec.features, 0.0);
  const double angle = 2.0 * std::numbers::pi * static_cast<double>(k) / static_cast<double>(spec.classes);
  mu[0] = spec.radius * std::cos(angle);
  mu[1] = spec.radius * std::sin(angle);
  return mu;
}

Dataset gen_blobs_classification(const TaskSpec& spec, Split split) {
  if (spec.kind != TaskKind::classification) throw std::invalid_argument("gen_blobs_classification: wrong task kind");
  spec.validate();
  Dataset d;
  d.kind = spec.kind;
  d.split = split;
  d.samples = spec.samples(split);
  d.sample_width = spec.features;
  d.features.reserve(d.samples * d.sample_width);
  d.targets.reserve(d.samples);
  std::vector<std::vector<double>> means;
  for (std::size_t k = 0; k < spec.classes; ++k) means.push_back(blob_mean(spec, k));
  auto rng = split_stream(spec, split);
  for (std::size_t i = 0; i < d.samples; ++i) {
    const auto k = static_cast<std::size_t>(rng.below(spec.classes));
    d.targets.push_back(k);
    for (std::size_t f = 0; f < spec.features; ++f) d.features.push_back(means[k][f] + spec.noise * rng.normal());
  }
  return d;
}

Dataset gen_shapes_segmentation(const TaskSpec& spec, Split split) {
  if (spec.kind != TaskKind::segmentation) throw std::invalid_argument("gen_shapes_segmentation: wrong task kind");
  spec.validate();
  const std::size_t h = spec.height, w = spec.width, cells_x = w / 4, cells = (h / 4) * cells_x;
  Dataset d;
  d.kind = spec.kind;
  d.split = split;
  d.samples = spec.samples(split);
  d.sample_width = h * w;
  d.units_per_sample = h * w;
  d.height = h;
  d.width = w;
  d.features.assign(d.samples * h * w, 0.0);
  d.targets.assign(d.samples * h * w, 0);
  auto rng = split_stream(spec, split);
  std::vector<std::size_t> cell_order(cells);
  for (std::size_t i = 0; i < d.samples; ++i) {
    double* img = d.features.data() + i * h * w;
    std::size_t* lab = d.targets.data() + i * h * w;
    std::iota(cell_order.begin(), cell_order.end(), std::size_t{0});
    for (std::size_t s = 0; s < spec.shapes; ++s) {
      std::swap(cell_order[s], cell_order[s + rng.below(cells - s)]);
      const std::size_t y0 = (cell_order[s] / cells_x) * 4, x0 = (cell_order[s] % cells_x) * 4;
      auto paint = [&](std::size_t y, std::size_t x, double value, std::size_t cls) {
        img[y * w + x] = value;
        lab[y * w + x] = cls;
      };
      if (rng.below(2) == 0) {
        // filled rectangle, 2..4 on each side
        const std::size_t rh = 2 + rng.below(3), rw = 2 + rng.below(3);
        const std::size_t oy = rng.below(4 - rh + 1), ox = rng.below(4 - rw + 1);
        for (std::size_t y = 0; y < rh; ++y)
          for (std::size_t x = 0; x < rw; ++x) paint(y0 + oy + y, x0 + ox + x, 1.0, 1);
      } else {
        // 3x3 plus sign
        const std::size_t oy = rng.below(2), ox = rng.below(2);
        for (std::size_t k = 0; k < 3; ++k) {
          paint(y0 + oy + k, x0 + ox + 1, -1.0, 2);
          paint(y0 + oy + 1, x0 + ox + k, -1.0, 2);
        }
      }
    }
    for (std::size_t p = 0; p < h * w; ++p) img[p] += spec.noise * rng.normal();
  }
  return d;
}

namespace {

Dataset gen_pattern_impl(const TaskSpec& spec, Split split, std::vector<std::size_t>* oracle) {
  if (spec.kind != TaskKind::language_model) throw std::invalid_argument("gen_pattern_lm: wrong task kind");
  spec.validate();
  const std::size_t L = spec.context, P = spec.period, V = spec.vocab;
  // token assignment shared by all splits
  RngStream layout(spec.seed, streams::data_layout);
  std::vector<std::size_t> perm(V);
  std::iota(perm.begin(), perm.end(), std::size_t{0});
  for (std::size_t i = V - 1; i > 0; --i) std::swap(perm[i], perm[layout.below(i + 1)]);

  Dataset d;
  d.kind = spec.kind;
  d.split = split;
  d.samples = spec.samples(split);
  d.sample_width = 2 * L;
  d.units_per_sample = L;
  d.context = L;
  d.vocab = V;
  auto rng = split_stream(spec, split);
  std::vector<std::size_t> truth(2 * L);
  std::vector<std::uint8_t> substituted(2 * L);
  for (std::size_t i = 0; i < d.samples; ++i) {
    const std::size_t motif = rng.below(spec.motifs), phase = rng.below(P);
    for (std::size_t k = 0; k < 2 * L; ++k) {
      truth[k] = perm[motif * P + (phase + k) % P];
      std::size_t tok = truth[k];
      substituted[k] = rng.uniform() < spec.noise;
      if (substituted[k]) {
        // uniform over the other V - 1 tokens
        tok = rng.below(V - 1);
        if (tok >= truth[k]) ++tok;
      }
      d.features.push_back(static_cast<double>(tok));
    }
    for (std::size_t j = 0; j < L; ++j) {
      d.targets.push_back(static_cast<std::size_t>(d.features[i * 2 * L + j + L]));
      d.clean.push_back(substituted[j + L] ? 0 : 1);
      if (oracle) oracle->push_back(truth[j + L]);
    }
  }
  return d;
}

}  // namespace

Dataset gen_pattern_lm(const TaskSpec& spec, Split split) { return gen_pattern_impl(spec, split, nullptr); }

std::vector<std::size_t> pattern_oracle_predictions(const TaskSpec& spec, Split split) {
  std::vector<std::size_t> out;
  gen_pattern_impl(spec, split, &out);
  return out;
}

Dataset generate(const TaskSpec& spec, Split split) {
  switch (spec.kind) {
    case TaskKind::classification: return gen_blobs_classification(spec, split);
    case TaskKind::segmentation: return gen_shapes_segmentation(spec, split);
    case TaskKind::language_model: return gen_pattern_lm(spec, split);
  }
  throw std::invalid_argument("generate: unknown task kind");
}

Batch make_batch(const Dataset& data, std::span<const std::size_t> samples) {
  Batch b;
  b.samples = samples.size();
  b.units = samples.size() * data.units_per_sample;
  if (samples.empty()) throw std::invalid_argument("make_batch: empty sample list");
  for (auto i : samples)
    if (i >= data.samples) throw std::out_of_range(fmt::format("make_batch: sample {} of {}", i, data.samples));
  b.targets.reserve(b.units);
  for (auto i : samples)
    for (std::size_t u = 0; u < data.units_per_sample; ++u) b.targets.push_back(data.targets[i * data.units_per_sample + u]);

  switch (data.kind) {
    case TaskKind::classification: {
      b.features = ad::Tensor(ad::Shape{b.units, data.sample_width});
      auto f = b.features.data();
      for (std::size_t r = 0; r < samples.size(); ++r)
        for (std::size_t c = 0; c < data.sample_width; ++c)
          f[r * data.sample_width + c] = data.features[samples[r] * data.sample_width + c];
      break;
    }
    case TaskKind::segmentation: {
      const std::size_t h = data.height, w = data.width;
      b.features = ad::Tensor(ad::Shape{b.units, 9});
      auto f = b.features.data();
      std::size_t row = 0;
      for (auto i : samples) {
        const double* img = data.features.data() + i * h * w;
        for (std::size_t y = 0; y < h; ++y)
          for (std::size_t x = 0; x < w; ++x, ++row)
            for (int dy = -1; dy <= 1; ++dy)
              for (int dx = -1; dx <= 1; ++dx) {
                const auto yy = static_cast<std::ptrdiff_t>(y) + dy, xx = static_cast<std::ptrdiff_t>(x) + dx;
                const bool inside = yy >= 0 && xx >= 0 && yy < static_cast<std::ptrdiff_t>(h) &&
                                    xx < static_cast<std::ptrdiff_t>(w);
                f[row * 9 + static_cast<std::size_t>((dy + 1) * 3 + dx + 1)] =
                    inside ? img[static_cast<std::size_t>(yy) * w + static_cast<std::size_t>(xx)] : 0.0;
              }
      }
      break;
    }
    case TaskKind::language_model: {
      const std::size_t L = data.context;
      b.tokens.assign(L, std::vector<std::size_t>(b.units));
      std::size_t unit = 0;
      for (auto i : samples)
        for (std::size_t j = 0; j < L; ++j, ++unit)
          for (std::size_t p = 0; p < L; ++p)
            b.tokens[p][unit] = p * data.vocab + static_cast<std::size_t>(data.features[i * 2 * L + j + p]);
      break;
    }
  }
  return b;
}

double blobs_bayes_accuracy(std::size_t classes, double radius, double sigma) {
  if (classes < 2 || !(sigma > 0.0) || !(radius >= 0.0)) throw std::invalid_argument("blobs_bayes_accuracy: bad geometry");
  // P(correct) = ∫_{|θ|<π/K} [e^{-r²/2σ²}/(2π) + (a/σ) φ(r sinθ/σ) Φ(a/σ)] dθ with a = r cosθ,
  // the polar integral of the class density over its nearest-mean wedge.
  const double half = std::numbers::pi / static_cast<double>(classes);
  const double base = std::exp(-radius * radius / (2 * sigma * sigma)) / (2 * std::numbers::pi);
  auto f = [&](double theta) {
    const double a = radius * std::cos(theta), b = radius * std::sin(theta);
    return base + (a / sigma) * std::exp(-b * b / (2 * sigma * sigma)) / std::sqrt(2 * std::numbers::pi) *
                      normal_cdf(a / sigma);
  };
  constexpr int n = 4000;  // Simpson, even
  const double step = 2 * half / n;
  double acc = f(-half) + f(half);
  for (int i = 1; i < n; ++i) acc += (i % 2 ? 4.0 : 2.0) * f(-half + i * step);
  return acc * step / 3.0;
}

void write_dataset(const Dataset& data, std::uint64_t hash, const std::filesystem::path& path) {
  io::Writer w;
  w.raw("SPGD");
  w.put<std::uint32_t>(kDatasetVersion);
  w.put<std::uint64_t>(hash);
  w.put<std::uint32_t>(static_cast<std::uint32_t>(data.kind));
  w.put<std::uint32_t>(static_cast<std::uint32_t>(data.split));
  for (std::size_t v : {data.samples, data.sample_width, data.units_per_sample, data.height, data.width, data.context,
                        data.vocab})
    w.put<std::uint64_t>(v);
  w.array<double>(data.features);
  std::vector<std::uint64_t> targets(data.targets.begin(), data.targets.end());
  w.array<std::uint64_t>(targets);
  w.array<std::uint8_t>(data.clean);
  w.save(path);
}

Dataset read_dataset(const std::filesystem::path& path, std::uint64_t expected_hash) {
  auto r = io::Reader::load(path);
  if (r.raw(4) != "SPGD") throw io::FormatError(path.string() + ": not a dataset file (bad magic)");
  if (const auto v = r.get<std::uint32_t>(); v != kDatasetVersion)
    throw io::FormatError(fmt::format("{}: dataset format version {} (expected {})", path.string(), v, kDatasetVersion));
  if (const auto h = r.get<std::uint64_t>(); h != expected_hash)
    throw io::FormatError(fmt::format("{}: content hash {:016x} does not match spec {:016x}", path.string(), h, expected_hash));
  Dataset d;
  d.kind = static_cast<TaskKind>(r.get<std::uint32_t>());
  d.split = static_cast<Split>(r.get<std::uint32_t>());
  for (std::size_t* v : {&d.samples, &d.sample_width, &d.units_per_sample, &d.height, &d.width, &d.context, &d.vocab})
    *v = static_cast<std::size_t>(r.get<std::uint64_t>());
  d.features = r.array<double>();
  const auto targets = r.array<std::uint64_t>();
  d.targets.assign(targets.begin(), targets.end());
  d.clean = r.array<std::uint8_t>();
  if (!r.at_end()) throw io::FormatError(path.string() + ": trailing bytes");
  if (d.features.size() != d.samples * d.sample_width || d.targets.size() != d.samples * d.units_per_sample)
    throw io::FormatError(path.string() + ": array lengths disagree with header");
  return d;
}

std::filesystem::path DatasetCache::path_for(const TaskSpec& spec, Split split) const {
  return dir_ / fmt::format("{:016x}-{}.spgd", spec.content_hash(), to_string(split));
}

Dataset DatasetCache::load_or_generate(const TaskSpec& spec, Split split) const {
  const auto path = path_for(spec, split);
  if (std::filesystem::exists(path)) {
    try {
      return read_dataset(path, spec.content_hash());
    } catch (const io::FormatError&) {
      // stale or corrupt entry: regenerate below
    }
  }
  auto d = generate(spec, split);
  std::filesystem::create_directories(dir_);
  write_dataset(d, spec.content_hash(), path);
  return d;
}

}  // namespace spg
