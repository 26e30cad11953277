#pragma once

// Synthetic tasks with computable ceilings, one per reward granularity:
// per-sample (blobs), per-pixel with two outputs (shapes), per-token
// (pattern language).

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "spg/network.hpp"
#include "spg/task_kind.hpp"

namespace spg {

enum class Split : std::uint32_t { train = 0, val = 1, test = 2 };

Split parse_split(std::string_view name);
std::string_view to_string(Split split);

struct TaskSpec {
  TaskKind kind = TaskKind::classification;
  std::uint64_t seed = 0;
  std::size_t train_samples = 3000;
  std::size_t val_samples = 1000;
  std::size_t test_samples = 5000;
  /// blobs: cluster sigma; shapes: pixel noise sigma; pattern: substitution rate q.
  double noise = 1.0;

  // blobs
  std::size_t classes = 3;
  std::size_t features = 8;
  double radius = 2.0;

  // shapes
  std::size_t height = 16;
  std::size_t width = 16;
  std::size_t shapes = 6;

  // pattern language
  std::size_t vocab = 12;
  std::size_t context = 4;
  std::size_t period = 3;
  std::size_t motifs = 4;

  /// Documented presets: blobs K=3 F=8 r=2 sigma=1; shapes 16x16 with 6
  /// shapes and sigma=0.5; pattern V=12 L=4 period 3, 4 motifs, q=0.1.
  static TaskSpec preset(TaskKind kind);

  void validate() const;
  std::size_t samples(Split split) const;
  /// Output classes V.
  std::size_t output_classes() const;
  /// Network input width per unit.
  std::size_t input_dim() const;
  std::size_t units_per_sample() const;

  /// Stable text form of every field that affects generation.
  std::string canonical() const;
  /// FNV-1a 64 of canonical().
  std::uint64_t content_hash() const;
};

struct Dataset {
  TaskKind kind = TaskKind::classification;
  Split split = Split::train;
  std::size_t samples = 0;
  std::size_t sample_width = 0;      // doubles per sample in `features`
  std::size_t units_per_sample = 1;
  std::size_t height = 1, width = 1; // shapes
  std::size_t context = 0, vocab = 0;  // pattern language
  std::vector<double> features;      // samples x sample_width
  std::vector<std::size_t> targets;  // samples x units_per_sample
  /// Pattern language: 1 where the target token was not substituted.
  std::vector<std::uint8_t> clean;

  bool operator==(const Dataset&) const = default;
};

Dataset gen_blobs_classification(const TaskSpec& spec, Split split);
Dataset gen_shapes_segmentation(const TaskSpec& spec, Split split);
Dataset gen_pattern_lm(const TaskSpec& spec, Split split);
/// Dispatches on spec.kind.
Dataset generate(const TaskSpec& spec, Split split);

/// Network input for the listed samples.
Batch make_batch(const Dataset& data, std::span<const std::size_t> samples);

/// Blob mean k: radius * (cos 2πk/K, sin 2πk/K, 0, ..., 0).
std::vector<double> blob_mean(const TaskSpec& spec, std::size_t k);

/// Bayes-optimal accuracy of equal-prior isotropic clusters on a regular
/// K-gon, by numerical integration over the nearest-mean wedge.
double blobs_bayes_accuracy(std::size_t classes, double radius, double sigma);

/// Pattern language: the uncorrupted continuation of each unit's sequence.
/// A predictor that outputs it scores the 1 - q ceiling.
std::vector<std::size_t> pattern_oracle_predictions(const TaskSpec& spec, Split split);

/// Flat binary dataset files keyed by TaskSpec::content_hash.
///
/// Layout (little-endian): "SPGD", u32 version, u64 hash, u32 kind, u32 split,
/// u64 samples, sample_width, units_per_sample, height, width, context, vocab,
/// then u64 count + f64 features, u64 count + u64 targets, u64 count + u8 clean.
class DatasetCache {
 public:
  explicit DatasetCache(std::filesystem::path dir) : dir_(std::move(dir)) {}

  std::filesystem::path path_for(const TaskSpec& spec, Split split) const;
  /// Reads the cached file if present and valid, otherwise generates and writes it.
  Dataset load_or_generate(const TaskSpec& spec, Split split) const;

 private:
  std::filesystem::path dir_;
};

void write_dataset(const Dataset& data, std::uint64_t hash, const std::filesystem::path& path);
/// Throws std::runtime_error on bad magic, version or hash.
Dataset read_dataset(const std::filesystem::path& path, std::uint64_t expected_hash);

}  // namespace spg
