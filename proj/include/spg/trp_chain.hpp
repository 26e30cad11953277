#pragma once

// Temporary replica modules chained after the base representation. Every
// module feeds the base network's own head, so π_t = head(h_t) for t = 0..T.

#include <cstddef>
#include <cstdint>
#include <optional>
#include <string_view>
#include <vector>

#include "spg/network.hpp"
#include "spg/rng.hpp"
#include "spg/tape.hpp"

namespace spg {

/// Checkpoint variant tag. 0 marks a stripped model.
enum class TrpVariant : std::uint32_t { hpo_dropout = 1, nas_depth = 2 };

TrpVariant parse_trp_variant(std::string_view name);
std::string_view to_string(TrpVariant variant);

struct TrpConfig {
  std::size_t depth = 3;  // T
  TrpVariant variant = TrpVariant::hpo_dropout;
  std::vector<double> rates{0.2, 0.2, 0.2};  // p_1..p_T, hpo only
  std::size_t blocks = 1;                    // residual blocks per module, nas only
  std::size_t width = 0;                     // D
  std::size_t classes = 0;                   // V

  void validate() const;
};

/// 1 - prod_{k<=t} (1 - p_k), for 1 <= t <= T.
double cumulative_rate(const TrpConfig& config, std::size_t t);

struct ParamBudget {
  std::size_t base = 0;
  std::size_t temporary = 0;
  std::size_t total = 0;
};

/// hpo: T(D^2 + D) per stream; nas: T * blocks * 2(D^2 + D) per stream.
ParamBudget added_param_count(const TrpConfig& config, std::size_t base_params, std::size_t streams = 1);

/// One replica module. hpo: dropout then h + Linear(h) with a zero Linear.
/// nas: a stack of blocks h + W2 relu(W1 h + b1) + b2 with W2, b2 zero.
class TrpModule {
 public:
  TrpModule(const TrpConfig& config, std::size_t index, RngStream& init);

  ad::Var forward(ad::Tape& tape, ad::Var h, RngStream& dropout, bool training);
  std::size_t param_count() const;
  void collect(const std::string& prefix, std::vector<NamedParam>& out);

  /// Node of the most recent dropout application (hpo, training mode).
  std::optional<ad::Var> last_dropout() const { return last_dropout_; }

 private:
  TrpVariant variant_;
  double rate_ = 0.0;
  Linear linear_;
  std::vector<Linear> inner_;
  std::vector<Linear> outer_;
  std::optional<ad::Var> last_dropout_;
};

struct ChainOutput {
  std::vector<ad::Var> hidden;  // h_0..h_T
  std::vector<ad::Var> logits;  // π_0..π_T
};

class TrpChain {
 public:
  TrpChain(const TrpConfig& config, RngStream& init);

  const TrpConfig& config() const noexcept { return config_; }
  std::size_t depth() const noexcept { return modules_.size(); }
  TrpModule& module(std::size_t t) { return modules_.at(t); }

  /// Rejects h_0 whose width differs from D.
  ChainOutput forward(ad::Tape& tape, ad::Var h0, Linear& head, RngStream& dropout, bool training);
  std::size_t param_count() const;
  void collect(const std::string& prefix, std::vector<NamedParam>& out);

 private:
  TrpConfig config_;
  std::vector<TrpModule> modules_;
};

/// Base network with one replica chain per output stream.
class SpgModel {
 public:
  SpgModel() = default;
  explicit SpgModel(BaseNetwork base) : base_(std::move(base)) {}

  /// Attaches one chain per stream. D and V must match the base network.
  void attach(const TrpConfig& config, RngStream& init);
  /// Removes every chain. Throws std::logic_error if nothing is attached.
  void strip();
  bool attached() const noexcept { return !chains_.empty(); }

  BaseNetwork& base() noexcept { return base_; }
  const BaseNetwork& base() const noexcept { return base_; }
  const std::optional<TrpConfig>& trp_config() const noexcept { return config_; }
  std::size_t depth() const noexcept { return config_ ? config_->depth : 0; }
  std::uint32_t variant_tag() const noexcept { return config_ ? static_cast<std::uint32_t>(config_->variant) : 0; }

  /// One ChainOutput per stream. Without a chain, logits hold only π_0.
  std::vector<ChainOutput> forward(ad::Tape& tape, const Batch& batch, RngStream& dropout, bool training);
  /// Eval-mode π_0 values per stream.
  std::vector<ad::Tensor> base_logits(const Batch& batch);
  /// argmax π_0 of stream 0 in eval mode.
  std::vector<std::size_t> predict(const Batch& batch);

  std::vector<NamedParam> parameters();
  ParamBudget budget() const;

 private:
  BaseNetwork base_;
  std::optional<TrpConfig> config_;
  std::vector<TrpChain> chains_;
};

}  // namespace spg
