#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "s2s/mining.hpp"
#include "s2s/units.hpp"

namespace s2s {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using RowVector = Eigen::RowVectorXd;

enum class EncoderMode { embed_mean, attn };

EncoderMode parse_encoder_mode(const std::string& s);
std::string to_string(EncoderMode m);

struct ModelConfig {
  std::size_t vocab_size = 200;
  std::size_t embed_dim = 64;
  EncoderMode encoder_mode = EncoderMode::attn;
  std::size_t attn_layers = 2;
  std::size_t attn_heads = 4;
  std::size_t ffn_dim = 0;      // 0 resolves to 4 * embed_dim
  std::size_t max_len = 512;    // includes bos and eos
  std::size_t head_hidden = 0;  // 0 resolves to embed_dim
  double lr = 1e-3;
  std::size_t batch_size = 32;
  std::size_t epochs = 5;
  double freeze_frac = 0.3;
  std::uint64_t seed = 0;

  // Copy with the 0-valued defaults filled in. Throws ValidationError on
  // inconsistent settings.
  ModelConfig resolved() const;
  void validate() const;

  // Token ids appended after the K unit rows of the embedding table.
  std::size_t pad_id() const { return vocab_size; }
  std::size_t bos_id() const { return vocab_size + 1; }
  std::size_t eos_id() const { return vocab_size + 2; }
};

// Unknown keys are rejected; absent keys keep their defaults.
ModelConfig model_config_from_json(const std::string& text);
std::string model_config_to_json(const ModelConfig& c);

struct ParamInfo {
  std::string name;
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::size_t offset = 0;
  bool vector = false;   // serialised with a 1-D shape
  bool encoder = false;  // frozen during the warm-up window
  std::size_t size() const { return rows * cols; }
};

// All trainable parameters live in one flat buffer; ParamInfo records the
// named views into it.
class MetricModel {
 public:
  using MatMap = Eigen::Map<RowMatrix>;
  using ConstMatMap = Eigen::Map<const RowMatrix>;

  // Every parameter zero except layer-norm gains, which are one.
  explicit MetricModel(const ModelConfig& config);

  // Seeded random initialisation.
  static MetricModel initialized(const ModelConfig& config);

  const ModelConfig& config() const { return config_; }
  const std::vector<ParamInfo>& layout() const { return layout_; }
  const ParamInfo& info(const std::string& name) const;

  std::span<double> data() { return data_; }
  std::span<const double> data() const { return data_; }
  std::size_t num_params() const { return data_.size(); }

  MatMap param(const std::string& name);
  ConstMatMap param(const std::string& name) const;
  ConstMatMap param(const ParamInfo& p) const;

  // Fixed sinusoidal table, max_len x embed_dim.
  const RowMatrix& positions() const { return positions_; }

  void zero_parameters();

 private:
  ModelConfig config_;
  std::vector<ParamInfo> layout_;
  std::vector<double> data_;
  RowMatrix positions_;
};

// bos + units (truncated to max_len - 2) + eos. Throws ValidationError naming
// any unit >= vocab_size.
std::vector<std::size_t> encoder_tokens(const UnitSequence& units, const ModelConfig& config);

// Utterance vector of size embed_dim.
RowVector encode(const UnitSequence& units, const MetricModel& model);

// [h; r; h*r; |h-r|]
RowVector pool(const RowVector& h, const RowVector& r);

// sigmoid(w2 . tanh(w1 . pool + b1) + b2), strictly inside (0,1) for finite
// parameters.
double predict(const PairRecord& pair, const MetricModel& model);
std::vector<double> predict_all(std::span<const PairRecord> pairs, const MetricModel& model,
                                unsigned threads = 0);

// Squared error (predict - target)^2 for one pair.
double pair_loss(const PairRecord& pair, double target, const MetricModel& model);

// Squared error for one pair; adds `scale` times its gradient into `grad`
// (same layout as model.data()). With head_only, encoder gradients are
// skipped and left untouched.
double pair_loss_and_grad(const PairRecord& pair, double target, const MetricModel& model, double scale,
                          std::span<double> grad, bool head_only = false);

struct GradCheckResult {
  double max_rel_error = 0.0;
  double max_abs_error = 0.0;
  std::string worst_param;
  std::size_t worst_index = 0;
  bool all_finite = true;
};

// Central finite differences of the squared error against the analytic
// gradient, over every parameter. Relative error uses
// |a - n| / max(|a|, |n|, rel_floor).
GradCheckResult grad_check(const MetricModel& model, const PairRecord& pair, double target,
                           double epsilon = 1e-5, double rel_floor = 1e-6);

// ---------------------------------------------------------------- training

struct StepRecord {
  std::size_t step = 0;   // 1-based, global
  std::size_t epoch = 0;  // 1-based
  double mse = 0.0;
  bool encoder_frozen = false;
};

struct EpochRecord {
  std::size_t epoch = 0;
  std::optional<double> dev_pearson;
  std::optional<double> dev_spearman;
};

struct TrainState {
  std::size_t step = 0;
  std::size_t epoch = 0;
  std::size_t steps_per_epoch = 0;
  std::size_t freeze_steps = 0;
  bool encoder_frozen = true;
  std::vector<double> adam_m;
  std::vector<double> adam_v;
  std::size_t head_updates = 0;
  std::size_t encoder_updates = 0;
  std::vector<double> loss_history;
  std::vector<EpochRecord> dev_history;
};

struct TrainOptions {
  unsigned threads = 0;
  // Called after every optimiser step with the updated model.
  std::function<void(const StepRecord&, const MetricModel&)> on_step;
  std::function<void(const EpochRecord&)> on_epoch;
  // JSON Lines training log; null disables it.
  std::ostream* log = nullptr;
};

struct TrainResult {
  MetricModel final_model;
  MetricModel best_model;  // highest dev Pearson; equals final without dev data
  TrainState state;
};

// Adam on the mean squared error. During the first
// floor(freeze_frac * steps_per_epoch) steps only head.* parameters update.
// Inputs must carry targets and de-duplicated unit sequences.
TrainResult train(std::span<const PairRecord> train_pairs, std::span<const PairRecord> dev_pairs,
                  const ModelConfig& config, const TrainOptions& options = {});

// ---------------------------------------------------------------- files

void save_model(const MetricModel& model, const std::filesystem::path& path);
MetricModel load_model(const std::filesystem::path& path);
std::string model_to_json(const MetricModel& model);
MetricModel model_from_json(const std::string& text);

}  // namespace s2s
