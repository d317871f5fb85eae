#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <limits>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "rage/dataset.hpp"
#include "rage/predictor.hpp"

namespace rage {

/// Non-finite loss or gradient; training stops with diagnostics.
class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class LossKind { ri_mse, ri_mse_plus_mag };

std::string_view to_string(LossKind kind);
LossKind parse_loss_kind(std::string_view text);

struct TrainConfig {
  std::size_t max_epochs = 200;
  std::size_t patience = 50;
  double learning_rate = 1e-3;
  std::size_t batch_size = 2;
  double segment_seconds = 2.0;
  std::uint64_t seed = 0;
  LossKind loss = LossKind::ri_mse_plus_mag;
  /// Global L2 gradient norm ceiling; <= 0 disables clipping.
  double clip_norm = 5.0;

  /// Throws std::invalid_argument unless patience < max_epochs, lr > 0 and
  /// batch size and segment length are positive.
  void validate() const;
  bool operator==(const TrainConfig&) const = default;
};

/// Mean squared error over both spectrogram channels of [N,2,F,T] tensors;
/// ri_mse_plus_mag adds 0.5 * MSE of magnitudes sqrt(re^2 + im^2 + 1e-9).
template <typename T>
Tensor<T> spectral_loss(const Tensor<T>& pred, const Tensor<T>& target, LossKind kind);

struct AdamOptions {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// Moments are indexed like the parameter store they were created for.
template <typename T>
struct AdamState {
  std::uint64_t step = 0;
  std::vector<std::vector<T>> m, v;
};

/// Bias-corrected Adam update of every parameter from its accumulated
/// gradient (an absent gradient counts as zero). Throws NumericError naming
/// the parameter if a gradient is not finite; nothing is updated then.
template <typename T>
void adam_step(ParameterStore<T>& params, AdamState<T>& state, const AdamOptions& options);

/// Rescales all gradients so their global L2 norm is at most `max_norm`.
/// Returns the norm before clipping.
template <typename T>
double clip_grad_norm(ParameterStore<T>& params, double max_norm);

/// Stops once `patience` consecutive epochs fail to lower the best loss
/// (strictly; no tolerance).
class EarlyStopping {
 public:
  explicit EarlyStopping(std::size_t patience) : patience_(patience) {}

  /// Records the next epoch's loss; true when training should stop.
  bool update(double loss);

  std::size_t patience() const { return patience_; }
  std::size_t epochs_seen() const { return seen_; }
  std::size_t best_epoch() const { return best_epoch_; }  // 1-based, 0 = none
  double best_loss() const { return best_; }
  std::size_t since_improvement() const { return since_; }
  bool improved_last() const { return since_ == 0 && seen_ > 0; }

  void restore(std::size_t seen, std::size_t best_epoch, double best_loss,
               std::size_t since_improvement);

 private:
  std::size_t patience_;
  std::size_t seen_ = 0;
  std::size_t best_epoch_ = 0;
  double best_ = std::numeric_limits<double>::infinity();
  std::size_t since_ = 0;
};

struct EpochRecord {
  std::size_t epoch = 0;  // 1-based
  double train_loss = 0.0;
  double val_loss = 0.0;
  double grad_norm = 0.0;  // mean pre-clip norm over the epoch's steps
  double seconds = 0.0;
  bool operator==(const EpochRecord&) const = default;
};

struct TrainingReport {
  std::vector<EpochRecord> epochs;
  std::string stop_reason;  // "max_epochs", "early_stopping" or "epoch_budget"
  std::size_t best_epoch = 0;
  double best_val_loss = std::numeric_limits<double>::infinity();
  double wall_seconds = 0.0;
  std::size_t parameter_count = 0;
};

void write_report(const std::filesystem::path& path, const TrainingReport& report,
                  const ModelConfig& model, const TrainConfig& train);

/// Everything needed to continue training exactly where it stopped.
template <typename T>
struct TrainerState {
  std::size_t epoch = 0;  // completed epochs
  EarlyStopping stopper{50};
  AdamState<T> adam;
  std::string rng_state;
  std::vector<EpochRecord> history;
};

struct FitOptions {
  /// Best-validation checkpoint; the latest state goes to "<path>.last".
  std::optional<std::filesystem::path> checkpoint;
  /// Stop after this many epochs in this call, leaving a resumable state.
  std::optional<std::size_t> epoch_budget;
  std::function<void(const EpochRecord&)> on_epoch;
};

/// Trains `model` on `train` crops, validating on `val` after every epoch.
/// `state` carries optimizer, stopper and RNG across calls (resume).
template <typename T>
TrainingReport fit(Predictor<T>& model, BatchIterator& train, BatchIterator& val,
                   const TrainConfig& config, TrainerState<T>& state,
                   const FitOptions& options = {});

/// Fresh state for `model` under `config`.
template <typename T>
TrainerState<T> initial_state(const Predictor<T>& model, const TrainConfig& config);

/// Mean loss over one pass of `data` without recording gradients.
template <typename T>
double evaluate_loss(const Predictor<T>& model, BatchIterator& data, LossKind kind);

}  // namespace rage
