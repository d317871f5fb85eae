#include <chrono>
#include <cmath>
#include <fstream>
#include <random>
#include <sstream>

#include "rage/checkpoint.hpp"
#include "rage/config_io.hpp"
#include "rage/ops.hpp"
#include "rage/trainer.hpp"

namespace rage {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

// Validation always sees the same crops so epochs are comparable.
constexpr std::uint64_t kValidationKey = 0;

template <typename T>
Tensor<T> cast(const Tensor<double>& x) {
  const auto src = x.data();
  return Tensor<T>(x.shape(), std::vector<T>(src.begin(), src.end()));
}

// The loss lives in the network domain (compressed, per-example scaled).
template <typename T>
Tensor<T> batch_loss(const Predictor<T>& model, const Batch& batch, LossKind kind) {
  const auto& cfg = model.config();
  const auto domain = NetworkDomain::from_noisy(cfg, batch.noisy, batch.bins, batch.frames);
  const Tensor<T> pred = ops::crop2d(model.forward(cast<T>(domain.to_network(cfg, batch.noisy))),
                                     batch.bins, batch.frames);
  return spectral_loss(pred, cast<T>(domain.to_network(cfg, batch.clean)), kind);
}

std::string join(const std::vector<std::string>& ids) {
  std::string s;
  for (const auto& id : ids) s += (s.empty() ? "" : ", ") + id;
  return s;
}

template <typename T>
[[noreturn]] void numeric_failure(const ParameterStore<T>& params, std::size_t epoch,
                                  std::size_t step, const Batch& batch,
                                  const std::string& what) {
  std::string culprit;
  for (const auto& p : params.params()) {
    for (T g : p.tensor.grad()) {
      if (!std::isfinite(double(g))) {
        culprit = p.name;
        break;
      }
    }
    if (!culprit.empty()) break;
  }
  throw NumericError(what + (culprit.empty() ? "" : " in parameter '" + culprit + "'") +
                     " at epoch " + std::to_string(epoch) + ", batch " +
                     std::to_string(step) + " [" + join(batch.ids) + "]");
}

void save_atomic(const fs::path& path, const Checkpoint& ckpt) {
  fs::path tmp = path;
  tmp += ".tmp";
  save_checkpoint(tmp, ckpt);
  fs::rename(tmp, path);
}

}  // namespace

template <typename T>
double evaluate_loss(const Predictor<T>& model, BatchIterator& data, LossKind kind) {
  NoGradGuard no_grad;
  data.start_epoch(kValidationKey);
  Batch batch;
  double total = 0.0;
  std::size_t count = 0;
  while (data.next(batch)) {
    total += double(batch_loss(model, batch, kind).item()) * double(batch.ids.size());
    count += batch.ids.size();
  }
  return total / double(count);
}

template <typename T>
TrainerState<T> initial_state(const Predictor<T>& model, const TrainConfig& config) {
  config.validate();
  TrainerState<T> state;
  state.stopper = EarlyStopping(config.patience);
  for (const auto& p : model.parameters().params()) {
    state.adam.m.emplace_back(p.tensor.numel(), T(0));
    state.adam.v.emplace_back(p.tensor.numel(), T(0));
  }
  std::ostringstream rng;
  rng << std::mt19937_64(config.seed);
  state.rng_state = rng.str();
  return state;
}

template <typename T>
TrainingReport fit(Predictor<T>& model, BatchIterator& train, BatchIterator& val,
                   const TrainConfig& config, TrainerState<T>& state,
                   const FitOptions& options) {
  config.validate();
  if (train.size() == 0 || val.size() == 0) {
    throw std::invalid_argument("fit: train and val splits must be non-empty");
  }
  const auto wall_start = std::chrono::steady_clock::now();
  std::mt19937_64 rng;
  {
    std::istringstream in(state.rng_state);
    in >> rng;
    if (!in) throw std::invalid_argument("fit: corrupt trainer RNG state");
  }
  const AdamOptions adam{config.learning_rate};
  auto& params = model.parameters();

  TrainingReport report;
  report.parameter_count = model.parameter_count();
  report.stop_reason = "max_epochs";
  std::size_t ran = 0;
  bool stopped = state.stopper.since_improvement() >= config.patience &&
                 state.stopper.epochs_seen() > 0;
  if (stopped) report.stop_reason = "early_stopping";

  while (!stopped && state.epoch < config.max_epochs) {
    if (options.epoch_budget && ran >= *options.epoch_budget) {
      report.stop_reason = "epoch_budget";
      break;
    }
    const auto epoch_start = std::chrono::steady_clock::now();
    const std::size_t epoch = state.epoch + 1;
    train.start_epoch(rng());

    Batch batch;
    double loss_sum = 0.0, norm_sum = 0.0;
    std::size_t samples = 0, steps = 0;
    while (train.next(batch)) {
      ++steps;
      params.zero_grad();
      Tensor<T> loss;
      try {
        loss = batch_loss(model, batch, config.loss);
      } catch (const NumericError& e) {
        numeric_failure(params, epoch, steps, batch, e.what());
      }
      const double value = double(loss.item());
      if (!std::isfinite(value)) numeric_failure(params, epoch, steps, batch, "non-finite loss");
      loss.backward();
      const double norm = clip_grad_norm(params, config.clip_norm);
      if (!std::isfinite(norm)) {
        numeric_failure(params, epoch, steps, batch, "non-finite gradient");
      }
      adam_step(params, state.adam, adam);
      loss_sum += value * double(batch.ids.size());
      samples += batch.ids.size();
      norm_sum += norm;
    }
    params.zero_grad();

    EpochRecord rec;
    rec.epoch = epoch;
    rec.train_loss = loss_sum / double(samples);
    rec.grad_norm = norm_sum / double(steps);
    try {
      rec.val_loss = evaluate_loss(model, val, config.loss);
    } catch (const NumericError& e) {
      throw NumericError(std::string(e.what()) + " during validation at epoch " +
                         std::to_string(epoch));
    }
    if (!std::isfinite(rec.val_loss)) {
      throw NumericError("non-finite validation loss at epoch " + std::to_string(epoch));
    }
    stopped = state.stopper.update(rec.val_loss);
    rec.seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - epoch_start).count();
    state.epoch = epoch;
    state.history.push_back(rec);
    {
      std::ostringstream out;
      out << rng;
      state.rng_state = out.str();
    }
    ++ran;

    if (options.checkpoint) {
      const Checkpoint ckpt = make_checkpoint(model, config, state);
      if (state.stopper.improved_last()) save_atomic(*options.checkpoint, ckpt);
      fs::path last = *options.checkpoint;
      last += ".last";
      save_atomic(last, ckpt);
    }
    if (options.on_epoch) options.on_epoch(rec);
    if (stopped) report.stop_reason = "early_stopping";
  }

  report.epochs = state.history;
  report.best_epoch = state.stopper.best_epoch();
  report.best_val_loss = state.stopper.best_loss();
  report.wall_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - wall_start).count();
  return report;
}

void write_report(const fs::path& path, const TrainingReport& report,
                  const ModelConfig& model, const TrainConfig& train) {
  json epochs = json::array();
  for (const auto& e : report.epochs) {
    epochs.push_back({{"epoch", e.epoch},
                      {"train_loss", finite_or_null(e.train_loss)},
                      {"val_loss", finite_or_null(e.val_loss)},
                      {"grad_norm", finite_or_null(e.grad_norm)},
                      {"seconds", e.seconds}});
  }
  const json j = {{"model", model},
                  {"train", train},
                  {"parameter_count", report.parameter_count},
                  {"epochs", epochs},
                  {"stop_reason", report.stop_reason},
                  {"best_epoch", report.best_epoch},
                  {"best_val_loss", finite_or_null(report.best_val_loss)},
                  {"wall_seconds", report.wall_seconds}};
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write report " + path.string());
  out << j.dump(2) << '\n';
}

#define RAGE_INSTANTIATE_FIT(T)                                                       \
  template double evaluate_loss(const Predictor<T>&, BatchIterator&, LossKind);      \
  template TrainerState<T> initial_state(const Predictor<T>&, const TrainConfig&);   \
  template TrainingReport fit(Predictor<T>&, BatchIterator&, BatchIterator&,         \
                              const TrainConfig&, TrainerState<T>&, const FitOptions&);

RAGE_INSTANTIATE_FIT(float)
RAGE_INSTANTIATE_FIT(double)

}  // namespace rage
