#include <cmath>
#include <stdexcept>

#include "rage/ops.hpp"
#include "rage/trainer.hpp"

namespace rage {

using ops::operator+;
using ops::operator-;

std::string_view to_string(LossKind kind) {
  switch (kind) {
    case LossKind::ri_mse: return "ri_mse";
    case LossKind::ri_mse_plus_mag: return "ri_mse_plus_mag";
  }
  return "ri_mse";
}

LossKind parse_loss_kind(std::string_view text) {
  if (text == "ri_mse") return LossKind::ri_mse;
  if (text == "ri_mse_plus_mag") return LossKind::ri_mse_plus_mag;
  throw std::invalid_argument("unknown loss '" + std::string(text) + "'");
}

void TrainConfig::validate() const {
  if (max_epochs == 0) throw std::invalid_argument("max_epochs must be positive");
  if (patience >= max_epochs) {
    throw std::invalid_argument("patience (" + std::to_string(patience) +
                                ") must be below max_epochs (" +
                                std::to_string(max_epochs) + ")");
  }
  if (!(learning_rate > 0) || !std::isfinite(learning_rate)) {
    throw std::invalid_argument("learning rate must be positive and finite");
  }
  if (batch_size == 0) throw std::invalid_argument("batch size must be positive");
  if (!(segment_seconds > 0)) throw std::invalid_argument("segment length must be positive");
  if (std::isnan(clip_norm)) throw std::invalid_argument("clip norm is NaN");
}

template <typename T>
Tensor<T> spectral_loss(const Tensor<T>& pred, const Tensor<T>& target, LossKind kind) {
  if (pred.shape() != target.shape()) {
    throw ShapeError("loss: prediction " + shape_str(pred.shape()) +
                     " does not match target " + shape_str(target.shape()));
  }
  if (pred.rank() != 4 || pred.dim(1) != 2) {
    throw ShapeError("loss: expected [N,2,F,T] spectrograms, got " +
                     shape_str(pred.shape()));
  }
  for (const auto* x : {&pred, &target}) {
    for (T v : x->data()) {
      if (!std::isfinite(static_cast<double>(v))) {
        throw NumericError(std::string("loss: non-finite ") +
                           (x == &pred ? "prediction" : "target"));
      }
    }
  }
  Tensor<T> loss = ops::mean(ops::square(pred - target));
  if (kind == LossKind::ri_mse) return loss;
  auto magnitude = [](const Tensor<T>& x) {
    const Tensor<T> re = ops::slice_channels(x, 0, 1), im = ops::slice_channels(x, 1, 1);
    return ops::sqrt(ops::add_scalar(ops::square(re) + ops::square(im), T(1e-9)));
  };
  const Tensor<T> mag = ops::mean(ops::square(magnitude(pred) - magnitude(target)));
  return loss + ops::mul_scalar(mag, T(0.5));
}

template <typename T>
void adam_step(ParameterStore<T>& params, AdamState<T>& state, const AdamOptions& o) {
  auto& list = params.params();
  for (const auto& p : list) {
    for (T g : p.tensor.grad()) {
      if (!std::isfinite(static_cast<double>(g))) {
        throw NumericError("non-finite gradient in parameter '" + p.name + "'");
      }
    }
  }
  if (state.m.empty()) {
    state.m.resize(list.size());
    state.v.resize(list.size());
  }
  if (state.m.size() != list.size() || state.v.size() != list.size()) {
    throw std::logic_error("adam: state was built for a different parameter set");
  }
  ++state.step;
  const double c1 = 1.0 - std::pow(o.beta1, double(state.step));
  const double c2 = 1.0 - std::pow(o.beta2, double(state.step));
  for (std::size_t i = 0; i < list.size(); ++i) {
    Tensor<T>& t = list[i].tensor;
    const std::size_t n = t.numel();
    auto& m = state.m[i];
    auto& v = state.v[i];
    if (m.empty()) m.assign(n, T(0));
    if (v.empty()) v.assign(n, T(0));
    if (m.size() != n || v.size() != n) {
      throw std::logic_error("adam: moment size mismatch for '" + list[i].name + "'");
    }
    const auto grad = t.grad();
    const auto value = t.mutable_data();
    for (std::size_t k = 0; k < n; ++k) {
      const double g = grad.empty() ? 0.0 : double(grad[k]);
      const double mk = o.beta1 * double(m[k]) + (1.0 - o.beta1) * g;
      const double vk = o.beta2 * double(v[k]) + (1.0 - o.beta2) * g * g;
      m[k] = T(mk);
      v[k] = T(vk);
      const double step = o.lr * (mk / c1) / (std::sqrt(vk / c2) + o.eps);
      value[k] = T(double(value[k]) - step);
    }
  }
}

template <typename T>
double clip_grad_norm(ParameterStore<T>& params, double max_norm) {
  double sq = 0.0;
  for (const auto& p : params.params()) {
    for (T g : p.tensor.grad()) sq += double(g) * double(g);
  }
  const double norm = std::sqrt(sq);
  if (max_norm > 0 && std::isfinite(norm) && norm > max_norm) {
    const T scale = T(max_norm / norm);
    for (auto& p : params.params()) {
      if (!p.tensor.has_grad()) continue;
      for (T& g : p.tensor.mutable_grad()) g *= scale;
    }
  }
  return norm;
}

bool EarlyStopping::update(double loss) {
  ++seen_;
  if (loss < best_) {
    best_ = loss;
    best_epoch_ = seen_;
    since_ = 0;
  } else {
    ++since_;
  }
  return since_ >= patience_;
}

void EarlyStopping::restore(std::size_t seen, std::size_t best_epoch, double best_loss,
                            std::size_t since_improvement) {
  if (best_epoch > seen || since_improvement > seen) {
    throw std::invalid_argument("early stopping: inconsistent restored state");
  }
  seen_ = seen;
  best_epoch_ = best_epoch;
  best_ = best_loss;
  since_ = since_improvement;
}

#define RAGE_INSTANTIATE_OPTIM(T)                                                   \
  template Tensor<T> spectral_loss(const Tensor<T>&, const Tensor<T>&, LossKind); \
  template void adam_step(ParameterStore<T>&, AdamState<T>&, const AdamOptions&); \
  template double clip_grad_norm(ParameterStore<T>&, double);

RAGE_INSTANTIATE_OPTIM(float)
RAGE_INSTANTIATE_OPTIM(double)

}  // namespace rage
