#include <algorithm>
#include <map>
#include <random>

#include "rage/gradcheck.hpp"
#include "rage/ops.hpp"

namespace rage {

namespace {

using T64 = Tensor<double>;

class Draw {
 public:
  explicit Draw(std::uint64_t seed) : rng_(seed) {}

  double uniform(double lo, double hi) {
    return lo + (hi - lo) * static_cast<double>(rng_() >> 11) * 0x1.0p-53;
  }
  std::size_t size(std::size_t lo, std::size_t hi) {
    return lo + static_cast<std::size_t>(rng_() % (hi - lo + 1));
  }
  T64 tensor(const Shape& shape, double lo = -1.0, double hi = 1.0) {
    std::vector<double> v(shape_numel(shape));
    for (auto& x : v) x = uniform(lo, hi);
    return T64(shape, std::move(v));
  }
  // Magnitudes in [0.1, 1] with random signs, so relu's kink is never
  // within eps of a probe.
  T64 away_from_zero(const Shape& shape) {
    std::vector<double> v(shape_numel(shape));
    for (auto& x : v) x = (rng_() & 1 ? 1.0 : -1.0) * uniform(0.1, 1.0);
    return T64(shape, std::move(v));
  }

 private:
  std::mt19937_64 rng_;
};

}  // namespace

std::vector<GradCaseResult> run_gradient_suite(std::size_t instances, double eps,
                                               std::uint64_t seed) {
  std::vector<std::string> order;
  std::map<std::string, GradCaseResult> results;
  auto record = [&](const std::string& op, double err) {
    auto [it, fresh] = results.try_emplace(op, GradCaseResult{op, 0, 0.0});
    if (fresh) order.push_back(op);
    ++it->second.instances;
    it->second.worst = std::max(it->second.worst, err);
  };

  for (std::size_t n = 0; n < instances; ++n) {
    Draw d(seed * 1000003 + n);
    // Weighted sum so every element carries a distinct O(1) upstream gradient.
    auto weighted_by = [&](const Shape& shape) {
      const T64 w = d.tensor(shape, 0.5, 1.5);
      return [w](const T64& y) { return ops::sum(ops::mul(y, w)); };
    };
    auto check = [&](const std::string& op, const T64& x, auto&& fn) {
      record(op, finite_diff_check(fn, x, eps));
    };

    {
      const std::size_t k = n % 3 == 0 ? 1 : 3, stride = 1 + n % 2, pad = k == 3 ? n % 2 : 0;
      const std::size_t ci = d.size(1, 3), co = d.size(1, 4);
      const T64 x = d.tensor({d.size(1, 2), ci, d.size(k + 1, 7), d.size(k + 1, 7)});
      const T64 w = d.tensor({co, ci, k, k}), b = d.tensor({co});
      const auto probe = ops::conv2d(x, w, b, stride, pad);
      const auto sum = weighted_by(probe.shape());
      check("conv2d.input", x, [&](const T64& v) { return sum(ops::conv2d(v, w, b, stride, pad)); });
      check("conv2d.weight", w, [&](const T64& v) { return sum(ops::conv2d(x, v, b, stride, pad)); });
      check("conv2d.bias", b, [&](const T64& v) { return sum(ops::conv2d(x, w, v, stride, pad)); });
    }
    {
      const T64 x = d.tensor({d.size(1, 2), d.size(1, 3), d.size(1, 4), d.size(1, 4)});
      const auto sum = weighted_by(ops::upsample2x(x).shape());
      check("upsample2x", x, [&](const T64& v) { return sum(ops::upsample2x(v)); });
    }
    {
      const Shape shape{d.size(1, 4), d.size(1, 5)};
      const T64 a = d.tensor(shape), b = d.tensor(shape);
      const auto sum = weighted_by(shape);
      check("add.lhs", a, [&](const T64& v) { return sum(ops::add(v, b)); });
      check("add.rhs", b, [&](const T64& v) { return sum(ops::add(a, v)); });
      check("sub.lhs", a, [&](const T64& v) { return sum(ops::sub(v, b)); });
      check("sub.rhs", b, [&](const T64& v) { return sum(ops::sub(a, v)); });
      check("mul.lhs", a, [&](const T64& v) { return sum(ops::mul(v, b)); });
      check("mul.rhs", b, [&](const T64& v) { return sum(ops::mul(a, v)); });
      check("neg", a, [&](const T64& v) { return sum(ops::neg(v)); });
      const double s = d.uniform(-3.0, 3.0);
      check("add_scalar", a, [&](const T64& v) { return sum(ops::add_scalar(v, s)); });
      check("mul_scalar", a, [&](const T64& v) { return sum(ops::mul_scalar(v, s)); });

      const T64 z = d.away_from_zero(shape);
      check("sigmoid", ops::mul_scalar(z, 4.0).detach(),
            [&](const T64& v) { return sum(ops::sigmoid(v)); });
      check("relu", z, [&](const T64& v) { return sum(ops::relu(v)); });
      check("square", z, [&](const T64& v) { return sum(ops::square(v)); });
      check("sqrt", d.tensor(shape, 0.2, 2.0), [&](const T64& v) { return sum(ops::sqrt(v)); });
      check("sum", a, [&](const T64& v) { return ops::mul_scalar(ops::sum(v), s); });
      check("mean", a, [&](const T64& v) { return ops::mean(ops::square(v)); });
    }
    {
      const std::size_t b = d.size(1, 2), len = d.size(2, 6), dk = d.size(1, 4), dv = d.size(1, 4);
      const T64 q = d.tensor({b, len, dk}), k = d.tensor({b, len, dk}), v = d.tensor({b, len, dv});
      const auto sum = weighted_by({b, len, dv});
      check("attention.q", q, [&](const T64& x) { return sum(ops::scaled_dot_attention(x, k, v)); });
      check("attention.k", k, [&](const T64& x) { return sum(ops::scaled_dot_attention(q, x, v)); });
      check("attention.v", v, [&](const T64& x) { return sum(ops::scaled_dot_attention(q, k, x)); });
    }
    {
      const std::size_t groups = 1 + n % 2, ch = groups * d.size(1, 3);
      const Shape shape{d.size(1, 2), ch, d.size(1, 3), d.size(2, 3)};
      const T64 x = d.tensor(shape, -2.0, 2.0);
      const T64 gamma = d.tensor({ch}, 0.5, 1.5), beta = d.tensor({ch});
      const auto sum = weighted_by(shape);
      check("group_norm.x", x,
            [&](const T64& v) { return sum(ops::group_norm(v, gamma, beta, groups)); });
      check("group_norm.gamma", gamma,
            [&](const T64& v) { return sum(ops::group_norm(x, v, beta, groups)); });
      check("group_norm.beta", beta,
            [&](const T64& v) { return sum(ops::group_norm(x, gamma, v, groups)); });
    }
    {
      const std::size_t ch = d.size(2, 4), h = d.size(2, 5), w = d.size(2, 5);
      const T64 x = d.tensor({d.size(1, 2), ch, h, w});
      const std::size_t begin = d.size(0, ch - 1), count = d.size(1, ch - begin);
      const auto sum_slice = weighted_by(ops::slice_channels(x, begin, count).shape());
      check("slice_channels", x,
            [&](const T64& v) { return sum_slice(ops::slice_channels(v, begin, count)); });
      const std::size_t ch_ = d.size(1, h), cw = d.size(1, w);
      const auto sum_crop = weighted_by(ops::crop2d(x, ch_, cw).shape());
      check("crop2d", x, [&](const T64& v) { return sum_crop(ops::crop2d(v, ch_, cw)); });
      const auto seq = ops::to_sequence(x);
      const auto sum_seq = weighted_by(seq.shape());
      check("to_sequence", x, [&](const T64& v) { return sum_seq(ops::to_sequence(v)); });
      const auto sum_img = weighted_by(x.shape());
      check("from_sequence", seq.detach(),
            [&](const T64& v) { return sum_img(ops::from_sequence(v, h, w)); });
      const T64 single = d.tensor({x.dim(0), 1, h, w});
      const auto sum_bc = weighted_by(x.shape());
      check("broadcast_channels", single,
            [&](const T64& v) { return sum_bc(ops::broadcast_channels(v, ch)); });
    }
    {
      // Gate-like composition: fan-out, broadcast, upsample and a strided conv.
      const T64 x = d.tensor({1, 2, 2 * d.size(1, 3), 2 * d.size(1, 3)});
      const T64 wx = d.tensor({1, 2, 1, 1}), bx = d.tensor({1});
      const auto sum = weighted_by(x.shape());
      check("composed_gate", x, [&](const T64& v) {
        auto alpha = ops::upsample2x(ops::sigmoid(ops::conv2d(v, wx, bx, 2, 0)));
        return sum(ops::add(ops::mul(ops::broadcast_channels(alpha, 2), v), ops::square(v)));
      });
    }
  }

  std::vector<GradCaseResult> out;
  for (const auto& op : order) out.push_back(results.at(op));
  return out;
}

}  // namespace rage
