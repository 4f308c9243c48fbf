#pragma once

#include <Eigen/Core>

#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "oat/common.hpp"

namespace oat::nn {

using Mat = Eigen::MatrixXd;
using Vec = Eigen::VectorXd;

/// Flat view over a (parameter, gradient) pair. Registries are built in a
/// fixed order so optimizer state lines up across steps and checkpoints.
struct ParamRef {
  std::string name;
  double* w;
  double* g;
  Eigen::Index n;
};

class ParamSet {
 public:
  void add(const std::string& name, Mat& w, Mat& g) {
    refs_.push_back({name, w.data(), g.data(), w.size()});
  }
  void add(const std::string& name, Vec& w, Vec& g) {
    refs_.push_back({name, w.data(), g.data(), w.size()});
  }

  const std::vector<ParamRef>& refs() const { return refs_; }
  Eigen::Index total() const {
    Eigen::Index n = 0;
    for (const auto& r : refs_) n += r.n;
    return n;
  }

  void zero_grads() {
    for (auto& r : refs_)
      for (Eigen::Index i = 0; i < r.n; ++i) r.g[i] = 0.0;
  }

  double grad_norm() const {
    double s = 0;
    for (const auto& r : refs_)
      for (Eigen::Index i = 0; i < r.n; ++i) s += r.g[i] * r.g[i];
    return std::sqrt(s);
  }

 private:
  std::vector<ParamRef> refs_;
};

/// Adam with bias correction. Moment buffers are keyed by registry order and
/// serialize into checkpoints so a resumed run continues bit-identically.
class Adam {
 public:
  explicit Adam(double lr, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8)
      : lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {}

  void step(ParamSet& ps) {
    if (m_.empty()) {
      m_.assign(static_cast<size_t>(ps.total()), 0.0);
      v_.assign(static_cast<size_t>(ps.total()), 0.0);
    }
    if (static_cast<Eigen::Index>(m_.size()) != ps.total()) {
      throw std::logic_error("Adam: parameter registry changed size");
    }
    ++t_;
    double c1 = 1.0 - std::pow(beta1_, t_);
    double c2 = 1.0 - std::pow(beta2_, t_);
    size_t k = 0;
    for (const auto& r : ps.refs()) {
      for (Eigen::Index i = 0; i < r.n; ++i, ++k) {
        double g = r.g[i];
        m_[k] = beta1_ * m_[k] + (1 - beta1_) * g;
        v_[k] = beta2_ * v_[k] + (1 - beta2_) * g * g;
        r.w[i] -= lr_ * (m_[k] / c1) / (std::sqrt(v_[k] / c2) + eps_);
      }
    }
  }

  double lr() const { return lr_; }
  void set_lr(double lr) { lr_ = lr; }
  long long steps_taken() const { return t_; }

  const std::vector<double>& m() const { return m_; }
  const std::vector<double>& v() const { return v_; }
  void restore(long long t, std::vector<double> m, std::vector<double> v) {
    t_ = t;
    m_ = std::move(m);
    v_ = std::move(v);
  }

 private:
  double lr_, beta1_, beta2_, eps_;
  long long t_ = 0;
  std::vector<double> m_, v_;
};

inline double gelu(double x) { return 0.5 * x * (1.0 + std::erf(x * M_SQRT1_2)); }

inline double gelu_grad(double x) {
  double cdf = 0.5 * (1.0 + std::erf(x * M_SQRT1_2));
  double pdf = std::exp(-0.5 * x * x) / std::sqrt(2.0 * M_PI);
  return cdf + x * pdf;
}

/// Row-wise softmax with the usual max-shift.
inline void softmax_rows_inplace(Mat& m) {
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    double mx = m.row(i).maxCoeff();
    m.row(i) = (m.row(i).array() - mx).exp();
    m.row(i) /= m.row(i).sum();
  }
}

/// Central finite differences against the analytic gradients already stored in
/// the registry. `loss_fn` must recompute the loss from the current parameter
/// values. Returns the max relative error over n_coords random coordinates.
inline double grad_check(ParamSet& ps, const std::function<double()>& loss_fn, Rng& rng, int n_coords,
                         double h = 1e-6) {
  double max_rel = 0.0;
  const auto& refs = ps.refs();
  for (int t = 0; t < n_coords; ++t) {
    const ParamRef& r = refs[rng.uniform_int(0, static_cast<int>(refs.size()) - 1)];
    Eigen::Index i = rng.uniform_int(0, static_cast<int>(r.n) - 1);
    double saved = r.w[i];
    r.w[i] = saved + h;
    double lp = loss_fn();
    r.w[i] = saved - h;
    double lm = loss_fn();
    r.w[i] = saved;
    double numeric = (lp - lm) / (2 * h);
    double analytic = r.g[i];
    double rel = std::abs(numeric - analytic) / std::max({std::abs(numeric), std::abs(analytic), 1e-8});
    max_rel = std::max(max_rel, rel);
  }
  return max_rel;
}

/// Seeded fan-in-scaled uniform init, shared across the trainable modules.
inline void init_uniform(Mat& m, Rng& rng, int fan_in) {
  double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
  for (Eigen::Index j = 0; j < m.cols(); ++j)
    for (Eigen::Index i = 0; i < m.rows(); ++i) m(i, j) = rng.uniform(-bound, bound);
}

}  // namespace oat::nn
