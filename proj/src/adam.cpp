#include "car/adam.hpp"

#include <cmath>

namespace car {

namespace {

double snap32(double v) { return static_cast<double>(static_cast<float>(v)); }

}  // namespace

Adam::Adam(std::vector<NamedParam> params, AdamConfig cfg) : params_(std::move(params)), cfg_(cfg) {
  check(cfg_.lr > 0.0 && cfg_.eps > 0.0, "Adam: lr and eps must be positive");
  check(cfg_.beta1 >= 0.0 && cfg_.beta1 < 1.0 && cfg_.beta2 >= 0.0 && cfg_.beta2 < 1.0,
        "Adam: betas must lie in [0, 1)");
  m_.reserve(params_.size());
  v_.reserve(params_.size());
  for (const auto& p : params_) {
    m_.emplace_back(Tensor::zeros(p.value->shape()));
    v_.emplace_back(Tensor::zeros(p.value->shape()));
  }
}

bool Adam::step() {
  for (const auto& p : params_)
    if (!p.grad->all_finite()) return false;

  ++t_;
  const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
  for (std::size_t k = 0; k < params_.size(); ++k) {
    Tensor& p = *params_[k].value;
    const Tensor& g = *params_[k].grad;
    Tensor& m = m_[k];
    Tensor& v = v_[k];
    for (std::size_t i = 0; i < p.size(); ++i) {
      m[i] = snap32(cfg_.beta1 * m[i] + (1.0 - cfg_.beta1) * g[i]);
      v[i] = snap32(cfg_.beta2 * v[i] + (1.0 - cfg_.beta2) * g[i] * g[i]);
      const double mhat = m[i] / bc1;
      const double vhat = v[i] / bc2;
      p[i] = snap32(p[i] - cfg_.lr * mhat / (std::sqrt(vhat) + cfg_.eps));
    }
  }
  return true;
}

std::vector<NamedParam> Adam::moments() {
  std::vector<NamedParam> out;
  for (std::size_t k = 0; k < params_.size(); ++k) {
    out.push_back({"adam.m." + params_[k].name, &m_[k], nullptr});
    out.push_back({"adam.v." + params_[k].name, &v_[k], nullptr});
  }
  return out;
}

}  // namespace car
