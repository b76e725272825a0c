#pragma once

#include <cmath>
#include <span>
#include <vector>

namespace salcal {

struct AdamOptions {
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

// Adam with one moment buffer per parameter slot. Call begin_step() once per
// iteration, then update() for every slot.
class Adam {
 public:
  explicit Adam(AdamOptions options = {}) : opt_(options) {}

  void begin_step() { ++t_; }

  void update(std::size_t slot, std::span<float> param, std::span<const float> grad) {
    if (slot >= m_.size()) {
      m_.resize(slot + 1);
      v_.resize(slot + 1);
    }
    auto& m = m_[slot];
    auto& v = v_[slot];
    if (m.size() != param.size()) {
      m.assign(param.size(), 0.0);
      v.assign(param.size(), 0.0);
    }
    const double c1 = 1.0 - std::pow(opt_.beta1, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(opt_.beta2, static_cast<double>(t_));
    for (std::size_t i = 0; i < param.size(); ++i) {
      const double g = grad[i];
      m[i] = opt_.beta1 * m[i] + (1.0 - opt_.beta1) * g;
      v[i] = opt_.beta2 * v[i] + (1.0 - opt_.beta2) * g * g;
      param[i] -= static_cast<float>(opt_.learning_rate * (m[i] / c1) / (std::sqrt(v[i] / c2) + opt_.epsilon));
    }
  }

 private:
  AdamOptions opt_;
  long t_ = 0;
  std::vector<std::vector<double>> m_, v_;
};

}  // namespace salcal
