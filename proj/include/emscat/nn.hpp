#pragma once

#include <memory>
#include <string>
#include <vector>

#include "emscat/autodiff.hpp"

namespace emscat::ad {

struct Layer {
  Index in = 0, out = 0;
  std::shared_ptr<std::vector<double>> w;  // row-major [in, out]
  std::shared_ptr<std::vector<double>> b;  // [out]
  Act act = Act::Identity;
};

// Plain affine + activation stack. Parameters are shared storage so the tape
// can bind them as leaves without copies. He-normal init for relu layers,
// Xavier-normal otherwise; biases start at zero.
struct Mlp {
  std::vector<Layer> layers;

  Index in_dim() const { return layers.empty() ? 0 : layers.front().in; }
  Index out_dim() const { return layers.empty() ? 0 : layers.back().out; }

  static Mlp init(const std::vector<Index>& dims, const std::vector<Act>& acts, Rng& rng);

  // Builds the forward graph for a [B, in_dim] batch.
  Tensor forward(Tape& tape, const Tensor& batch) const;

  std::vector<std::shared_ptr<std::vector<double>>> parameters() const;
  Index parameter_count() const;
};

Tensor mlp_forward(Tape& tape, const Mlp& net, const Tensor& batch);

struct LrSchedule {
  double base = 5e-4;
  double decay = 0.95;
  long long interval = 1000;
  double floor = 1e-5;

  double at(long long step) const;  // base * decay^(step/interval), floored
};

// Adam with bias correction over a flat list of parameter blocks.
class Adam {
 public:
  Adam() = default;
  Adam(std::vector<std::shared_ptr<std::vector<double>>> params, LrSchedule schedule,
       double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8);

  // grads[i] may be null (parameter untouched this step: moments still decay).
  void step(const std::vector<const std::vector<double>*>& grads);

  long long step_count() const { return step_count_; }
  double current_lr() const { return schedule_.at(step_count_); }
  const LrSchedule& schedule() const { return schedule_; }

  // serialization hooks for checkpoints
  const std::vector<std::vector<double>>& moments1() const { return m_; }
  const std::vector<std::vector<double>>& moments2() const { return v_; }
  void restore(std::vector<std::vector<double>> m, std::vector<std::vector<double>> v,
               long long steps);

 private:
  std::vector<std::shared_ptr<std::vector<double>>> params_;
  LrSchedule schedule_;
  double beta1_ = 0.9, beta2_ = 0.999, eps_ = 1e-8;
  long long step_count_ = 0;
  std::vector<std::vector<double>> m_, v_;
};

// Versioned binary dump of one or more networks plus optimizer state.
void save_checkpoint(const std::string& path, const std::vector<const Mlp*>& nets,
                     const Adam* adam, long long train_step);
struct Checkpoint {
  std::vector<Mlp> nets;
  std::vector<std::vector<double>> adam_m, adam_v;
  long long adam_steps = 0;
  long long train_step = 0;
};
Checkpoint load_checkpoint(const std::string& path);

}  // namespace emscat::ad
