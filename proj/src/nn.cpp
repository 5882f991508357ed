#include "emscat/nn.hpp"

#include <cmath>
#include <cstring>
#include <fstream>

namespace emscat::ad {

Mlp Mlp::init(const std::vector<Index>& dims, const std::vector<Act>& acts, Rng& rng) {
  if (dims.size() < 2) throw ValidationError("Mlp::init: need at least one layer");
  if (acts.size() != dims.size() - 1)
    throw ValidationError("Mlp::init: one activation per layer required");
  Mlp net;
  for (size_t l = 0; l + 1 < dims.size(); ++l) {
    Layer layer;
    layer.in = dims[l];
    layer.out = dims[l + 1];
    layer.act = acts[l];
    const double fan_in = static_cast<double>(layer.in);
    const double fan_out = static_cast<double>(layer.out);
    const double stddev = (acts[l] == Act::Relu)
                              ? std::sqrt(2.0 / fan_in)
                              : std::sqrt(2.0 / (fan_in + fan_out));
    layer.w = std::make_shared<std::vector<double>>(
        static_cast<size_t>(layer.in * layer.out));
    for (auto& v : *layer.w) v = stddev * rng.gauss();
    layer.b = std::make_shared<std::vector<double>>(static_cast<size_t>(layer.out), 0.0);
    net.layers.push_back(std::move(layer));
  }
  return net;
}

Tensor Mlp::forward(Tape& tape, const Tensor& batch) const {
  if (layers.empty()) throw ValidationError("Mlp::forward: empty network");
  if (batch.cols() != in_dim())
    throw ValidationError("Mlp::forward: batch width does not match in_dim");
  Tensor h = batch;
  for (const auto& layer : layers) {
    Tensor w = tape.leaf({layer.in, layer.out}, layer.w);
    Tensor b = tape.leaf({layer.out}, layer.b);
    h = tape.linear(h, w, b, layer.act);
  }
  return h;
}

Tensor mlp_forward(Tape& tape, const Mlp& net, const Tensor& batch) {
  return net.forward(tape, batch);
}

std::vector<std::shared_ptr<std::vector<double>>> Mlp::parameters() const {
  std::vector<std::shared_ptr<std::vector<double>>> out;
  for (const auto& l : layers) {
    out.push_back(l.w);
    out.push_back(l.b);
  }
  return out;
}

Index Mlp::parameter_count() const {
  Index n = 0;
  for (const auto& l : layers) n += l.in * l.out + l.out;
  return n;
}

double LrSchedule::at(long long step) const {
  const long long k = interval > 0 ? step / interval : 0;
  return std::max(floor, base * std::pow(decay, static_cast<double>(k)));
}

Adam::Adam(std::vector<std::shared_ptr<std::vector<double>>> params, LrSchedule schedule,
           double beta1, double beta2, double eps)
    : params_(std::move(params)),
      schedule_(schedule),
      beta1_(beta1),
      beta2_(beta2),
      eps_(eps) {
  m_.reserve(params_.size());
  v_.reserve(params_.size());
  for (const auto& p : params_) {
    m_.emplace_back(p->size(), 0.0);
    v_.emplace_back(p->size(), 0.0);
  }
}

void Adam::step(const std::vector<const std::vector<double>*>& grads) {
  if (grads.size() != params_.size())
    throw ValidationError("Adam::step: gradient list length mismatch");
  const double lr = schedule_.at(step_count_);
  ++step_count_;
  const double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(step_count_));
  const double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(step_count_));
  for (size_t i = 0; i < params_.size(); ++i) {
    auto& p = *params_[i];
    auto& m = m_[i];
    auto& v = v_[i];
    const std::vector<double>* g = grads[i];
    for (size_t j = 0; j < p.size(); ++j) {
      const double gj = g ? (*g)[j] : 0.0;
      m[j] = beta1_ * m[j] + (1.0 - beta1_) * gj;
      v[j] = beta2_ * v[j] + (1.0 - beta2_) * gj * gj;
      const double mhat = m[j] / bc1;
      const double vhat = v[j] / bc2;
      p[j] -= lr * mhat / (std::sqrt(vhat) + eps_);
    }
  }
}

void Adam::restore(std::vector<std::vector<double>> m, std::vector<std::vector<double>> v,
                   long long steps) {
  if (m.size() != params_.size() || v.size() != params_.size())
    throw ValidationError("Adam::restore: moment block count mismatch");
  m_ = std::move(m);
  v_ = std::move(v);
  step_count_ = steps;
}

namespace {

constexpr char kCheckpointMagic[8] = {'E', 'M', 'S', 'C', 'K', 'P', '0', '1'};

template <typename T>
void put(std::ostream& os, T v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}
template <typename T>
T get(std::istream& is) {
  T v{};
  is.read(reinterpret_cast<char*>(&v), sizeof(T));
  return v;
}

void put_vec(std::ostream& os, const std::vector<double>& v) {
  put<std::int64_t>(os, static_cast<std::int64_t>(v.size()));
  os.write(reinterpret_cast<const char*>(v.data()),
           static_cast<std::streamsize>(v.size() * sizeof(double)));
}
std::vector<double> get_vec(std::istream& is) {
  const auto n = get<std::int64_t>(is);
  if (n < 0) throw IoError("checkpoint: negative vector length");
  std::vector<double> v(static_cast<size_t>(n));
  is.read(reinterpret_cast<char*>(v.data()),
          static_cast<std::streamsize>(v.size() * sizeof(double)));
  return v;
}

}  // namespace

void save_checkpoint(const std::string& path, const std::vector<const Mlp*>& nets,
                     const Adam* adam, long long train_step) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("save_checkpoint: cannot open " + path);
  os.write(kCheckpointMagic, sizeof(kCheckpointMagic));
  put<std::int64_t>(os, train_step);
  put<std::int32_t>(os, static_cast<std::int32_t>(nets.size()));
  for (const Mlp* net : nets) {
    put<std::int32_t>(os, static_cast<std::int32_t>(net->layers.size()));
    for (const auto& l : net->layers) {
      put<std::int64_t>(os, l.in);
      put<std::int64_t>(os, l.out);
      put<std::int32_t>(os, static_cast<std::int32_t>(l.act));
      put_vec(os, *l.w);
      put_vec(os, *l.b);
    }
  }
  put<std::int32_t>(os, adam ? 1 : 0);
  if (adam) {
    put<std::int64_t>(os, adam->step_count());
    put<std::int32_t>(os, static_cast<std::int32_t>(adam->moments1().size()));
    for (const auto& m : adam->moments1()) put_vec(os, m);
    for (const auto& v : adam->moments2()) put_vec(os, v);
  }
  if (!os) throw IoError("save_checkpoint: write failed for " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("load_checkpoint: cannot open " + path);
  char magic[8];
  is.read(magic, sizeof(magic));
  if (!is || std::memcmp(magic, kCheckpointMagic, sizeof(magic)) != 0)
    throw IoError("load_checkpoint: bad magic in " + path);
  Checkpoint ck;
  ck.train_step = get<std::int64_t>(is);
  const auto n_nets = get<std::int32_t>(is);
  for (std::int32_t i = 0; i < n_nets; ++i) {
    Mlp net;
    const auto n_layers = get<std::int32_t>(is);
    for (std::int32_t l = 0; l < n_layers; ++l) {
      Layer layer;
      layer.in = get<std::int64_t>(is);
      layer.out = get<std::int64_t>(is);
      layer.act = static_cast<Act>(get<std::int32_t>(is));
      layer.w = std::make_shared<std::vector<double>>(get_vec(is));
      layer.b = std::make_shared<std::vector<double>>(get_vec(is));
      if (static_cast<Index>(layer.w->size()) != layer.in * layer.out ||
          static_cast<Index>(layer.b->size()) != layer.out)
        throw IoError("load_checkpoint: inconsistent layer dimensions");
      net.layers.push_back(std::move(layer));
    }
    ck.nets.push_back(std::move(net));
  }
  if (get<std::int32_t>(is) == 1) {
    ck.adam_steps = get<std::int64_t>(is);
    const auto blocks = get<std::int32_t>(is);
    for (std::int32_t i = 0; i < blocks; ++i) ck.adam_m.push_back(get_vec(is));
    for (std::int32_t i = 0; i < blocks; ++i) ck.adam_v.push_back(get_vec(is));
  }
  if (!is) throw IoError("load_checkpoint: truncated file " + path);
  return ck;
}

}  // namespace emscat::ad
