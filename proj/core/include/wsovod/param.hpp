#pragma once

#include <cmath>
#include <map>
#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

namespace wsovod {

// Named learnable tensor with a gradient accumulator of identical shape.
struct ParamTensor {
  std::string name;
  std::vector<std::size_t> shape;
  std::vector<double> values;
  std::vector<double> grad;
  std::vector<double> momentum;  // SGD velocity, persisted across steps

  ParamTensor() = default;
  ParamTensor(std::string n, std::vector<std::size_t> s)
      : name(std::move(n)), shape(std::move(s)) {
    std::size_t total = 1;
    for (auto d : shape) total *= d;
    values.assign(total, 0.0);
    grad.assign(total, 0.0);
    momentum.assign(total, 0.0);
  }

  std::size_t size() const { return values.size(); }
  void zero_grad() { std::fill(grad.begin(), grad.end(), 0.0); }

  double grad_norm() const {
    double s = 0;
    for (double g : grad) s += g * g;
    return std::sqrt(s);
  }
};

// Ordered registry of parameters; iteration order is the registration order
// so checkpoints and SGD sweeps are deterministic.
class ParamStore {
 public:
  ParamTensor& add(const std::string& name, std::vector<std::size_t> shape) {
    if (index_.count(name))
      throw std::runtime_error("duplicate parameter name: " + name);
    index_[name] = tensors_.size();
    tensors_.push_back(std::make_unique<ParamTensor>(name, std::move(shape)));
    return *tensors_.back();
  }

  ParamTensor& get(const std::string& name) {
    auto it = index_.find(name);
    if (it == index_.end()) throw std::runtime_error("no such parameter: " + name);
    return *tensors_[it->second];
  }
  const ParamTensor& get(const std::string& name) const {
    return const_cast<ParamStore*>(this)->get(name);
  }
  bool has(const std::string& name) const { return index_.count(name) != 0; }

  std::vector<ParamTensor*> all() {
    std::vector<ParamTensor*> out;
    for (auto& t : tensors_) out.push_back(t.get());
    return out;
  }

  void zero_grad() {
    for (auto& t : tensors_) t->zero_grad();
  }

 private:
  std::vector<std::unique_ptr<ParamTensor>> tensors_;
  std::map<std::string, std::size_t> index_;
};

struct SgdConfig {
  double lr = 1e-3;
  double momentum = 0.9;
  double weight_decay = 0.0;
  double lr_decay = 0.1;    // multiplier applied once at decay_step
  long decay_step = -1;     // global step index; -1 = never
};

// v <- momentum*v + g + wd*w ; w <- w - lr*v ; then zero_grad.
void sgd_step(ParamStore& params, const SgdConfig& cfg, double lr_override = -1.0);

// Checkpoint I/O: JSON {"version":1,"tensors":{name:{"shape":[...],"values":[...]}}}.
void save_checkpoint(const ParamStore& params, const std::string& path,
                     long step = 0);
// Loads into an already-shaped store; throws on missing tensor or shape mismatch.
long load_checkpoint(ParamStore& params, const std::string& path);

}  // namespace wsovod
