#pragma once

#include <cstdint>
#include <deque>
#include <filesystem>
#include <map>
#include <random>
#include <string>
#include <vector>

#include "hexlink/num/tensor.hpp"

#include "json.hpp"

namespace hexlink::num {

class Param {
 public:
  Param(std::string name, Tensor2 value)
      : name_(std::move(name)), value_(std::move(value)), grad_(value_.rows(), value_.cols()) {}

  const std::string& name() const { return name_; }
  Tensor2& value() { return value_; }
  const Tensor2& value() const { return value_; }
  Tensor2& grad() { return grad_; }
  const Tensor2& grad() const { return grad_; }
  void zero_grad() { grad_.fill(0.0); }
  // Replaces the value (any shape) and resets the gradient.
  void reset(Tensor2 value) {
    value_ = std::move(value);
    grad_ = Tensor2(value_.rows(), value_.cols());
  }

  // A frozen parameter enters the tape as a constant.
  bool frozen = false;

 private:
  std::string name_;
  Tensor2 value_;
  Tensor2 grad_;
};

// Named parameters in insertion order. References stay valid for the life of
// the store.
class ParamStore {
 public:
  Param& add(const std::string& name, Tensor2 value);
  bool contains(const std::string& name) const { return index_.count(name) != 0; }
  Param& get(const std::string& name);
  const Param& get(const std::string& name) const;

  std::vector<Param*> all();
  std::vector<const Param*> all() const;
  std::size_t size() const { return index_.size(); }
  std::size_t scalar_count() const;

  void zero_grad();

  // Checkpoint body: {"format", "version", "params": [{name, rows, cols, values}]}.
  // Doubles are written in shortest round-trip form, so save/load is exact.
  nlohmann::json to_json() const;
  // Replaces values of existing parameters and adds missing ones.
  void load_json(const nlohmann::json& j);

 private:
  std::deque<Param> params_;
  std::map<std::string, std::size_t> index_;
};

inline constexpr const char* kCheckpointFormat = "hexlink-params";
inline constexpr int kCheckpointVersion = 1;

// Initializers. All draw from the given engine so that a seed fixes the model.
Tensor2 init_uniform(std::size_t rows, std::size_t cols, double bound, std::mt19937_64& rng);
// Glorot-uniform bound sqrt(6 / (rows + cols)).
Tensor2 init_glorot(std::size_t rows, std::size_t cols, std::mt19937_64& rng);
Tensor2 init_normal(std::size_t rows, std::size_t cols, double stddev, std::mt19937_64& rng);

}  // namespace hexlink::num
