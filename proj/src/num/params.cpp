#include "hexlink/num/params.hpp"

#include <cmath>

#include "hexlink/errors.hpp"

namespace hexlink::num {

Param& ParamStore::add(const std::string& name, Tensor2 value) {
  if (contains(name)) throw ConfigError("duplicate parameter '" + name + "'");
  params_.emplace_back(name, std::move(value));
  index_[name] = params_.size() - 1;
  return params_.back();
}

Param& ParamStore::get(const std::string& name) {
  auto it = index_.find(name);
  if (it == index_.end()) throw ConfigError("unknown parameter '" + name + "'");
  return params_[it->second];
}

const Param& ParamStore::get(const std::string& name) const {
  auto it = index_.find(name);
  if (it == index_.end()) throw ConfigError("unknown parameter '" + name + "'");
  return params_[it->second];
}

std::vector<Param*> ParamStore::all() {
  std::vector<Param*> out;
  for (auto& p : params_) out.push_back(&p);
  return out;
}

std::vector<const Param*> ParamStore::all() const {
  std::vector<const Param*> out;
  for (const auto& p : params_) out.push_back(&p);
  return out;
}

std::size_t ParamStore::scalar_count() const {
  std::size_t n = 0;
  for (const auto& p : params_) n += p.value().size();
  return n;
}

void ParamStore::zero_grad() {
  for (auto& p : params_) p.zero_grad();
}

nlohmann::json ParamStore::to_json() const {
  nlohmann::json arr = nlohmann::json::array();
  for (const auto& p : params_) {
    const auto vals = p.value().values();
    arr.push_back({{"name", p.name()},
                   {"rows", p.value().rows()},
                   {"cols", p.value().cols()},
                   {"values", std::vector<double>(vals.begin(), vals.end())}});
  }
  return {{"format", kCheckpointFormat}, {"version", kCheckpointVersion}, {"params", arr}};
}

void ParamStore::load_json(const nlohmann::json& j) {
  try {
    if (j.at("format").get<std::string>() != kCheckpointFormat) throw ConfigError("not a parameter checkpoint");
    if (j.at("version").get<int>() != kCheckpointVersion) throw ConfigError("unsupported checkpoint version");
    for (const auto& e : j.at("params")) {
      Tensor2 t(e.at("rows").get<std::size_t>(), e.at("cols").get<std::size_t>(),
                e.at("values").get<std::vector<double>>());
      const auto name = e.at("name").get<std::string>();
      if (contains(name)) {
        Param& p = get(name);
        if (!p.value().same_shape(t)) {
          throw ShapeError("checkpoint shape " + t.shape_str() + " for '" + name + "' but model has " +
                           p.value().shape_str());
        }
        p.value() = std::move(t);
      } else {
        add(name, std::move(t));
      }
    }
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("malformed checkpoint: ") + e.what());
  }
}

Tensor2 init_uniform(std::size_t rows, std::size_t cols, double bound, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> dist(-bound, bound);
  Tensor2 t(rows, cols);
  for (auto& v : t.values()) v = dist(rng);
  return t;
}

Tensor2 init_glorot(std::size_t rows, std::size_t cols, std::mt19937_64& rng) {
  return init_uniform(rows, cols, std::sqrt(6.0 / static_cast<double>(rows + cols)), rng);
}

Tensor2 init_normal(std::size_t rows, std::size_t cols, double stddev, std::mt19937_64& rng) {
  std::normal_distribution<double> dist(0.0, stddev);
  Tensor2 t(rows, cols);
  for (auto& v : t.values()) v = dist(rng);
  return t;
}

}  // namespace hexlink::num
