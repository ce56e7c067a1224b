#pragma once

#include <map>
#include <string>

#include "sgmim/autodiff.hpp"
#include "sgmim/rng.hpp"

namespace sgmim {

// Named learnable tensors, ordered by name.
template <typename T>
using ParamStore = std::map<std::string, Tensor<T>>;

template <typename T>
const Tensor<T>& require_param(const ParamStore<T>& store, const std::string& name) {
  auto it = store.find(name);
  if (it == store.end()) throw IntegrityError("missing parameter tensor '" + name + "'");
  return it->second;
}

template <typename T>
Var<T> bind_param(Tape<T>& tape, const ParamStore<T>& store, const std::string& name) {
  return tape.param(name, require_param(store, name));
}

template <typename T>
Tensor<T> truncated_normal_tensor(Shape shape, double std, Rng& rng) {
  Tensor<T> t(std::move(shape));
  for (auto& v : t.data()) v = static_cast<T>(truncated_normal(rng, std));
  return t;
}

template <typename T, typename U>
ParamStore<U> cast_params(const ParamStore<T>& store) {
  ParamStore<U> out;
  for (const auto& [name, t] : store) out.emplace(name, t.template cast<U>());
  return out;
}

}  // namespace sgmim
