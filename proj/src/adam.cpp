#include "mvcnet/adam.hpp"

#include <cmath>

#include "mvcnet/errors.hpp"

namespace mvcnet {

void adam_step(ParameterSet& params, const GradBundle& grads, AdamState& state,
               const AdamConfig& config) {
  ++state.step;
  const double c1 = 1.0 - std::pow(config.beta1, static_cast<double>(state.step));
  const double c2 = 1.0 - std::pow(config.beta2, static_cast<double>(state.step));
  for (const auto& [id, g] : grads.grads) {
    auto it = params.find(id);
    if (it == params.end()) throw ContractError("adam_step: gradient for unknown parameter '" + id + "'");
    Matrix& p = it->second;
    if (p.size() != g.size()) throw ContractError("adam_step: shape mismatch for '" + id + "'");
    auto [m_it, m_new] = state.first_moment.try_emplace(id, Vector::Zero(g.size()));
    auto [v_it, v_new] = state.second_moment.try_emplace(id, Vector::Zero(g.size()));
    Vector& m = m_it->second;
    Vector& v = v_it->second;
    m = config.beta1 * m + (1.0 - config.beta1) * g;
    v = config.beta2 * v + (1.0 - config.beta2) * g.cwiseProduct(g);
    Eigen::Map<Vector> flat(p.data(), p.size());
    flat.array() -= config.lr * (m.array() / c1) / ((v.array() / c2).sqrt() + config.eps);
  }
}

}  // namespace mvcnet
