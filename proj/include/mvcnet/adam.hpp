#pragma once

#include <map>
#include <string>

#include "mvcnet/tape.hpp"

namespace mvcnet {

/// Named trainable tensors, iterated in id order.
using ParameterSet = std::map<std::string, Matrix>;

struct AdamConfig {
  double lr = 0.005;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

struct AdamState {
  long step = 0;
  std::map<std::string, Vector> first_moment;
  std::map<std::string, Vector> second_moment;
};

/// One bias-corrected Adam update. Parameters without a gradient entry are
/// left untouched.
void adam_step(ParameterSet& params, const GradBundle& grads, AdamState& state,
               const AdamConfig& config);

}  // namespace mvcnet
