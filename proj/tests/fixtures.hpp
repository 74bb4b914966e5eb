#pragma once

#include "fluxctl/fba.hpp"
#include "fluxctl/surrogate.hpp"

namespace fluxctl::fixtures {

inline const MetabolicNetwork& canonical_net() {
  static const MetabolicNetwork net = build_canonical_network();
  return net;
}

inline const Dataset& canonical_dataset() {
  static const Dataset ds = build_dataset(canonical_net(), GridSpec::uniform(), false);
  return ds;
}

/// Default-configuration surrogate, trained once per test binary.
inline const FitResult& canonical_fit() {
  static const FitResult fit = fit_surrogate(canonical_dataset(), SplitSpec{}, TrainConfig{});
  return fit;
}

inline const SurrogateModel& canonical_model() { return canonical_fit().model; }

}  // namespace fluxctl::fixtures
