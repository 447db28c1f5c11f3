#pragma once

#include <moment_forge/ode_flow.hpp>

namespace test_support {

/// The default m=5 build: nu 1e-4, ramps widened from 1e-6 to 1e-3.
inline const moment_forge::EvolveResult& default_build() {
    using namespace moment_forge;
    static const EvolveResult r =
        evolve(layout(reduce_rule(hermite_rule(5)), 1e-6, 1e-4), SlopeTarget::final_eps(1e-3));
    return r;
}

inline const moment_forge::BumpInstance& default_instance() { return default_build().instance; }

}  // namespace test_support
