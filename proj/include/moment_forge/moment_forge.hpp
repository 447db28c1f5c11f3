#pragma once

#include "error.hpp"
#include "numerics.hpp"
#include "random.hpp"
#include "gaussian_core.hpp"
#include "bump_model.hpp"
#include "ode_flow.hpp"
#include "network_export.hpp"
#include "pushforward_dist.hpp"
#include "stat_verify.hpp"
#include "sq_harness.hpp"
#include "serialization.hpp"
