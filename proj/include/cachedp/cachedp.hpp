#pragma once

#include "cachedp/config.hpp"
#include "cachedp/experiments.hpp"
#include "cachedp/model.hpp"
#include "cachedp/policies.hpp"
#include "cachedp/sampling.hpp"
#include "cachedp/sim.hpp"
#include "cachedp/solver.hpp"
#include "cachedp/util.hpp"
