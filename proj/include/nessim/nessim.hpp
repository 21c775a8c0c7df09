#pragma once

#include "nessim/chain_model.hpp"
#include "nessim/config.hpp"
#include "nessim/ergodics.hpp"
#include "nessim/errors.hpp"
#include "nessim/experiments.hpp"
#include "nessim/hypoellipticity.hpp"
#include "nessim/linalg.hpp"
#include "nessim/linear_oracle.hpp"
#include "nessim/parallel.hpp"
#include "nessim/random.hpp"
#include "nessim/scaling_analysis.hpp"
#include "nessim/sde_dynamics.hpp"
