#pragma once

#include "ptsim/address_space.hpp"
#include "ptsim/analyzer.hpp"
#include "ptsim/errors.hpp"
#include "ptsim/experiment.hpp"
#include "ptsim/machine.hpp"
#include "ptsim/overhead.hpp"
#include "ptsim/policy.hpp"
#include "ptsim/pte.hpp"
#include "ptsim/snapshot.hpp"
#include "ptsim/socket_mask.hpp"
#include "ptsim/translation.hpp"
#include "ptsim/workload.hpp"
