#pragma once

// Umbrella header for the whole library.

#include "carpe/dataio.hpp"
#include "carpe/evalbench.hpp"
#include "carpe/graphnet.hpp"
#include "carpe/init.hpp"
#include "carpe/model.hpp"
#include "carpe/ops.hpp"
#include "carpe/optim.hpp"
#include "carpe/prednet.hpp"
#include "carpe/tensor.hpp"
#include "carpe/weights.hpp"
