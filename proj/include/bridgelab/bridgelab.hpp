#ifndef BRIDGELAB_BRIDGELAB_HPP
#define BRIDGELAB_BRIDGELAB_HPP

#include "grid.hpp"
#include "rng.hpp"
#include "threads.hpp"
#include "kernels.hpp"
#include "solver.hpp"
#include "flow.hpp"
#include "diagnostics.hpp"
#include "experiments.hpp"
#include "io.hpp"

#endif
