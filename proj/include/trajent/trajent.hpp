#pragma once

// Everything except the harness (which pulls in the JSON library).

#include "trajent/common.hpp"
#include "trajent/entropy.hpp"
#include "trajent/grid.hpp"
#include "trajent/network_simplex.hpp"
#include "trajent/nonlinearity.hpp"
#include "trajent/pde.hpp"
#include "trajent/rng.hpp"
#include "trajent/sde.hpp"
#include "trajent/transport.hpp"
