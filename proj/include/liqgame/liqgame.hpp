#pragma once

#include "liqgame/distribution.hpp"
#include "liqgame/equilibrium.hpp"
#include "liqgame/grid.hpp"
#include "liqgame/kernels.hpp"
#include "liqgame/oracle.hpp"
#include "liqgame/params.hpp"
#include "liqgame/paths.hpp"
#include "liqgame/riccati.hpp"
#include "liqgame/scenario.hpp"
