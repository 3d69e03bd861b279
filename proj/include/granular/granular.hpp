#pragma once

// Umbrella header for the simulation library (everything except the live
// server, which needs OpenSSL and POSIX sockets).

#include "granular/core.hpp"
#include "granular/errors.hpp"
#include "granular/frame_io.hpp"
#include "granular/hr_upsampler.hpp"
#include "granular/log.hpp"
#include "granular/lr_solver.hpp"
#include "granular/mesh.hpp"
#include "granular/mesh_io.hpp"
#include "granular/mesh_query.hpp"
#include "granular/neighbor_grid.hpp"
#include "granular/rigid.hpp"
#include "granular/rng.hpp"
#include "granular/runner.hpp"
#include "granular/sampling.hpp"
#include "granular/scene.hpp"
#include "granular/simulation.hpp"
