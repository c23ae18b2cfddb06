#pragma once

// Multiscale spectral generalized FEM for 2D heterogeneous diffusion:
// structured Q1 fine grid, overlapping decomposition with oversampling,
// optimal local spectral bases from a constrained mixed-formulation
// eigensolver, pasted coarse Galerkin solve, and a-posteriori error bounds.

#include "assembly.hpp"
#include "decomp.hpp"
#include "driver.hpp"
#include "gfem.hpp"
#include "grid.hpp"
#include "local_solver.hpp"
#include "local_system.hpp"
#include "oracle.hpp"
#include "solvers.hpp"
#include "validate.hpp"
