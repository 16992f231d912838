#pragma once

/// Umbrella header: differentiable strictly convex quadratic programming.

#include "diffqp/types.hpp"
#include "diffqp/version.hpp"
#include "diffqp/softplus.hpp"
#include "diffqp/linalg.hpp"
#include "diffqp/problem.hpp"
#include "diffqp/solve.hpp"
#include "diffqp/penalty.hpp"
#include "diffqp/kkt.hpp"
#include "diffqp/benchgen.hpp"
#include "diffqp/io.hpp"
