#pragma once

#include "deconf/dataset.hpp"
#include "deconf/dgp.hpp"
#include "deconf/error.hpp"
#include "deconf/estimators.hpp"
#include "deconf/glm.hpp"
#include "deconf/overlap.hpp"
#include "deconf/parallel.hpp"
#include "deconf/quadrature.hpp"
#include "deconf/random.hpp"
#include "deconf/scores.hpp"

#include "deconf/harness/config.hpp"
#include "deconf/harness/csv_io.hpp"
#include "deconf/harness/overlap_curve.hpp"
#include "deconf/harness/simulation.hpp"
#include "deconf/harness/verify.hpp"
