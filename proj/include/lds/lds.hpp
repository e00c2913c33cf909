#pragma once

// Umbrella header.

#include "lds/error.hpp"
#include "lds/dense_matrix.hpp"
#include "lds/sparse_matrix.hpp"
#include "lds/rng.hpp"
#include "lds/tape.hpp"
#include "lds/graphgen.hpp"
#include "lds/gcn.hpp"
#include "lds/dynamics.hpp"
#include "lds/bilevel.hpp"
#include "lds/binio.hpp"
#include "lds/runner.hpp"
#include "lds/dataio.hpp"
#include "lds/experiment.hpp"
#include "lds/checks.hpp"
