#pragma once

#include "qsign/core.hpp"
#include "qsign/csv.hpp"
#include "qsign/designs.hpp"
#include "qsign/error.hpp"
#include "qsign/experiments.hpp"
#include "qsign/noise.hpp"
#include "qsign/parallel.hpp"
#include "qsign/qr_solver.hpp"
#include "qsign/random.hpp"
#include "qsign/special.hpp"
#include "qsign/stest.hpp"
