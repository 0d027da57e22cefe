#pragma once

#include "hbplate/adaptive_driver.hpp"
#include "hbplate/benchmarks.hpp"
#include "hbplate/error_estimation.hpp"
#include "hbplate/errors.hpp"
#include "hbplate/geometry.hpp"
#include "hbplate/hb_space.hpp"
#include "hbplate/plate_assembly.hpp"
#include "hbplate/plate_problem.hpp"
#include "hbplate/quadrature.hpp"
#include "hbplate/records_io.hpp"
#include "hbplate/spline_core.hpp"
