#pragma once

#include "pdegan/datasets.hpp"
#include "pdegan/dynamics.hpp"
#include "pdegan/error.hpp"
#include "pdegan/laplace.hpp"
#include "pdegan/lgan.hpp"
#include "pdegan/measure.hpp"
#include "pdegan/poincare.hpp"
#include "pdegan/seed.hpp"

namespace pdegan {

inline constexpr const char *kVersion = "0.1.0";

} // namespace pdegan
