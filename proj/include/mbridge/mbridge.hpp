#pragma once

#include "mbridge/certify.hpp"
#include "mbridge/dynamics.hpp"
#include "mbridge/errors.hpp"
#include "mbridge/filtering.hpp"
#include "mbridge/gaussian.hpp"
#include "mbridge/io.hpp"
#include "mbridge/measures.hpp"
#include "mbridge/msb_solver.hpp"
#include "mbridge/threepoint.hpp"
