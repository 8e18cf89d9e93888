/**
 * @file mvlq.hpp
 * @brief Umbrella header for the library (everything except the command line).
 */

#pragma once

#include "mvlq/checks.hpp"
#include "mvlq/core.hpp"
#include "mvlq/io.hpp"
#include "mvlq/lq_model.hpp"
#include "mvlq/measure.hpp"
#include "mvlq/policy.hpp"
#include "mvlq/riccati.hpp"
#include "mvlq/rng.hpp"
#include "mvlq/simulator.hpp"
#include "mvlq/verify.hpp"
