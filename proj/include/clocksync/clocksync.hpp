#pragma once

#include "clocksync/errors.hpp"
#include "clocksync/clock.hpp"
#include "clocksync/gaussian.hpp"
#include "clocksync/theta.hpp"
#include "clocksync/timestamp.hpp"
#include "clocksync/brf.hpp"
#include "clocksync/graph.hpp"
#include "clocksync/gbp.hpp"
#include "clocksync/hybrid.hpp"
#include "clocksync/scenario.hpp"
#include "clocksync/monte_carlo.hpp"
#include "clocksync/io.hpp"
