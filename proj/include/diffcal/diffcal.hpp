#pragma once

// Umbrella header for the diffcal library.

#include "diffcal/bench.hpp"
#include "diffcal/config.hpp"
#include "diffcal/lie.hpp"
#include "diffcal/metrics.hpp"
#include "diffcal/methods.hpp"
#include "diffcal/random.hpp"
#include "diffcal/sampler.hpp"
#include "diffcal/scene.hpp"
#include "diffcal/schedule.hpp"
#include "diffcal/surrogate.hpp"
