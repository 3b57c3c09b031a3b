#pragma once

// Tree-dependent component analysis: umbrella header.

#include "tca/baselines.hpp"
#include "tca/cache.hpp"
#include "tca/core.hpp"
#include "tca/density.hpp"
#include "tca/errors.hpp"
#include "tca/gaussian.hpp"
#include "tca/kde.hpp"
#include "tca/kgv.hpp"
#include "tca/metrics.hpp"
#include "tca/optimizer.hpp"
#include "tca/random.hpp"
#include "tca/serialize.hpp"
#include "tca/synthgen.hpp"
#include "tca/tree_select.hpp"
