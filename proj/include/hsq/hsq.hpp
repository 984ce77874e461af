#pragma once

// Umbrella header: the full library in one include.

#include "hsq/ablate.hpp"
#include "hsq/attention.hpp"
#include "hsq/autodiff.hpp"
#include "hsq/csm.hpp"
#include "hsq/errors.hpp"
#include "hsq/gradcheck.hpp"
#include "hsq/matrix.hpp"
#include "hsq/metrics.hpp"
#include "hsq/model.hpp"
#include "hsq/moe.hpp"
#include "hsq/parallel.hpp"
#include "hsq/projector.hpp"
#include "hsq/pyramid.hpp"
#include "hsq/rng.hpp"
#include "hsq/runconfig.hpp"
