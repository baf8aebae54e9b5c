#pragma once

#include "mstrace/config.hpp"
#include "mstrace/diagnostics.hpp"
#include "mstrace/draws_io.hpp"
#include "mstrace/error.hpp"
#include "mstrace/features.hpp"
#include "mstrace/forward_backward.hpp"
#include "mstrace/glm.hpp"
#include "mstrace/holdout.hpp"
#include "mstrace/metropolis.hpp"
#include "mstrace/model.hpp"
#include "mstrace/numeric.hpp"
#include "mstrace/panel.hpp"
#include "mstrace/panel_io.hpp"
#include "mstrace/parallel.hpp"
#include "mstrace/replicate.hpp"
#include "mstrace/rng.hpp"
#include "mstrace/sampler.hpp"
#include "mstrace/synthgen.hpp"
