#pragma once

// Numerical convex integration on discretized 2-D charts: corrugation stages,
// perturbed metric decomposition, adapted short embeddings, and one-sided
// isometric extensions, with the estimates of each step measured and reported.

#include "isocorr/decompose.hpp"
#include "isocorr/errors.hpp"
#include "isocorr/extend.hpp"
#include "isocorr/fields.hpp"
#include "isocorr/frames.hpp"
#include "isocorr/io.hpp"
#include "isocorr/iterate.hpp"
#include "isocorr/mollify.hpp"
#include "isocorr/runner.hpp"
#include "isocorr/stage.hpp"
#include "isocorr/verify.hpp"
