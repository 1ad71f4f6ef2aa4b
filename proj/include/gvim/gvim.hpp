#pragma once

#include "gvim/csv.hpp"
#include "gvim/dataset.hpp"
#include "gvim/dgp.hpp"
#include "gvim/error.hpp"
#include "gvim/estimator.hpp"
#include "gvim/experiment.hpp"
#include "gvim/learners/gbt.hpp"
#include "gvim/learners/linear.hpp"
#include "gvim/learners/model.hpp"
#include "gvim/learners/spline.hpp"
#include "gvim/metrics.hpp"
#include "gvim/parallel.hpp"
#include "gvim/rng.hpp"
#include "gvim/theorem.hpp"
