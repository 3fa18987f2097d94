#pragma once

#include "safeopl/core.hpp"
#include "safeopl/depsue.hpp"
#include "safeopl/environment.hpp"
#include "safeopl/estimators.hpp"
#include "safeopl/evaluation.hpp"
#include "safeopl/experiment.hpp"
#include "safeopl/io.hpp"
#include "safeopl/learners.hpp"
#include "safeopl/mlp.hpp"
#include "safeopl/policy.hpp"
#include "safeopl/reward_model.hpp"
#include "safeopl/rng.hpp"
