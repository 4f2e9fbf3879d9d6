#pragma once

#include "mempi/matrix.hpp"
#include "mempi/random.hpp"
#include "mempi/model.hpp"
#include "mempi/evaluation.hpp"
#include "mempi/schedule.hpp"
#include "mempi/solver.hpp"
#include "mempi/simulation.hpp"
#include "mempi/baselines.hpp"
#include "mempi/model_free.hpp"
#include "mempi/io.hpp"
#include "mempi/experiment.hpp"
