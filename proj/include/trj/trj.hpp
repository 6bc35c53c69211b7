// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "trj/error.hpp"
#include "trj/log.hpp"
#include "trj/rng.hpp"
#include "trj/trajectory.hpp"
#include "trj/binary_io.hpp"
#include "trj/pose_io.hpp"
#include "trj/autodiff.hpp"
#include "trj/parameters.hpp"
#include "trj/gradient_check.hpp"
#include "trj/programs.hpp"
#include "trj/augmentation.hpp"
#include "trj/tvae.hpp"
#include "trj/approximator.hpp"
#include "trj/task_losses.hpp"
#include "trj/embedding.hpp"
#include "trj/metrics.hpp"
#include "trj/classifier.hpp"
#include "trj/features.hpp"
#include "trj/sweep.hpp"
#include "trj/synthetic.hpp"
#include "trj/experiment.hpp"
