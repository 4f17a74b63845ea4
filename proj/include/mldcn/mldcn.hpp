#pragma once

// Umbrella header.

#include "mldcn/analysis.hpp"
#include "mldcn/block_gradcheck.hpp"
#include "mldcn/blocks.hpp"
#include "mldcn/checkpoint.hpp"
#include "mldcn/config.hpp"
#include "mldcn/data.hpp"
#include "mldcn/error.hpp"
#include "mldcn/gradcheck.hpp"
#include "mldcn/matrix.hpp"
#include "mldcn/metrics.hpp"
#include "mldcn/ops.hpp"
#include "mldcn/random.hpp"
#include "mldcn/sweep.hpp"
#include "mldcn/tape.hpp"
#include "mldcn/train.hpp"
