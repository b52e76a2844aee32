#pragma once

#include "topobda/attention.hpp"
#include "topobda/bezier.hpp"
#include "topobda/decoder.hpp"
#include "topobda/dense.hpp"
#include "topobda/error.hpp"
#include "topobda/fit.hpp"
#include "topobda/gradcheck.hpp"
#include "topobda/grid.hpp"
#include "topobda/ground_truth.hpp"
#include "topobda/losses.hpp"
#include "topobda/mask_sampling.hpp"
#include "topobda/matching.hpp"
#include "topobda/metrics.hpp"
#include "topobda/op_counter.hpp"
#include "topobda/random.hpp"
#include "topobda/scene.hpp"
