#pragma once

#include "agcn.hpp"
#include "checkpoint.hpp"
#include "errors.hpp"
#include "hand_graph.hpp"
#include "keypoints.hpp"
#include "metrics.hpp"
#include "ops.hpp"
#include "pipeline.hpp"
#include "rng.hpp"
#include "run_config.hpp"
#include "synthetic.hpp"
#include "tensor.hpp"
