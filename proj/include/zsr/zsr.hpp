#pragma once

#include "zsr/data.hpp"
#include "zsr/diagnostics.hpp"
#include "zsr/errors.hpp"
#include "zsr/losses.hpp"
#include "zsr/metrics.hpp"
#include "zsr/model.hpp"
#include "zsr/numerics/adam.hpp"
#include "zsr/numerics/gradcheck.hpp"
#include "zsr/numerics/graph.hpp"
#include "zsr/numerics/tensor.hpp"
#include "zsr/retrieval.hpp"
#include "zsr/training.hpp"
