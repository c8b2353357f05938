#pragma once

#include <functional>
#include <vector>

#include "pmil/graph.hpp"
#include "pmil/tensor.hpp"

namespace pmil {

// Compares the analytic gradient of a scalar-valued function against central
// finite differences over every coordinate of every parameter. Returns the
// maximum relative error |analytic - numeric| / (|analytic| + |numeric| + 1e-12).
//
// `f` must be deterministic and read the parameters through the shared
// buffers passed in `params`. The analytic pass runs `f` once under a
// recording graph; the numeric pass runs it in no-graph mode with coordinates
// perturbed in place.
double grad_check(const std::function<Tensor()>& f, std::vector<Tensor> params,
                  double eps);

}  // namespace pmil
