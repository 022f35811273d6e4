#pragma once

#include "tof/tensor.hpp"

namespace tof {

/// Exact Euclidean distance (in pixels) from every cell of an [H, W] grid to
/// the nearest cell where `feature` is nonzero. Cells are +infinity when the
/// grid has no feature cells. Separable lower-envelope algorithm, O(H*W).
Tensor euclidean_distance_to(const ByteArray& feature);

/// Same, squared; exact integers for grid inputs.
Tensor squared_distance_to(const ByteArray& feature);

}  // namespace tof
