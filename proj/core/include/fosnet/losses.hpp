#pragma once

#include "fosnet/ops.hpp"
#include "fosnet/tape.hpp"

namespace fosnet {

// Scalar summary of one objective evaluation, for logging.  The grand total
// always equals classification + gamma * coherence.
template <typename T>
struct LossBreakdownT {
    T classification = T(0);
    T coherence = T(0);
    T total = T(0);
    T gamma = T(0);
};

// Objective nodes still attached to the tape, plus the scalar breakdown.
// With gamma == 0 the total node is the classification node itself, so the
// coherence term is reported but never reached by backward.
template <typename T>
struct TotalLossT {
    ValueT<T> total;
    ValueT<T> classification;
    ValueT<T> coherence;
    LossBreakdownT<T> breakdown;
};

// Mean over classes of squared score differences between vertically and
// horizontally adjacent grid cells, divided by the number of adjacent pairs.
// Accepts [N,M,C] or batched [B,N,M,C] grids; a 1x1 grid has no adjacent
// pair and is rejected.
template <typename T>
ValueT<T> scene_coherence_loss(ValueT<T> grid);

// Pools the grid to per-class scores, then softmax cross-entropy against a
// one-hot label.  Accepts [N,M,C] with [C] targets or [B,N,M,C] with [B,C].
template <typename T>
ValueT<T> grid_cross_entropy(ValueT<T> grid, const TensorT<T>& onehot);

// Throws unless every row of `onehot` ([C] or [B,C]) contains exactly one 1
// and zeros elsewhere.
template <typename T>
void validate_one_hot(const TensorT<T>& onehot);

template <typename T>
TotalLossT<T> total_loss(ValueT<T> grid, const TensorT<T>& onehot, T gamma);

using LossBreakdown = LossBreakdownT<double>;
using TotalLoss = TotalLossT<double>;

}  // namespace fosnet
