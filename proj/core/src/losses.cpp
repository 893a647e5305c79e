#include "fosnet/losses.hpp"

#include <string>

#include "fosnet/errors.hpp"

namespace fosnet {

template <typename T>
ValueT<T> scene_coherence_loss(ValueT<T> grid) {
    return scene_coherence(grid);
}

template <typename T>
void validate_one_hot(const TensorT<T>& onehot) {
    if (onehot.rank() != 1 && onehot.rank() != 2)
        throw ShapeError("one-hot labels must be [C] or [B,C], got " + shape_str(onehot.shape()));
    const std::size_t C = onehot.extent(onehot.rank() - 1);
    const std::size_t B = onehot.numel() / C;
    for (std::size_t b = 0; b < B; ++b) {
        std::size_t ones = 0;
        for (std::size_t c = 0; c < C; ++c) {
            const T v = onehot[b * C + c];
            if (v == T(1))
                ++ones;
            else if (v != T(0))
                throw ShapeError("one-hot label row " + std::to_string(b) +
                                 " contains a value that is neither 0 nor 1");
        }
        if (ones != 1)
            throw ShapeError("one-hot label row " + std::to_string(b) + " has " +
                             std::to_string(ones) + " ones, expected exactly 1");
    }
}

template <typename T>
ValueT<T> grid_cross_entropy(ValueT<T> grid, const TensorT<T>& onehot) {
    const TensorT<T>& tg = grid.value();
    if (tg.rank() != 3 && tg.rank() != 4)
        throw ShapeError("grid_cross_entropy: expected [N,M,C] or [B,N,M,C], got " +
                         shape_str(tg.shape()));
    validate_one_hot(onehot);
    const bool batched = tg.rank() == 4;
    ValueT<T> g4 = batched ? grid
                           : reshape(grid, {1, tg.extent(0), tg.extent(1), tg.extent(2)});
    TensorT<T> targets = onehot.rank() == 2 ? onehot : TensorT<T>({1, onehot.extent(0)},
                                                                  onehot.vec());
    ValueT<T> pooled = global_avg_pool(g4);
    if (pooled.value().extent(1) != targets.extent(1) ||
        pooled.value().extent(0) != targets.extent(0))
        throw ShapeError("grid_cross_entropy: labels " + shape_str(onehot.shape()) +
                         " do not match pooled scores " + shape_str(pooled.value().shape()));
    return softmax_cross_entropy(pooled, targets);
}

template <typename T>
TotalLossT<T> total_loss(ValueT<T> grid, const TensorT<T>& onehot, T gamma) {
    if (gamma < T(0))
        throw ConfigError("total_loss: gamma must be non-negative, got " +
                          std::to_string(static_cast<double>(gamma)));
    TotalLossT<T> out;
    out.classification = grid_cross_entropy(grid, onehot);
    out.coherence = scene_coherence_loss(grid);
    out.total = gamma == T(0) ? out.classification
                              : add(out.classification, scale(out.coherence, gamma));
    out.breakdown.classification = out.classification.value()[0];
    out.breakdown.coherence = out.coherence.value()[0];
    out.breakdown.total = out.breakdown.classification + gamma * out.breakdown.coherence;
    out.breakdown.gamma = gamma;
    return out;
}

#define FOSNET_INSTANTIATE_LOSSES(T)                                            \
    template ValueT<T> scene_coherence_loss<T>(ValueT<T>);                      \
    template void validate_one_hot<T>(const TensorT<T>&);                       \
    template ValueT<T> grid_cross_entropy<T>(ValueT<T>, const TensorT<T>&);     \
    template TotalLossT<T> total_loss<T>(ValueT<T>, const TensorT<T>&, T);

FOSNET_INSTANTIATE_LOSSES(float)
FOSNET_INSTANTIATE_LOSSES(double)

#undef FOSNET_INSTANTIATE_LOSSES

}  // namespace fosnet
