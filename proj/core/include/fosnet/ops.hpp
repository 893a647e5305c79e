#pragma once

#include "fosnet/tape.hpp"

namespace fosnet {

// Reverse-mode primitives. All functions record one node on the input's tape
// and throw ShapeError naming the op on mismatched inputs. Outputs are
// checked for NaN/Inf at record time (hard error).

template <typename T>
ValueT<T> add(ValueT<T> a, ValueT<T> b);
template <typename T>
ValueT<T> sub(ValueT<T> a, ValueT<T> b);
template <typename T>
ValueT<T> mul(ValueT<T> a, ValueT<T> b);
template <typename T>
ValueT<T> scale(ValueT<T> a, T k);
template <typename T>
ValueT<T> relu(ValueT<T> a);
template <typename T>
ValueT<T> sigmoid(ValueT<T> a);
template <typename T>
ValueT<T> sum(ValueT<T> a);
template <typename T>
ValueT<T> reshape(ValueT<T> a, Shape shape);
template <typename T>
ValueT<T> concat_last(ValueT<T> a, ValueT<T> b);

// x[..., D] + b[D], trailing-axis broadcast (the only broadcast supported).
template <typename T>
ValueT<T> add_bias(ValueT<T> x, ValueT<T> b);

// out[n,m] = sum_k a[n,k] * b[k,m]
template <typename T>
ValueT<T> matmul(ValueT<T> a, ValueT<T> b);

// x[B,D] * W[C,D]^T -> [B,C]
template <typename T>
ValueT<T> linear(ValueT<T> x, ValueT<T> w);

// x[B,H,W,Ci], w[kh,kw,Ci,Co], bias[Co]; zero padding of width `pad`.
template <typename T>
ValueT<T> conv2d(ValueT<T> x, ValueT<T> w, ValueT<T> bias, std::size_t stride, std::size_t pad);

// Boundary-rescaled convolution: out = scale (.) conv(x, w) + bias, with the
// bias added after scaling. `scale` is the precomputed [Ho,Wo] mask.
template <typename T>
ValueT<T> partial_conv2d(ValueT<T> x, ValueT<T> w, ValueT<T> bias, std::size_t stride,
                         std::size_t pad, const TensorT<T>& scale);

// Per-cell linear map: x[B,N,M,D], w[C,D], bias[C] -> [B,N,M,C].
template <typename T>
ValueT<T> conv1x1(ValueT<T> x, ValueT<T> w, ValueT<T> bias);

// [B,N,M,D] -> [B,D], channelwise mean over the grid.
template <typename T>
ValueT<T> global_avg_pool(ValueT<T> x);

template <typename T>
struct BatchNormOut {
    ValueT<T> y;
    TensorT<T> batch_mean;  // detached; for running-stat updates
    TensorT<T> batch_var;   // biased (1/R)
};

// Per-channel normalization over all axes except the last. Requires at least
// two rows in the reduction (batch of 1 is an error in training).
template <typename T>
BatchNormOut<T> batch_norm_train(ValueT<T> x, ValueT<T> gamma, ValueT<T> beta, T eps);

template <typename T>
ValueT<T> batch_norm_eval(ValueT<T> x, ValueT<T> gamma, ValueT<T> beta,
                          const TensorT<T>& running_mean, const TensorT<T>& running_var, T eps);

// Mean over the batch of softmax cross-entropy rows; targets are constants.
template <typename T>
ValueT<T> softmax_cross_entropy(ValueT<T> logits, const TensorT<T>& targets);

// Elementwise binary cross-entropy on logits, mean over all elements.
template <typename T>
ValueT<T> sigmoid_bce(ValueT<T> logits, const TensorT<T>& targets);

// Mean over classes (and batch) of the normalized sum of squared differences
// between vertically and horizontally adjacent grid cells. Accepts [N,M,C]
// or [B,N,M,C]; errors when the grid has no adjacent pair (N == M == 1).
template <typename T>
ValueT<T> scene_coherence(ValueT<T> grid);

}  // namespace fosnet
