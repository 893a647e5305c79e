#pragma once

#include <cstddef>

#include "fosnet/ops.hpp"
#include "fosnet/rng.hpp"
#include "fosnet/tape.hpp"

namespace fosnet {

// 2-d convolution parameters, weights laid out [kh, kw, Cin, Cout].
// Kernels must be odd in both extents (symmetric padding assumption).
template <typename T>
struct ConvParamsT {
    ParamT<T> w;
    ParamT<T> b;
    std::size_t stride = 1;
    std::size_t pad = 0;

    static ConvParamsT he_init(Rng& rng, std::size_t kh, std::size_t kw, std::size_t cin,
                               std::size_t cout, std::size_t stride, std::size_t pad);

    std::size_t kh() const { return w.value.extent(0); }
    std::size_t kw() const { return w.value.extent(1); }
    std::size_t cin() const { return w.value.extent(2); }
    std::size_t cout() const { return w.value.extent(3); }
};

// Dense layer parameters: weights [C, D], bias [C].
template <typename T>
struct DenseParamsT {
    ParamT<T> w;
    ParamT<T> b;

    static DenseParamsT he_init(Rng& rng, std::size_t out_dim, std::size_t in_dim);

    std::size_t out_dim() const { return w.value.extent(0); }
    std::size_t in_dim() const { return w.value.extent(1); }
};

// Batch-normalization state for one channel axis of width D.
template <typename T>
struct BNParamsT {
    ParamT<T> gamma;
    ParamT<T> beta;
    TensorT<T> running_mean;
    TensorT<T> running_var;
    T momentum = T(0.1);
    T eps = T(1e-5);

    static BNParamsT identity_init(std::size_t dim, T momentum = T(0.1), T eps = T(1e-5));
};

// Precomputed boundary-scaling mask for one partial-convolution geometry.
// scale[n,m] = window_size / (window_size - padded cells under that window),
// computed from integer counts so the stored value is the correctly rounded
// quotient of two small integers.  pad_indicator marks the zero-padded
// positions of the padded input (1 = padding, 0 = real data).
template <typename T>
struct PartialConvPlanT {
    TensorT<T> scale;
    TensorT<T> pad_indicator;
    std::size_t in_h = 0;
    std::size_t in_w = 0;
    std::size_t kh = 0;
    std::size_t kw = 0;
    std::size_t stride = 1;
    std::size_t pad = 0;
};

template <typename T>
PartialConvPlanT<T> build_partial_plan(std::size_t in_h, std::size_t in_w,
                                       const ConvParamsT<T>& p);

// Zero-padded convolution of x [B,H,W,Cin] with p; output [B,Ho,Wo,Cout].
template <typename T>
ValueT<T> conv2d_zero_pad(TapeT<T>& tape, ValueT<T> x, ConvParamsT<T>& p, bool frozen = false);

// Partial convolution: boundary outputs rescaled by plan.scale, bias added
// after scaling.  The plan must have been built for this exact geometry.
template <typename T>
ValueT<T> partial_conv2d(TapeT<T>& tape, ValueT<T> x, ConvParamsT<T>& p,
                         const PartialConvPlanT<T>& plan, bool frozen = false);

// Per-cell class scores: x [B,N,M,D] -> [B,N,M,C] via a 1x1 convolution
// sharing dense-layer parameter storage.
template <typename T>
ValueT<T> conv1x1_head(TapeT<T>& tape, ValueT<T> x, DenseParamsT<T>& d, bool frozen = false);

// Classic head: FC(GAP(x)) -> [B,C].
template <typename T>
ValueT<T> gap_fc_scores(TapeT<T>& tape, ValueT<T> x, DenseParamsT<T>& d, bool frozen = false);

// Batch normalization over the trailing channel axis.  Training mode
// computes batch statistics (batch size >= 2 required) and folds them into
// the running estimates; inference mode uses the running estimates.
template <typename T>
ValueT<T> batch_norm(TapeT<T>& tape, ValueT<T> x, BNParamsT<T>& p, bool training,
                     bool frozen = false);

// A classifier head that can run in either of its two equivalent forms.
enum class HeadForm { gap_fc, conv1x1_gap };

const char* head_form_name(HeadForm form);

template <typename T>
struct HeadT {
    DenseParamsT<T> params;
    HeadForm form = HeadForm::gap_fc;
};

// Switches the head between its FC-over-GAP and 1x1-conv-then-GAP forms in
// place; both forms read the same parameter storage and produce identical
// class scores.
template <typename T>
HeadT<T>& convert_head(HeadT<T>& h);

// Pooled class scores [B,C] through whichever form the head is in.
template <typename T>
ValueT<T> head_scores(TapeT<T>& tape, ValueT<T> x, HeadT<T>& h, bool frozen = false);

using ConvParams = ConvParamsT<double>;
using DenseParams = DenseParamsT<double>;
using BNParams = BNParamsT<double>;
using PartialConvPlan = PartialConvPlanT<double>;
using Head = HeadT<double>;

}  // namespace fosnet
