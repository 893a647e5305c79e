#include "fosnet/layers.hpp"

#include <cmath>
#include <string>

#include "fosnet/errors.hpp"

namespace fosnet {

namespace {

template <typename T>
ParamT<T> he_normal(Rng& rng, Shape shape, std::size_t fan_in) {
    const T std = std::sqrt(T(2) / static_cast<T>(fan_in));
    TensorT<T> w(std::move(shape));
    for (std::size_t i = 0; i < w.numel(); ++i)
        w[i] = static_cast<T>(rng.normal(0.0, static_cast<double>(std)));
    return ParamT<T>{std::move(w), {}, {}, true};
}

}  // namespace

template <typename T>
ConvParamsT<T> ConvParamsT<T>::he_init(Rng& rng, std::size_t kh, std::size_t kw, std::size_t cin,
                                       std::size_t cout, std::size_t stride, std::size_t pad) {
    if (kh % 2 == 0 || kw % 2 == 0)
        throw ConfigError("conv kernel extents must be odd, got " + std::to_string(kh) + "x" +
                          std::to_string(kw));
    if (cin < 1 || cout < 1 || stride < 1)
        throw ConfigError("conv needs cin, cout, stride >= 1");
    ConvParamsT<T> p;
    p.w = he_normal<T>(rng, {kh, kw, cin, cout}, kh * kw * cin);
    p.b = ParamT<T>{TensorT<T>({cout}), {}, {}, true};
    p.stride = stride;
    p.pad = pad;
    return p;
}

template <typename T>
DenseParamsT<T> DenseParamsT<T>::he_init(Rng& rng, std::size_t out_dim, std::size_t in_dim) {
    if (out_dim < 1 || in_dim < 1) throw ConfigError("dense layer needs positive dimensions");
    DenseParamsT<T> d;
    d.w = he_normal<T>(rng, {out_dim, in_dim}, in_dim);
    d.b = ParamT<T>{TensorT<T>({out_dim}), {}, {}, true};
    return d;
}

template <typename T>
BNParamsT<T> BNParamsT<T>::identity_init(std::size_t dim, T momentum, T eps) {
    if (dim < 1) throw ConfigError("batch norm needs a positive channel count");
    if (!(momentum > T(0) && momentum < T(1)))
        throw ConfigError("batch norm momentum must lie in (0,1)");
    if (!(eps > T(0))) throw ConfigError("batch norm epsilon must be positive");
    BNParamsT<T> p;
    p.gamma = ParamT<T>{TensorT<T>::ones({dim}), {}, {}, true};
    p.beta = ParamT<T>{TensorT<T>({dim}), {}, {}, true};
    p.running_mean = TensorT<T>({dim});
    p.running_var = TensorT<T>::ones({dim});
    p.momentum = momentum;
    p.eps = eps;
    return p;
}

template <typename T>
PartialConvPlanT<T> build_partial_plan(std::size_t in_h, std::size_t in_w,
                                       const ConvParamsT<T>& p) {
    const std::size_t kh = p.kh(), kw = p.kw(), pad = p.pad, stride = p.stride;
    if (in_h + 2 * pad < kh || in_w + 2 * pad < kw)
        throw ShapeError("partial plan: kernel " + std::to_string(kh) + "x" + std::to_string(kw) +
                         " larger than padded " + std::to_string(in_h) + "x" +
                         std::to_string(in_w) + " input");
    const std::size_t ph = in_h + 2 * pad, pw = in_w + 2 * pad;
    const std::size_t out_h = (ph - kh) / stride + 1;
    const std::size_t out_w = (pw - kw) / stride + 1;

    PartialConvPlanT<T> plan;
    plan.in_h = in_h;
    plan.in_w = in_w;
    plan.kh = kh;
    plan.kw = kw;
    plan.stride = stride;
    plan.pad = pad;

    plan.pad_indicator = TensorT<T>({ph, pw});
    for (std::size_t i = 0; i < ph; ++i)
        for (std::size_t j = 0; j < pw; ++j)
            if (i < pad || i >= pad + in_h || j < pad || j >= pad + in_w)
                plan.pad_indicator(i, j) = T(1);

    const std::size_t window = kh * kw;
    plan.scale = TensorT<T>({out_h, out_w});
    for (std::size_t oh = 0; oh < out_h; ++oh)
        for (std::size_t ow = 0; ow < out_w; ++ow) {
            std::size_t count = 0;
            for (std::size_t i = 0; i < kh; ++i)
                for (std::size_t j = 0; j < kw; ++j)
                    if (plan.pad_indicator(oh * stride + i, ow * stride + j) != T(0)) ++count;
            if (count == window)
                throw ShapeError("partial plan: window at output (" + std::to_string(oh) + "," +
                                 std::to_string(ow) + ") covers only padding");
            plan.scale(oh, ow) = static_cast<T>(window) / static_cast<T>(window - count);
        }
    return plan;
}

template <typename T>
ValueT<T> conv2d_zero_pad(TapeT<T>& tape, ValueT<T> x, ConvParamsT<T>& p, bool frozen) {
    return conv2d(x, tape.param(p.w, frozen), tape.param(p.b, frozen), p.stride, p.pad);
}

template <typename T>
ValueT<T> partial_conv2d(TapeT<T>& tape, ValueT<T> x, ConvParamsT<T>& p,
                         const PartialConvPlanT<T>& plan, bool frozen) {
    const TensorT<T>& tx = x.value();
    if (tx.rank() != 4)
        throw ShapeError("partial_conv2d: expected [B,H,W,C] input, got " + shape_str(tx.shape()));
    if (tx.extent(1) != plan.in_h || tx.extent(2) != plan.in_w || plan.kh != p.kh() ||
        plan.kw != p.kw() || plan.stride != p.stride || plan.pad != p.pad)
        throw ShapeError("partial_conv2d: plan built for " + std::to_string(plan.in_h) + "x" +
                         std::to_string(plan.in_w) + "/k" + std::to_string(plan.kh) + "x" +
                         std::to_string(plan.kw) + "/s" + std::to_string(plan.stride) + "/p" +
                         std::to_string(plan.pad) + " does not match this input and params");
    return partial_conv2d(x, tape.param(p.w, frozen), tape.param(p.b, frozen), p.stride, p.pad,
                          plan.scale);
}

template <typename T>
ValueT<T> conv1x1_head(TapeT<T>& tape, ValueT<T> x, DenseParamsT<T>& d, bool frozen) {
    return conv1x1(x, tape.param(d.w, frozen), tape.param(d.b, frozen));
}

template <typename T>
ValueT<T> gap_fc_scores(TapeT<T>& tape, ValueT<T> x, DenseParamsT<T>& d, bool frozen) {
    return add_bias(linear(global_avg_pool(x), tape.param(d.w, frozen)),
                    tape.param(d.b, frozen));
}

template <typename T>
ValueT<T> batch_norm(TapeT<T>& tape, ValueT<T> x, BNParamsT<T>& p, bool training, bool frozen) {
    ValueT<T> gamma = tape.param(p.gamma, frozen);
    ValueT<T> beta = tape.param(p.beta, frozen);
    if (!training) return batch_norm_eval(x, gamma, beta, p.running_mean, p.running_var, p.eps);

    BatchNormOut<T> out = batch_norm_train(x, gamma, beta, p.eps);
    const std::size_t D = p.running_mean.numel();
    for (std::size_t d = 0; d < D; ++d) {
        p.running_mean[d] =
            (T(1) - p.momentum) * p.running_mean[d] + p.momentum * out.batch_mean[d];
        p.running_var[d] = (T(1) - p.momentum) * p.running_var[d] + p.momentum * out.batch_var[d];
    }
    return out.y;
}

const char* head_form_name(HeadForm form) {
    return form == HeadForm::gap_fc ? "gap_fc" : "conv1x1_gap";
}

template <typename T>
HeadT<T>& convert_head(HeadT<T>& h) {
    h.form = h.form == HeadForm::gap_fc ? HeadForm::conv1x1_gap : HeadForm::gap_fc;
    return h;
}

template <typename T>
ValueT<T> head_scores(TapeT<T>& tape, ValueT<T> x, HeadT<T>& h, bool frozen) {
    if (h.form == HeadForm::gap_fc) return gap_fc_scores(tape, x, h.params, frozen);
    return global_avg_pool(conv1x1_head(tape, x, h.params, frozen));
}

#define FOSNET_INSTANTIATE_LAYERS(T)                                                            \
    template struct ConvParamsT<T>;                                                             \
    template struct DenseParamsT<T>;                                                            \
    template struct BNParamsT<T>;                                                               \
    template PartialConvPlanT<T> build_partial_plan<T>(std::size_t, std::size_t,                \
                                                       const ConvParamsT<T>&);                  \
    template ValueT<T> conv2d_zero_pad<T>(TapeT<T>&, ValueT<T>, ConvParamsT<T>&, bool);         \
    template ValueT<T> partial_conv2d<T>(TapeT<T>&, ValueT<T>, ConvParamsT<T>&,                 \
                                         const PartialConvPlanT<T>&, bool);                     \
    template ValueT<T> conv1x1_head<T>(TapeT<T>&, ValueT<T>, DenseParamsT<T>&, bool);           \
    template ValueT<T> gap_fc_scores<T>(TapeT<T>&, ValueT<T>, DenseParamsT<T>&, bool);          \
    template ValueT<T> batch_norm<T>(TapeT<T>&, ValueT<T>, BNParamsT<T>&, bool, bool);          \
    template HeadT<T>& convert_head<T>(HeadT<T>&);                                              \
    template ValueT<T> head_scores<T>(TapeT<T>&, ValueT<T>, HeadT<T>&, bool);

FOSNET_INSTANTIATE_LAYERS(float)
FOSNET_INSTANTIATE_LAYERS(double)

#undef FOSNET_INSTANTIATE_LAYERS

}  // namespace fosnet
