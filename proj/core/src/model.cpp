#include "fosnet/model.hpp"

#include <algorithm>

#include "fosnet/errors.hpp"

namespace fosnet {

const char* conv_kind_name(ConvKind kind) {
    return kind == ConvKind::vanilla ? "vanilla" : "partial";
}

ConvKind conv_kind_from_string(const std::string& s) {
    if (s == "vanilla") return ConvKind::vanilla;
    if (s == "partial") return ConvKind::partial;
    throw ConfigError("unknown conv kind \"" + s + "\"; expected vanilla or partial");
}

void BackboneSpec::validate() const {
    if (input_hw < 1 || in_channels < 1) throw ConfigError("backbone needs a non-empty input");
    if (blocks.empty()) throw ConfigError("backbone needs at least one block");
    if (kernel % 2 == 0) throw ConfigError("backbone kernel extent must be odd");
    std::size_t hw = input_hw;
    std::size_t stride_product = 1;
    for (const auto& [channels, stride] : blocks) {
        if (channels < 1 || stride < 1) throw ConfigError("block channels and stride must be >= 1");
        if (hw + 2 * pad < kernel)
            throw ConfigError("backbone shrinks below the kernel size before the last block");
        hw = (hw + 2 * pad - kernel) / stride + 1;
        stride_product *= stride;
    }
    if (hw < 1) throw ConfigError("backbone produces an empty grid");
    if (2 * pad + 1 == kernel && input_hw % stride_product != 0)
        throw ConfigError("input extent " + std::to_string(input_hw) +
                          " is not divisible by the stride product " +
                          std::to_string(stride_product));
}

std::size_t BackboneSpec::block_hw(std::size_t i) const {
    std::size_t hw = input_hw;
    for (std::size_t b = 0; b <= i; ++b) hw = (hw + 2 * pad - kernel) / blocks[b].second + 1;
    return hw;
}

std::size_t BackboneSpec::grid_hw() const { return block_hw(blocks.size() - 1); }

template <typename T>
BackboneT<T> BackboneT<T>::build(const BackboneSpec& spec, Rng& rng) {
    spec.validate();
    BackboneT<T> net;
    net.spec = spec;
    std::size_t cin = spec.in_channels;
    std::size_t hw = spec.input_hw;
    for (const auto& [channels, stride] : spec.blocks) {
        ConvBlockT<T> block;
        block.conv =
            ConvParamsT<T>::he_init(rng, spec.kernel, spec.kernel, cin, channels, stride, spec.pad);
        block.bn = BNParamsT<T>::identity_init(channels);
        if (spec.conv_kind == ConvKind::partial)
            block.plan = build_partial_plan(hw, hw, block.conv);
        net.blocks.push_back(std::move(block));
        cin = channels;
        hw = (hw + 2 * spec.pad - spec.kernel) / stride + 1;
    }
    return net;
}

template <typename T>
ValueT<T> BackboneT<T>::features(TapeT<T>& tape, ValueT<T> images, bool training, bool frozen) {
    const TensorT<T>& img = images.value();
    if (img.rank() != 4 || img.extent(1) != spec.input_hw || img.extent(2) != spec.input_hw ||
        img.extent(3) != spec.in_channels)
        throw ShapeError("backbone expects [B," + std::to_string(spec.input_hw) + "," +
                         std::to_string(spec.input_hw) + "," + std::to_string(spec.in_channels) +
                         "] images, got " + shape_str(img.shape()));
    ValueT<T> x = images;
    for (auto& block : blocks) {
        x = spec.conv_kind == ConvKind::partial
                ? partial_conv2d(tape, x, block.conv, block.plan, frozen)
                : conv2d_zero_pad(tape, x, block.conv, frozen);
        x = batch_norm(tape, x, block.bn, training, frozen);
        x = relu(x);
    }
    return x;
}

template <typename T>
void BackboneT<T>::collect(const std::string& prefix, std::vector<ParamRefT<T>>& params,
                           std::vector<StateRefT<T>>& state) {
    for (std::size_t i = 0; i < blocks.size(); ++i) {
        const std::string p = prefix + ".block" + std::to_string(i);
        params.push_back({p + ".conv.w", &blocks[i].conv.w});
        params.push_back({p + ".conv.b", &blocks[i].conv.b});
        params.push_back({p + ".bn.gamma", &blocks[i].bn.gamma});
        params.push_back({p + ".bn.beta", &blocks[i].bn.beta});
        state.push_back({p + ".bn.running_mean", &blocks[i].bn.running_mean});
        state.push_back({p + ".bn.running_var", &blocks[i].bn.running_var});
    }
}

namespace {

template <typename T>
HeadT<T> build_head(Rng& rng, std::size_t num_classes, std::size_t feature_dim, HeadForm form) {
    return HeadT<T>{DenseParamsT<T>::he_init(rng, num_classes, feature_dim), form};
}

template <typename T>
void collect_head(HeadT<T>& h, const std::string& prefix, std::vector<ParamRefT<T>>& params) {
    params.push_back({prefix + ".w", &h.params.w});
    params.push_back({prefix + ".b", &h.params.b});
}

}  // namespace

template <typename T>
PlacesNetT<T> PlacesNetT<T>::build(const BackboneSpec& spec, std::size_t num_classes,
                                   std::uint64_t seed) {
    if (num_classes < 2) throw ConfigError("scene stream needs at least 2 classes");
    Rng rng(seed);
    PlacesNetT<T> net;
    net.backbone = BackboneT<T>::build(spec, rng);
    net.head = build_head<T>(rng, num_classes, spec.feature_dim(), spec.head);
    return net;
}

template <typename T>
typename PlacesNetT<T>::Out PlacesNetT<T>::forward(TapeT<T>& tape, ValueT<T> images,
                                                   bool training, bool frozen) {
    Out out;
    out.features = backbone.features(tape, images, training, frozen);
    out.grid = conv1x1_head(tape, out.features, head.params, frozen);
    out.scores = head.form == HeadForm::conv1x1_gap
                     ? global_avg_pool(out.grid)
                     : gap_fc_scores(tape, out.features, head.params, frozen);
    return out;
}

template <typename T>
void PlacesNetT<T>::collect(const std::string& prefix, std::vector<ParamRefT<T>>& params,
                            std::vector<StateRefT<T>>& state) {
    backbone.collect(prefix, params, state);
    collect_head(head, prefix + ".head", params);
}

template <typename T>
ObjectNetT<T> ObjectNetT<T>::build(const BackboneSpec& spec, std::size_t num_classes,
                                   std::uint64_t seed) {
    if (num_classes < 1) throw ConfigError("object stream needs at least 1 class");
    Rng rng(seed);
    ObjectNetT<T> net;
    net.backbone = BackboneT<T>::build(spec, rng);
    net.head = build_head<T>(rng, num_classes, spec.feature_dim(), spec.head);
    return net;
}

template <typename T>
typename ObjectNetT<T>::Out ObjectNetT<T>::forward(TapeT<T>& tape, ValueT<T> images,
                                                   bool training, bool frozen) {
    Out out;
    ValueT<T> feat = backbone.features(tape, images, training, frozen);
    out.feature = global_avg_pool(feat);
    out.scores = head.form == HeadForm::conv1x1_gap
                     ? global_avg_pool(conv1x1_head(tape, feat, head.params, frozen))
                     : add_bias(linear(out.feature, tape.param(head.params.w, frozen)),
                                tape.param(head.params.b, frozen));
    return out;
}

template <typename T>
void ObjectNetT<T>::collect(const std::string& prefix, std::vector<ParamRefT<T>>& params,
                            std::vector<StateRefT<T>>& state) {
    backbone.collect(prefix, params, state);
    collect_head(head, prefix + ".head", params);
}

template <typename T>
FosNetT<T> FosNetT<T>::build(const FosNetConfig& config, std::uint64_t seed) {
    FosNetT<T> net;
    net.config = config;
    net.places_net =
        PlacesNetT<T>::build(config.places_spec, config.num_scenes, mix_seed(seed, 1));
    net.object_net =
        ObjectNetT<T>::build(config.object_spec, config.num_objects, mix_seed(seed, 2));
    if (config.use_fusion) {
        const bool feature_level = config.fusion_level == FusionLevel::feature;
        const std::size_t od =
            feature_level ? config.object_spec.feature_dim() : config.num_objects;
        const std::size_t sd =
            feature_level ? config.places_spec.feature_dim() : config.num_scenes;
        Rng frng(mix_seed(seed, 3));
        net.fusion = make_fusion_params<T>(frng, config.fusion_kind, config.fusion_level, od, sd);
        if (feature_level) {
            Rng crng(mix_seed(seed, 4));
            net.classifier = DenseParamsT<T>::he_init(
                crng, config.num_scenes, fused_dim(config.fusion_kind, od, sd));
        }
    }
    return net;
}

template <typename T>
typename FosNetT<T>::Out FosNetT<T>::forward(TapeT<T>& tape, ValueT<T> images, bool training) {
    Out out;
    typename PlacesNetT<T>::Out scene = places_net.forward(tape, images, training);
    out.grid = scene.grid;
    out.scene_stream_scores = scene.scores;
    if (!config.use_fusion) {
        out.scene_scores = scene.scores;
        return out;
    }

    const bool frozen_obj = config.freeze_object_net;
    typename ObjectNetT<T>::Out object =
        object_net.forward(tape, images, training && !frozen_obj, frozen_obj);
    out.object_scores = object.scores;
    out.object_feature = object.feature;
    out.fused = true;

    FusionInputsT<T> in;
    if (config.fusion_level == FusionLevel::feature) {
        in.object_vec = object.feature;
        in.scene_vec = global_avg_pool(scene.features);
        ValueT<T> fused = fuse_at_level(tape, in, fusion, training);
        out.scene_scores = add_bias(linear(fused, tape.param(classifier->w)),
                                    tape.param(classifier->b));
    } else {
        in.object_vec = object.scores;
        in.scene_vec = scene.scores;
        out.scene_scores = fuse_at_level(tape, in, fusion, training);
    }
    return out;
}

template <typename T>
std::vector<ParamRefT<T>> FosNetT<T>::params() {
    std::vector<ParamRefT<T>> p;
    std::vector<StateRefT<T>> s;
    places_net.collect("places", p, s);
    if (config.use_fusion) {
        object_net.collect("object", p, s);
        if (!fusion.w1.w.value.empty()) {
            p.push_back({"fusion.w1.w", &fusion.w1.w});
            if (!fusion.w1.b.value.empty()) p.push_back({"fusion.w1.b", &fusion.w1.b});
        }
        if (fusion.w2) {
            p.push_back({"fusion.w2.w", &fusion.w2->w});
            p.push_back({"fusion.w2.b", &fusion.w2->b});
        }
        if (fusion.bn) {
            p.push_back({"fusion.bn.gamma", &fusion.bn->gamma});
            p.push_back({"fusion.bn.beta", &fusion.bn->beta});
        }
        if (classifier) {
            p.push_back({"classifier.w", &classifier->w});
            p.push_back({"classifier.b", &classifier->b});
        }
    }
    return p;
}

template <typename T>
std::vector<StateRefT<T>> FosNetT<T>::state() {
    std::vector<ParamRefT<T>> p;
    std::vector<StateRefT<T>> s;
    places_net.collect("places", p, s);
    if (config.use_fusion) {
        object_net.collect("object", p, s);
        if (fusion.bn) {
            s.push_back({"fusion.bn.running_mean", &fusion.bn->running_mean});
            s.push_back({"fusion.bn.running_var", &fusion.bn->running_var});
        }
    }
    return s;
}

template <typename T>
std::size_t FosNetT<T>::param_count() {
    std::size_t n = 0;
    for (const auto& ref : params()) n += ref.param->value.numel();
    return n;
}

template <typename T>
CamExportT<T> export_cam_grid(const TensorT<T>& grid, std::size_t class_idx) {
    TensorT<T> g = grid;
    if (g.rank() == 4) {
        if (g.extent(0) != 1)
            throw ShapeError("export_cam_grid: batched grid must have batch 1, got " +
                             shape_str(g.shape()));
        g = TensorT<T>({g.extent(1), g.extent(2), g.extent(3)}, g.vec());
    }
    if (g.rank() != 3)
        throw ShapeError("export_cam_grid: expected [N,M,C] grid, got " +
                         shape_str(grid.shape()));
    const std::size_t N = g.extent(0), M = g.extent(1), C = g.extent(2);
    if (class_idx >= C)
        throw ShapeError("export_cam_grid: class index " + std::to_string(class_idx) +
                         " out of range for " + std::to_string(C) + " classes");

    CamExportT<T> cam;
    cam.heatmap = TensorT<T>({N, M});
    for (std::size_t n = 0; n < N; ++n)
        for (std::size_t m = 0; m < M; ++m) cam.heatmap(n, m) = g(n, m, class_idx);
    const auto [lo, hi] = std::minmax_element(cam.heatmap.data(),
                                              cam.heatmap.data() + cam.heatmap.numel());
    cam.raw_min = *lo;
    cam.raw_max = *hi;
    if (cam.raw_min == cam.raw_max) {
        cam.degenerate = true;
        cam.heatmap.fill(T(0.5));
    } else {
        const T range = cam.raw_max - cam.raw_min;
        for (std::size_t i = 0; i < cam.heatmap.numel(); ++i)
            cam.heatmap[i] = (cam.heatmap[i] - cam.raw_min) / range;
    }
    return cam;
}

#define FOSNET_INSTANTIATE_MODEL(T)                                      \
    template struct BackboneT<T>;                                        \
    template struct PlacesNetT<T>;                                       \
    template struct ObjectNetT<T>;                                       \
    template struct FosNetT<T>;                                          \
    template CamExportT<T> export_cam_grid<T>(const TensorT<T>&, std::size_t);

FOSNET_INSTANTIATE_MODEL(float)
FOSNET_INSTANTIATE_MODEL(double)

#undef FOSNET_INSTANTIATE_MODEL

}  // namespace fosnet
