#include "fosnet/fusion.hpp"

#include "fosnet/errors.hpp"

namespace fosnet {

const char* fusion_kind_name(FusionKind kind) {
    switch (kind) {
        case FusionKind::sum: return "sum";
        case FusionKind::concat: return "concat";
        case FusionKind::ccm: return "ccm";
        case FusionKind::ccg: return "ccg";
        case FusionKind::ccg_bn: return "ccg_bn";
        case FusionKind::mixed_ccm_ccg: return "mixed_ccm_ccg";
    }
    throw ConfigError("unknown fusion kind value");
}

const char* fusion_level_name(FusionLevel level) {
    return level == FusionLevel::feature ? "feature" : "score";
}

FusionKind fusion_kind_from_string(const std::string& s) {
    if (s == "sum") return FusionKind::sum;
    if (s == "concat") return FusionKind::concat;
    if (s == "ccm") return FusionKind::ccm;
    if (s == "ccg") return FusionKind::ccg;
    if (s == "ccg_bn") return FusionKind::ccg_bn;
    if (s == "mixed_ccm_ccg") return FusionKind::mixed_ccm_ccg;
    throw ConfigError("unknown fusion kind \"" + s +
                      "\"; expected sum, concat, ccm, ccg, ccg_bn, or mixed_ccm_ccg");
}

FusionLevel fusion_level_from_string(const std::string& s) {
    if (s == "feature") return FusionLevel::feature;
    if (s == "score") return FusionLevel::score;
    throw ConfigError("unknown fusion level \"" + s + "\"; expected feature or score");
}

namespace {

template <typename T>
void check_vectors(const char* op, const FusionInputsT<T>& in) {
    const TensorT<T>&o = in.object_vec.value(), &s = in.scene_vec.value();
    if (o.rank() != 2 || s.rank() != 2 || o.extent(0) != s.extent(0))
        throw ShapeError(std::string(op) + ": expected [B,D] streams with equal batch, got " +
                         shape_str(o.shape()) + " and " + shape_str(s.shape()));
}

}  // namespace

template <typename T>
ValueT<T> ccm_transform(TapeT<T>& tape, ValueT<T> object_vec, DenseParamsT<T>& d, bool frozen) {
    return add_bias(linear(object_vec, tape.param(d.w, frozen)), tape.param(d.b, frozen));
}

template <typename T>
ValueT<T> ccg_fuse(TapeT<T>& tape, const FusionInputsT<T>& in, FusionParamsT<T>& p, bool frozen) {
    check_vectors("ccg_fuse", in);
    ValueT<T> gate = sigmoid(ccm_transform(tape, in.object_vec, p.w1, frozen));
    if (gate.value().extent(1) != in.scene_vec.value().extent(1))
        throw ShapeError("ccg_fuse: gate width " + std::to_string(gate.value().extent(1)) +
                         " does not match scene vector " +
                         shape_str(in.scene_vec.value().shape()));
    return mul(gate, in.scene_vec);
}

template <typename T>
ValueT<T> ccg_bn_fuse(TapeT<T>& tape, const FusionInputsT<T>& in, FusionParamsT<T>& p,
                      bool training, bool frozen) {
    check_vectors("ccg_bn_fuse", in);
    if (!p.bn) throw ConfigError("ccg_bn_fuse: fusion params carry no batch-norm state");
    ValueT<T> pre = linear(in.object_vec, tape.param(p.w1.w, frozen));
    ValueT<T> gate = sigmoid(batch_norm(tape, pre, *p.bn, training, frozen));
    if (gate.value().extent(1) != in.scene_vec.value().extent(1))
        throw ShapeError("ccg_bn_fuse: gate width " + std::to_string(gate.value().extent(1)) +
                         " does not match scene vector " +
                         shape_str(in.scene_vec.value().shape()));
    return mul(gate, in.scene_vec);
}

template <typename T>
ValueT<T> mixed_ccm_ccg(TapeT<T>& tape, const FusionInputsT<T>& in, FusionParamsT<T>& p,
                        bool frozen) {
    check_vectors("mixed_ccm_ccg", in);
    if (!p.w2) throw ConfigError("mixed_ccm_ccg: fusion params carry no scene-side transform");
    ValueT<T> gate = sigmoid(ccm_transform(tape, in.object_vec, p.w1, frozen));
    ValueT<T> scene = ccm_transform(tape, in.scene_vec, *p.w2, frozen);
    if (!gate.value().same_shape(scene.value()))
        throw ShapeError("mixed_ccm_ccg: gate " + shape_str(gate.value().shape()) +
                         " does not match remapped scene vector " +
                         shape_str(scene.value().shape()));
    return mul(gate, scene);
}

template <typename T>
ValueT<T> baseline_fuse(const FusionInputsT<T>& in, const FusionParamsT<T>& p) {
    check_vectors("baseline_fuse", in);
    if (p.kind == FusionKind::sum) {
        if (in.object_vec.value().extent(1) != in.scene_vec.value().extent(1))
            throw ShapeError("sum fusion needs equal stream widths, got " +
                             shape_str(in.object_vec.value().shape()) + " and " +
                             shape_str(in.scene_vec.value().shape()));
        return add(in.object_vec, in.scene_vec);
    }
    if (p.kind == FusionKind::concat) return concat_last(in.object_vec, in.scene_vec);
    throw ConfigError(std::string("baseline_fuse: kind ") + fusion_kind_name(p.kind) +
                      " is not a baseline");
}

template <typename T>
ValueT<T> fuse_at_level(TapeT<T>& tape, const FusionInputsT<T>& in, FusionParamsT<T>& p,
                        bool training, bool frozen) {
    check_vectors("fuse_at_level", in);
    const std::size_t od = in.object_vec.value().extent(1);
    const std::size_t sd = in.scene_vec.value().extent(1);
    if (p.level == FusionLevel::score) {
        if (p.kind == FusionKind::concat)
            throw ConfigError(
                "score-level concat would change the class count and cannot produce a valid "
                "score vector");
        if (p.kind == FusionKind::sum && od != sd)
            throw ConfigError("score-level sum needs matching class counts, got " +
                              std::to_string(od) + " object vs " + std::to_string(sd) +
                              " scene classes");
    }
    switch (p.kind) {
        case FusionKind::sum:
        case FusionKind::concat:
            return baseline_fuse(in, p);
        case FusionKind::ccm: {
            ValueT<T> pseudo = ccm_transform(tape, in.object_vec, p.w1, frozen);
            if (p.ccm_relu) pseudo = relu(pseudo);
            if (pseudo.value().extent(1) != sd)
                throw ShapeError("ccm fusion: converted width " +
                                 std::to_string(pseudo.value().extent(1)) +
                                 " does not match scene vector width " + std::to_string(sd));
            return add(pseudo, in.scene_vec);
        }
        case FusionKind::ccg:
            return ccg_fuse(tape, in, p, frozen);
        case FusionKind::ccg_bn:
            return ccg_bn_fuse(tape, in, p, training, frozen);
        case FusionKind::mixed_ccm_ccg:
            return mixed_ccm_ccg(tape, in, p, frozen);
    }
    throw ConfigError("fuse_at_level: unknown fusion kind value");
}

std::size_t fused_dim(FusionKind kind, std::size_t object_dim, std::size_t scene_dim) {
    switch (kind) {
        case FusionKind::sum:
            if (object_dim != scene_dim)
                throw ConfigError("sum fusion needs equal stream widths, got " +
                                  std::to_string(object_dim) + " and " +
                                  std::to_string(scene_dim));
            return scene_dim;
        case FusionKind::concat:
            return object_dim + scene_dim;
        case FusionKind::ccm:
        case FusionKind::ccg:
        case FusionKind::ccg_bn:
        case FusionKind::mixed_ccm_ccg:
            return scene_dim;
    }
    throw ConfigError("fused_dim: unknown fusion kind value");
}

template <typename T>
FusionParamsT<T> make_fusion_params(Rng& rng, FusionKind kind, FusionLevel level,
                                    std::size_t object_dim, std::size_t scene_dim) {
    FusionParamsT<T> p;
    p.kind = kind;
    p.level = level;
    switch (kind) {
        case FusionKind::sum:
        case FusionKind::concat:
            break;
        case FusionKind::ccm:
        case FusionKind::ccg:
            p.w1 = DenseParamsT<T>::he_init(rng, scene_dim, object_dim);
            break;
        case FusionKind::ccg_bn:
            // The gate normalizes the linear output before the sigmoid, so the shift
            // comes from the norm's beta and a separate bias would never receive a
            // gradient. Allocate the weight only.
            p.w1 = DenseParamsT<T>::he_init(rng, scene_dim, object_dim);
            p.w1.b = ParamT<T>{};
            p.bn = BNParamsT<T>::identity_init(scene_dim);
            break;
        case FusionKind::mixed_ccm_ccg:
            p.w1 = DenseParamsT<T>::he_init(rng, scene_dim, object_dim);
            p.w2 = DenseParamsT<T>::he_init(rng, scene_dim, scene_dim);
            break;
    }
    return p;
}

#define FOSNET_INSTANTIATE_FUSION(T)                                                             \
    template ValueT<T> ccm_transform<T>(TapeT<T>&, ValueT<T>, DenseParamsT<T>&, bool);           \
    template ValueT<T> ccg_fuse<T>(TapeT<T>&, const FusionInputsT<T>&, FusionParamsT<T>&, bool); \
    template ValueT<T> ccg_bn_fuse<T>(TapeT<T>&, const FusionInputsT<T>&, FusionParamsT<T>&,     \
                                      bool, bool);                                               \
    template ValueT<T> mixed_ccm_ccg<T>(TapeT<T>&, const FusionInputsT<T>&, FusionParamsT<T>&,   \
                                        bool);                                                   \
    template ValueT<T> baseline_fuse<T>(const FusionInputsT<T>&, const FusionParamsT<T>&);       \
    template ValueT<T> fuse_at_level<T>(TapeT<T>&, const FusionInputsT<T>&, FusionParamsT<T>&,   \
                                        bool, bool);                                             \
    template FusionParamsT<T> make_fusion_params<T>(Rng&, FusionKind, FusionLevel, std::size_t,  \
                                                    std::size_t);

FOSNET_INSTANTIATE_FUSION(float)
FOSNET_INSTANTIATE_FUSION(double)

#undef FOSNET_INSTANTIATE_FUSION

}  // namespace fosnet
