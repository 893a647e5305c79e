#pragma once

#include <optional>
#include <string>

#include "fosnet/layers.hpp"
#include "fosnet/ops.hpp"

namespace fosnet {

enum class FusionKind { sum, concat, ccm, ccg, ccg_bn, mixed_ccm_ccg };
enum class FusionLevel { feature, score };

const char* fusion_kind_name(FusionKind kind);
const char* fusion_level_name(FusionLevel level);
FusionKind fusion_kind_from_string(const std::string& s);
FusionLevel fusion_level_from_string(const std::string& s);

// Object-stream and scene-stream vectors entering the fusion point, both
// [B,D]: pre-head features at feature level, raw class scores at score level.
template <typename T>
struct FusionInputsT {
    ValueT<T> object_vec;
    ValueT<T> scene_vec;
};

// Trainable state of one fusion head.  w1 is the gate/conversion transform
// (object dimension -> scene dimension); w2 is the scene-side remap used
// only by the mixed variant; bn is the gate-branch normalization used only
// by ccg_bn (its beta plays the role of the dropped bias).
template <typename T>
struct FusionParamsT {
    FusionKind kind = FusionKind::ccg;
    FusionLevel level = FusionLevel::feature;
    DenseParamsT<T> w1;
    std::optional<DenseParamsT<T>> w2;
    std::optional<BNParamsT<T>> bn;
    bool ccm_relu = true;
};

// Pseudo scene vector converted from the object vector: W*x + b.
template <typename T>
ValueT<T> ccm_transform(TapeT<T>& tape, ValueT<T> object_vec, DenseParamsT<T>& d,
                        bool frozen = false);

// sigmoid(W1*x_obj + b1) ⊙ x_scene.
template <typename T>
ValueT<T> ccg_fuse(TapeT<T>& tape, const FusionInputsT<T>& in, FusionParamsT<T>& p,
                   bool frozen = false);

// sigmoid(BN(W1*x_obj)) ⊙ x_scene; no bias on the gate branch.
template <typename T>
ValueT<T> ccg_bn_fuse(TapeT<T>& tape, const FusionInputsT<T>& in, FusionParamsT<T>& p,
                      bool training, bool frozen = false);

// sigmoid(W1*x_obj + b1) ⊙ (W2*x_scene + b2).
template <typename T>
ValueT<T> mixed_ccm_ccg(TapeT<T>& tape, const FusionInputsT<T>& in, FusionParamsT<T>& p,
                        bool frozen = false);

// Elementwise sum (equal dimensions required) or concatenation.
template <typename T>
ValueT<T> baseline_fuse(const FusionInputsT<T>& in, const FusionParamsT<T>& p);

// Routes to the kind-specific op after validating the level rules: at score
// level the fused vector doubles as the class-score vector, so sum requires
// equal class counts and concat is rejected outright.
template <typename T>
ValueT<T> fuse_at_level(TapeT<T>& tape, const FusionInputsT<T>& in, FusionParamsT<T>& p,
                        bool training, bool frozen = false);

// Width of the fused vector a downstream classifier would consume.
std::size_t fused_dim(FusionKind kind, std::size_t object_dim, std::size_t scene_dim);

// Freshly initialized parameters for the given kind and dimensions.  Kinds
// without trainable state (sum, concat) get an empty w1.
template <typename T>
FusionParamsT<T> make_fusion_params(Rng& rng, FusionKind kind, FusionLevel level,
                                    std::size_t object_dim, std::size_t scene_dim);

using FusionInputs = FusionInputsT<double>;
using FusionParams = FusionParamsT<double>;

}  // namespace fosnet
