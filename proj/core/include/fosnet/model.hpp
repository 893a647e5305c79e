#pragma once

#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "fosnet/fusion.hpp"
#include "fosnet/layers.hpp"

namespace fosnet {

enum class ConvKind { vanilla, partial };

const char* conv_kind_name(ConvKind kind);
ConvKind conv_kind_from_string(const std::string& s);

// Backbone geometry: a stack of kernel x kernel conv -> BN -> ReLU blocks
// over square images, downsampling by each block's stride.
struct BackboneSpec {
    std::size_t input_hw = 32;
    std::size_t in_channels = 3;
    std::vector<std::pair<std::size_t, std::size_t>> blocks = {{16, 2}, {32, 2}, {64, 2}};
    std::size_t kernel = 3;
    std::size_t pad = 1;
    ConvKind conv_kind = ConvKind::vanilla;
    HeadForm head = HeadForm::conv1x1_gap;

    void validate() const;
    // Square output extent after block `i` (0-based); block_hw(blocks.size()-1)
    // is the grid the head sees.
    std::size_t block_hw(std::size_t i) const;
    std::size_t grid_hw() const;
    std::size_t feature_dim() const { return blocks.back().first; }
};

template <typename T>
struct ParamRefT {
    std::string name;
    ParamT<T>* param;
};

template <typename T>
struct StateRefT {
    std::string name;
    TensorT<T>* tensor;
};

template <typename T>
struct ConvBlockT {
    ConvParamsT<T> conv;
    BNParamsT<T> bn;
    PartialConvPlanT<T> plan;
};

template <typename T>
struct BackboneT {
    BackboneSpec spec;
    std::vector<ConvBlockT<T>> blocks;

    static BackboneT build(const BackboneSpec& spec, Rng& rng);
    // images [B,H,W,Cin] -> features [B,N,M,D].
    ValueT<T> features(TapeT<T>& tape, ValueT<T> images, bool training, bool frozen = false);
    void collect(const std::string& prefix, std::vector<ParamRefT<T>>& params,
                 std::vector<StateRefT<T>>& state);
};

template <typename T>
struct PlacesNetT {
    BackboneT<T> backbone;
    HeadT<T> head;

    struct Out {
        ValueT<T> features;  // [B,N,M,D]
        ValueT<T> grid;      // [B,N,M,C]
        ValueT<T> scores;    // [B,C]
    };

    static PlacesNetT build(const BackboneSpec& spec, std::size_t num_classes,
                            std::uint64_t seed);
    Out forward(TapeT<T>& tape, ValueT<T> images, bool training, bool frozen = false);
    void collect(const std::string& prefix, std::vector<ParamRefT<T>>& params,
                 std::vector<StateRefT<T>>& state);
    std::size_t num_classes() const { return head.params.out_dim(); }
};

template <typename T>
struct ObjectNetT {
    BackboneT<T> backbone;
    HeadT<T> head;

    struct Out {
        ValueT<T> feature;  // [B,D], post-GAP
        ValueT<T> scores;   // [B,C]
    };

    static ObjectNetT build(const BackboneSpec& spec, std::size_t num_classes,
                            std::uint64_t seed);
    Out forward(TapeT<T>& tape, ValueT<T> images, bool training, bool frozen = false);
    void collect(const std::string& prefix, std::vector<ParamRefT<T>>& params,
                 std::vector<StateRefT<T>>& state);
    std::size_t num_classes() const { return head.params.out_dim(); }
};

struct FosNetConfig {
    BackboneSpec places_spec;
    BackboneSpec object_spec;
    std::size_t num_scenes = 8;
    std::size_t num_objects = 6;
    bool use_fusion = false;
    FusionKind fusion_kind = FusionKind::ccg;
    FusionLevel fusion_level = FusionLevel::feature;
    bool freeze_object_net = false;
};

// Scene stream plus optional object stream with a fusion head.  Without
// fusion the classification scores are the pooled grid scores; with
// feature-level fusion a dedicated dense classifier maps the fused vector
// to scene classes, while score-level fusion emits class scores directly.
template <typename T>
struct FosNetT {
    FosNetConfig config;
    PlacesNetT<T> places_net;
    ObjectNetT<T> object_net;
    FusionParamsT<T> fusion;
    std::optional<DenseParamsT<T>> classifier;

    struct Out {
        ValueT<T> scene_scores;         // final classification scores [B,C_s]
        ValueT<T> grid;                 // [B,N,M,C_s]
        ValueT<T> scene_stream_scores;  // pooled grid scores, pre-fusion
        ValueT<T> object_scores;        // [B,C_o]; valid when fused
        ValueT<T> object_feature;       // [B,D_o]; valid when fused
        bool fused = false;
    };

    static FosNetT build(const FosNetConfig& config, std::uint64_t seed);
    Out forward(TapeT<T>& tape, ValueT<T> images, bool training);
    std::vector<ParamRefT<T>> params();
    std::vector<StateRefT<T>> state();
    std::size_t param_count();
};

// Min-max normalized per-class score plane for rendering.  A flat plane has
// no range to normalize over; it maps to all 0.5 with `degenerate` set.
template <typename T>
struct CamExportT {
    TensorT<T> heatmap;  // [N,M], values in [0,1]
    T raw_min = T(0);
    T raw_max = T(0);
    bool degenerate = false;
};

// Accepts a grid of shape [N,M,C] or [1,N,M,C].
template <typename T>
CamExportT<T> export_cam_grid(const TensorT<T>& grid, std::size_t class_idx);

using Backbone = BackboneT<double>;
using PlacesNet = PlacesNetT<double>;
using ObjectNet = ObjectNetT<double>;
using FosNet = FosNetT<double>;

}  // namespace fosnet
