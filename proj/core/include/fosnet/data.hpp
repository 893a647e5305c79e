#pragma once

#include <array>
#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

#include "fosnet/rng.hpp"
#include "fosnet/tensor.hpp"

namespace fosnet {

// Recipe for the synthetic scene dataset.  Each image is a scene-wide noisy
// color texture (the scene identity is present everywhere in the image)
// plus 1-3 solid object glyphs drawn according to the object-given-scene
// placement probabilities in `cooccurrence` (objects carry scene evidence).
struct SyntheticSceneSpec {
    std::size_t num_scenes = 8;
    std::size_t num_objects = 6;
    std::size_t image_hw = 32;
    std::size_t train_per_scene = 500;
    std::size_t val_per_scene = 100;
    double noise_amplitude = 0.25;
    std::vector<std::array<double, 3>> scene_colors;
    std::vector<std::array<double, 3>> object_colors;
    // cooccurrence[o][s]: probability that object o is placed in a scene-s
    // image.  Entries are independent Bernoulli probabilities, not a
    // distribution over objects; every scene column must contain at least
    // one entry above 0.5 so the object stream has signal to exploit.
    std::vector<std::vector<double>> cooccurrence;

    static SyntheticSceneSpec defaults();
    void validate() const;
};

template <typename T>
struct SampleT {
    TensorT<T> image;  // [H,W,3], values in [0,1]
    std::size_t scene_label = 0;
    std::vector<std::uint8_t> object_multihot;
};

template <typename T>
struct DatasetT {
    SyntheticSceneSpec spec;
    std::vector<SampleT<T>> train;
    std::vector<SampleT<T>> val;
    std::array<T, 3> channel_mean{};
    std::array<T, 3> channel_std{};
};

// Deterministic per (spec, seed); every sample is generated from its own
// derived random stream, so sample i is identical no matter how many other
// samples are materialized.  Channel statistics come from the train split.
template <typename T>
DatasetT<T> generate_dataset(const SyntheticSceneSpec& spec, std::uint64_t seed);

// Image helpers; all operate on [H,W,C] tensors.
template <typename T>
TensorT<T> resize_bilinear(const TensorT<T>& img, std::size_t out_h, std::size_t out_w);
template <typename T>
TensorT<T> crop(const TensorT<T>& img, std::size_t top, std::size_t left, std::size_t size);
template <typename T>
TensorT<T> flip_horizontal(const TensorT<T>& img);
template <typename T>
TensorT<T> normalize_channels(const TensorT<T>& img, const std::array<T, 3>& mean,
                              const std::array<T, 3>& std);

struct AugmentConfig {
    bool rescale = true;  // random upscale in [1, max_scale], then random crop
    bool flip = true;     // horizontal flip with probability 0.5
    bool normalize = true;
    double max_scale = 1.25;
};

// Training-time transform: random rescale+crop, coin-flip horizontal flip,
// then channel normalization.  Labels pass through untouched.
template <typename T>
SampleT<T> augment(const SampleT<T>& s, const AugmentConfig& cfg, const std::array<T, 3>& mean,
                   const std::array<T, 3>& std, Rng& rng);

// Deterministic evaluation transform: center crop at scale 1 (identity for
// native-size images) plus normalization.
template <typename T>
SampleT<T> eval_transform(const SampleT<T>& s, const std::array<T, 3>& mean,
                          const std::array<T, 3>& std);

template <typename T>
struct BatchT {
    TensorT<T> images;           // [B,H,W,3]
    TensorT<T> scene_onehot;     // [B,C_s]
    TensorT<T> object_multihot;  // [B,num_objects]
    std::vector<std::size_t> labels;
};

// Stacks the given samples (already transformed) into batch tensors.
template <typename T>
BatchT<T> stack_samples(const std::vector<SampleT<T>>& samples, std::size_t num_scenes,
                        std::size_t num_objects);

// Class-balanced epoch sampler: each epoch draws the same number of samples
// per class (the minimum class count), shuffles within class, interleaves
// classes in random order round by round, and chops the stream into
// batches.  With batch_size a multiple of the class count every batch is
// exactly balanced; smaller batches balance per epoch only (see
// balance_within_batch).
class BalancedBatcher {
public:
    BalancedBatcher(std::vector<std::size_t> labels, std::size_t num_classes,
                    std::size_t batch_size);
    std::vector<std::vector<std::size_t>> epoch(Rng& rng) const;
    bool balance_within_batch() const { return balance_within_batch_; }
    std::size_t samples_per_epoch() const;

private:
    std::vector<std::vector<std::size_t>> by_class_;
    std::size_t batch_size_;
    bool balance_within_batch_;
};

// On-disk layout: index.json (spec, channel statistics, per-sample rows)
// plus one tensor file per image under train/ and val/.
template <typename T>
void save_dataset(const std::filesystem::path& dir, const DatasetT<T>& ds);
template <typename T>
DatasetT<T> load_dataset(const std::filesystem::path& dir);

nlohmann::json spec_to_json(const SyntheticSceneSpec& spec);
SyntheticSceneSpec spec_from_json(const nlohmann::json& j);
SyntheticSceneSpec spec_from_json_file(const std::filesystem::path& path);

template <typename T>
TensorT<T> onehot(std::size_t label, std::size_t num_classes);

using Sample = SampleT<double>;
using Dataset = DatasetT<double>;

}  // namespace fosnet
