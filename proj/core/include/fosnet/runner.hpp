#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include <json.hpp>

#include "fosnet/data.hpp"
#include "fosnet/losses.hpp"
#include "fosnet/model.hpp"

namespace fosnet {

// Training schedule and objective knobs.  The learning rate follows the
// linear scaling rule: base_lr is quoted at reference_batch and rescaled by
// batch_size/reference_batch, then decayed by lr_decay every schedule_step
// epochs.
struct TrainConfig {
    std::size_t epochs = 60;
    double base_lr = 0.15;
    std::size_t reference_batch = 256;
    double momentum = 0.9;
    double lr_decay = 0.1;
    std::size_t schedule_step = 15;
    std::size_t batch_size = 64;
    double gamma = 1.0;
    std::uint64_t seed = 0;
    bool apply_scl = true;  // keep the coherence term when the grid head is active
    AugmentConfig augment;

    void validate() const;
};

double lr_at(std::size_t epoch, const TrainConfig& cfg);

// Classical momentum update: v <- momentum*v + g; p <- p - lr*v.  Every
// parameter in the list must carry a gradient; gradients are cleared after
// the step.
template <typename T>
void sgd_momentum_step(const std::vector<ParamRefT<T>>& params, T lr, T momentum);

// The parameters the optimizer may touch: all of the network's except the
// object stream's when config.freeze_object_net is set.
template <typename T>
std::vector<ParamRefT<T>> trainable_params(FosNetT<T>& net);

template <typename T>
struct MetricsT {
    double top1 = 0;
    double top5 = 0;
    double mean_scl = 0;
    double mean_loss_c = 0;
    std::vector<double> per_class_acc;
    std::vector<std::vector<std::size_t>> confusion;  // [true][predicted]
};

using Metrics = MetricsT<double>;

// Indices of the k highest scores, ties broken toward the lower class
// index; result ordered best first.
template <typename T>
std::vector<std::size_t> topk_indices(const T* scores, std::size_t n, std::size_t k);

template <typename T>
struct TrainResultT {
    std::size_t best_epoch = 0;
    double best_val_top1 = 0;
    MetricsT<T> final_val;
    std::filesystem::path checkpoint_dir;
    std::filesystem::path log_path;
};

// Full training loop: balanced batches, augmentation, the composed
// objective, one optimizer step per batch, per-epoch train/val rows
// appended to log.csv, and a best-validation-top1 checkpoint under
// out_dir/checkpoint.  Deterministic for a fixed config.
template <typename T>
TrainResultT<T> train(FosNetT<T>& net, const DatasetT<T>& ds, const TrainConfig& cfg,
                      const std::filesystem::path& out_dir);

// Object-stream pretraining on the generator's multi-hot object labels with
// a binary cross-entropy objective.  Returns final validation mean
// per-label accuracy at threshold 0.5 and checkpoints into out_dir.
template <typename T>
double pretrain_object(ObjectNetT<T>& net, const DatasetT<T>& ds, const TrainConfig& cfg,
                       const std::filesystem::path& out_dir);

// Single-center-crop evaluation.
template <typename T>
MetricsT<T> evaluate_topk(FosNetT<T>& net, const DatasetT<T>& ds,
                          const std::vector<SampleT<T>>& split, std::size_t k);

// Four corners + center + horizontal flips after a 1.25x upscale; the
// per-sample score is the mean of the ten softmax vectors.  crop_forwards,
// when given, receives the number of crop evaluations performed.
template <typename T>
MetricsT<T> ten_crop_eval(FosNetT<T>& net, const DatasetT<T>& ds,
                          const std::vector<SampleT<T>>& split,
                          std::size_t* crop_forwards = nullptr);

// Checkpointing: parameter and state tensors plus a manifest whose meta
// section stores the model configuration, so a checkpoint alone rebuilds
// the network.
template <typename T>
void save_fosnet(const std::filesystem::path& dir, FosNetT<T>& net,
                 const nlohmann::json& extra_meta);
template <typename T>
FosNetT<T> load_fosnet(const std::filesystem::path& dir);
template <typename T>
void save_object_net(const std::filesystem::path& dir, ObjectNetT<T>& net,
                     const nlohmann::json& extra_meta);
template <typename T>
void load_object_net_into(const std::filesystem::path& dir, ObjectNetT<T>& net);

// One ablation variant: a name plus a config patch applied on top of the
// shared base configuration.
template <typename T>
struct AblationVariantT {
    std::string name;
    std::function<void(FosNetConfig&, TrainConfig&)> patch;
};

// Trains (or, with report_only, re-evaluates existing checkpoints of) every
// variant x seed cell, then writes report.csv (one row per cell) and
// summary.csv (mean/stddev per variant) into out_dir.
template <typename T>
void ablation_run(const DatasetT<T>& ds, const FosNetConfig& base_model,
                  const TrainConfig& base_train,
                  const std::vector<AblationVariantT<T>>& variants,
                  const std::vector<std::uint64_t>& seeds, const std::filesystem::path& out_dir,
                  bool report_only = false,
                  const std::filesystem::path& object_checkpoint = {});

}  // namespace fosnet
