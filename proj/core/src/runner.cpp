#include "fosnet/runner.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "fosnet/config.hpp"
#include "fosnet/errors.hpp"
#include "fosnet/serialize.hpp"

namespace fosnet {

namespace fs = std::filesystem;
using nlohmann::json;

void TrainConfig::validate() const {
    if (epochs < 1) throw ConfigError("training needs at least one epoch");
    if (!(base_lr > 0)) throw ConfigError("base learning rate must be positive");
    if (reference_batch < 1) throw ConfigError("reference batch must be >= 1");
    if (!(momentum >= 0 && momentum < 1)) throw ConfigError("momentum must lie in [0,1)");
    if (!(lr_decay > 0 && lr_decay <= 1)) throw ConfigError("lr decay must lie in (0,1]");
    if (schedule_step < 1) throw ConfigError("schedule step must be >= 1");
    if (batch_size < 2) throw ConfigError("batch size must be >= 2 (batch norm needs it)");
    if (gamma < 0) throw ConfigError("gamma must be non-negative");
    if (!(augment.max_scale >= 1.0)) throw ConfigError("augment max_scale must be >= 1");
}

double lr_at(std::size_t epoch, const TrainConfig& cfg) {
    if (epoch >= cfg.epochs)
        throw ConfigError("epoch " + std::to_string(epoch) + " outside the configured " +
                          std::to_string(cfg.epochs) + "-epoch schedule");
    const double scaled = cfg.base_lr * static_cast<double>(cfg.batch_size) /
                          static_cast<double>(cfg.reference_batch);
    return scaled * std::pow(cfg.lr_decay, static_cast<double>(epoch / cfg.schedule_step));
}

template <typename T>
void sgd_momentum_step(const std::vector<ParamRefT<T>>& params, T lr, T momentum) {
    for (const auto& ref : params) {
        ParamT<T>& p = *ref.param;
        if (!p.has_grad())
            throw NumericError("no gradient for parameter " + ref.name +
                               "; was it part of the recorded forward pass?");
        if (p.velocity.empty()) p.velocity = TensorT<T>(p.value.shape());
        for (std::size_t i = 0; i < p.value.numel(); ++i) {
            p.velocity[i] = momentum * p.velocity[i] + p.grad[i];
            p.value[i] -= lr * p.velocity[i];
        }
        ensure_finite(p.value, ("sgd update of " + ref.name).c_str());
        p.zero_grad();
    }
}

template <typename T>
std::vector<ParamRefT<T>> trainable_params(FosNetT<T>& net) {
    std::vector<ParamRefT<T>> all = net.params();
    if (!net.config.freeze_object_net) return all;
    std::vector<ParamRefT<T>> kept;
    for (auto& ref : all)
        if (ref.name.rfind("object.", 0) != 0) kept.push_back(ref);
    return kept;
}

template <typename T>
std::vector<std::size_t> topk_indices(const T* scores, std::size_t n, std::size_t k) {
    if (k < 1 || k > n)
        throw ConfigError("top-k with k=" + std::to_string(k) + " over " + std::to_string(n) +
                          " classes");
    std::vector<std::size_t> idx(n);
    std::iota(idx.begin(), idx.end(), std::size_t(0));
    std::sort(idx.begin(), idx.end(), [scores](std::size_t a, std::size_t b) {
        if (scores[a] != scores[b]) return scores[a] > scores[b];
        return a < b;
    });
    idx.resize(k);
    return idx;
}

namespace {

template <typename T>
std::vector<double> softmax_row(const T* scores, std::size_t n) {
    double m = static_cast<double>(scores[0]);
    for (std::size_t i = 1; i < n; ++i) m = std::max(m, static_cast<double>(scores[i]));
    std::vector<double> p(n);
    double z = 0;
    for (std::size_t i = 0; i < n; ++i) {
        p[i] = std::exp(static_cast<double>(scores[i]) - m);
        z += p[i];
    }
    for (double& v : p) v /= z;
    return p;
}

// Running counts for accuracy, losses, and the confusion matrix.
template <typename T>
struct MetricAccum {
    std::size_t samples = 0;
    std::size_t top1_hits = 0;
    std::size_t topk_hits = 0;
    double loss_c_weighted = 0;
    double scl_weighted = 0;
    std::vector<std::size_t> class_total;
    std::vector<std::size_t> class_hits;
    std::vector<std::vector<std::size_t>> confusion;

    explicit MetricAccum(std::size_t classes)
        : class_total(classes), class_hits(classes),
          confusion(classes, std::vector<std::size_t>(classes)) {}

    template <typename S>
    void add_row(const S* scores, std::size_t n, std::size_t label, std::size_t k) {
        const auto best = topk_indices(scores, n, k);
        ++samples;
        ++class_total[label];
        confusion[label][best[0]] += 1;
        if (best[0] == label) {
            ++top1_hits;
            ++class_hits[label];
        }
        if (std::find(best.begin(), best.end(), label) != best.end()) ++topk_hits;
    }

    MetricsT<T> finish() const {
        MetricsT<T> m;
        if (samples == 0) throw ConfigError("metrics over an empty split");
        m.top1 = static_cast<double>(top1_hits) / static_cast<double>(samples);
        m.top5 = static_cast<double>(topk_hits) / static_cast<double>(samples);
        m.mean_loss_c = loss_c_weighted / static_cast<double>(samples);
        m.mean_scl = scl_weighted / static_cast<double>(samples);
        m.per_class_acc.resize(class_total.size());
        for (std::size_t c = 0; c < class_total.size(); ++c)
            m.per_class_acc[c] = class_total[c] == 0
                                     ? 0.0
                                     : static_cast<double>(class_hits[c]) /
                                           static_cast<double>(class_total[c]);
        m.confusion = confusion;
        return m;
    }
};

template <typename T>
TotalLossT<T> composed_loss(ValueT<T> scores, ValueT<T> grid, const TensorT<T>& onehot, T gamma,
                            bool apply_scl) {
    TotalLossT<T> out;
    out.classification = softmax_cross_entropy(scores, onehot);
    out.coherence = scene_coherence_loss(grid);
    const T g = apply_scl ? gamma : T(0);
    out.total = g == T(0) ? out.classification : add(out.classification, scale(out.coherence, g));
    out.breakdown.classification = out.classification.value()[0];
    out.breakdown.coherence = out.coherence.value()[0];
    out.breakdown.total =
        out.breakdown.classification + g * out.breakdown.coherence;
    out.breakdown.gamma = g;
    return out;
}

template <typename T>
void check_compat(const FosNetT<T>& net, const DatasetT<T>& ds) {
    if (net.config.num_scenes != ds.spec.num_scenes ||
        net.config.num_objects != ds.spec.num_objects)
        throw ConfigError("model classes (" + std::to_string(net.config.num_scenes) + " scenes, " +
                          std::to_string(net.config.num_objects) +
                          " objects) do not match the dataset");
    if (net.config.places_spec.input_hw != ds.spec.image_hw)
        throw ConfigError("model input " + std::to_string(net.config.places_spec.input_hw) +
                          " does not match dataset images of " + std::to_string(ds.spec.image_hw));
}

constexpr std::size_t kEvalChunk = 64;

std::string fmt_frac(double v) { return format_g17(v); }

}  // namespace

template <typename T>
MetricsT<T> evaluate_topk(FosNetT<T>& net, const DatasetT<T>& ds,
                          const std::vector<SampleT<T>>& split, std::size_t k) {
    check_compat(net, ds);
    if (split.empty()) throw ConfigError("cannot evaluate an empty split");
    const std::size_t C = net.config.num_scenes;
    MetricAccum<T> acc(C);
    for (std::size_t start = 0; start < split.size(); start += kEvalChunk) {
        const std::size_t end = std::min(start + kEvalChunk, split.size());
        std::vector<SampleT<T>> items;
        items.reserve(end - start);
        for (std::size_t i = start; i < end; ++i)
            items.push_back(eval_transform(split[i], ds.channel_mean, ds.channel_std));
        BatchT<T> b = stack_samples(items, C, ds.spec.num_objects);
        TapeT<T> tape;
        auto out = net.forward(tape, tape.constant(b.images), false);
        TotalLossT<T> loss = composed_loss(out.scene_scores, out.grid, b.scene_onehot, T(0), false);
        const std::size_t n = end - start;
        acc.loss_c_weighted += loss.breakdown.classification * static_cast<double>(n);
        acc.scl_weighted += loss.breakdown.coherence * static_cast<double>(n);
        const TensorT<T>& scores = out.scene_scores.value();
        for (std::size_t r = 0; r < n; ++r)
            acc.add_row(&scores(r, std::size_t(0)), C, b.labels[r], k);
    }
    return acc.finish();
}

template <typename T>
MetricsT<T> ten_crop_eval(FosNetT<T>& net, const DatasetT<T>& ds,
                          const std::vector<SampleT<T>>& split, std::size_t* crop_forwards) {
    check_compat(net, ds);
    if (split.empty()) throw ConfigError("cannot evaluate an empty split");
    const std::size_t C = net.config.num_scenes;
    const std::size_t hw = ds.spec.image_hw;
    const std::size_t up = static_cast<std::size_t>(std::lround(static_cast<double>(hw) * 1.25));
    const std::size_t margin = up - hw;
    const std::size_t offsets[5][2] = {{0, 0},
                                       {0, margin},
                                       {margin, 0},
                                       {margin, margin},
                                       {margin / 2, margin / 2}};
    if (crop_forwards) *crop_forwards = 0;
    const std::size_t k = std::min<std::size_t>(5, C);
    MetricAccum<T> acc(C);
    for (const SampleT<T>& s : split) {
        TensorT<T> big = resize_bilinear(s.image, up, up);
        std::vector<SampleT<T>> crops;
        crops.reserve(10);
        for (const auto& off : offsets) {
            SampleT<T> c = s;
            c.image = crop(big, off[0], off[1], hw);
            SampleT<T> f = c;
            f.image = flip_horizontal(c.image);
            crops.push_back(eval_transform(c, ds.channel_mean, ds.channel_std));
            crops.push_back(eval_transform(f, ds.channel_mean, ds.channel_std));
        }
        BatchT<T> b = stack_samples(crops, C, ds.spec.num_objects);
        TapeT<T> tape;
        auto out = net.forward(tape, tape.constant(b.images), false);
        if (crop_forwards) *crop_forwards += crops.size();

        const TensorT<T>& scores = out.scene_scores.value();
        std::vector<double> mean_prob(C, 0.0);
        for (std::size_t r = 0; r < crops.size(); ++r) {
            const auto p = softmax_row(&scores(r, std::size_t(0)), C);
            for (std::size_t c = 0; c < C; ++c) mean_prob[c] += p[c] / 10.0;
        }
        acc.add_row(mean_prob.data(), C, s.scene_label, k);
        acc.loss_c_weighted += -std::log(std::max(mean_prob[s.scene_label], 1e-300));
        TapeT<T> scl_tape;
        acc.scl_weighted += static_cast<double>(
            scene_coherence_loss(scl_tape.constant(out.grid.value())).value()[0]);
    }
    return acc.finish();
}

template <typename T>
void save_fosnet(const fs::path& dir, FosNetT<T>& net, const json& extra_meta) {
    std::vector<std::pair<std::string, const TensorT<T>*>> named;
    for (const auto& ref : net.params()) named.emplace_back(ref.name, &ref.param->value);
    for (const auto& ref : net.state()) named.emplace_back(ref.name, ref.tensor);
    json meta = extra_meta;
    meta["model"] = fosnet_config_to_json(net.config);
    save_tensors(dir, named, meta);
}

template <typename T>
FosNetT<T> load_fosnet(const fs::path& dir) {
    LoadedTensors<T> loaded = load_tensors<T>(dir);
    if (!loaded.meta.contains("model"))
        throw IoError("checkpoint " + dir.string() + " has no model configuration");
    FosNetT<T> net = FosNetT<T>::build(fosnet_config_from_json(loaded.meta.at("model")), 0);
    auto restore = [&](const std::string& name, TensorT<T>& dst) {
        auto it = loaded.tensors.find(name);
        if (it == loaded.tensors.end())
            throw IoError("checkpoint " + dir.string() + " is missing tensor " + name);
        if (!it->second.same_shape(dst))
            throw IoError("checkpoint tensor " + name + " has shape " +
                          shape_str(it->second.shape()) + ", model expects " +
                          shape_str(dst.shape()));
        dst = it->second;
    };
    for (auto& ref : net.params()) restore(ref.name, ref.param->value);
    for (auto& ref : net.state()) restore(ref.name, *ref.tensor);
    return net;
}

template <typename T>
void save_object_net(const fs::path& dir, ObjectNetT<T>& net, const json& extra_meta) {
    std::vector<ParamRefT<T>> params;
    std::vector<StateRefT<T>> state;
    net.collect("object", params, state);
    std::vector<std::pair<std::string, const TensorT<T>*>> named;
    for (const auto& ref : params) named.emplace_back(ref.name, &ref.param->value);
    for (const auto& ref : state) named.emplace_back(ref.name, ref.tensor);
    save_tensors(dir, named, extra_meta);
}

template <typename T>
void load_object_net_into(const fs::path& dir, ObjectNetT<T>& net) {
    LoadedTensors<T> loaded = load_tensors<T>(dir);
    std::vector<ParamRefT<T>> params;
    std::vector<StateRefT<T>> state;
    net.collect("object", params, state);
    auto restore = [&](const std::string& name, TensorT<T>& dst) {
        auto it = loaded.tensors.find(name);
        if (it == loaded.tensors.end())
            throw IoError("object checkpoint " + dir.string() + " is missing tensor " + name);
        if (!it->second.same_shape(dst))
            throw IoError("object checkpoint tensor " + name + " has shape " +
                          shape_str(it->second.shape()) + ", model expects " +
                          shape_str(dst.shape()));
        dst = it->second;
    };
    for (auto& ref : params) restore(ref.name, ref.param->value);
    for (auto& ref : state) restore(ref.name, *ref.tensor);
}

template <typename T>
TrainResultT<T> train(FosNetT<T>& net, const DatasetT<T>& ds, const TrainConfig& cfg,
                      const fs::path& out_dir) {
    cfg.validate();
    check_compat(net, ds);
    fs::create_directories(out_dir);

    std::vector<std::size_t> labels;
    labels.reserve(ds.train.size());
    for (const auto& s : ds.train) labels.push_back(s.scene_label);
    BalancedBatcher batcher(labels, ds.spec.num_scenes, cfg.batch_size);

    const std::size_t C = net.config.num_scenes;
    const std::size_t k = std::min<std::size_t>(5, C);
    auto step_params = trainable_params(net);
    // Feature-level fusion consumes the object stream's pooled feature, so
    // its head never feeds the loss; the grid head drops out too once the
    // coherence term is off.  Neither can receive gradients then.
    if (net.config.use_fusion && net.config.fusion_level == FusionLevel::feature) {
        const bool grid_unused = !cfg.apply_scl || cfg.gamma == 0.0;
        std::erase_if(step_params, [grid_unused](const ParamRefT<T>& r) {
            if (r.name.rfind("object.head.", 0) == 0) return true;
            return grid_unused && r.name.rfind("places.head.", 0) == 0;
        });
    }

    CsvWriter log(out_dir / "log.csv",
                  {"epoch", "split", "loss_c", "loss_scl", "loss_total", "top1", "top5"});

    TrainResultT<T> result;
    result.best_val_top1 = -1.0;
    result.checkpoint_dir = out_dir / "checkpoint";
    result.log_path = out_dir / "log.csv";

    for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
        const T lr = static_cast<T>(lr_at(epoch, cfg));
        Rng rng(mix_seed(cfg.seed, 0xE90C, epoch));
        MetricAccum<T> train_acc(C);
        double total_weighted = 0;

        for (const auto& batch_idx : batcher.epoch(rng)) {
            std::vector<SampleT<T>> items;
            items.reserve(batch_idx.size());
            for (std::size_t i : batch_idx)
                items.push_back(
                    augment(ds.train[i], cfg.augment, ds.channel_mean, ds.channel_std, rng));
            BatchT<T> b = stack_samples(items, C, ds.spec.num_objects);

            TapeT<T> tape;
            auto out = net.forward(tape, tape.constant(b.images), true);
            TotalLossT<T> loss = composed_loss(out.scene_scores, out.grid, b.scene_onehot,
                                               static_cast<T>(cfg.gamma), cfg.apply_scl);
            tape.backward(loss.total);
            sgd_momentum_step(step_params, lr, static_cast<T>(cfg.momentum));

            const std::size_t n = batch_idx.size();
            train_acc.loss_c_weighted += loss.breakdown.classification * static_cast<double>(n);
            train_acc.scl_weighted += loss.breakdown.coherence * static_cast<double>(n);
            total_weighted += loss.breakdown.total * static_cast<double>(n);
            const TensorT<T>& scores = out.scene_scores.value();
            for (std::size_t r = 0; r < n; ++r)
                train_acc.add_row(&scores(r, std::size_t(0)), C, b.labels[r], k);
        }

        MetricsT<T> tm = train_acc.finish();
        log.row({std::to_string(epoch), "train", fmt_frac(tm.mean_loss_c),
                 fmt_frac(tm.mean_scl),
                 fmt_frac(total_weighted / static_cast<double>(train_acc.samples)),
                 fmt_frac(tm.top1), fmt_frac(tm.top5)});

        MetricsT<T> vm = evaluate_topk(net, ds, ds.val, k);
        const double eff_gamma = cfg.apply_scl ? cfg.gamma : 0.0;
        log.row({std::to_string(epoch), "val", fmt_frac(vm.mean_loss_c), fmt_frac(vm.mean_scl),
                 fmt_frac(vm.mean_loss_c + eff_gamma * vm.mean_scl), fmt_frac(vm.top1),
                 fmt_frac(vm.top5)});

        if (vm.top1 > result.best_val_top1) {
            result.best_val_top1 = vm.top1;
            result.best_epoch = epoch;
            json meta;
            meta["epoch"] = epoch;
            meta["val_top1"] = vm.top1;
            meta["train"] = train_config_to_json(cfg);
            meta["channel_mean"] = std::vector<double>(ds.channel_mean.begin(),
                                                       ds.channel_mean.end());
            meta["channel_std"] = std::vector<double>(ds.channel_std.begin(),
                                                      ds.channel_std.end());
            save_fosnet(result.checkpoint_dir, net, meta);
        }
        result.final_val = vm;
    }
    return result;
}

template <typename T>
double pretrain_object(ObjectNetT<T>& net, const DatasetT<T>& ds, const TrainConfig& cfg,
                       const fs::path& out_dir) {
    cfg.validate();
    if (net.backbone.spec.input_hw != ds.spec.image_hw ||
        net.num_classes() != ds.spec.num_objects)
        throw ConfigError("object net does not match the dataset geometry");
    fs::create_directories(out_dir);

    std::vector<std::size_t> labels;
    for (const auto& s : ds.train) labels.push_back(s.scene_label);
    BalancedBatcher batcher(labels, ds.spec.num_scenes, cfg.batch_size);

    std::vector<ParamRefT<T>> params;
    std::vector<StateRefT<T>> state;
    net.collect("object", params, state);

    CsvWriter log(out_dir / "object_log.csv", {"epoch", "split", "bce", "label_acc"});

    auto eval_split = [&](const std::vector<SampleT<T>>& split) {
        double bce_weighted = 0;
        std::size_t hits = 0, total = 0;
        for (std::size_t start = 0; start < split.size(); start += kEvalChunk) {
            const std::size_t end = std::min(start + kEvalChunk, split.size());
            std::vector<SampleT<T>> items;
            for (std::size_t i = start; i < end; ++i)
                items.push_back(eval_transform(split[i], ds.channel_mean, ds.channel_std));
            BatchT<T> b = stack_samples(items, ds.spec.num_scenes, ds.spec.num_objects);
            TapeT<T> tape;
            auto out = net.forward(tape, tape.constant(b.images), false);
            bce_weighted += static_cast<double>(
                                sigmoid_bce(out.scores, b.object_multihot).value()[0]) *
                            static_cast<double>(end - start);
            const TensorT<T>& s = out.scores.value();
            for (std::size_t i = 0; i < s.numel(); ++i) {
                const bool predicted = s[i] > T(0);
                const bool actual = b.object_multihot[i] != T(0);
                hits += predicted == actual;
                ++total;
            }
        }
        return std::pair<double, double>(bce_weighted / static_cast<double>(split.size()),
                                         static_cast<double>(hits) /
                                             static_cast<double>(total));
    };

    double best_acc = -1.0;
    double last_acc = 0.0;
    for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
        const T lr = static_cast<T>(lr_at(epoch, cfg));
        Rng rng(mix_seed(cfg.seed, 0x0B7E, epoch));
        double bce_weighted = 0;
        std::size_t seen = 0, hits = 0, bits = 0;
        for (const auto& batch_idx : batcher.epoch(rng)) {
            std::vector<SampleT<T>> items;
            for (std::size_t i : batch_idx)
                items.push_back(
                    augment(ds.train[i], cfg.augment, ds.channel_mean, ds.channel_std, rng));
            BatchT<T> b = stack_samples(items, ds.spec.num_scenes, ds.spec.num_objects);
            TapeT<T> tape;
            auto out = net.forward(tape, tape.constant(b.images), true);
            ValueT<T> loss = sigmoid_bce(out.scores, b.object_multihot);
            tape.backward(loss);
            sgd_momentum_step(params, lr, static_cast<T>(cfg.momentum));
            bce_weighted += static_cast<double>(loss.value()[0]) *
                            static_cast<double>(batch_idx.size());
            seen += batch_idx.size();
            const TensorT<T>& s = out.scores.value();
            for (std::size_t i = 0; i < s.numel(); ++i) {
                hits += (s[i] > T(0)) == (b.object_multihot[i] != T(0));
                ++bits;
            }
        }
        log.row({std::to_string(epoch), "train",
                 fmt_frac(bce_weighted / static_cast<double>(seen)),
                 fmt_frac(static_cast<double>(hits) / static_cast<double>(bits))});

        const auto [val_bce, val_acc] = eval_split(ds.val);
        log.row({std::to_string(epoch), "val", fmt_frac(val_bce), fmt_frac(val_acc)});
        last_acc = val_acc;
        if (val_acc > best_acc) {
            best_acc = val_acc;
            json meta;
            meta["epoch"] = epoch;
            meta["val_label_acc"] = val_acc;
            save_object_net(out_dir / "checkpoint", net, meta);
        }
    }
    return last_acc;
}

template <typename T>
void ablation_run(const DatasetT<T>& ds, const FosNetConfig& base_model,
                  const TrainConfig& base_train, const std::vector<AblationVariantT<T>>& variants,
                  const std::vector<std::uint64_t>& seeds, const fs::path& out_dir,
                  bool report_only, const fs::path& object_checkpoint) {
    if (variants.empty() || seeds.empty())
        throw ConfigError("ablation needs at least one variant and one seed");
    fs::create_directories(out_dir);

    struct Cell {
        std::string name;
        std::uint64_t seed;
        MetricsT<T> metrics;
    };
    std::vector<Cell> cells;

    for (const auto& variant : variants) {
        for (std::uint64_t seed : seeds) {
            const fs::path run_dir = out_dir / "runs" / (variant.name + "-s" + std::to_string(seed));
            FosNetConfig mc = base_model;
            TrainConfig tc = base_train;
            variant.patch(mc, tc);
            tc.seed = seed;
            if (!report_only) {
                FosNetT<T> net = FosNetT<T>::build(mc, seed);
                if (mc.use_fusion && !object_checkpoint.empty())
                    load_object_net_into(object_checkpoint, net.object_net);
                train(net, ds, tc, run_dir);
            }
            FosNetT<T> best = load_fosnet<T>(run_dir / "checkpoint");
            cells.push_back({variant.name, seed,
                             evaluate_topk(best, ds, ds.val,
                                           std::min<std::size_t>(5, mc.num_scenes))});
        }
    }

    CsvWriter report(out_dir / "report.csv",
                     {"variant", "seed", "top1", "top5", "val_scl", "val_loss_c"});
    for (const auto& cell : cells)
        report.row({cell.name, std::to_string(cell.seed), fmt_frac(cell.metrics.top1),
                    fmt_frac(cell.metrics.top5), fmt_frac(cell.metrics.mean_scl),
                    fmt_frac(cell.metrics.mean_loss_c)});

    CsvWriter summary(out_dir / "summary.csv",
                      {"variant", "runs", "top1_mean", "top1_std", "top5_mean", "top5_std",
                       "val_scl_mean", "val_scl_std"});
    for (const auto& variant : variants) {
        std::vector<double> t1, t5, scl;
        for (const auto& cell : cells)
            if (cell.name == variant.name) {
                t1.push_back(cell.metrics.top1);
                t5.push_back(cell.metrics.top5);
                scl.push_back(cell.metrics.mean_scl);
            }
        auto mean = [](const std::vector<double>& v) {
            return std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
        };
        auto stddev = [&](const std::vector<double>& v) {
            if (v.size() < 2) return 0.0;
            const double m = mean(v);
            double acc = 0;
            for (double x : v) acc += (x - m) * (x - m);
            return std::sqrt(acc / static_cast<double>(v.size() - 1));
        };
        summary.row({variant.name, std::to_string(t1.size()), fmt_frac(mean(t1)),
                     fmt_frac(stddev(t1)), fmt_frac(mean(t5)), fmt_frac(stddev(t5)),
                     fmt_frac(mean(scl)), fmt_frac(stddev(scl))});
    }
}

#define FOSNET_INSTANTIATE_RUNNER(T)                                                            \
    template void sgd_momentum_step<T>(const std::vector<ParamRefT<T>>&, T, T);                 \
    template std::vector<ParamRefT<T>> trainable_params<T>(FosNetT<T>&);                        \
    template std::vector<std::size_t> topk_indices<T>(const T*, std::size_t, std::size_t);      \
    template MetricsT<T> evaluate_topk<T>(FosNetT<T>&, const DatasetT<T>&,                      \
                                          const std::vector<SampleT<T>>&, std::size_t);         \
    template MetricsT<T> ten_crop_eval<T>(FosNetT<T>&, const DatasetT<T>&,                      \
                                          const std::vector<SampleT<T>>&, std::size_t*);        \
    template void save_fosnet<T>(const fs::path&, FosNetT<T>&, const json&);                    \
    template FosNetT<T> load_fosnet<T>(const fs::path&);                                        \
    template void save_object_net<T>(const fs::path&, ObjectNetT<T>&, const json&);             \
    template void load_object_net_into<T>(const fs::path&, ObjectNetT<T>&);                     \
    template TrainResultT<T> train<T>(FosNetT<T>&, const DatasetT<T>&, const TrainConfig&,      \
                                      const fs::path&);                                         \
    template double pretrain_object<T>(ObjectNetT<T>&, const DatasetT<T>&, const TrainConfig&,  \
                                       const fs::path&);                                        \
    template void ablation_run<T>(const DatasetT<T>&, const FosNetConfig&, const TrainConfig&,  \
                                  const std::vector<AblationVariantT<T>>&,                      \
                                  const std::vector<std::uint64_t>&, const fs::path&, bool,     \
                                  const fs::path&);

FOSNET_INSTANTIATE_RUNNER(float)
FOSNET_INSTANTIATE_RUNNER(double)

#undef FOSNET_INSTANTIATE_RUNNER

}  // namespace fosnet
