#include <cstdio>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "fosnet/config.hpp"
#include "fosnet/runner.hpp"
#include "fosnet/serialize.hpp"

namespace fs = std::filesystem;
using namespace fosnet;

namespace {

struct CliArgs {
    std::string command;
    std::string config_path;
    std::string data_dir;
    std::string out_dir = "out";
    std::string checkpoint;
    std::string object_checkpoint;
    std::string image_path;
    std::string sweep = "gamma";
    std::string seeds = "1,2,3";
    std::size_t cam_class = 0;
    std::size_t topk = 5;
    bool ten_crop = false;
    bool report_only = false;
    std::optional<std::uint64_t> seed;
    std::optional<double> gamma;
    std::optional<std::size_t> epochs;
    std::optional<std::size_t> batch;
    std::optional<std::string> precision;
};

AppConfig resolve_config(const CliArgs& a) {
    AppConfig cfg = a.config_path.empty() ? default_app_config() : load_app_config(a.config_path);
    if (a.seed) cfg.train.seed = *a.seed;
    if (a.gamma) cfg.train.gamma = *a.gamma;
    if (a.epochs) cfg.train.epochs = *a.epochs;
    if (a.batch) cfg.train.batch_size = *a.batch;
    if (a.precision) cfg.precision = *a.precision;
    return cfg;
}

std::vector<std::uint64_t> parse_seeds(const std::string& s) {
    std::vector<std::uint64_t> out;
    std::size_t pos = 0;
    while (pos < s.size()) {
        std::size_t comma = s.find(',', pos);
        if (comma == std::string::npos) comma = s.size();
        out.push_back(std::stoull(s.substr(pos, comma - pos)));
        pos = comma + 1;
    }
    if (out.empty()) throw ConfigError("--seeds needs at least one seed");
    return out;
}

void print_metrics(const char* label, const Metrics& m) {
    std::printf("%s: top1 %.4f  top5 %.4f  scl %.6f  loss_c %.4f\n", label, m.top1, m.top5,
                m.mean_scl, m.mean_loss_c);
    std::printf("per-class:");
    for (double a : m.per_class_acc) std::printf(" %.3f", a);
    std::printf("\n");
}

template <typename T>
Metrics widen(const MetricsT<T>& m) {
    Metrics out;
    out.top1 = m.top1;
    out.top5 = m.top5;
    out.mean_scl = m.mean_scl;
    out.mean_loss_c = m.mean_loss_c;
    out.per_class_acc = m.per_class_acc;
    out.confusion = m.confusion;
    return out;
}

template <typename T>
std::vector<AblationVariantT<T>> make_sweep(const std::string& sweep, const FosNetConfig& base) {
    std::vector<AblationVariantT<T>> vs;
    if (sweep == "gamma") {
        for (double g : {0.0, 10.0, 1.0, 0.1, 0.01, 0.001}) {
            char name[32];
            std::snprintf(name, sizeof name, "gamma-%g", g);
            vs.push_back({name, [g](FosNetConfig& mc, TrainConfig& tc) {
                              mc.use_fusion = false;
                              tc.gamma = g;
                          }});
        }
        return vs;
    }
    if (sweep == "fusion") {
        const FusionKind kinds[] = {FusionKind::sum,    FusionKind::concat,
                                    FusionKind::ccm,    FusionKind::ccg,
                                    FusionKind::ccg_bn, FusionKind::mixed_ccm_ccg};
        for (FusionKind k : kinds)
            vs.push_back({std::string("feature-") + fusion_kind_name(k),
                          [k](FosNetConfig& mc, TrainConfig&) {
                              mc.use_fusion = true;
                              mc.fusion_kind = k;
                              mc.fusion_level = FusionLevel::feature;
                          }});
        // score level: concat never applies, and sum needs matching class
        // counts
        for (FusionKind k : kinds) {
            if (k == FusionKind::concat) continue;
            if (k == FusionKind::sum && base.num_objects != base.num_scenes) continue;
            vs.push_back({std::string("score-") + fusion_kind_name(k),
                          [k](FosNetConfig& mc, TrainConfig&) {
                              mc.use_fusion = true;
                              mc.fusion_kind = k;
                              mc.fusion_level = FusionLevel::score;
                          }});
        }
        return vs;
    }
    throw ConfigError("unknown sweep \"" + sweep + "\"; expected gamma or fusion");
}

template <typename T>
int run_command(const CliArgs& a, const AppConfig& cfg) {
    if (a.command == "generate") {
        DatasetT<T> ds = generate_dataset<T>(cfg.dataset, cfg.train.seed);
        save_dataset(a.out_dir, ds);
        std::printf("wrote %zu train + %zu val samples to %s\n", ds.train.size(), ds.val.size(),
                    a.out_dir.c_str());
        return 0;
    }

    if (a.command == "pretrain-object") {
        DatasetT<T> ds = load_dataset<T>(a.data_dir);
        ObjectNetT<T> net =
            ObjectNetT<T>::build(cfg.model.object_spec, cfg.model.num_objects, cfg.train.seed);
        double acc = pretrain_object(net, ds, cfg.train, a.out_dir);
        std::printf("final val label accuracy %.4f; checkpoint in %s/checkpoint\n", acc,
                    a.out_dir.c_str());
        return 0;
    }

    if (a.command == "train") {
        DatasetT<T> ds = load_dataset<T>(a.data_dir);
        FosNetT<T> net = FosNetT<T>::build(cfg.model, cfg.train.seed);
        if (!a.object_checkpoint.empty()) load_object_net_into(a.object_checkpoint, net.object_net);
        TrainResultT<T> res = train(net, ds, cfg.train, a.out_dir);
        std::printf("best val top1 %.4f at epoch %zu; checkpoint in %s\n", res.best_val_top1,
                    res.best_epoch, res.checkpoint_dir.string().c_str());
        print_metrics("final val", widen(res.final_val));
        return 0;
    }

    if (a.command == "eval") {
        DatasetT<T> ds = load_dataset<T>(a.data_dir);
        FosNetT<T> net = load_fosnet<T>(a.checkpoint);
        MetricsT<T> m = evaluate_topk(net, ds, ds.val, a.topk);
        print_metrics("single-crop val", widen(m));
        if (a.ten_crop) {
            std::size_t crops = 0;
            MetricsT<T> tm = ten_crop_eval(net, ds, ds.val, &crops);
            print_metrics("ten-crop val", widen(tm));
            std::printf("crop forwards: %zu\n", crops);
        }
        return 0;
    }

    if (a.command == "cam") {
        FosNetT<T> net = load_fosnet<T>(a.checkpoint);
        const nlohmann::json meta = load_tensors<T>(a.checkpoint).meta;
        TensorT<T> img = read_fost<T>(a.image_path);
        if (img.rank() != 3 || img.extent(2) != 3)
            throw ConfigError("cam expects an [H,W,3] image tensor, got " +
                              shape_str(img.shape()));
        if (meta.contains("channel_mean")) {
            std::array<T, 3> mean{}, sd{};
            for (int c = 0; c < 3; ++c) {
                mean[c] = static_cast<T>(meta.at("channel_mean").at(c).get<double>());
                sd[c] = static_cast<T>(meta.at("channel_std").at(c).get<double>());
            }
            img = normalize_channels(img, mean, sd);
        }
        TensorT<T> batch({1, img.extent(0), img.extent(1), img.extent(2)});
        for (std::size_t i = 0; i < img.numel(); ++i) batch[i] = img[i];
        TapeT<T> tape;
        auto out = net.forward(tape, tape.constant(batch), false);
        CamExportT<T> cam = export_cam_grid(out.grid.value(), a.cam_class);

        const fs::path prefix = a.out_dir;
        fs::create_directories(prefix);
        char stem[32];
        std::snprintf(stem, sizeof stem, "cam_class%zu", a.cam_class);
        write_pgm(prefix / (std::string(stem) + ".pgm"), cam.heatmap);
        CsvWriter csv(prefix / (std::string(stem) + ".csv"), {"row", "col", "value"});
        for (std::size_t r = 0; r < cam.heatmap.extent(0); ++r)
            for (std::size_t c = 0; c < cam.heatmap.extent(1); ++c)
                csv.row({std::to_string(r), std::to_string(c),
                         format_g17(static_cast<double>(cam.heatmap(r, c)))});
        std::printf("class %zu: raw score range [%.6g, %.6g]%s; wrote %s.{pgm,csv}\n",
                    a.cam_class, static_cast<double>(cam.raw_min),
                    static_cast<double>(cam.raw_max),
                    cam.degenerate ? " (flat plane, rendered as 0.5)" : "",
                    (prefix / stem).string().c_str());
        return 0;
    }

    if (a.command == "ablate") {
        DatasetT<T> ds = load_dataset<T>(a.data_dir);
        auto variants = make_sweep<T>(a.sweep, cfg.model);
        ablation_run(ds, cfg.model, cfg.train, variants, parse_seeds(a.seeds), a.out_dir,
                     a.report_only, fs::path(a.object_checkpoint));
        std::printf("wrote %s/report.csv and %s/summary.csv\n", a.out_dir.c_str(),
                    a.out_dir.c_str());
        return 0;
    }

    throw ConfigError("unknown command " + a.command);
}

}  // namespace

int main(int argc, char** argv) {
    CliArgs a;
    CLI::App app{"Two-stream scene recognition on synthetic data"};
    app.require_subcommand(1);

    auto add_common = [&](CLI::App* sub, bool needs_data) {
        sub->add_option("--config", a.config_path, "JSON config file");
        sub->add_option("--out", a.out_dir, "output directory");
        if (needs_data) sub->add_option("--data", a.data_dir, "dataset directory")->required();
        sub->add_option("--seed", a.seed, "seed override");
        sub->add_option("--precision", a.precision, "f32 or f64")
            ->check(CLI::IsMember({"f32", "f64"}));
    };

    CLI::App* gen = app.add_subcommand("generate", "generate the synthetic dataset");
    add_common(gen, false);

    CLI::App* pre = app.add_subcommand("pretrain-object", "pretrain the object stream");
    add_common(pre, true);
    pre->add_option("--epochs", a.epochs, "epoch override");
    pre->add_option("--batch", a.batch, "batch size override");

    CLI::App* tr = app.add_subcommand("train", "train the scene model");
    add_common(tr, true);
    tr->add_option("--epochs", a.epochs, "epoch override");
    tr->add_option("--batch", a.batch, "batch size override");
    tr->add_option("--gamma", a.gamma, "coherence loss weight override");
    tr->add_option("--object-checkpoint", a.object_checkpoint,
                   "load pretrained object stream from this checkpoint");

    CLI::App* ev = app.add_subcommand("eval", "evaluate a checkpoint");
    add_common(ev, true);
    ev->add_option("--checkpoint", a.checkpoint, "checkpoint directory")->required();
    ev->add_option("--k", a.topk, "top-k cutoff");
    ev->add_flag("--ten-crop", a.ten_crop, "also run ten-crop evaluation");

    CLI::App* cam = app.add_subcommand("cam", "export a class activation map");
    cam->add_option("--checkpoint", a.checkpoint, "checkpoint directory")->required();
    cam->add_option("--image", a.image_path, "input image tensor (.fost, [H,W,3])")->required();
    cam->add_option("--class", a.cam_class, "class index")->required();
    cam->add_option("--out", a.out_dir, "output directory");
    cam->add_option("--precision", a.precision, "f32 or f64")
        ->check(CLI::IsMember({"f32", "f64"}));

    CLI::App* ab = app.add_subcommand("ablate", "run an ablation sweep");
    add_common(ab, true);
    ab->add_option("--sweep", a.sweep, "gamma or fusion")
        ->check(CLI::IsMember({"gamma", "fusion"}));
    ab->add_option("--seeds", a.seeds, "comma-separated seed list");
    ab->add_flag("--report-only", a.report_only, "re-evaluate existing checkpoints");
    ab->add_option("--object-checkpoint", a.object_checkpoint,
                   "load pretrained object stream from this checkpoint");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 1;
    }

    a.command = app.get_subcommands().front()->get_name();

    if (!a.config_path.empty() && !fs::exists(a.config_path)) {
        std::fprintf(stderr, "config file not found: %s\n", a.config_path.c_str());
        return 1;
    }

    try {
        const AppConfig cfg = resolve_config(a);
        if (cfg.precision == "f32") return run_command<float>(a, cfg);
        return run_command<double>(a, cfg);
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 2;
    }
}
