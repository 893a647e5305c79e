#include "fosnet/config.hpp"

#include <fstream>

#include "fosnet/errors.hpp"
#include "fosnet/fusion.hpp"

namespace fosnet {

using nlohmann::json;

namespace {

HeadForm head_form_from_string(const std::string& s) {
    if (s == "gap_fc") return HeadForm::gap_fc;
    if (s == "conv1x1_gap") return HeadForm::conv1x1_gap;
    throw ConfigError("unknown head form \"" + s + "\"; expected gap_fc or conv1x1_gap");
}

json backbone_to_json(const BackboneSpec& spec) {
    json blocks = json::array();
    for (const auto& [channels, stride] : spec.blocks)
        blocks.push_back(json::array({channels, stride}));
    return json{{"input_hw", spec.input_hw}, {"in_channels", spec.in_channels},
                {"blocks", blocks},         {"kernel", spec.kernel},
                {"pad", spec.pad},          {"conv_kind", conv_kind_name(spec.conv_kind)},
                {"head", head_form_name(spec.head)}};
}

BackboneSpec backbone_from_json(const json& j, const BackboneSpec& base) {
    BackboneSpec spec = base;
    spec.input_hw = j.value("input_hw", spec.input_hw);
    spec.in_channels = j.value("in_channels", spec.in_channels);
    if (j.contains("blocks")) {
        spec.blocks.clear();
        for (const auto& b : j.at("blocks")) {
            if (!b.is_array() || b.size() != 2)
                throw ConfigError("backbone block entries must be [channels, stride] pairs");
            spec.blocks.emplace_back(b.at(0).get<std::size_t>(), b.at(1).get<std::size_t>());
        }
    }
    spec.kernel = j.value("kernel", spec.kernel);
    spec.pad = j.value("pad", spec.pad);
    if (j.contains("conv_kind"))
        spec.conv_kind = conv_kind_from_string(j.at("conv_kind").get<std::string>());
    if (j.contains("head")) spec.head = head_form_from_string(j.at("head").get<std::string>());
    return spec;
}

json augment_to_json(const AugmentConfig& a) {
    return json{{"rescale", a.rescale},
                {"flip", a.flip},
                {"normalize", a.normalize},
                {"max_scale", a.max_scale}};
}

AugmentConfig augment_from_json(const json& j, const AugmentConfig& base) {
    AugmentConfig a = base;
    a.rescale = j.value("rescale", a.rescale);
    a.flip = j.value("flip", a.flip);
    a.normalize = j.value("normalize", a.normalize);
    a.max_scale = j.value("max_scale", a.max_scale);
    return a;
}

}  // namespace

json fosnet_config_to_json(const FosNetConfig& cfg) {
    json fusion{{"kind", cfg.use_fusion ? fusion_kind_name(cfg.fusion_kind) : "none"},
                {"level", fusion_level_name(cfg.fusion_level)},
                {"freeze_object_net", cfg.freeze_object_net}};
    return json{{"places", backbone_to_json(cfg.places_spec)},
                {"object", backbone_to_json(cfg.object_spec)},
                {"num_scenes", cfg.num_scenes},
                {"num_objects", cfg.num_objects},
                {"fusion", fusion}};
}

FosNetConfig fosnet_config_from_json(const json& j) {
    FosNetConfig cfg;
    if (j.contains("places")) cfg.places_spec = backbone_from_json(j.at("places"), cfg.places_spec);
    if (j.contains("object")) cfg.object_spec = backbone_from_json(j.at("object"), cfg.object_spec);
    cfg.num_scenes = j.value("num_scenes", cfg.num_scenes);
    cfg.num_objects = j.value("num_objects", cfg.num_objects);
    if (j.contains("fusion")) {
        const json& f = j.at("fusion");
        if (f.contains("kind")) {
            const std::string kind = f.at("kind").get<std::string>();
            cfg.use_fusion = kind != "none";
            if (cfg.use_fusion) cfg.fusion_kind = fusion_kind_from_string(kind);
        }
        if (f.contains("level"))
            cfg.fusion_level = fusion_level_from_string(f.at("level").get<std::string>());
        cfg.freeze_object_net = f.value("freeze_object_net", cfg.freeze_object_net);
    }
    return cfg;
}

json train_config_to_json(const TrainConfig& cfg) {
    return json{{"epochs", cfg.epochs},
                {"base_lr", cfg.base_lr},
                {"reference_batch", cfg.reference_batch},
                {"momentum", cfg.momentum},
                {"lr_decay", cfg.lr_decay},
                {"schedule_step", cfg.schedule_step},
                {"batch_size", cfg.batch_size},
                {"gamma", cfg.gamma},
                {"seed", cfg.seed},
                {"apply_scl", cfg.apply_scl},
                {"augment", augment_to_json(cfg.augment)}};
}

TrainConfig train_config_from_json(const json& j) {
    TrainConfig cfg;
    cfg.epochs = j.value("epochs", cfg.epochs);
    cfg.base_lr = j.value("base_lr", cfg.base_lr);
    cfg.reference_batch = j.value("reference_batch", cfg.reference_batch);
    cfg.momentum = j.value("momentum", cfg.momentum);
    cfg.lr_decay = j.value("lr_decay", cfg.lr_decay);
    cfg.schedule_step = j.value("schedule_step", cfg.schedule_step);
    cfg.batch_size = j.value("batch_size", cfg.batch_size);
    cfg.gamma = j.value("gamma", cfg.gamma);
    cfg.seed = j.value("seed", cfg.seed);
    cfg.apply_scl = j.value("apply_scl", cfg.apply_scl);
    if (j.contains("augment")) cfg.augment = augment_from_json(j.at("augment"), cfg.augment);
    return cfg;
}

AppConfig default_app_config() { return AppConfig{}; }

json app_config_to_json(const AppConfig& cfg) {
    return json{{"dataset", spec_to_json(cfg.dataset)},
                {"model", fosnet_config_to_json(cfg.model)},
                {"train", train_config_to_json(cfg.train)},
                {"precision", cfg.precision}};
}

AppConfig app_config_from_json(const json& j) {
    AppConfig cfg;
    if (j.contains("dataset")) cfg.dataset = spec_from_json(j.at("dataset"));
    if (j.contains("model")) cfg.model = fosnet_config_from_json(j.at("model"));
    if (j.contains("train")) cfg.train = train_config_from_json(j.at("train"));
    cfg.precision = j.value("precision", cfg.precision);
    if (cfg.precision != "f32" && cfg.precision != "f64")
        throw ConfigError("precision must be f32 or f64, got \"" + cfg.precision + "\"");
    return cfg;
}

AppConfig load_app_config(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open config file " + path.string());
    json j;
    try {
        in >> j;
    } catch (const json::exception& e) {
        throw ConfigError("config file " + path.string() + " is not valid JSON: " + e.what());
    }
    AppConfig cfg = app_config_from_json(j);
    cfg.dataset.validate();
    cfg.model.places_spec.validate();
    cfg.model.object_spec.validate();
    cfg.train.validate();
    return cfg;
}

}  // namespace fosnet
