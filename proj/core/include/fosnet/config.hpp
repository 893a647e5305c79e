#pragma once

#include <filesystem>
#include <string>

#include <json.hpp>

#include "fosnet/data.hpp"
#include "fosnet/model.hpp"
#include "fosnet/runner.hpp"

namespace fosnet {

// Everything one experiment needs: the dataset recipe, the two-stream model
// shape (including fusion), and the training schedule.  Loaded from a JSON
// file with sections "dataset", "model", "fusion", and "train"; missing
// fields fall back to the defaults below.
struct AppConfig {
    SyntheticSceneSpec dataset = SyntheticSceneSpec::defaults();
    FosNetConfig model;
    TrainConfig train;
    std::string precision = "f64";  // "f32" trains faster, "f64" is exact
};

AppConfig default_app_config();
nlohmann::json app_config_to_json(const AppConfig& cfg);
AppConfig app_config_from_json(const nlohmann::json& j);
AppConfig load_app_config(const std::filesystem::path& path);

nlohmann::json fosnet_config_to_json(const FosNetConfig& cfg);
FosNetConfig fosnet_config_from_json(const nlohmann::json& j);
nlohmann::json train_config_to_json(const TrainConfig& cfg);
TrainConfig train_config_from_json(const nlohmann::json& j);

}  // namespace fosnet
