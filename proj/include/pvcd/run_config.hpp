#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

#include <json.hpp>

#include "pvcd/data.hpp"
#include "pvcd/metrics.hpp"
#include "pvcd/model.hpp"
#include "pvcd/train.hpp"

namespace pvcd {

class ConfigError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

struct DataConfig {
    std::string root;
    std::string train_split = "train";  // manifest tag used for training (then split into train/val)
    std::string eval_split = "test";    // "val" re-derives the training run's validation subset
};

/// Everything a run needs. Serialized as
///   {vit, peft, model, train, data, synth, checkpoint}
/// and rebuilt from (defaults <- config file <- dotted flag overrides).
struct RunConfig {
    ModelConfig model;
    std::string backbone_weights;  // optional WeightFile with backbone.* tensors
    TrainConfig train;
    DataConfig data;
    SynthSpec synth;
    std::string checkpoint;  // trainable-only WeightFile for eval

    /// Throws ConfigError on inconsistent values.
    void validate() const;
};

nlohmann::ordered_json to_json(const RunConfig& config);
/// Strict: unknown keys and wrongly typed values throw ConfigError.
RunConfig run_config_from_json(const nlohmann::json& j);

/// Sets `dotted.key` in `j` from a command-line string. The value is parsed
/// as JSON when possible (numbers, booleans, arrays) and kept as a string
/// otherwise. Unknown keys throw ConfigError.
void apply_override(nlohmann::json& j, std::string_view dotted_key, std::string_view value);

nlohmann::ordered_json to_json(const MetricReport& report);

/// The ViT presets by name: "tiny" (desk scale) or "small" (ViT-S/16).
ViTConfig vit_preset(std::string_view name, std::size_t image_size);

}  // namespace pvcd
