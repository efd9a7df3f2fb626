#pragma once

#include <string>

#include "json.hpp"

#include "df2am/evaluation.hpp"
#include "df2am/losses.hpp"
#include "df2am/model.hpp"
#include "df2am/sampling.hpp"
#include "df2am/synthdata.hpp"

namespace df2am {

struct TrainConfig;

// Shortest decimal text that parses back to the same double.
std::string format_double(double v);

// JSON <-> config structs. Readers reject unknown keys (ConfigError naming the key);
// missing keys keep their defaults.
nlohmann::json synth_config_to_json(const SynthConfig& c);
SynthConfig synth_config_from_json(const nlohmann::json& j);

nlohmann::json encoder_config_to_json(const EncoderConfig& c);
EncoderConfig encoder_config_from_json(const nlohmann::json& j);

nlohmann::json model_config_to_json(const ModelConfig& c);
ModelConfig model_config_from_json(const nlohmann::json& j);

nlohmann::json loss_weights_to_json(const losses::LossWeights& w);
losses::LossWeights loss_weights_from_json(const nlohmann::json& j);

nlohmann::json batch_spec_to_json(const BatchSpec& b);
BatchSpec batch_spec_from_json(const nlohmann::json& j);

nlohmann::json eval_config_to_json(const EvalConfig& e);
EvalConfig eval_config_from_json(const nlohmann::json& j);

nlohmann::json train_config_to_json(const TrainConfig& c);
TrainConfig train_config_from_json(const nlohmann::json& j);

// Reads a JSON config file; ConfigError on parse failure or unknown keys, IoError if unreadable.
TrainConfig load_train_config(const std::string& path);
void save_train_config(const TrainConfig& config, const std::string& path);

}  // namespace df2am
