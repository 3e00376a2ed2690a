#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "mola/data.hpp"
#include "mola/model.hpp"
#include "mola/train.hpp"

namespace mola {

enum class ParadigmKind { arf, mtf, mola };

const char* to_string(ParadigmKind k);
ParadigmKind paradigm_from_string(const std::string& s);

struct DatasetConfig {
    // exactly one of csv / synth
    std::optional<std::string> csv;
    std::optional<SynthSpec> synth;
    CsvSchema schema;
    std::size_t lookback = 16;
    std::size_t horizon = 32;
    bool standardize = true;
};

struct ParadigmConfig {
    ParadigmKind kind = ParadigmKind::mola;
    // mola only
    std::size_t segments = 4;
    std::size_t experts = 4;
    std::size_t rank = 4;
    double home_logit = 8.0;
    std::vector<std::string> placement{"encoder.0"};
};

struct OutputConfig {
    std::optional<std::string> run_dir;
    bool destandardize = false;
};

struct RunConfig {
    DatasetConfig dataset;
    EncoderSpec model{EncoderKind::mlp2, 16, {16, 2}, Activation::relu};
    ParadigmConfig paradigm;
    TrainConfig train;     // AR-F / MT-F baselines
    TrainConfig pretrain;  // foundation stage
    TrainConfig adapt;     // per-segment stage
    OutputConfig output;

    void validate() const;
    nlohmann::json to_json() const;
    // SHA-256 of the canonical JSON form.
    std::string hash() const;
};

// INI text: [dataset] [synth] [model] [paradigm] [train] [output].
// `overrides` are "section.key=value" strings applied before parsing, so
// they win over the file. Unknown sections or keys are errors.
RunConfig parse_run_config(const std::string& text, const std::vector<std::string>& overrides = {});
RunConfig load_run_config(const std::filesystem::path& path, const std::vector<std::string>& overrides = {});
// Only the overrides, on top of the built-in defaults.
RunConfig default_run_config(const std::vector<std::string>& overrides = {});

// "sine amplitude=1 period=24 phase=0"
SynthComponent parse_component(const std::string& text);
std::string format_component(const SynthComponent& c);

nlohmann::json synth_spec_to_json(const SynthSpec& spec);
SynthSpec synth_spec_from_json(const nlohmann::json& j);

// Loads or generates the dataset and standardizes it when requested.
struct LoadedData {
    SeriesDataset dataset;
    std::vector<std::string> warnings;
};
LoadedData load_dataset(const DatasetConfig& cfg);

}  // namespace mola
