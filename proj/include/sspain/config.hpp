#pragma once

#include <string>

#include "sspain/data.hpp"
#include "sspain/network.hpp"
#include "sspain/training.hpp"

namespace sspain {

// One JSON document drives a whole run; anything not given falls back to the
// defaults below and is materialized into the echoed copy.
struct RunConfig {
    SynthConfig synth;
    ModelConfig model;
    TrainConfig train;
    std::string data_dir;   // empty: use the synthetic corpus directly
    std::string out_dir = "out";
    std::string variant = "method2";
    RescaleTable rescale_table = default_rescale_table();
};

// Strict parse: unknown keys and type mismatches are errors naming the JSON
// path (e.g. "$.train.beta").
RunConfig parse_config_text(const std::string& text);
RunConfig parse_config_file(const std::string& path);

// Fully materialized JSON echo; parse_config_text(config_echo(c)) == c.
std::string config_echo(const RunConfig& cfg);
void write_config_echo(const std::string& out_dir, const RunConfig& cfg);

}  // namespace sspain
