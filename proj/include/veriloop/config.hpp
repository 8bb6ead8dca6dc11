#pragma once
// JSON run configuration.
//
// Every field is optional and defaults to the values baked into the structs,
// so `{}` is a valid config. Loading collects every problem it finds —
// wrong types, unknown keys, out-of-range values — and reports them all in
// one ConfigError with dotted key paths.

#include <cstdint>
#include <string>

#include "veriloop/federated.hpp"
#include "veriloop/pipeline.hpp"

namespace veriloop::config {

struct FederatedParams {
    int clients = 4;
    int rounds = 4;
    std::uint64_t prompts_per_round = 128;
    bool identical_streams = false;
};

struct RunConfig {
    std::uint64_t seed = 1;
    pipeline::StreamConfig stream;
    FederatedParams federated;

    // Assembles the federation config: the shared stream settings with the
    // per-round prompt budget swapped in.
    federated::FedConfig fed_config() const;
};

RunConfig default_config();

// Parses and validates. Throws ConfigError listing every detected problem.
RunConfig parse_json(const std::string& text);
RunConfig load_file(const std::string& path);

// Fully resolved config (defaults filled in), round-trippable.
std::string to_json(const RunConfig& cfg);

}  // namespace veriloop::config
