#pragma once

#include <cstdint>
#include <optional>
#include <string>

#include "quosr/expr.hpp"
#include "quosr/querynet.hpp"
#include "quosr/regressor.hpp"
#include "quosr/training.hpp"

namespace quosr::cfg {

/// Expression-generator settings plus the post-filter applied when building
/// families: an expression must evaluate on at least `usable_fraction` of a
/// probe grid over the query box and must not be constant there.
struct GeneratorConfig {
    expr::GenConfig gen;
    double usable_fraction = 0.8;
    /// > 1 builds the family from skeleton groups: each skeleton appears
    /// with this many different constant draws.
    int siblings = 1;
};

struct Paths {
    std::string family;
    std::string out_dir;
};

struct ExperimentConfig {
    std::uint64_t seed = 0;
    int arity = 1;
    qnet::NetConfig net;
    qnet::QueryConfig query;
    train::TrainConfig train;
    GeneratorConfig generator;
    reg::PipelineConfig eval;
    Paths paths;
    bool seed_explicit = false;  // whether the document carried a seed key
};

/// The built-in defaults serialized as canonical JSON text.
std::string default_config_json();

/// Parses and validates a config JSON document. Unknown keys anywhere are
/// rejected; every validation failure is collected and reported at once.
ExperimentConfig parse_config_json(const std::string& text);

/// Reads the file when a path is given, otherwise returns the defaults.
ExperimentConfig load_config(const std::optional<std::string>& path);

/// Canonical JSON for a parsed config (the inverse of parse_config_json).
std::string to_json(const ExperimentConfig& c);

/// Seed precedence: explicit flag > config file > QUOSR_SEED env > default.
std::uint64_t resolve_seed(const std::optional<std::uint64_t>& flag_seed,
                           const ExperimentConfig& config, bool config_had_seed);

}  // namespace quosr::cfg
