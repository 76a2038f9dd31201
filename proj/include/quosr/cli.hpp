#pragma once

#include <cstdint>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "quosr/config.hpp"
#include "quosr/expr.hpp"

namespace quosr::cli {

// Each command returns a process exit code and reports through `log`, so
// tests drive them exactly as the binary does.

struct GenArgs {
    std::optional<std::string> config;
    std::optional<std::uint64_t> seed;
    int count = 100;
    std::string out;
};
int cmd_gen(const GenArgs& args, std::ostream& log = std::cerr);

struct TrainArgs {
    std::string config;
    std::optional<std::string> family;   // overrides paths.family
    std::optional<std::string> out_dir;  // overrides paths.out_dir
    std::optional<int> iterations;
    std::optional<std::uint64_t> seed;
    bool resume = false;
};
int cmd_train(const TrainArgs& args, std::ostream& log = std::cerr);

struct QueryArgs {
    std::optional<std::string> checkpoint;  // required for method "quosr"
    std::string family;
    std::string out;
    std::string method = "quosr";  // quosr | uniform | normal
    std::optional<std::string> config;
    std::optional<int> max_steps;
    std::optional<std::uint64_t> seed;
    /// Optional CSV with the per-step mean latent log-variance per system.
    std::optional<std::string> variance_out;
};
int cmd_query(const QueryArgs& args, std::ostream& log = std::cerr);

struct EvalArgs {
    std::vector<std::string> datasets;
    std::string family;
    std::optional<std::string> bank;  // defaults to the truth family
    std::string out_dir;
    std::optional<std::string> config;
    std::optional<std::uint64_t> seed;
};
int cmd_eval(const EvalArgs& args, std::ostream& log = std::cerr);

struct TheoryArgs {
    std::optional<std::string> family;  // discrete-family file to check
    std::string out_dir;
    std::optional<std::uint64_t> seed;
    int sweep_count = 100;
    int claim2_count = 20;
};
int cmd_theory(const TheoryArgs& args, std::ostream& log = std::cerr);

int cmd_defaults(std::ostream& out = std::cout);

/// Seeded family generation with the usability filter: every expression
/// evaluates on most of a probe grid over the query box, is not constant
/// there, and is unique within the family. With gc.siblings > 1 the family
/// is built from skeleton groups instead (see generate_sibling_family).
std::vector<expr::Expr> generate_family(std::uint64_t seed, int count, int arity,
                                        const cfg::GeneratorConfig& gc,
                                        double domain_min = -3.0, double domain_max = 3.0);

/// Sibling-structured family: each usable skeleton is instantiated with
/// several constant draws. Discriminating siblings requires resolving their
/// constants, which is what pushes the query policy toward spread,
/// informative points.
std::vector<expr::Expr> generate_sibling_family(std::uint64_t seed, int count, int arity,
                                                const cfg::GeneratorConfig& gc,
                                                double domain_min = -3.0,
                                                double domain_max = 3.0);

}  // namespace quosr::cli
