#include "quosr/config.hpp"

#include <cstdlib>
#include <fstream>
#include <set>
#include <sstream>
#include <stdexcept>
#include <vector>

#include <json.hpp>

#include "quosr/common.hpp"

namespace quosr::cfg {

using nlohmann::ordered_json;

namespace {

ordered_json defaults() {
    ExperimentConfig c;
    ordered_json j;
    j["seed"] = c.seed;
    j["arity"] = c.arity;
    j["net"] = {{"latent_dim", c.net.latent_dim},
                {"hidden_width", c.net.hidden_width},
                {"hidden_depth", c.net.hidden_depth},
                {"activation", ad::to_string(c.net.hidden_act)},
                {"output_init_scale", c.net.output_init_scale}};
    j["query"] = {{"max_steps", c.query.max_steps},
                  {"points_per_step", c.query.points_per_step},
                  {"domain_min", c.query.domain_min},
                  {"domain_max", c.query.domain_max},
                  {"strategy", qnet::to_string(c.query.strategy)},
                  {"intersection", latent::to_string(c.query.intersection)},
                  {"similarity", latent::to_string(c.query.similarity)},
                  {"retry_limit", c.query.retry_limit}};
    j["train"] = {{"batch_size", c.train.batch_size},
                  {"learning_rate", c.train.learning_rate},
                  {"temperature", c.train.temperature},
                  {"max_iterations", c.train.max_iterations},
                  {"checkpoint_interval", c.train.checkpoint_interval},
                  {"representation", c.train.representation}};
    j["generator"] = {{"max_depth", c.generator.gen.max_depth},
                      {"const_min", c.generator.gen.const_min},
                      {"const_max", c.generator.gen.const_max},
                      {"const_decimals", c.generator.gen.const_decimals},
                      {"allow_unary", c.generator.gen.allow_unary},
                      {"pow_integer_exponents", c.generator.gen.pow_integer_exponents},
                      {"pow_max_exponent", c.generator.gen.pow_max_exponent},
                      {"usable_fraction", c.generator.usable_fraction},
                      {"siblings", c.generator.siblings}};
    j["eval"] = {{"holdout_points", c.eval.holdout_points},
                 {"holdout_inner", c.eval.holdout_inner},
                 {"holdout_outer", c.eval.holdout_outer},
                 {"fit_starts", c.eval.fit.starts},
                 {"fit_max_iters", c.eval.fit.max_iters},
                 {"refit_top", c.eval.fit.refit_top},
                 {"gp_budget", c.eval.fit.gp_budget}};
    j["paths"] = {{"family", c.paths.family}, {"out_dir", c.paths.out_dir}};
    return j;
}

class Reader {
public:
    Reader(const ordered_json& root, std::vector<std::string>& errors)
        : root_(root), errors_(errors) {}

    // reports unknown keys against the set touched by the get<> calls
    void check_unknown(const std::string& prefix, const ordered_json& obj,
                       const std::set<std::string>& known) {
        for (auto it = obj.begin(); it != obj.end(); ++it)
            if (!known.count(it.key()))
                errors_.push_back("unknown key '" + prefix + it.key() + "'");
    }

    template <typename T>
    void get(const ordered_json& obj, const std::string& prefix, const std::string& key, T& out) {
        if (!obj.contains(key)) return;
        try {
            out = obj.at(key).get<T>();
        } catch (const nlohmann::json::exception&) {
            errors_.push_back("key '" + prefix + key + "' has the wrong type");
        }
    }

private:
    const ordered_json& root_;
    std::vector<std::string>& errors_;
};

}  // namespace

std::string default_config_json() { return defaults().dump(2) + "\n"; }

ExperimentConfig parse_config_json(const std::string& text) {
    ordered_json j;
    try {
        j = ordered_json::parse(text);
    } catch (const nlohmann::json::exception& e) {
        throw std::runtime_error(std::string("config: invalid JSON: ") + e.what());
    }
    if (!j.is_object()) throw std::runtime_error("config: top level must be an object");

    std::vector<std::string> errors;
    Reader rd(j, errors);
    ExperimentConfig c;

    rd.check_unknown("", j, {"seed", "arity", "net", "query", "train", "generator", "eval", "paths"});
    rd.get(j, "", "seed", c.seed);
    c.seed_explicit = j.contains("seed");
    rd.get(j, "", "arity", c.arity);

    if (j.contains("net")) {
        const auto& n = j.at("net");
        rd.check_unknown("net.", n,
                         {"latent_dim", "hidden_width", "hidden_depth", "activation",
                          "output_init_scale"});
        rd.get(n, "net.", "latent_dim", c.net.latent_dim);
        rd.get(n, "net.", "hidden_width", c.net.hidden_width);
        rd.get(n, "net.", "hidden_depth", c.net.hidden_depth);
        std::string act = ad::to_string(c.net.hidden_act);
        rd.get(n, "net.", "activation", act);
        try {
            c.net.hidden_act = ad::act_from_string(act);
        } catch (const std::invalid_argument& e) {
            errors.push_back(std::string("net.activation: ") + e.what());
        }
        rd.get(n, "net.", "output_init_scale", c.net.output_init_scale);
    }

    if (j.contains("query")) {
        const auto& q = j.at("query");
        rd.check_unknown("query.", q,
                         {"max_steps", "points_per_step", "domain_min", "domain_max", "strategy",
                          "intersection", "similarity", "retry_limit"});
        rd.get(q, "query.", "max_steps", c.query.max_steps);
        rd.get(q, "query.", "points_per_step", c.query.points_per_step);
        rd.get(q, "query.", "domain_min", c.query.domain_min);
        rd.get(q, "query.", "domain_max", c.query.domain_max);
        rd.get(q, "query.", "retry_limit", c.query.retry_limit);
        std::string s = qnet::to_string(c.query.strategy);
        rd.get(q, "query.", "strategy", s);
        std::string inter = latent::to_string(c.query.intersection);
        rd.get(q, "query.", "intersection", inter);
        std::string sim = latent::to_string(c.query.similarity);
        rd.get(q, "query.", "similarity", sim);
        try {
            c.query.strategy = qnet::strategy_from_string(s);
        } catch (const std::invalid_argument& e) {
            errors.push_back(std::string("query.strategy: ") + e.what());
        }
        try {
            c.query.intersection = latent::intersection_from_string(inter);
        } catch (const std::invalid_argument& e) {
            errors.push_back(std::string("query.intersection: ") + e.what());
        }
        try {
            c.query.similarity = latent::similarity_from_string(sim);
        } catch (const std::invalid_argument& e) {
            errors.push_back(std::string("query.similarity: ") + e.what());
        }
    }

    if (j.contains("train")) {
        const auto& t = j.at("train");
        rd.check_unknown("train.", t,
                         {"batch_size", "learning_rate", "temperature", "max_iterations",
                          "checkpoint_interval", "representation"});
        rd.get(t, "train.", "batch_size", c.train.batch_size);
        rd.get(t, "train.", "learning_rate", c.train.learning_rate);
        rd.get(t, "train.", "temperature", c.train.temperature);
        rd.get(t, "train.", "max_iterations", c.train.max_iterations);
        rd.get(t, "train.", "checkpoint_interval", c.train.checkpoint_interval);
        rd.get(t, "train.", "representation", c.train.representation);
    }

    if (j.contains("generator")) {
        const auto& g = j.at("generator");
        rd.check_unknown("generator.", g,
                         {"max_depth", "const_min", "const_max", "const_decimals", "allow_unary",
                          "pow_integer_exponents", "pow_max_exponent", "usable_fraction",
                          "siblings"});
        rd.get(g, "generator.", "max_depth", c.generator.gen.max_depth);
        rd.get(g, "generator.", "const_min", c.generator.gen.const_min);
        rd.get(g, "generator.", "const_max", c.generator.gen.const_max);
        rd.get(g, "generator.", "const_decimals", c.generator.gen.const_decimals);
        rd.get(g, "generator.", "allow_unary", c.generator.gen.allow_unary);
        rd.get(g, "generator.", "pow_integer_exponents", c.generator.gen.pow_integer_exponents);
        rd.get(g, "generator.", "pow_max_exponent", c.generator.gen.pow_max_exponent);
        rd.get(g, "generator.", "usable_fraction", c.generator.usable_fraction);
        rd.get(g, "generator.", "siblings", c.generator.siblings);
    }

    if (j.contains("eval")) {
        const auto& e = j.at("eval");
        rd.check_unknown("eval.", e,
                         {"holdout_points", "holdout_inner", "holdout_outer", "fit_starts",
                          "fit_max_iters", "refit_top", "gp_budget"});
        rd.get(e, "eval.", "holdout_points", c.eval.holdout_points);
        rd.get(e, "eval.", "holdout_inner", c.eval.holdout_inner);
        rd.get(e, "eval.", "holdout_outer", c.eval.holdout_outer);
        rd.get(e, "eval.", "fit_starts", c.eval.fit.starts);
        rd.get(e, "eval.", "fit_max_iters", c.eval.fit.max_iters);
        rd.get(e, "eval.", "refit_top", c.eval.fit.refit_top);
        rd.get(e, "eval.", "gp_budget", c.eval.fit.gp_budget);
    }

    if (j.contains("paths")) {
        const auto& p = j.at("paths");
        rd.check_unknown("paths.", p, {"family", "out_dir"});
        rd.get(p, "paths.", "family", c.paths.family);
        rd.get(p, "paths.", "out_dir", c.paths.out_dir);
    }

    // semantic validation, every failure listed before aborting
    if (c.arity < 1) errors.push_back("arity must be >= 1");
    if (c.query.max_steps < 0) errors.push_back("query.max_steps must be >= 0");
    if (c.query.points_per_step < 1) errors.push_back("query.points_per_step must be >= 1");
    if (!(c.query.domain_min < c.query.domain_max))
        errors.push_back("query domain box is empty");
    if (c.query.retry_limit < 0) errors.push_back("query.retry_limit must be >= 0");
    if (c.train.batch_size < 2) errors.push_back("train.batch_size must be >= 2");
    if (!(c.train.temperature > 0.0)) errors.push_back("train.temperature must be > 0");
    if (c.train.learning_rate < 0.0) errors.push_back("train.learning_rate must be >= 0");
    if (c.train.max_iterations < 0) errors.push_back("train.max_iterations must be >= 0");
    if (c.train.checkpoint_interval < 1)
        errors.push_back("train.checkpoint_interval must be >= 1");
    if (c.train.representation != "data" && c.train.representation != "expr")
        errors.push_back("train.representation must be 'data' or 'expr'");
    if (c.net.latent_dim < 1) errors.push_back("net.latent_dim must be >= 1");
    if (c.net.hidden_width < 1) errors.push_back("net.hidden_width must be >= 1");
    if (c.net.hidden_depth < 0) errors.push_back("net.hidden_depth must be >= 0");
    if (!(c.generator.usable_fraction >= 0.0 && c.generator.usable_fraction <= 1.0))
        errors.push_back("generator.usable_fraction must be in [0, 1]");
    if (c.generator.siblings < 1) errors.push_back("generator.siblings must be >= 1");
    if (c.eval.holdout_points < 1) errors.push_back("eval.holdout_points must be >= 1");
    if (!(c.eval.holdout_inner < c.eval.holdout_outer))
        errors.push_back("eval.holdout_inner must be < eval.holdout_outer");

    if (!errors.empty()) {
        std::ostringstream msg;
        msg << "config validation failed with " << errors.size() << " error(s):";
        for (const auto& e : errors) msg << "\n  - " << e;
        throw std::runtime_error(msg.str());
    }
    return c;
}

ExperimentConfig load_config(const std::optional<std::string>& path) {
    if (!path) return parse_config_json(default_config_json());
    std::ifstream is(*path);
    if (!is) throw std::runtime_error("config: cannot open '" + *path + "'");
    std::ostringstream ss;
    ss << is.rdbuf();
    return parse_config_json(ss.str());
}

std::string to_json(const ExperimentConfig& c) {
    ordered_json j = defaults();
    j["seed"] = c.seed;
    j["arity"] = c.arity;
    j["net"]["latent_dim"] = c.net.latent_dim;
    j["net"]["hidden_width"] = c.net.hidden_width;
    j["net"]["hidden_depth"] = c.net.hidden_depth;
    j["net"]["activation"] = ad::to_string(c.net.hidden_act);
    j["net"]["output_init_scale"] = c.net.output_init_scale;
    j["query"]["max_steps"] = c.query.max_steps;
    j["query"]["points_per_step"] = c.query.points_per_step;
    j["query"]["domain_min"] = c.query.domain_min;
    j["query"]["domain_max"] = c.query.domain_max;
    j["query"]["strategy"] = qnet::to_string(c.query.strategy);
    j["query"]["intersection"] = latent::to_string(c.query.intersection);
    j["query"]["similarity"] = latent::to_string(c.query.similarity);
    j["query"]["retry_limit"] = c.query.retry_limit;
    j["train"]["batch_size"] = c.train.batch_size;
    j["train"]["learning_rate"] = c.train.learning_rate;
    j["train"]["temperature"] = c.train.temperature;
    j["train"]["max_iterations"] = c.train.max_iterations;
    j["train"]["checkpoint_interval"] = c.train.checkpoint_interval;
    j["train"]["representation"] = c.train.representation;
    j["generator"]["max_depth"] = c.generator.gen.max_depth;
    j["generator"]["const_min"] = c.generator.gen.const_min;
    j["generator"]["const_max"] = c.generator.gen.const_max;
    j["generator"]["const_decimals"] = c.generator.gen.const_decimals;
    j["generator"]["allow_unary"] = c.generator.gen.allow_unary;
    j["generator"]["pow_integer_exponents"] = c.generator.gen.pow_integer_exponents;
    j["generator"]["pow_max_exponent"] = c.generator.gen.pow_max_exponent;
    j["generator"]["usable_fraction"] = c.generator.usable_fraction;
    j["generator"]["siblings"] = c.generator.siblings;
    j["eval"]["holdout_points"] = c.eval.holdout_points;
    j["eval"]["holdout_inner"] = c.eval.holdout_inner;
    j["eval"]["holdout_outer"] = c.eval.holdout_outer;
    j["eval"]["fit_starts"] = c.eval.fit.starts;
    j["eval"]["fit_max_iters"] = c.eval.fit.max_iters;
    j["eval"]["refit_top"] = c.eval.fit.refit_top;
    j["eval"]["gp_budget"] = c.eval.fit.gp_budget;
    j["paths"]["family"] = c.paths.family;
    j["paths"]["out_dir"] = c.paths.out_dir;
    return j.dump(2) + "\n";
}

std::uint64_t resolve_seed(const std::optional<std::uint64_t>& flag_seed,
                           const ExperimentConfig& config, bool config_had_seed) {
    if (flag_seed) return *flag_seed;
    if (config_had_seed || config.seed_explicit) return config.seed;
    if (const char* env = std::getenv("QUOSR_SEED")) {
        try {
            return std::stoull(env);
        } catch (const std::exception&) {
            throw std::runtime_error("QUOSR_SEED is not a valid integer: '" + std::string(env) + "'");
        }
    }
    return config.seed;
}

}  // namespace quosr::cfg
