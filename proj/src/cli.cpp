#include "quosr/cli.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <map>
#include <set>
#include <sstream>

#include "quosr/common.hpp"
#include "quosr/io.hpp"
#include "quosr/mioracle.hpp"
#include "quosr/querynet.hpp"
#include "quosr/regressor.hpp"
#include "quosr/training.hpp"

namespace quosr::cli {

namespace fs = std::filesystem;

// ----------------------------------------------------------------- helpers

namespace {

cfg::ExperimentConfig load_cfg(const std::optional<std::string>& path) {
    return cfg::load_config(path);
}

std::uint64_t pick_seed(const std::optional<std::uint64_t>& flag,
                        const cfg::ExperimentConfig& c) {
    return cfg::resolve_seed(flag, c, c.seed_explicit);
}

void ensure_dir(const std::string& dir) {
    if (dir.empty()) throw std::runtime_error("output directory not set");
    fs::create_directories(dir);
}

}  // namespace

namespace {

// usability probe over a fixed grid: evaluable on most of the box and not
// constant there
bool usable_on_box(const expr::Expr& e, int arity, double usable_fraction, double domain_min,
                   double domain_max) {
    constexpr int kProbe = 33;
    int ok = 0;
    double lo = 0.0, hi = 0.0;
    bool first = true;
    for (int p = 0; p < kProbe; ++p) {
        std::vector<double> x(static_cast<std::size_t>(arity));
        for (int c = 0; c < arity; ++c)
            x[static_cast<std::size_t>(c)] =
                domain_min +
                (domain_max - domain_min) * (p + 0.5 * (c + 1) / (arity + 1)) / kProbe;
        auto r = expr::evaluate(e, x);
        if (!r.ok()) continue;
        ++ok;
        if (first) {
            lo = hi = r.value;
            first = false;
        } else {
            lo = std::min(lo, r.value);
            hi = std::max(hi, r.value);
        }
    }
    return ok >= static_cast<int>(std::ceil(usable_fraction * kProbe)) && hi - lo > 1e-9;
}

}  // namespace

std::vector<expr::Expr> generate_family(std::uint64_t seed, int count, int arity,
                                        const cfg::GeneratorConfig& gc, double domain_min,
                                        double domain_max) {
    if (gc.siblings > 1) return generate_sibling_family(seed, count, arity, gc, domain_min, domain_max);
    std::vector<expr::Expr> out;
    std::set<std::string> seen;
    constexpr int kAttemptCap = 512;

    for (int i = 0; i < count; ++i) {
        bool placed = false;
        for (int attempt = 0; attempt < kAttemptCap && !placed; ++attempt) {
            const std::uint64_t es = mix_seed(mix_seed(seed, static_cast<std::uint64_t>(i)),
                                              static_cast<std::uint64_t>(attempt));
            expr::Expr e = expr::random_expr(es, arity, gc.gen);
            const std::string text = e.str();
            if (seen.count(text)) continue;
            if (!usable_on_box(e, arity, gc.usable_fraction, domain_min, domain_max)) continue;
            seen.insert(text);
            out.push_back(std::move(e));
            placed = true;
        }
        if (!placed)
            throw std::runtime_error("generate_family: no usable expression for slot " +
                                     std::to_string(i) + " after " + std::to_string(kAttemptCap) +
                                     " attempts");
    }
    return out;
}

std::vector<expr::Expr> generate_sibling_family(std::uint64_t seed, int count, int arity,
                                                const cfg::GeneratorConfig& gc, double domain_min,
                                                double domain_max) {
    std::vector<expr::Expr> out;
    std::set<std::string> seen;
    Rng rng(mix_seed(seed, 999));
    const int siblings = std::max(1, gc.siblings);

    for (std::uint64_t b = 0; static_cast<int>(out.size()) < count; ++b) {
        if (b > static_cast<std::uint64_t>(count) * 512)
            throw std::runtime_error("generate_sibling_family: ran out of usable skeletons");
        expr::Expr base = expr::random_expr(mix_seed(seed, b), arity, gc.gen);
        if (!usable_on_box(base, arity, gc.usable_fraction, domain_min, domain_max)) continue;
        expr::Skeleton skel = expr::skeletonize(base);
        if (skel.hole_count() == 0) {
            if (seen.insert(base.str()).second) out.push_back(base);
            continue;
        }
        const double quant = std::pow(10.0, gc.gen.const_decimals);
        int made = 0;
        for (int attempt = 0; made < siblings && attempt < 256 &&
                              static_cast<int>(out.size()) < count;
             ++attempt) {
            std::vector<double> consts(static_cast<std::size_t>(skel.hole_count()));
            for (auto& c : consts)
                c = std::round(rng.uniform(gc.gen.const_min, gc.gen.const_max) * quant) / quant;
            expr::Expr e = expr::instantiate(skel, consts);
            if (!usable_on_box(e, arity, gc.usable_fraction, domain_min, domain_max)) continue;
            if (!seen.insert(e.str()).second) continue;
            out.push_back(std::move(e));
            ++made;
        }
    }
    return out;
}

int cmd_gen(const GenArgs& args, std::ostream& log) {
    try {
        if (args.out.empty()) throw std::runtime_error("gen: --out is required");
        if (args.count < 0) throw std::runtime_error("gen: count must be >= 0");
        cfg::ExperimentConfig c = load_cfg(args.config);
        const std::uint64_t seed = pick_seed(args.seed, c);
        auto family = generate_family(seed, args.count, c.arity, c.generator,
                                      c.query.domain_min, c.query.domain_max);
        io::write_expr_family(args.out, family, c.arity);
        log << "gen: wrote " << family.size() << " expressions to " << args.out << "\n";
        return 0;
    } catch (const std::exception& e) {
        log << "gen: error: " << e.what() << "\n";
        return 1;
    }
}

// ------------------------------------------------------------------- train

namespace {

constexpr const char* kCheckpointName = "checkpoint.bin";
constexpr const char* kTraceName = "trace.csv";

ad::Checkpoint trainer_checkpoint(const train::Trainer& trainer,
                                  const cfg::ExperimentConfig& config) {
    ad::Checkpoint ck = trainer.to_checkpoint();
    ck.meta["config"] = cfg::to_json(config);
    return ck;
}

}  // namespace

int cmd_train(const TrainArgs& args, std::ostream& log) {
    try {
        cfg::ExperimentConfig c = load_cfg(args.config);
        if (args.seed) c.seed = *args.seed;
        else c.seed = pick_seed(std::nullopt, c);
        c.train.seed = c.seed;
        if (args.iterations) c.train.max_iterations = *args.iterations;
        const std::string family_path = args.family.value_or(c.paths.family);
        const std::string out_dir = args.out_dir.value_or(c.paths.out_dir);
        if (family_path.empty()) throw std::runtime_error("train: no family file given");
        ensure_dir(out_dir);

        int arity = 1;
        auto family = io::read_expr_family(family_path, &arity);
        if (arity != c.arity)
            throw std::runtime_error("train: family arity " + std::to_string(arity) +
                                     " != config arity " + std::to_string(c.arity));

        train::Trainer trainer(family, c.net, c.query, c.train);
        const std::string ck_path = (fs::path(out_dir) / kCheckpointName).string();
        const std::string trace_path = (fs::path(out_dir) / kTraceName).string();

        if (args.resume) {
            trainer.restore(ad::load_checkpoint(ck_path));
            io::truncate_trace(trace_path, trainer.iteration());
            log << "train: resumed from iteration " << trainer.iteration() << "\n";
        } else {
            io::write_trace_header(trace_path, std::max(1, c.query.max_steps));
        }

        auto res = trainer.run(c.train.max_iterations, [&](const train::TraceRow& row) {
            io::append_trace_row(trace_path, row);
            if (row.iteration % c.train.checkpoint_interval == 0)
                ad::save_checkpoint(ck_path, trainer_checkpoint(trainer, c));
        });

        if (res.status == train::TrainStatus::Diverged) {
            log << "train: diverged: " << res.message << "\n";
            return 2;
        }
        ad::save_checkpoint(ck_path, trainer_checkpoint(trainer, c));
        log << "train: finished at iteration " << trainer.iteration() << ", checkpoint "
            << ck_path << "\n";
        return 0;
    } catch (const std::exception& e) {
        log << "train: error: " << e.what() << "\n";
        return 1;
    }
}

// ------------------------------------------------------------------- query

namespace {

struct LoadedModel {
    cfg::ExperimentConfig config;
    qnet::QueryNetParams params;
};

LoadedModel load_model(const std::string& ck_path) {
    ad::Checkpoint ck = ad::load_checkpoint(ck_path);
    auto it = ck.meta.find("config");
    if (it == ck.meta.end())
        throw std::runtime_error("checkpoint '" + ck_path + "' carries no configuration");
    LoadedModel m{cfg::parse_config_json(it->second), {}};
    m.params = qnet::QueryNetParams(m.config.arity, m.config.net, m.config.query.strategy,
                                    m.config.query.points_per_step, m.config.seed);
    // the checkpoint may also carry expression-encoder tensors; they are not
    // part of the query network
    std::vector<std::pair<std::string, ad::Tensor>> core;
    for (const auto& nt : ck.tensors)
        if (nt.first.rfind("expr.", 0) != 0) core.push_back(nt);
    m.params.load_named(core);
    return m;
}

}  // namespace

int cmd_query(const QueryArgs& args, std::ostream& log) {
    try {
        if (args.family.empty()) throw std::runtime_error("query: --family is required");
        if (args.out.empty()) throw std::runtime_error("query: --out is required");
        if (args.method != "quosr" && args.method != "uniform" && args.method != "normal")
            throw std::runtime_error("query: method must be quosr, uniform, or normal");

        cfg::ExperimentConfig c;
        std::optional<qnet::QueryNetParams> params;
        if (args.method == "quosr") {
            if (!args.checkpoint)
                throw std::runtime_error("query: --checkpoint is required for method quosr");
            LoadedModel m = load_model(*args.checkpoint);
            c = std::move(m.config);
            params = std::move(m.params);
        } else {
            c = load_cfg(args.config);
        }
        if (args.max_steps) c.query.max_steps = *args.max_steps;
        const std::uint64_t seed = pick_seed(args.seed, c);

        int arity = 1;
        auto family = io::read_expr_family(args.family, &arity);
        if (arity != c.arity)
            throw std::runtime_error("query: family arity mismatch with configuration");

        std::vector<io::DatasetRecord> records;
        std::ostringstream variance_csv;
        variance_csv << "# quosr-latentvar v1\nexpr_id,step,mean_log_var\n";
        int failures = 0;
        for (std::size_t i = 0; i < family.size(); ++i) {
            qnet::System f = qnet::system_from_expr(family[i]);
            try {
                qnet::RolloutRecord rec =
                    args.method == "quosr"
                        ? qnet::run_query_loop(*params, f, c.query, mix_seed(seed, i))
                        : qnet::run_baseline_loop(args.method, f, c.query, c.arity,
                                                  mix_seed(seed, i));
                records.push_back(io::DatasetRecord{static_cast<int>(i), rec.points, rec.step,
                                                    rec.substituted});
                for (std::size_t k = 0; k < rec.step_mean_log_var.size(); ++k)
                    variance_csv << i << ',' << k << ','
                                 << format_double(rec.step_mean_log_var[k]) << "\n";
            } catch (const std::runtime_error& e) {
                ++failures;
                log << "query: expression " << i << " (" << family[i].str()
                    << ") skipped: " << e.what() << "\n";
            }
        }
        io::write_datasets(args.out, records, c.arity, args.method);
        if (args.variance_out) {
            if (args.method != "quosr")
                throw std::runtime_error("query: --variance-out needs method quosr");
            io::write_text_file(*args.variance_out, variance_csv.str());
        }
        log << "query: wrote " << records.size() << " datasets (" << failures
            << " skipped) to " << args.out << "\n";
        return 0;
    } catch (const std::exception& e) {
        log << "query: error: " << e.what() << "\n";
        return 1;
    }
}

// -------------------------------------------------------------------- eval

int cmd_eval(const EvalArgs& args, std::ostream& log) {
    try {
        if (args.datasets.empty()) throw std::runtime_error("eval: no dataset files given");
        if (args.family.empty()) throw std::runtime_error("eval: --family is required");
        ensure_dir(args.out_dir);

        cfg::ExperimentConfig c = load_cfg(args.config);
        if (!args.seed && !c.seed_explicit && !std::getenv("QUOSR_SEED"))
            throw std::runtime_error("eval: held-out seed missing (give --seed, a config seed, "
                                     "or QUOSR_SEED)");
        c.eval.eval_seed = pick_seed(args.seed, c);

        int arity = 1;
        auto family = io::read_expr_family(args.family, &arity);
        auto bank_exprs = args.bank ? io::read_expr_family(*args.bank) : family;
        reg::CandidateBank bank = reg::CandidateBank::from_expressions(bank_exprs, true);

        // load every method and keep the expression ids present in all of them
        struct MethodData {
            std::string name;
            std::map<int, io::DatasetRecord> by_id;
        };
        std::vector<MethodData> methods;
        std::set<int> common;
        for (std::size_t d = 0; d < args.datasets.size(); ++d) {
            std::string method;
            auto records = io::read_datasets(args.datasets[d], nullptr, &method);
            MethodData md;
            md.name = method.empty() ? ("set" + std::to_string(d)) : method;
            std::set<int> ids;
            for (auto& r : records) {
                ids.insert(r.expr_id);
                md.by_id[r.expr_id] = std::move(r);
            }
            if (d == 0) {
                common = ids;
            } else {
                std::set<int> keep;
                std::set_intersection(common.begin(), common.end(), ids.begin(), ids.end(),
                                      std::inserter(keep, keep.begin()));
                common = std::move(keep);
            }
            methods.push_back(std::move(md));
        }
        for (int id : common)
            if (id < 0 || id >= static_cast<int>(family.size()))
                throw std::runtime_error("eval: dataset expression id " + std::to_string(id) +
                                         " outside the family");

        std::vector<expr::Expr> eval_family;
        for (int id : common) eval_family.push_back(family[static_cast<std::size_t>(id)]);

        std::ostringstream summary;
        summary << "# quosr-evalsummary v1\n";
        summary << "expressions evaluated: " << eval_family.size() << " of " << family.size()
                << "\n";

        std::vector<std::string> labels{"mean_r2", "prop_log_mse<-10", "isclose", "skeleton"};
        std::map<std::string, std::vector<double>> bars;
        std::map<std::string, std::vector<double>> curves;

        for (auto& md : methods) {
            std::vector<reg::LabeledDataset> data;
            for (int id : common) {
                const auto& rec = md.by_id.at(id);
                data.push_back(reg::LabeledDataset{rec.points, rec.step});
            }
            reg::EvalReport rep = reg::evaluate_datasets(eval_family, data, bank, c.eval);
            io::write_eval_report(
                (fs::path(args.out_dir) / ("report_" + md.name + ".csv")).string(), rep, md.name);
            bars[md.name] = {rep.mean_r2, rep.prop_log_mse_below, rep.mean_isclose,
                             rep.skeleton_match_rate};
            curves[md.name] = reg::per_step_r2(eval_family, data, bank, c.eval);

            summary << "method " << md.name << ": mean_r2=" << format_double(rep.mean_r2)
                    << " prop_log_mse=" << format_double(rep.prop_log_mse_below)
                    << " isclose=" << format_double(rep.mean_isclose)
                    << " skeleton=" << format_double(rep.skeleton_match_rate) << "\n";
        }

        io::write_bar_chart_svg((fs::path(args.out_dir) / "comparison.svg").string(),
                                "regression quality by sampling method", labels, bars);
        io::write_line_chart_svg((fs::path(args.out_dir) / "per_step.svg").string(),
                                 "mean R2 by query step", "query step", curves);

        // per-step CSV: one column per method
        {
            std::ostringstream csv;
            csv << "# quosr-perstep v1\nstep";
            for (const auto& [name, vals] : curves) csv << ',' << name;
            csv << "\n";
            std::size_t rows = 0;
            for (const auto& [name, vals] : curves) rows = std::max(rows, vals.size());
            for (std::size_t k = 0; k < rows; ++k) {
                csv << k;
                for (const auto& [name, vals] : curves)
                    csv << ',' << (k < vals.size() ? format_double(vals[k]) : "");
                csv << "\n";
            }
            io::write_text_file((fs::path(args.out_dir) / "per_step.csv").string(), csv.str());
        }
        io::write_text_file((fs::path(args.out_dir) / "summary.txt").string(), summary.str());
        log << summary.str();
        return 0;
    } catch (const std::exception& e) {
        log << "eval: error: " << e.what() << "\n";
        return 1;
    }
}

// ------------------------------------------------------------------ theory

int cmd_theory(const TheoryArgs& args, std::ostream& log) {
    try {
        ensure_dir(args.out_dir);
        const std::uint64_t seed = args.seed.value_or(0);
        int violations = 0;
        std::ostringstream report;
        report << "# quosr-theoryreport v1\n";

        // named family, when given
        if (args.family) {
            mi::DiscreteFamily fam = mi::load_family(*args.family);
            if (fam.size() > 16 || fam.grid_size > 8)
                throw std::runtime_error("theory: family too large (limits: 16 functions, "
                                         "8 grid points)");
            mi::DecisionTree greedy = mi::greedy_max_mi_tree(fam);
            mi::DecisionTree optimal = mi::optimal_tree(fam, 32);
            mi::HuffmanReport rep = mi::check_huffman_bound(fam, optimal);
            report << "family " << *args.family << ": H=" << format_double(rep.entropy)
                   << " optimal=" << format_double(rep.avg_path)
                   << " greedy=" << format_double(greedy.average_path(fam)) << " bounds=["
                   << format_double(rep.lower) << "," << format_double(rep.upper) << ") "
                   << (rep.holds ? "PASS" : "FAIL") << "\n";
            if (!rep.holds) ++violations;
            if (optimal.average_path(fam) > greedy.average_path(fam) + 1e-9) {
                report << "family " << *args.family << ": optimal exceeded greedy FAIL\n";
                ++violations;
            }
        }

        // huffman sweep over random separable families
        {
            std::ostringstream csv;
            csv << "# quosr-huffman v1\nindex,functions,alphabet,entropy_bits,avg_path,lower,"
                   "upper,holds\n";
            double worst_margin = 1e300;
            for (int t = 0; t < args.sweep_count; ++t) {
                const int n = 2 + static_cast<int>(mix_seed(seed, static_cast<std::uint64_t>(t)) % 11);
                const int alphabet = (t % 3 == 0) ? 4 : 8;
                mi::DiscreteFamily fam = mi::random_separable_family(
                    mix_seed(seed, 10000 + static_cast<std::uint64_t>(t)), n, 8, alphabet, t % 2 == 0);
                mi::DecisionTree optimal = mi::optimal_tree(fam, 32);
                mi::HuffmanReport rep = mi::check_huffman_bound(fam, optimal);
                mi::DecisionTree greedy = mi::greedy_max_mi_tree(fam);
                if (!rep.holds) ++violations;
                if (optimal.average_path(fam) > greedy.average_path(fam) + 1e-9) ++violations;
                worst_margin = std::min(worst_margin, rep.upper - rep.avg_path);
                csv << t << ',' << n << ',' << alphabet << ',' << format_double(rep.entropy)
                    << ',' << format_double(rep.avg_path) << ',' << format_double(rep.lower)
                    << ',' << format_double(rep.upper) << ',' << (rep.holds ? 1 : 0) << "\n";
            }
            io::write_text_file((fs::path(args.out_dir) / "huffman.csv").string(), csv.str());
            report << "huffman sweep: " << args.sweep_count
                   << " families, min upper-bound margin " << format_double(worst_margin)
                   << (violations == 0 ? " PASS" : " FAIL") << "\n";
        }

        // claim-2 chain over random stochastic policies
        {
            std::ostringstream csv;
            csv << "# quosr-claim2 v1\nindex,neg_lnce,sigma,kl_term,mi_d,mi_dprime,holds\n";
            for (int t = 0; t < args.claim2_count; ++t) {
                Rng rng(mix_seed(seed, 20000 + static_cast<std::uint64_t>(t)));
                const int n = 3 + static_cast<int>(rng.below(4));
                const int g = 3 + static_cast<int>(rng.below(2));
                mi::DiscreteFamily fam = mi::random_separable_family(
                    mix_seed(seed, 30000 + static_cast<std::uint64_t>(t)), n, g, 2, t % 2 == 0);

                auto random_policy = [&]() {
                    std::vector<std::pair<std::vector<int>, double>> sets;
                    const int k = 2 + static_cast<int>(rng.below(2));
                    std::vector<double> w;
                    for (int s = 0; s < k; ++s) {
                        std::vector<int> qs;
                        const int sz = 1 + static_cast<int>(rng.below(2));
                        while (static_cast<int>(qs.size()) < sz) {
                            const int q = static_cast<int>(rng.below(static_cast<std::uint64_t>(g)));
                            if (std::find(qs.begin(), qs.end(), q) == qs.end()) qs.push_back(q);
                        }
                        std::sort(qs.begin(), qs.end());
                        sets.emplace_back(qs, 0.0);
                        w.push_back(0.05 + rng.uniform());
                    }
                    double total = 0.0;
                    for (double x : w) total += x;
                    double acc = 0.0;
                    for (std::size_t s = 0; s + 1 < sets.size(); ++s) {
                        sets[s].second = w[s] / total;
                        acc += sets[s].second;
                    }
                    sets.back().second = 1.0 - acc;
                    return mi::query_set_policy(fam, sets);
                };
                mi::StochasticPolicy pd = random_policy();
                mi::StochasticPolicy pdp = random_policy();
                mi::Claim2Report rep = mi::check_claim2_chain(
                    fam, pd, pdp, nullptr, 8, 20000, mix_seed(seed, 40000 + static_cast<std::uint64_t>(t)));
                if (!rep.holds) ++violations;
                csv << t << ',' << format_double(rep.neg_lnce) << ','
                    << format_double(rep.neg_lnce_sigma) << ',' << format_double(rep.kl_term)
                    << ',' << format_double(rep.mi_d) << ',' << format_double(rep.mi_dprime)
                    << ',' << (rep.holds ? 1 : 0) << "\n";
            }
            io::write_text_file((fs::path(args.out_dir) / "claim2.csv").string(), csv.str());
            report << "claim-2 chain: " << args.claim2_count << " instances "
                   << (violations == 0 ? "PASS" : "FAIL") << "\n";
        }

        report << "violations: " << violations << "\n";
        io::write_text_file((fs::path(args.out_dir) / "theory_report.txt").string(),
                            report.str());
        log << report.str();
        return violations == 0 ? 0 : 3;
    } catch (const std::exception& e) {
        log << "theory: error: " << e.what() << "\n";
        return 1;
    }
}

int cmd_defaults(std::ostream& out) {
    out << cfg::default_config_json();
    return 0;
}

}  // namespace quosr::cli
