#include <CLI11.hpp>

#include "quosr/cli.hpp"

using namespace quosr;

int main(int argc, char** argv) {
    CLI::App app{"QUOSR: query-based online symbolic regression"};
    app.require_subcommand(1);

    cli::GenArgs gen;
    auto* sgen = app.add_subcommand("gen", "generate an expression family file");
    sgen->add_option("--config", gen.config, "experiment config JSON");
    sgen->add_option("--seed", gen.seed, "generation seed");
    sgen->add_option("--count", gen.count, "number of expressions")->required();
    sgen->add_option("--out", gen.out, "output family file")->required();

    cli::TrainArgs tr;
    auto* strain = app.add_subcommand("train", "train the query network");
    strain->add_option("--config", tr.config, "experiment config JSON")->required();
    strain->add_option("--family", tr.family, "training family file (overrides paths.family)");
    strain->add_option("--out-dir", tr.out_dir, "output directory (overrides paths.out_dir)");
    strain->add_option("--iterations", tr.iterations, "override train.max_iterations");
    strain->add_option("--seed", tr.seed, "override the training seed");
    strain->add_flag("--resume", tr.resume, "resume from the checkpoint in the output directory");

    cli::QueryArgs qu;
    auto* squery = app.add_subcommand("query", "generate datasets by querying systems");
    squery->add_option("--checkpoint", qu.checkpoint, "trained checkpoint (method quosr)");
    squery->add_option("--family", qu.family, "expression family to query")->required();
    squery->add_option("--out", qu.out, "output dataset file")->required();
    squery->add_option("--method", qu.method, "quosr | uniform | normal");
    squery->add_option("--config", qu.config, "config JSON for baseline methods");
    squery->add_option("--max-steps", qu.max_steps, "override query.max_steps");
    squery->add_option("--seed", qu.seed, "query seed");
    squery->add_option("--variance-out", qu.variance_out,
                       "CSV of per-step latent log-variance (method quosr)");

    cli::EvalArgs ev;
    auto* seval = app.add_subcommand("eval", "fit and score datasets against held-out points");
    seval->add_option("--datasets", ev.datasets, "dataset files (one per method)")
        ->required()
        ->expected(-1);
    seval->add_option("--family", ev.family, "truth family file")->required();
    seval->add_option("--bank", ev.bank, "candidate bank family (defaults to the truth family)");
    seval->add_option("--out-dir", ev.out_dir, "output directory")->required();
    seval->add_option("--config", ev.config, "experiment config JSON");
    seval->add_option("--seed", ev.seed, "held-out evaluation seed");

    cli::TheoryArgs th;
    auto* stheory = app.add_subcommand("theory", "run the information-theoretic checks");
    stheory->add_option("--family", th.family, "discrete family file to check");
    stheory->add_option("--out-dir", th.out_dir, "output directory")->required();
    stheory->add_option("--seed", th.seed, "sweep seed");
    stheory->add_option("--sweep-count", th.sweep_count, "random families in the bound sweep");
    stheory->add_option("--claim2-count", th.claim2_count, "stochastic policy instances");

    auto* sdef = app.add_subcommand("defaults", "print the default configuration");

    CLI11_PARSE(app, argc, argv);

    if (sgen->parsed()) return cli::cmd_gen(gen);
    if (strain->parsed()) return cli::cmd_train(tr);
    if (squery->parsed()) return cli::cmd_query(qu);
    if (seval->parsed()) return cli::cmd_eval(ev);
    if (stheory->parsed()) return cli::cmd_theory(th);
    if (sdef->parsed()) return cli::cmd_defaults();
    return 1;
}
