#include <iostream>
#include <optional>
#include <string>

#include "CLI11.hpp"
#include "safeopl/safeopl.hpp"

using namespace safeopl;

namespace {

struct Globals {
    std::optional<std::uint64_t> seed;
    std::string out;
    bool force = false;
    int threads = 0;
    bool paper_scale = false;
    std::string config;
};

ExperimentConfig resolve_config(const Globals& g) {
    ExperimentConfig base = g.paper_scale ? ExperimentConfig::paper_scale() : ExperimentConfig::desk();
    ExperimentConfig cfg = g.config.empty() ? base : load_experiment_config(g.config, base);
    apply_environment_overrides(cfg);
    if (!g.out.empty()) cfg.output_dir = g.out;
    if (g.threads > 0) cfg.threads = g.threads;
    if (g.seed) cfg.seed = *g.seed;
    cfg.hcope.delta = cfg.delta;
    cfg.validate();
    return cfg;
}

Environment resolve_environment(const ExperimentConfig& cfg, const std::string& env_dir) {
    return env_dir.empty() ? Environment(cfg.environment) : load_environment(env_dir);
}

fs::path out_dir(const ExperimentConfig& cfg) { return cfg.output_dir; }

void print_metrics(const MetricReport& m, double C) {
    std::cout << json{{"true_value", m.true_value},
                      {"relative_value", m.relative_value},
                      {"novelty", m.novelty},
                      {"threshold", C},
                      {"violated", m.violated}}
                     .dump(2)
              << '\n';
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Safe off-policy learning with novel actions: data generation, training, DEPSUE and sweeps"};
    app.require_subcommand(1);
    Globals g;
    app.add_option("--seed", g.seed, "Base seed (overrides the config)");
    app.add_option("--out", g.out, "Output directory");
    app.add_flag("--force", g.force, "Recompute sweep cells that already exist");
    app.add_option("--threads", g.threads, "Worker threads for sweeps")->check(CLI::PositiveNumber);
    app.add_flag("--paper-scale", g.paper_scale, "Start from the full-scale profile instead of the desk profile");
    app.add_option("--config", g.config, "Experiment config (JSON)");

    auto* gen_env = app.add_subcommand("gen-env", "Write the ground-truth environment");

    auto* gen_data = app.add_subcommand("gen-data", "Log data with the softmax logging policy");
    double beta = 0.0;
    std::size_t n = 0;
    std::string env_dir;
    double split = 0.5;
    gen_data->add_option("--beta", beta, "Logging inverse temperature")->required();
    gen_data->add_option("-n,--n", n, "Number of samples (default: n_logged)");
    gen_data->add_option("--env", env_dir, "Environment directory from gen-env");
    gen_data->add_option("--split", split, "Fraction of rows labelled S1 (0 leaves folds unset)")
        ->check(CLI::Range(0.0, 1.0));

    auto* train = app.add_subcommand("train", "Train one policy on a logged dataset");
    std::string data_path;
    std::string method = "safe_opg";
    train->add_option("--data", data_path, "Dataset CSV")->required();
    train->add_option("--method", method, "opg_naive, opg_cql or safe_opg")
        ->check(CLI::IsMember({"opg_naive", "opg_cql", "safe_opg"}));
    train->add_option("--env", env_dir, "Environment directory from gen-env");

    auto* depsue = app.add_subcommand("depsue", "Run a K-stage deployment");
    int K = 2;
    depsue->add_option("--beta", beta, "Logging inverse temperature")->required();
    depsue->add_option("-K,--K", K, "Number of deployments")->check(CLI::PositiveNumber);
    depsue->add_option("--env", env_dir, "Environment directory from gen-env");

    auto* evaluate = app.add_subcommand("evaluate", "Exact value and novelty of a policy");
    std::string policy_path;
    evaluate->add_option("--policy", policy_path, "Policy snapshot (omit to evaluate pi0)");
    evaluate->add_option("--beta", beta, "Logging inverse temperature for V(pi0) and C")->required();
    evaluate->add_option("--env", env_dir, "Environment directory from gen-env");

    auto* run = app.add_subcommand("run", "Run the configured sweep");
    auto* rep = app.add_subcommand("report", "Summary tables from a sweep directory");
    std::string results;
    rep->add_option("--results", results, "Sweep directory (default: --out)");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e) == 0 ? 0 : 1;
    }

    try {
        const ExperimentConfig cfg = resolve_config(g);
        const fs::path out = out_dir(cfg);
        RngStream root(cfg.seed, fnv1a64("cli"));

        if (*gen_env) {
            const Environment env(cfg.environment);
            save_environment(out, env);
            std::cout << "environment written to " << out << '\n';
        } else if (*gen_data) {
            const Environment env = resolve_environment(cfg, env_dir);
            auto rng = root.derive("gen-data");
            BanditDataset d = generate_logged_data(env, {beta}, n ? n : cfg.n_logged, rng);
            if (split > 0.0) {
                auto split_rng = rng.derive("split");
                d = split_dataset(d, split, split_rng);
            }
            save_dataset(out / "data.csv", d);
            std::cout << d.size() << " samples, on-policy value " << on_policy_value(d) << ", written to "
                      << out / "data.csv" << '\n';
        } else if (*train) {
            const Environment env = resolve_environment(cfg, env_dir);
            BanditDataset d = load_dataset(data_path);
            const double C = cfg.threshold_factor * on_policy_value(d);
            auto rng = root.derive("train").derive(method);
            PolicyTrainingResult result;
            if (method == "safe_opg") {
                if (d.fold_size(Fold::S1) == 0 || d.fold_size(Fold::S2) == 0) {
                    auto split_rng = rng.derive("split");
                    d = split_dataset(d, 0.5, split_rng);
                }
                const auto s1 = d.fold(Fold::S1);
                const auto s2 = d.fold(Fold::S2);
                auto model_rng = rng.derive("reward_model");
                const auto model = train_reward_model(s1, env.action_features(), cfg.reward_model,
                                                      RewardModelVariant::NaiveMean, model_rng);
                save_reward_model(out / "reward_model.csv", model);
                auto train_rng = rng.derive("learner");
                result = train_safe_opg(s1, s2, {C, cfg.delta}, cfg.hcope, model, env.action_features(),
                                        cfg.safe_train, train_rng);
            } else {
                const auto variant = method == "opg_cql" ? RewardModelVariant::Cql : RewardModelVariant::NaiveMean;
                auto model_rng = rng.derive("reward_model");
                const auto model = train_reward_model(d, env.action_features(), cfg.reward_model, variant, model_rng);
                save_reward_model(out / "reward_model.csv", model);
                auto train_rng = rng.derive("learner");
                result = train_opg(d, model, env.action_features(), cfg.opg_train, train_rng);
            }
            save_policy(out / "policy.csv", result.policy);
            write_file_atomic(out / "trace.csv", trace_csv(result.state));
            std::cout << "trained " << method << " (C = " << C << ", final lambda " << result.state.lambda
                      << "), policy written to " << out / "policy.csv" << '\n';
        } else if (*depsue) {
            const Environment env = resolve_environment(cfg, env_dir);
            auto rng = root.derive("depsue");
            auto data_rng = rng.derive("logged_data");
            const BanditDataset d0 = generate_logged_data(env, {beta}, cfg.n_logged, data_rng);
            const double v_on = on_policy_value(d0);
            const auto plan = depsue_plan(cfg, K, cfg.threshold_factor * v_on, v_on);
            auto sub_rng = rng.derive("subsample");
            const BanditDataset initial = K > 1 ? subsample(d0, plan.stage_samples(), sub_rng) : d0;
            auto run_rng = rng.derive("stages");
            const auto history =
                run_depsue(env, {beta}, plan, cfg.reward_model, cfg.safe_train, cfg.hcope, run_rng, &initial);
            RngStream eval_rng(cfg.environment.ground_truth_seed, fnv1a64("evaluation"));
            const auto eval = make_evaluation_set(env, cfg.n_eval_contexts, eval_rng);
            std::vector<DeploymentRow> rows;
            for (const auto& st : history.stages()) {
                rows.push_back({st.k, st.effective_threshold, st.hcope_bound, st.on_policy_estimate.value_or(0.0),
                                st.cumulative_margin.value_or(0.0),
                                novelty(st.policy, eval.contexts, eval.n_supported).value,
                                exact_policy_value(st.policy, eval).value});
                save_policy(out / ("policy_stage" + std::to_string(st.k) + ".csv"), st.policy);
                write_file_atomic(out / ("trace_stage" + std::to_string(st.k) + ".csv"), trace_csv(st.state));
            }
            write_file_atomic(out / "deployment.csv", deployment_csv(rows));
            std::cout << deployment_csv(rows);
        } else if (*evaluate) {
            const Environment env = resolve_environment(cfg, env_dir);
            RngStream eval_rng(cfg.environment.ground_truth_seed, fnv1a64("evaluation"));
            const auto eval = make_evaluation_set(env, cfg.n_eval_contexts, eval_rng);
            const double v0 = logging_policy_value(env, {beta}, eval).value;
            auto data_rng = root.derive("evaluate");
            const double C = cfg.threshold_factor *
                             on_policy_value(generate_logged_data(env, {beta}, cfg.n_logged, data_rng));
            if (policy_path.empty()) {
                print_metrics(evaluate_policy(LoggingPolicy(env, {beta}), eval, v0, C), C);
            } else {
                print_metrics(evaluate_policy(load_policy(policy_path), eval, v0, C), C);
            }
        } else if (*run) {
            const auto summary = run_experiment(cfg, g.force, [](const std::string& id, const std::string& status) {
                std::cerr << id << ": " << status << '\n';
            });
            std::cout << summary.total << " cells: " << summary.ran << " ran, " << summary.skipped << " skipped, "
                      << summary.failures.size() << " failed\n";
            for (const auto& [id, msg] : summary.failures) std::cerr << "FAILED " << id << ": " << msg << '\n';
            return summary.exit_code();
        } else if (*rep) {
            const auto files = report(results.empty() ? out : fs::path(results));
            std::cout << "violations\n" << files.violations << "\nrelative value\n" << files.relative_value
                      << "\nnovelty\n" << files.novelty;
        }
    } catch (const ConfigError& e) {
        std::cerr << e.what() << '\n';
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    }
    return 0;
}
