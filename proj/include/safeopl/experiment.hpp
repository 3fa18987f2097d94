#pragma once

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdlib>
#include <functional>
#include <iomanip>
#include <map>
#include <mutex>
#include <set>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "safeopl/depsue.hpp"
#include "safeopl/evaluation.hpp"
#include "safeopl/io.hpp"

#ifndef SAFEOPL_VERSION
#define SAFEOPL_VERSION "0.1.0"
#endif

namespace safeopl {

inline const std::vector<std::string>& known_methods() {
    static const std::vector<std::string> m{"opg_naive", "opg_cql", "safe_opg", "depsue_k2", "depsue_k5",
                                            "naive_safe_exploration"};
    return m;
}

// Number of deployments a method uses (1 for the single-shot learners).
inline int method_deployments(const std::string& method) {
    if (method == "depsue_k2") return 2;
    if (method == "depsue_k5") return 5;
    return 1;
}

class ConfigError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

struct ExperimentConfig {
    EnvironmentConfig environment;
    std::vector<double> beta_sweep{-8.0, 0.0, 8.0};
    std::vector<std::string> methods = known_methods();
    std::size_t n_logged = 20000;
    int n_seeds = 10;
    std::uint64_t seed = 0;
    // C = threshold_factor * on-policy value of the logged data.
    double threshold_factor = 0.95;
    double delta = 0.05;
    TrainConfig opg_train = desk_opg_train();
    TrainConfig safe_train = desk_safe_train();
    HcopeConfig hcope;
    RewardModelConfig reward_model;
    double naive_mix = 0.05;
    // Cap on stage on-policy estimates in the DEPSUE margin, as a multiple of
    // the on-policy value of the logged data; 0 disables it.
    double depsue_clip_factor = 0.0;
    std::size_t n_eval_contexts = 50000;
    std::string output_dir = "results";
    int threads = 1;

    // S = 2,000 with step sizes scaled by 10,000 / S so that S * eta matches
    // the 10,000-step schedule.
    static TrainConfig desk_opg_train() {
        TrainConfig c;
        c.steps = 2000;
        c.eta_psi = 0.5;
        c.eta_lambda = 0.05;
        return c;
    }
    static TrainConfig desk_safe_train() {
        TrainConfig c = TrainConfig::safe_defaults();
        c.steps = 2000;
        c.eta_psi = 0.005;
        c.eta_lambda = 0.05;
        return c;
    }

    static ExperimentConfig desk() { return {}; }

    static ExperimentConfig paper_scale() {
        ExperimentConfig c;
        c.environment.d_x = 30;
        c.environment.d_a = 20;
        c.environment.n_actions = 1000;
        c.environment.n_supported = 800;
        c.beta_sweep = {-24, -16, -8, 0, 8, 16, 24};
        c.n_logged = 500000;
        c.n_seeds = 30;
        c.opg_train = TrainConfig{};
        c.safe_train = TrainConfig::safe_defaults();
        c.n_eval_contexts = 500000;
        return c;
    }

    void validate() const {
        std::vector<std::string> problems;
        auto check = [&](bool ok, const std::string& msg) {
            if (!ok) problems.push_back(msg);
        };
        auto guard = [&](const std::string& field, const auto& fn) {
            try {
                fn();
            } catch (const std::exception& e) {
                problems.push_back(field + ": " + e.what());
            }
        };
        guard("environment", [&] { environment.validate(); });
        guard("opg_train", [&] { opg_train.validate(); });
        guard("safe_train", [&] { safe_train.validate(); });
        guard("hcope", [&] { hcope.validate(); });
        guard("reward_model", [&] { reward_model.validate(); });
        check(!beta_sweep.empty(), "beta_sweep: must be non-empty");
        for (double b : beta_sweep) check(std::isfinite(b), "beta_sweep: entries must be finite");
        check(!methods.empty(), "methods: must be non-empty");
        for (const auto& m : methods) {
            check(std::find(known_methods().begin(), known_methods().end(), m) != known_methods().end(),
                  "methods: unknown method '" + m + "'");
        }
        check(std::set<std::string>(methods.begin(), methods.end()).size() == methods.size(),
              "methods: duplicate entries");
        check(n_seeds >= 1, "n_seeds: must be >= 1");
        check(n_logged >= 2, "n_logged: must be >= 2");
        check(threshold_factor > 0.0 && std::isfinite(threshold_factor), "threshold_factor: must be > 0");
        check(delta > 0.0 && delta < 1.0, "delta: must lie in (0, 1)");
        check(naive_mix >= 0.0 && naive_mix < 1.0, "naive_mix: must lie in [0, 1)");
        check(depsue_clip_factor >= 0.0, "depsue_clip_factor: must be >= 0");
        check(n_eval_contexts >= 1, "n_eval_contexts: must be >= 1");
        check(threads >= 1, "threads: must be >= 1");
        check(!output_dir.empty(), "output_dir: must be non-empty");
        if (!problems.empty()) {
            std::string msg = "invalid experiment config:";
            for (const auto& p : problems) msg += "\n  " + p;
            throw ConfigError(msg);
        }
    }
};

// ---- JSON schema ----

inline json train_to_json(const TrainConfig& c) {
    return {{"eta_psi", c.eta_psi},
            {"eta_lambda", c.eta_lambda},
            {"steps", c.steps},
            {"entropy_alpha", c.entropy_alpha},
            {"batch_contexts", c.batch_contexts},
            {"rescale_gradient", c.rescale_gradient},
            {"lambda_update_interval", c.lambda_update_interval},
            {"hidden", c.hidden}};
}

inline void reject_unknown_keys(const json& j, const json& schema, const std::string& section) {
    if (!j.is_object()) throw ConfigError("invalid experiment config:\n  " + section + ": must be an object");
    for (const auto& [key, _] : j.items()) {
        if (!schema.contains(key)) {
            const std::string name = section.empty() ? key : section + "." + key;
            throw ConfigError("invalid experiment config:\n  " + name + ": unknown field");
        }
    }
}

inline TrainConfig train_from_json(const json& j, TrainConfig c) {
    c.eta_psi = j.value("eta_psi", c.eta_psi);
    c.eta_lambda = j.value("eta_lambda", c.eta_lambda);
    c.steps = j.value("steps", c.steps);
    c.entropy_alpha = j.value("entropy_alpha", c.entropy_alpha);
    c.batch_contexts = j.value("batch_contexts", c.batch_contexts);
    c.rescale_gradient = j.value("rescale_gradient", c.rescale_gradient);
    c.lambda_update_interval = j.value("lambda_update_interval", c.lambda_update_interval);
    c.hidden = j.value("hidden", c.hidden);
    return c;
}

inline json to_json(const ExperimentConfig& c) {
    return {{"environment", environment_header(c.environment)},
            {"beta_sweep", c.beta_sweep},
            {"methods", c.methods},
            {"n_logged", c.n_logged},
            {"n_seeds", c.n_seeds},
            {"seed", c.seed},
            {"safety", {{"threshold_factor", c.threshold_factor}, {"delta", c.delta}}},
            {"opg_train", train_to_json(c.opg_train)},
            {"safe_train", train_to_json(c.safe_train)},
            {"hcope", {{"tau_grid", c.hcope.tau_grid}, {"tuning_fraction", c.hcope.tuning_fraction}}},
            {"reward_model",
             {{"hidden_widths", c.reward_model.hidden_widths},
              {"n_members", c.reward_model.n_members},
              {"epochs", c.reward_model.epochs},
              {"batch_size", c.reward_model.batch_size},
              {"learning_rate", c.reward_model.learning_rate},
              {"cql_alpha", c.reward_model.cql_alpha},
              {"n_negatives", c.reward_model.n_negatives}}},
            {"naive_mix", c.naive_mix},
            {"depsue_clip_factor", c.depsue_clip_factor},
            {"n_eval_contexts", c.n_eval_contexts},
            {"output_dir", c.output_dir},
            {"threads", c.threads}};
}

// Missing keys keep the values of `base`; unknown keys are rejected.
inline ExperimentConfig config_from_json(const json& j, ExperimentConfig c = ExperimentConfig::desk()) {
    const json schema = to_json(c);
    reject_unknown_keys(j, schema, "");
    for (const auto& [key, value] : j.items()) {
        if (schema.at(key).is_object()) reject_unknown_keys(value, schema.at(key), key);
    }
    try {
        if (j.contains("environment")) {
            json env = environment_header(c.environment);
            env.update(j.at("environment"));
            c.environment = environment_config_from_json(env);
        }
        c.beta_sweep = j.value("beta_sweep", c.beta_sweep);
        c.methods = j.value("methods", c.methods);
        c.n_logged = j.value("n_logged", c.n_logged);
        c.n_seeds = j.value("n_seeds", c.n_seeds);
        c.seed = j.value("seed", c.seed);
        if (j.contains("safety")) {
            c.threshold_factor = j["safety"].value("threshold_factor", c.threshold_factor);
            c.delta = j["safety"].value("delta", c.delta);
        }
        if (j.contains("opg_train")) c.opg_train = train_from_json(j["opg_train"], c.opg_train);
        if (j.contains("safe_train")) c.safe_train = train_from_json(j["safe_train"], c.safe_train);
        if (j.contains("hcope")) {
            c.hcope.tau_grid = j["hcope"].value("tau_grid", c.hcope.tau_grid);
            c.hcope.tuning_fraction = j["hcope"].value("tuning_fraction", c.hcope.tuning_fraction);
        }
        if (j.contains("reward_model")) {
            const auto& r = j["reward_model"];
            c.reward_model.hidden_widths = r.value("hidden_widths", c.reward_model.hidden_widths);
            c.reward_model.n_members = r.value("n_members", c.reward_model.n_members);
            c.reward_model.epochs = r.value("epochs", c.reward_model.epochs);
            c.reward_model.batch_size = r.value("batch_size", c.reward_model.batch_size);
            c.reward_model.learning_rate = r.value("learning_rate", c.reward_model.learning_rate);
            c.reward_model.cql_alpha = r.value("cql_alpha", c.reward_model.cql_alpha);
            c.reward_model.n_negatives = r.value("n_negatives", c.reward_model.n_negatives);
        }
        c.naive_mix = j.value("naive_mix", c.naive_mix);
        c.depsue_clip_factor = j.value("depsue_clip_factor", c.depsue_clip_factor);
        c.n_eval_contexts = j.value("n_eval_contexts", c.n_eval_contexts);
        c.output_dir = j.value("output_dir", c.output_dir);
        c.threads = j.value("threads", c.threads);
    } catch (const json::exception& e) {
        throw ConfigError(std::string("invalid experiment config:\n  ") + e.what());
    }
    c.hcope.delta = c.delta;
    return c;
}

inline ExperimentConfig load_experiment_config(const fs::path& path, ExperimentConfig base = ExperimentConfig::desk()) {
    std::string text;
    try {
        text = read_file(path);
    } catch (const std::exception& e) {
        throw ConfigError(e.what());
    }
    json j;
    try {
        j = json::parse(text);
    } catch (const json::parse_error& e) {
        throw ConfigError(std::string("config is not valid JSON: ") + e.what());
    }
    return config_from_json(j, std::move(base));
}

// SAFEOPL_OUTPUT_DIR and SAFEOPL_THREADS override the file.
inline void apply_environment_overrides(ExperimentConfig& c) {
    if (const char* out = std::getenv("SAFEOPL_OUTPUT_DIR"); out && *out) c.output_dir = out;
    if (const char* t = std::getenv("SAFEOPL_THREADS"); t && *t) {
        try {
            c.threads = std::stoi(t);
        } catch (const std::exception&) {
            throw ConfigError("SAFEOPL_THREADS must be an integer");
        }
    }
}

// Hash of everything that affects results (output_dir and threads excluded).
inline std::string config_hash(const ExperimentConfig& c) {
    json j = to_json(c);
    j.erase("output_dir");
    j.erase("threads");
    return content_hash(j.dump());
}

// ---- sweep cells ----

struct Cell {
    double beta = 0.0;
    std::string method;
    int seed = 0;
};

inline std::string format_beta(double beta) {
    std::ostringstream os;
    os << beta;
    return os.str();
}

inline std::string run_id(const Cell& c) {
    return "b" + format_beta(c.beta) + "_" + c.method + "_s" + std::to_string(c.seed);
}

inline std::vector<Cell> sweep_cells(const ExperimentConfig& c) {
    std::vector<Cell> cells;
    for (double b : c.beta_sweep) {
        for (const auto& m : c.methods) {
            for (int s = 0; s < c.n_seeds; ++s) cells.push_back({b, m, s});
        }
    }
    return cells;
}

inline std::uint64_t beta_key(double beta) { return fnv1a64(format_beta(beta)); }

// Logged data for (beta, seed) does not depend on the method, so every
// method of a cell row sees the same D0.
inline RngStream cell_data_rng(const ExperimentConfig& c, double beta, int seed) {
    return RngStream(c.seed, fnv1a64("logged_data")).derive(beta_key(beta)).derive(static_cast<std::uint64_t>(seed));
}

inline RngStream cell_method_rng(const ExperimentConfig& c, const Cell& cell) {
    return RngStream(c.seed, fnv1a64("cell"))
        .derive(beta_key(cell.beta))
        .derive(static_cast<std::uint64_t>(cell.seed))
        .derive(cell.method);
}

// Shared, read-only state for one sweep: the environment, the evaluation
// contexts and the exact logging-policy value per beta.
class ExperimentContext {
public:
    explicit ExperimentContext(const ExperimentConfig& cfg) : cfg_(cfg), env_(cfg.environment) {
        RngStream eval_rng(cfg.environment.ground_truth_seed, fnv1a64("evaluation"));
        eval_ = make_evaluation_set(env_, cfg.n_eval_contexts, eval_rng);
        for (double b : cfg.beta_sweep) logging_value_[b] = logging_policy_value(env_, {b}, eval_).value;
    }

    const ExperimentConfig& config() const { return cfg_; }
    const Environment& environment() const { return env_; }
    const EvaluationSet& evaluation() const { return eval_; }
    double logging_value(double beta) const {
        if (auto it = logging_value_.find(beta); it != logging_value_.end()) return it->second;
        return logging_policy_value(env_, {beta}, eval_).value;
    }

private:
    ExperimentConfig cfg_;
    Environment env_;
    EvaluationSet eval_;
    std::map<double, double> logging_value_;
};

struct CellResult {
    MetricsRow metrics;
    std::optional<LagrangianState> trace;  // stage traces are concatenated for DEPSUE
    std::vector<DeploymentRow> deployments;
    std::optional<SoftmaxPolicy> policy;
};

inline DeploymentPlan depsue_plan(const ExperimentConfig& cfg, int K, double C, double on_policy_reference) {
    DeploymentPlan plan;
    plan.K = K;
    plan.total_samples = cfg.n_logged;
    plan.base_threshold = C;
    plan.delta = cfg.delta;
    plan.clip_factor = cfg.depsue_clip_factor;
    plan.clip_reference = on_policy_reference;
    return plan;
}

// DEPSUE counts as violating if the running average of true stage values
// drops below C after any deployment; for K = 1 this is V(pi_1) < C.
inline CellResult run_cell(const ExperimentContext& ctx, const Cell& cell) {
    const auto& cfg = ctx.config();
    const auto& env = ctx.environment();
    const auto& eval = ctx.evaluation();
    const LoggingPolicySpec spec{cell.beta};
    auto data_rng = cell_data_rng(cfg, cell.beta, cell.seed);
    const BanditDataset d0 = generate_logged_data(env, spec, cfg.n_logged, data_rng, "pi0");
    const double v_on = on_policy_value(d0);
    const double C = cfg.threshold_factor * v_on;
    const double v0 = ctx.logging_value(cell.beta);
    auto rng = cell_method_rng(cfg, cell);

    CellResult out;
    out.metrics.run_id = run_id(cell);
    out.metrics.beta = cell.beta;
    out.metrics.method = cell.method;
    out.metrics.K = method_deployments(cell.method);
    out.metrics.seed = static_cast<std::uint64_t>(cell.seed);
    auto finish = [&](const auto& policy) {
        const auto m = evaluate_policy(policy, eval, v0, C);
        out.metrics.true_value = m.true_value;
        out.metrics.relative_value = m.relative_value;
        out.metrics.novelty = m.novelty;
        out.metrics.violated = m.violated;
    };

    if (cell.method == "opg_naive" || cell.method == "opg_cql") {
        const auto variant = cell.method == "opg_cql" ? RewardModelVariant::Cql : RewardModelVariant::NaiveMean;
        auto model_rng = rng.derive("reward_model");
        const auto model = train_reward_model(d0, env.action_features(), cfg.reward_model, variant, model_rng);
        auto train_rng = rng.derive("train");
        auto result = train_opg(d0, model, env.action_features(), cfg.opg_train, train_rng);
        finish(result.policy);
        out.trace = std::move(result.state);
        out.policy = std::move(result.policy);
    } else if (cell.method == "naive_safe_exploration") {
        finish(naive_safe_exploration(spec, env, cfg.naive_mix));
    } else {
        const int K = method_deployments(cell.method);
        const auto plan = depsue_plan(cfg, K, C, v_on);
        BanditDataset initial = d0;
        if (K > 1) {
            auto sub_rng = rng.derive("stage0_subsample");
            initial = subsample(d0, plan.stage_samples(), sub_rng);
        }
        auto depsue_rng = rng.derive("depsue");
        HcopeConfig hc = cfg.hcope;
        hc.delta = cfg.delta;
        const auto history = run_depsue(env, spec, plan, cfg.reward_model, cfg.safe_train, hc, depsue_rng, &initial);
        LagrangianState trace;
        double running = 0.0;
        bool violated = false;
        for (const auto& st : history.stages()) {
            const auto m = evaluate_policy(st.policy, eval, v0, C);
            running += m.true_value;
            violated = violated || running / st.k < C;
            out.deployments.push_back({st.k, st.effective_threshold, st.hcope_bound, st.on_policy_estimate.value_or(0.0),
                                       st.cumulative_margin.value_or(0.0), m.novelty, m.true_value});
            const int offset = (st.k - 1) * cfg.safe_train.steps;
            for (auto row : st.state.trace) {
                row.step += offset;
                trace.trace.push_back(row);
            }
            trace.lambda = st.state.lambda;
        }
        const auto& last = history.stage(history.size()).policy;
        finish(last);
        out.metrics.violated = violated;
        out.trace = std::move(trace);
        out.policy = last;
    }
    return out;
}

// ---- sweep orchestration ----

struct SweepSummary {
    std::size_t total = 0;
    std::size_t ran = 0;
    std::size_t skipped = 0;
    std::vector<std::pair<std::string, std::string>> failures;  // run_id, message
    int exit_code() const { return failures.empty() ? 0 : 2; }
};

inline fs::path cell_dir(const fs::path& out, const Cell& c) { return out / "cells" / run_id(c); }

inline bool cell_complete(const fs::path& out, const Cell& c) { return fs::exists(cell_dir(out, c) / "metrics.csv"); }

// Everything lands in a private staging directory that is renamed into
// place, so a cell is either complete or absent.
inline void write_cell(const fs::path& out, const Cell& c, const CellResult& r) {
    const fs::path final_dir = cell_dir(out, c);
    const fs::path staging = out / "cells" / (run_id(c) + ".partial");
    fs::remove_all(staging);
    fs::create_directories(staging);
    if (r.trace) write_file_atomic(staging / "trace.csv", trace_csv(*r.trace));
    if (!r.deployments.empty()) write_file_atomic(staging / "deployment.csv", deployment_csv(r.deployments));
    if (r.policy) save_policy(staging / "policy.csv", *r.policy);
    write_file_atomic(staging / "metrics.csv", std::string(kMetricsHeader) + "\n" + metrics_line(r.metrics) + "\n");
    fs::remove_all(final_dir);
    fs::rename(staging, final_dir);
}

inline std::vector<fs::path> artifact_files(const fs::path& out) {
    std::vector<fs::path> files;
    if (!fs::exists(out)) return files;
    for (const auto& e : fs::recursive_directory_iterator(out)) {
        if (!e.is_regular_file()) continue;
        const auto rel = fs::relative(e.path(), out);
        if (rel == "manifest.json") continue;
        if (rel.string().find(".partial") != std::string::npos || rel.extension() == ".tmp") continue;
        files.push_back(rel);
    }
    std::sort(files.begin(), files.end());
    return files;
}

inline json manifest_file_list(const fs::path& out) {
    json files = json::array();
    for (const auto& rel : artifact_files(out)) {
        files.push_back({{"path", rel.generic_string()}, {"fnv1a64", content_hash(read_file(out / rel))}});
    }
    return files;
}

inline void write_manifest(const fs::path& out, const ExperimentConfig& cfg, const SweepSummary& summary) {
    const json files = manifest_file_list(out);
    json failures = json::array();
    for (const auto& [id, msg] : summary.failures) failures.push_back({{"run_id", id}, {"error", msg}});
    json m = {{"library_version", SAFEOPL_VERSION},
              {"config_hash", config_hash(cfg)},
              {"config", to_json(cfg)},
              {"cells", summary.total},
              {"failures", failures},
              {"files", files}};
    write_file_atomic(out / "manifest.json", m.dump(2) + "\n");
}

// Concatenates per-cell rows in sweep order.
inline void write_sweep_metrics(const fs::path& out, const ExperimentConfig& cfg) {
    std::string text = std::string(kMetricsHeader) + "\n";
    for (const auto& c : sweep_cells(cfg)) {
        const auto path = cell_dir(out, c) / "metrics.csv";
        if (!fs::exists(path)) continue;
        std::istringstream is(read_file(path));
        for (const auto& row : read_metrics_csv(is)) text += metrics_line(row) + "\n";
    }
    write_file_atomic(out / "metrics.csv", text);
}

using ProgressFn = std::function<void(const std::string& run_id, const std::string& status)>;

inline SweepSummary run_experiment(const ExperimentConfig& cfg, bool force = false, const ProgressFn& progress = {}) {
    cfg.validate();
    const fs::path out = cfg.output_dir;
    fs::create_directories(out / "cells");
    write_file_atomic(out / "config.json", to_json(cfg).dump(2) + "\n");
    const auto cells = sweep_cells(cfg);
    SweepSummary summary;
    summary.total = cells.size();

    std::vector<Cell> todo;
    for (const auto& c : cells) {
        if (!force && cell_complete(out, c)) {
            ++summary.skipped;
            if (progress) progress(run_id(c), "skipped");
        } else {
            todo.push_back(c);
        }
    }

    if (!todo.empty()) {
        const ExperimentContext ctx(cfg);
        std::atomic<std::size_t> next{0};
        std::mutex mu;
        auto worker = [&] {
            for (std::size_t i = next++; i < todo.size(); i = next++) {
                const auto& c = todo[i];
                try {
                    write_cell(out, c, run_cell(ctx, c));
                    std::lock_guard lock(mu);
                    ++summary.ran;
                    if (progress) progress(run_id(c), "done");
                } catch (const std::exception& e) {
                    std::lock_guard lock(mu);
                    summary.failures.emplace_back(run_id(c), e.what());
                    if (progress) progress(run_id(c), std::string("failed: ") + e.what());
                }
            }
        };
        const auto width = std::min<std::size_t>(static_cast<std::size_t>(cfg.threads), todo.size());
        std::vector<std::thread> pool;
        for (std::size_t t = 1; t < width; ++t) pool.emplace_back(worker);
        worker();
        for (auto& t : pool) t.join();
        std::sort(summary.failures.begin(), summary.failures.end());
    }

    write_sweep_metrics(out, cfg);
    write_manifest(out, cfg, summary);
    return summary;
}

// ---- summary tables ----

struct CellStats {
    std::size_t n = 0;
    std::size_t violations = 0;
    double mean_relative = 0.0;
    double worst_relative = 0.0;
    double mean_novelty = 0.0;
    double std_novelty = 0.0;
    double std_relative = 0.0;
};

inline std::string format_fixed(double v, int digits = 3) {
    std::ostringstream os;
    os << std::fixed << std::setprecision(digits) << v;
    return os.str();
}

inline std::string format_violations(const CellStats& s) {
    return std::to_string(s.violations) + "/" + std::to_string(s.n);
}
inline std::string format_mean_worst(double mean, double worst) {
    return format_fixed(mean) + " (\xE2\x89\xA5" + format_fixed(worst) + ")";
}
inline std::string format_mean_std(double mean, double sd) {
    return format_fixed(mean) + " \xC2\xB1 " + format_fixed(sd);
}

// Sample standard deviation (n - 1); 0 for a single value.
inline double sample_std(const std::vector<double>& v) {
    if (v.size() < 2) return 0.0;
    double m = 0.0;
    for (double x : v) m += x;
    m /= static_cast<double>(v.size());
    double ss = 0.0;
    for (double x : v) ss += (x - m) * (x - m);
    return std::sqrt(ss / static_cast<double>(v.size() - 1));
}

using StatsTable = std::map<std::string, std::map<double, CellStats>>;

inline StatsTable aggregate_metrics(const std::vector<MetricsRow>& rows) {
    if (rows.empty()) throw std::runtime_error("no metrics rows to report");
    std::map<std::string, std::map<double, std::vector<const MetricsRow*>>> groups;
    for (const auto& r : rows) groups[r.method][r.beta].push_back(&r);
    StatsTable out;
    for (const auto& [method, by_beta] : groups) {
        for (const auto& [beta, list] : by_beta) {
            CellStats s;
            s.n = list.size();
            std::vector<double> rel, nov;
            for (const auto* r : list) {
                s.violations += r->violated ? 1 : 0;
                rel.push_back(r->relative_value);
                nov.push_back(r->novelty);
            }
            for (double v : rel) s.mean_relative += v / static_cast<double>(s.n);
            for (double v : nov) s.mean_novelty += v / static_cast<double>(s.n);
            s.worst_relative = *std::min_element(rel.begin(), rel.end());
            s.std_novelty = sample_std(nov);
            s.std_relative = sample_std(rel);
            out[method][beta] = s;
        }
    }
    return out;
}

inline std::string wide_table(const StatsTable& t, const std::function<std::string(const CellStats&)>& cell) {
    std::set<double> betas;
    for (const auto& [_, by_beta] : t) {
        for (const auto& [b, __] : by_beta) betas.insert(b);
    }
    std::ostringstream os;
    os << "method";
    for (double b : betas) os << ",beta=" << format_beta(b);
    os << '\n';
    for (const auto& [method, by_beta] : t) {
        os << method;
        for (double b : betas) {
            auto it = by_beta.find(b);
            os << ',' << (it == by_beta.end() ? "" : cell(it->second));
        }
        os << '\n';
    }
    return os.str();
}

inline std::string plot_csv(const StatsTable& t) {
    std::ostringstream os;
    os << "method,beta,metric,mean,std,n\n";
    for (const auto& [method, by_beta] : t) {
        for (const auto& [b, s] : by_beta) {
            os << method << ',' << format_beta(b) << ",relative_value," << format_real(s.mean_relative) << ','
               << format_real(s.std_relative) << ',' << s.n << '\n';
            os << method << ',' << format_beta(b) << ",novelty," << format_real(s.mean_novelty) << ','
               << format_real(s.std_novelty) << ',' << s.n << '\n';
        }
    }
    return os.str();
}

struct ReportFiles {
    std::string violations;
    std::string relative_value;
    std::string novelty;
    std::string plot;
};

inline ReportFiles build_report(const std::vector<MetricsRow>& rows) {
    const auto t = aggregate_metrics(rows);
    return {wide_table(t, format_violations),
            wide_table(t, [](const CellStats& s) { return format_mean_worst(s.mean_relative, s.worst_relative); }),
            wide_table(t, [](const CellStats& s) { return format_mean_std(s.mean_novelty, s.std_novelty); }),
            plot_csv(t)};
}

inline ReportFiles report(const fs::path& results_dir) {
    const auto path = results_dir / "metrics.csv";
    if (!fs::exists(path)) throw std::runtime_error("no metrics.csv in " + results_dir.string());
    std::istringstream is(read_file(path));
    const auto rows = read_metrics_csv(is);
    if (rows.empty()) throw std::runtime_error("metrics.csv in " + results_dir.string() + " has no rows");
    auto files = build_report(rows);
    write_file_atomic(results_dir / "table_violations.csv", files.violations);
    write_file_atomic(results_dir / "table_relative_value.csv", files.relative_value);
    write_file_atomic(results_dir / "table_novelty.csv", files.novelty);
    write_file_atomic(results_dir / "plot_data.csv", files.plot);
    if (const auto manifest = results_dir / "manifest.json"; fs::exists(manifest)) {
        json m = json::parse(read_file(manifest));
        m["files"] = manifest_file_list(results_dir);
        write_file_atomic(manifest, m.dump(2) + "\n");
    }
    return files;
}

}  // namespace safeopl
