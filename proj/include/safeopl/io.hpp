#pragma once

#include <charconv>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "json.hpp"
#include "safeopl/core.hpp"
#include "safeopl/environment.hpp"
#include "safeopl/learners.hpp"
#include "safeopl/policy.hpp"
#include "safeopl/reward_model.hpp"

namespace safeopl {

namespace fs = std::filesystem;
using json = nlohmann::json;

// 17 significant digits: enough to round-trip any double.
inline std::string format_real(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

inline std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> out;
    std::string cell;
    std::istringstream ss(line);
    while (std::getline(ss, cell, ',')) out.push_back(cell);
    if (!line.empty() && line.back() == ',') out.emplace_back();
    return out;
}

inline double parse_real(const std::string& s) {
    std::size_t used = 0;
    double v = 0.0;
    try {
        v = std::stod(s, &used);
    } catch (const std::exception&) {
        throw std::runtime_error("malformed number '" + s + "'");
    }
    if (used != s.size()) throw std::runtime_error("malformed number '" + s + "'");
    return v;
}

inline long long parse_integer(const std::string& s) {
    long long v = 0;
    const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc() || ptr != s.data() + s.size()) throw std::runtime_error("malformed integer '" + s + "'");
    return v;
}

inline std::string read_file(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open " + path.string());
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

// Writes next to the destination and renames, so readers never see a
// partially written file.
inline void write_file_atomic(const fs::path& path, const std::string& content) {
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    fs::path tmp = path;
    tmp += ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw std::runtime_error("cannot write " + tmp.string());
        out << content;
        if (!out) throw std::runtime_error("write failed for " + tmp.string());
    }
    fs::rename(tmp, path);
}

inline std::string content_hash(const std::string& bytes) {
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(fnv1a64(bytes)));
    return buf;
}

// ---- datasets ----

inline void write_dataset_csv(std::ostream& os, const BanditDataset& data) {
    const int dx = data.context_dim();
    for (int j = 0; j < dx; ++j) os << "context_" << j << ',';
    os << "action,reward,propensity,fold\n";
    const Matrix& x = data.contexts();
    const auto& actions = data.actions();
    const Vector& rewards = data.rewards();
    const Vector& props = data.propensities();
    for (std::size_t i = 0; i < data.size(); ++i) {
        const auto r = static_cast<Eigen::Index>(i);
        for (int j = 0; j < dx; ++j) os << format_real(x(r, j)) << ',';
        os << actions[i] << ',' << format_real(rewards[r]) << ',' << format_real(props[r]) << ','
           << fold_name(data.folds()[i]) << '\n';
    }
}

inline BanditDataset read_dataset_csv(std::istream& is, const std::string& origin = "pi0") {
    std::string line;
    if (!std::getline(is, line)) throw std::runtime_error("dataset file is empty");
    const auto header = split_csv_line(line);
    if (header.size() < 5 || header[header.size() - 4] != "action" || header.back() != "fold") {
        throw std::runtime_error("dataset header must be context_0..context_{dx-1},action,reward,propensity,fold");
    }
    const int dx = static_cast<int>(header.size()) - 4;
    for (int j = 0; j < dx; ++j) {
        if (header[static_cast<std::size_t>(j)] != "context_" + std::to_string(j)) {
            throw std::runtime_error("unexpected dataset column " + header[static_cast<std::size_t>(j)]);
        }
    }
    BanditDataset data(dx, origin);
    std::vector<Fold> folds;
    std::size_t line_no = 1;
    while (std::getline(is, line)) {
        ++line_no;
        if (line.empty()) continue;
        const auto cells = split_csv_line(line);
        if (cells.size() != header.size()) {
            throw std::runtime_error("dataset line " + std::to_string(line_no) + " has the wrong number of fields");
        }
        LoggedSample s;
        s.context.resize(dx);
        for (int j = 0; j < dx; ++j) s.context[j] = parse_real(cells[static_cast<std::size_t>(j)]);
        const auto d = static_cast<std::size_t>(dx);
        s.action = static_cast<int>(parse_integer(cells[d]));
        s.reward = parse_real(cells[d + 1]);
        s.logging_propensity = parse_real(cells[d + 2]);
        data.push_back(s);
        folds.push_back(parse_fold(cells[d + 3]));
    }
    data.set_folds(std::move(folds));
    return data;
}

inline void save_dataset(const fs::path& path, const BanditDataset& data) {
    std::ostringstream os;
    write_dataset_csv(os, data);
    write_file_atomic(path, os.str());
}

inline BanditDataset load_dataset(const fs::path& path, const std::string& origin = "pi0") {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open " + path.string());
    return read_dataset_csv(in, origin);
}

// ---- flat weight files: "# {json header}" then one value per line ----

inline std::string weights_file(const json& header, const Vector& values) {
    std::ostringstream os;
    os << "# " << header.dump() << '\n';
    for (Eigen::Index i = 0; i < values.size(); ++i) os << format_real(values[i]) << '\n';
    return os.str();
}

inline std::pair<json, Vector> parse_weights_file(const std::string& text) {
    std::istringstream is(text);
    std::string line;
    if (!std::getline(is, line) || line.rfind("# ", 0) != 0) throw std::runtime_error("weight file lacks a header");
    json header = json::parse(line.substr(2));
    std::vector<double> values;
    while (std::getline(is, line)) {
        if (!line.empty()) values.push_back(parse_real(line));
    }
    return {std::move(header), Eigen::Map<Vector>(values.data(), static_cast<Eigen::Index>(values.size()))};
}

inline json environment_header(const EnvironmentConfig& c) {
    return {{"d_x", c.d_x},
            {"d_a", c.d_a},
            {"n_actions", c.n_actions},
            {"n_supported", c.n_supported},
            {"hidden_widths", c.hidden_widths},
            {"ground_truth_seed", c.ground_truth_seed},
            {"logit_scale", c.logit_scale},
            {"logit_offset", c.logit_offset},
            {"context_pool_size", c.context_pool_size}};
}

inline EnvironmentConfig environment_config_from_json(const json& j) {
    EnvironmentConfig c;
    c.d_x = j.value("d_x", c.d_x);
    c.d_a = j.value("d_a", c.d_a);
    c.n_actions = j.value("n_actions", c.n_actions);
    c.n_supported = j.value("n_supported", c.n_supported);
    c.hidden_widths = j.value("hidden_widths", c.hidden_widths);
    c.ground_truth_seed = j.value("ground_truth_seed", c.ground_truth_seed);
    c.logit_scale = j.value("logit_scale", c.logit_scale);
    c.logit_offset = j.value("logit_offset", c.logit_offset);
    c.context_pool_size = j.value("context_pool_size", c.context_pool_size);
    return c;
}

// Directory with env.json, action_features.csv and weights.csv.
inline void save_environment(const fs::path& dir, const Environment& env) {
    write_file_atomic(dir / "env.json", environment_header(env.config()).dump(2) + "\n");
    const Matrix& f = env.action_features();
    std::ostringstream os;
    for (Eigen::Index j = 0; j < f.cols(); ++j) os << (j ? "," : "") << "feature_" << j;
    os << '\n';
    for (Eigen::Index a = 0; a < f.rows(); ++a) {
        for (Eigen::Index j = 0; j < f.cols(); ++j) os << (j ? "," : "") << format_real(f(a, j));
        os << '\n';
    }
    write_file_atomic(dir / "action_features.csv", os.str());
    write_file_atomic(dir / "weights.csv",
                      weights_file({{"widths", env.network().widths()}}, env.network().params()));
}

inline Environment load_environment(const fs::path& dir) {
    const auto cfg = environment_config_from_json(json::parse(read_file(dir / "env.json")));
    std::istringstream fs_in(read_file(dir / "action_features.csv"));
    std::string line;
    std::getline(fs_in, line);
    std::vector<double> values;
    Eigen::Index rows = 0;
    while (std::getline(fs_in, line)) {
        if (line.empty()) continue;
        const auto cells = split_csv_line(line);
        if (static_cast<int>(cells.size()) != cfg.d_a) throw std::runtime_error("action_features.csv has the wrong width");
        for (const auto& c : cells) values.push_back(parse_real(c));
        ++rows;
    }
    Matrix features(rows, cfg.d_a);
    for (Eigen::Index a = 0; a < rows; ++a) {
        for (Eigen::Index j = 0; j < cfg.d_a; ++j) features(a, j) = values[static_cast<std::size_t>(a * cfg.d_a + j)];
    }
    auto [header, params] = parse_weights_file(read_file(dir / "weights.csv"));
    return Environment(cfg, std::move(features), std::move(params));
}

// ---- policies and reward models ----

inline std::string policy_snapshot(const SoftmaxPolicy& p) {
    return weights_file({{"d_x", p.context_dim()}, {"h", p.hidden()}, {"n_actions", p.n_actions()}}, p.params());
}

inline SoftmaxPolicy parse_policy_snapshot(const std::string& text) {
    auto [h, params] = parse_weights_file(text);
    SoftmaxPolicy p(h.at("d_x").get<int>(), h.at("h").get<int>(), h.at("n_actions").get<int>());
    if (params.size() != p.n_params()) throw std::runtime_error("policy snapshot does not match its header");
    p.params() = std::move(params);
    return p;
}

inline void save_policy(const fs::path& path, const SoftmaxPolicy& p) { write_file_atomic(path, policy_snapshot(p)); }
inline SoftmaxPolicy load_policy(const fs::path& path) { return parse_policy_snapshot(read_file(path)); }

// One file holding every member back to back.
inline std::string reward_model_snapshot(const RewardModel& m) {
    const auto& members = m.members();
    Eigen::Index total = 0;
    for (const auto& net : members) total += net.n_params();
    Vector all(total);
    Eigen::Index at = 0;
    for (const auto& net : members) {
        all.segment(at, net.n_params()) = net.params();
        at += net.n_params();
    }
    return weights_file({{"variant", variant_name(m.variant())},
                         {"widths", members.front().widths()},
                         {"n_members", members.size()},
                         {"cql_alpha", m.cql_alpha()}},
                        all);
}

inline RewardModel parse_reward_model_snapshot(const std::string& text) {
    auto [h, all] = parse_weights_file(text);
    const auto widths = h.at("widths").get<std::vector<int>>();
    const auto n = h.at("n_members").get<std::size_t>();
    std::vector<Mlp> members;
    Eigen::Index at = 0;
    for (std::size_t j = 0; j < n; ++j) {
        Mlp net(widths);
        if (at + net.n_params() > all.size()) throw std::runtime_error("reward model snapshot is truncated");
        net.params() = all.segment(at, net.n_params());
        at += net.n_params();
        members.push_back(std::move(net));
    }
    if (at != all.size()) throw std::runtime_error("reward model snapshot has trailing values");
    return RewardModel(parse_variant(h.at("variant").get<std::string>()), std::move(members),
                       h.at("cql_alpha").get<double>());
}

inline void save_reward_model(const fs::path& path, const RewardModel& m) {
    write_file_atomic(path, reward_model_snapshot(m));
}
inline RewardModel load_reward_model(const fs::path& path) { return parse_reward_model_snapshot(read_file(path)); }

// ---- traces and reports ----

inline std::string trace_csv(const LagrangianState& state) {
    std::ostringstream os;
    os << "step,lambda,hcope_lower_bound,batch_objective\n";
    for (const auto& r : state.trace) {
        os << r.step << ',' << format_real(r.lambda) << ',' << format_real(r.lower_bound) << ','
           << format_real(r.batch_objective) << '\n';
    }
    return os.str();
}

struct DeploymentRow {
    int stage = 0;
    double effective_threshold = 0.0;
    double hcope_bound = 0.0;
    double on_policy_value = 0.0;
    double cumulative_margin = 0.0;
    double novelty = 0.0;
    double true_value = 0.0;
};

inline std::string deployment_csv(const std::vector<DeploymentRow>& rows) {
    std::ostringstream os;
    os << "stage,effective_threshold,hcope_bound,on_policy_value,cumulative_margin,novelty,true_value\n";
    for (const auto& r : rows) {
        os << r.stage << ',' << format_real(r.effective_threshold) << ',' << format_real(r.hcope_bound) << ','
           << format_real(r.on_policy_value) << ',' << format_real(r.cumulative_margin) << ','
           << format_real(r.novelty) << ',' << format_real(r.true_value) << '\n';
    }
    return os.str();
}

struct MetricsRow {
    std::string run_id;
    double beta = 0.0;
    std::string method;
    int K = 1;
    std::uint64_t seed = 0;
    double true_value = 0.0;
    double relative_value = 0.0;
    double novelty = 0.0;
    bool violated = false;
};

inline constexpr const char* kMetricsHeader = "run_id,beta,method,K,seed,true_value,relative_value,novelty,violated";

inline std::string metrics_line(const MetricsRow& r) {
    std::ostringstream os;
    os << r.run_id << ',' << format_real(r.beta) << ',' << r.method << ',' << r.K << ',' << r.seed << ','
       << format_real(r.true_value) << ',' << format_real(r.relative_value) << ',' << format_real(r.novelty) << ','
       << (r.violated ? 1 : 0);
    return os.str();
}

inline MetricsRow parse_metrics_line(const std::string& line) {
    const auto c = split_csv_line(line);
    if (c.size() != 9) throw std::runtime_error("metrics row must have 9 fields: " + line);
    MetricsRow r;
    r.run_id = c[0];
    r.beta = parse_real(c[1]);
    r.method = c[2];
    r.K = static_cast<int>(parse_integer(c[3]));
    r.seed = static_cast<std::uint64_t>(parse_integer(c[4]));
    r.true_value = parse_real(c[5]);
    r.relative_value = parse_real(c[6]);
    r.novelty = parse_real(c[7]);
    r.violated = parse_integer(c[8]) != 0;
    return r;
}

inline std::vector<MetricsRow> read_metrics_csv(std::istream& is) {
    std::string line;
    if (!std::getline(is, line) || line != kMetricsHeader) throw std::runtime_error("metrics file lacks the expected header");
    std::vector<MetricsRow> rows;
    while (std::getline(is, line)) {
        if (!line.empty()) rows.push_back(parse_metrics_line(line));
    }
    return rows;
}

}  // namespace safeopl
