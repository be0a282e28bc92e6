// Experiment configuration: a flat `key = value` text format with section
// headers, plus the CSV and manifest writers used by the command-line tools.
//
// Sections and keys:
//   [env]      name, response_length, alphabet_size, critique_mode,
//              instance_seed, feeder_noise, evidence_scale, epsilon0,
//              error_types, bandit_feature_dim, grid_rows, grid_cols
//   [trainer]  method (required), group_size, groups_per_batch, steps,
//              learning_rate, gamma, lambda_fm, rl_coefficient,
//              rl_coefficient_linear_schedule, advantage, weighting,
//              clip_epsilon, token_level, early_term, seed, optimizer,
//              repr_dim, init_scale, tau
//   [output]   output_dir (required by train), eval_every, eval_instances,
//              eval_episodes, emit_plot_data
//
// Unknown keys are rejected by name; every parse error names the offending
// section.key.

#pragma once

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <json.hpp>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "rltf/envs.hpp"
#include "rltf/trainer.hpp"

namespace rltf::cfg {

inline constexpr const char* kArtifactVersion = "0.1.0";

struct ConfigError : std::runtime_error {
    explicit ConfigError(const std::string& what) : std::runtime_error(what) {}
};

using FlatConfig = std::map<std::string, std::map<std::string, std::string>>;

inline std::string trim(const std::string& s) {
    std::size_t a = s.find_first_not_of(" \t\r\n");
    std::size_t b = s.find_last_not_of(" \t\r\n");
    return a == std::string::npos ? "" : s.substr(a, b - a + 1);
}

inline FlatConfig parse_flat_config(std::istream& in) {
    FlatConfig out;
    std::string line, section;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        std::string t = trim(line);
        if (t.empty() || t[0] == '#') continue;
        if (t.front() == '[') {
            if (t.back() != ']')
                throw ConfigError("line " + std::to_string(lineno) + ": malformed section header");
            section = trim(t.substr(1, t.size() - 2));
            out[section];
            continue;
        }
        std::size_t eq = t.find('=');
        if (eq == std::string::npos)
            throw ConfigError("line " + std::to_string(lineno) + ": expected key = value");
        std::string key = trim(t.substr(0, eq));
        std::string value = trim(t.substr(eq + 1));
        if (section.empty())
            throw ConfigError("key '" + key + "' appears before any [section] header");
        if (out[section].count(key))
            throw ConfigError("duplicate key '" + section + "." + key + "'");
        out[section][key] = value;
    }
    return out;
}

inline FlatConfig parse_flat_config_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config file: " + path);
    return parse_flat_config(in);
}

// typed access ---------------------------------------------------------------

class SectionReader {
  public:
    SectionReader(const FlatConfig& config, std::string section)
        : section_(std::move(section)) {
        auto it = config.find(section_);
        if (it != config.end()) values_ = &it->second;
    }

    bool has(const std::string& key) const { return values_ && values_->count(key); }

    std::string require(const std::string& key) const {
        if (!has(key)) throw ConfigError("missing required key '" + section_ + "." + key + "'");
        seen_.insert(key);
        return values_->at(key);
    }

    std::string get(const std::string& key, const std::string& fallback) const {
        if (!has(key)) return fallback;
        seen_.insert(key);
        return values_->at(key);
    }

    long long get_int(const std::string& key, long long fallback) const {
        if (!has(key)) return fallback;
        return parse_int(key, require(key));
    }

    double get_double(const std::string& key, double fallback) const {
        if (!has(key)) return fallback;
        const std::string v = require(key);
        try {
            std::size_t pos = 0;
            double x = std::stod(v, &pos);
            if (pos != v.size()) throw std::invalid_argument("trailing");
            return x;
        } catch (...) {
            throw ConfigError("key '" + section_ + "." + key + "': expected a number, got '" +
                              v + "'");
        }
    }

    bool get_bool(const std::string& key, bool fallback) const {
        if (!has(key)) return fallback;
        std::string v = require(key);
        if (v == "true" || v == "1" || v == "yes") return true;
        if (v == "false" || v == "0" || v == "no") return false;
        throw ConfigError("key '" + section_ + "." + key + "': expected a boolean, got '" + v +
                          "'");
    }

    void reject_unknown() const {
        if (!values_) return;
        for (const auto& [key, value] : *values_)
            if (!seen_.count(key))
                throw ConfigError("unknown key '" + section_ + "." + key + "'");
    }

  private:
    long long parse_int(const std::string& key, const std::string& v) const {
        try {
            std::size_t pos = 0;
            long long x = std::stoll(v, &pos);
            if (pos != v.size()) throw std::invalid_argument("trailing");
            return x;
        } catch (...) {
            throw ConfigError("key '" + section_ + "." + key + "': expected an integer, got '" +
                              v + "'");
        }
    }

    std::string section_;
    const std::map<std::string, std::string>* values_ = nullptr;
    mutable std::set<std::string> seen_;
};

// enum parsing ---------------------------------------------------------------

inline EnvKind parse_env_kind(const std::string& v) {
    if (v == "BitVectorGuess") return EnvKind::BitVectorGuess;
    if (v == "SyntheticCritiqueBandit") return EnvKind::SyntheticCritiqueBandit;
    if (v == "GridPathMicro") return EnvKind::GridPathMicro;
    throw ConfigError("key 'env.name': unknown environment '" + v + "'");
}

inline CritiqueMode parse_critique_mode(const std::string& v) {
    if (v == "localizing") return CritiqueMode::Localizing;
    if (v == "count") return CritiqueMode::Count;
    if (v == "correctness_only") return CritiqueMode::CorrectnessOnly;
    throw ConfigError("key 'env.critique_mode': unknown mode '" + v + "'");
}

inline Method parse_method(const std::string& v) {
    if (v == "grpo_1turn") return Method::Grpo1Turn;
    if (v == "grpo_2turn") return Method::Grpo2Turn;
    if (v == "rltf_sd") return Method::RltfSd;
    if (v == "rltf_fm") return Method::RltfFm;
    if (v == "rltf_fm_selfcritique") return Method::RltfFmSelfCritique;
    throw ConfigError("key 'trainer.method': unknown method '" + v + "'");
}

inline AdvKind parse_advantage(const std::string& v) {
    if (v == "second_turn_mean") return AdvKind::SecondTurnMean;
    if (v == "second_turn_loo") return AdvKind::SecondTurnLOO;
    if (v == "first_turn_mean") return AdvKind::FirstTurnMean;
    if (v == "trajectory_improvement") return AdvKind::TrajectoryImprovement;
    if (v == "raw_reward") return AdvKind::RawReward;
    throw ConfigError("key 'trainer.advantage': unknown advantage '" + v + "'");
}

inline WeightingSpec::Kind parse_weighting(const std::string& v) {
    if (v == "full_is") return WeightingSpec::Kind::FullIS;
    if (v == "cispo_clip") return WeightingSpec::Kind::CispoClip;
    if (v == "ppo_clip") return WeightingSpec::Kind::PpoClip;
    if (v == "no_is") return WeightingSpec::Kind::NoIS;
    if (v == "sft_indicator") return WeightingSpec::Kind::SftIndicator;
    throw ConfigError("key 'trainer.weighting': unknown weighting '" + v + "'");
}

inline OptimizerKind parse_optimizer(const std::string& v) {
    if (v == "sgd") return OptimizerKind::Sgd;
    if (v == "adaptive") return OptimizerKind::Adaptive;
    throw ConfigError("key 'trainer.optimizer': unknown optimizer '" + v + "'");
}

// experiment config ----------------------------------------------------------

struct ExperimentConfig {
    TrainerConfig trainer;
    std::string output_dir;
    bool emit_plot_data = true;
};

inline EnvSpec env_spec_from(const FlatConfig& config) {
    SectionReader env(config, "env");
    EnvSpec spec;
    spec.kind = parse_env_kind(env.require("name"));
    spec.response_length = int(env.get_int("response_length", 4));
    spec.alphabet_size =
        int(env.get_int("alphabet_size", spec.kind == EnvKind::GridPathMicro ? 4 : 2));
    spec.critique_mode = parse_critique_mode(env.get("critique_mode", "localizing"));
    spec.instance_seed = std::uint64_t(env.get_int("instance_seed", 1));
    spec.feeder_noise = env.get_double("feeder_noise", 0.0);
    spec.evidence_scale = env.get_double("evidence_scale", 1.0);
    spec.epsilon0 = env.get_double("epsilon0", 0.04);
    spec.error_types = int(env.get_int("error_types", 3));
    spec.bandit_feature_dim = int(env.get_int("bandit_feature_dim", 9));
    spec.grid_rows = int(env.get_int("grid_rows", 3));
    spec.grid_cols = int(env.get_int("grid_cols", 3));
    env.reject_unknown();
    return spec;
}

inline ExperimentConfig experiment_config_from(const FlatConfig& config) {
    ExperimentConfig out;
    out.trainer.env_spec = env_spec_from(config);

    SectionReader tr(config, "trainer");
    out.trainer.method = parse_method(tr.require("method"));
    out.trainer.group_size = int(tr.get_int("group_size", 8));
    out.trainer.groups_per_batch = int(tr.get_int("groups_per_batch", 16));
    out.trainer.steps = int(tr.get_int("steps", 100));
    out.trainer.learning_rate = tr.get_double("learning_rate", 0.1);
    out.trainer.gamma = tr.get_double("gamma", 1.0);
    out.trainer.lambda_fm = tr.get_double("lambda_fm", 0.2);
    out.trainer.rl_coefficient = tr.get_double("rl_coefficient", 0.1);
    out.trainer.rl_coefficient_linear_schedule =
        tr.get_bool("rl_coefficient_linear_schedule", false);
    out.trainer.adv_spec = parse_advantage(tr.get("advantage", "first_turn_mean"));
    out.trainer.weight_spec.kind = parse_weighting(tr.get("weighting", "no_is"));
    out.trainer.weight_spec.epsilon = tr.get_double("clip_epsilon", 0.2);
    out.trainer.weight_spec.token_level = tr.get_bool("token_level", false);
    out.trainer.early_term = tr.get_bool("early_term", true);
    out.trainer.seed = std::uint64_t(tr.get_int("seed", 1));
    out.trainer.optimizer = parse_optimizer(tr.get("optimizer", "sgd"));
    out.trainer.repr_dim = int(tr.get_int("repr_dim", 4));
    out.trainer.init_scale = tr.get_double("init_scale", 0.01);
    out.trainer.tau = tr.get_double("tau", 1.0);
    tr.reject_unknown();

    SectionReader output(config, "output");
    out.output_dir = output.get("output_dir", "");
    out.trainer.eval_every = int(output.get_int("eval_every", 10));
    out.trainer.eval_instances = int(output.get_int("eval_instances", 32));
    out.trainer.eval_episodes = int(output.get_int("eval_episodes", 8));
    out.emit_plot_data = output.get_bool("emit_plot_data", true);
    output.reject_unknown();

    try {
        out.trainer.validate();
    } catch (const std::invalid_argument& e) {
        throw ConfigError(std::string("invalid trainer configuration: ") + e.what());
    }
    return out;
}

// canonical rendering (stored in manifests so a run can be reproduced from
// the manifest alone)
inline std::string render_config(const ExperimentConfig& cfg) {
    const TrainerConfig& t = cfg.trainer;
    const EnvSpec& e = t.env_spec;
    std::ostringstream out;
    out << "[env]\n";
    out << "name = " << to_string(e.kind) << "\n";
    out << "response_length = " << e.response_length << "\n";
    out << "alphabet_size = " << e.alphabet_size << "\n";
    out << "critique_mode = " << to_string(e.critique_mode) << "\n";
    out << "instance_seed = " << e.instance_seed << "\n";
    out << "feeder_noise = " << e.feeder_noise << "\n";
    out << "evidence_scale = " << e.evidence_scale << "\n";
    if (e.kind == EnvKind::SyntheticCritiqueBandit) {
        out << "epsilon0 = " << e.epsilon0 << "\n";
        out << "error_types = " << e.error_types << "\n";
        out << "bandit_feature_dim = " << e.bandit_feature_dim << "\n";
    }
    if (e.kind == EnvKind::GridPathMicro) {
        out << "grid_rows = " << e.grid_rows << "\n";
        out << "grid_cols = " << e.grid_cols << "\n";
    }
    out << "\n[trainer]\n";
    out << "method = " << to_string(t.method) << "\n";
    out << "group_size = " << t.group_size << "\n";
    out << "groups_per_batch = " << t.groups_per_batch << "\n";
    out << "steps = " << t.steps << "\n";
    out << "learning_rate = " << t.learning_rate << "\n";
    out << "gamma = " << t.gamma << "\n";
    out << "lambda_fm = " << t.lambda_fm << "\n";
    out << "rl_coefficient = " << t.rl_coefficient << "\n";
    out << "rl_coefficient_linear_schedule = "
        << (t.rl_coefficient_linear_schedule ? "true" : "false") << "\n";
    out << "advantage = " << to_string(t.adv_spec) << "\n";
    out << "weighting = " << to_string(t.weight_spec.kind) << "\n";
    out << "clip_epsilon = " << t.weight_spec.epsilon << "\n";
    out << "token_level = " << (t.weight_spec.token_level ? "true" : "false") << "\n";
    out << "early_term = " << (t.early_term ? "true" : "false") << "\n";
    out << "seed = " << t.seed << "\n";
    out << "optimizer = " << to_string(t.optimizer) << "\n";
    out << "repr_dim = " << t.repr_dim << "\n";
    out << "init_scale = " << t.init_scale << "\n";
    out << "tau = " << t.tau << "\n";
    out << "\n[output]\n";
    out << "output_dir = " << cfg.output_dir << "\n";
    out << "eval_every = " << t.eval_every << "\n";
    out << "eval_instances = " << t.eval_instances << "\n";
    out << "eval_episodes = " << t.eval_episodes << "\n";
    out << "emit_plot_data = " << (cfg.emit_plot_data ? "true" : "false") << "\n";
    return out.str();
}

// result files ---------------------------------------------------------------

inline std::string fmt_double(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

inline void write_eval_curve_csv(const std::string& path, const std::vector<EvalPoint>& curve) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write " + path);
    out << "step,J_single,J_single_se,J_multi,J_multi_se,env_interactions\n";
    for (const EvalPoint& p : curve)
        out << p.step << ',' << fmt_double(p.j_single) << ',' << fmt_double(p.j_single_se) << ','
            << fmt_double(p.j_multi) << ',' << fmt_double(p.j_multi_se) << ','
            << p.env_interactions << '\n';
}

inline void write_diagnostics_csv(const std::string& path, const std::vector<StepDiag>& diags) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write " + path);
    out << "step,grad_norm,clip_fraction,weight_mean,weight_second_moment,collapsed_groups,"
           "group_count,env_interactions\n";
    for (const StepDiag& d : diags)
        out << d.step << ',' << fmt_double(d.grad_norm) << ',' << fmt_double(d.clip_fraction)
            << ',' << fmt_double(d.weight_mean) << ',' << fmt_double(d.weight_second_moment)
            << ',' << d.collapsed_groups << ',' << d.group_count << ',' << d.env_interactions
            << '\n';
}

inline void write_manifest(const std::string& path, const ExperimentConfig& cfg,
                           const std::vector<std::string>& outputs) {
    nlohmann::json j;
    j["artifact_version"] = kArtifactVersion;
    j["seed"] = cfg.trainer.seed;
    j["method"] = to_string(cfg.trainer.method);
    j["nominal_budget"] = cfg.trainer.nominal_budget();
    j["config_text"] = render_config(cfg);
    j["outputs"] = outputs;
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write " + path);
    out << j.dump(2) << "\n";
}

// loads either a flat config file or a manifest.json produced by `train`
inline ExperimentConfig load_experiment_config(const std::string& path) {
    if (path.size() > 5 && path.substr(path.size() - 5) == ".json") {
        std::ifstream in(path);
        if (!in) throw ConfigError("cannot open manifest: " + path);
        nlohmann::json j;
        try {
            in >> j;
        } catch (const std::exception& e) {
            throw ConfigError("malformed manifest " + path + ": " + e.what());
        }
        if (!j.contains("config_text"))
            throw ConfigError("manifest " + path + " lacks the key 'config_text'");
        std::istringstream text(j["config_text"].get<std::string>());
        return experiment_config_from(parse_flat_config(text));
    }
    return experiment_config_from(parse_flat_config_file(path));
}

}  // namespace rltf::cfg
