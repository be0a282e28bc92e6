// Command-line front door: experiment runs, the verification suite, batch
// method comparisons, and checkpoint evaluation.
//
// Exit codes: 0 success, 1 verification failure, 2 configuration error,
// 3 numeric abort.

#include <CLI11.hpp>
#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <string>
#include <vector>

#include "rltf/config.hpp"
#include "rltf/theory_suite.hpp"
#include "rltf/trainer.hpp"

namespace fs = std::filesystem;
using namespace rltf;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitVerifyFailure = 1;
constexpr int kExitConfigError = 2;
constexpr int kExitNumericAbort = 3;

int run_train(const std::string& config_path) {
    cfg::ExperimentConfig config = cfg::load_experiment_config(config_path);
    if (config.output_dir.empty())
        throw cfg::ConfigError("missing required key 'output.output_dir'");
    fs::create_directories(config.output_dir);

    TrainingRun run = train(config.trainer);

    fs::path dir(config.output_dir);
    std::vector<std::string> outputs;
    auto emit = [&](const std::string& name) {
        outputs.push_back((dir / name).string());
        return outputs.back();
    };
    cfg::write_eval_curve_csv(emit("eval_curve.csv"), run.eval_curve);
    cfg::write_diagnostics_csv(emit("diagnostics.csv"), run.diagnostics);
    save_checkpoint(emit("checkpoint.bin"), run.final_params);
    cfg::write_manifest((dir / "manifest.json").string(), config, outputs);

    const EvalPoint& last = run.eval_curve.back();
    std::printf("method=%s steps=%d J_single %.4f -> %.4f  J_multi %.4f -> %.4f  interactions=%lld\n",
                to_string(config.trainer.method).c_str(), config.trainer.steps,
                run.eval_curve.front().j_single, last.j_single, run.eval_curve.front().j_multi,
                last.j_multi, run.env_interactions);
    return kExitOk;
}

int run_verify(std::uint64_t seed, const std::string& budget, const std::string& inject,
               const std::string& output) {
    theory::Budget b;
    if (budget == "quick") b = theory::Budget::Quick;
    else if (budget == "full") b = theory::Budget::Full;
    else throw cfg::ConfigError("unknown budget '" + budget + "' (expected quick or full)");

    theory::InjectedBug bug = theory::InjectedBug::None;
    if (inject == "shrinkage-mislabel") bug = theory::InjectedBug::ShrinkageMislabeled;
    else if (!inject.empty()) throw cfg::ConfigError("unknown bug fixture '" + inject + "'");

    theory::TheoryReport report = theory::standard_suite(b, seed, bug);
    for (const theory::CheckResult& c : report.checks)
        std::printf("[%s] %-45s measured=%-12.6g predicted=%-12.6g tol=%.3g\n",
                    c.pass ? "PASS" : "FAIL", c.name.c_str(), c.measured, c.predicted,
                    c.tolerance);
    theory::write_theory_report(output, report);
    std::printf("%zu checks, %s -> %s\n", report.checks.size(),
                report.all_pass() ? "all passed" : "FAILURES PRESENT", output.c_str());
    return report.all_pass() ? kExitOk : kExitVerifyFailure;
}

int run_compare(const std::string& config_dir, int n_seeds, std::uint64_t base_seed,
                const std::string& output_dir) {
    std::vector<fs::path> files;
    for (const auto& entry : fs::directory_iterator(config_dir))
        if (entry.is_regular_file() && entry.path().extension() == ".cfg")
            files.push_back(entry.path());
    std::sort(files.begin(), files.end());
    if (files.empty()) throw cfg::ConfigError("no .cfg files in " + config_dir);

    std::vector<std::pair<std::string, cfg::ExperimentConfig>> configs;
    for (const fs::path& f : files)
        configs.emplace_back(f.stem().string(), cfg::load_experiment_config(f.string()));

    // all configs must share the environment family and the interaction budget
    const auto& head = configs.front().second.trainer;
    for (const auto& [label, config] : configs) {
        const auto& t = config.trainer;
        if (t.nominal_budget() != head.nominal_budget())
            throw cfg::ConfigError("config '" + label + "' budget " +
                                   std::to_string(t.nominal_budget()) +
                                   " does not match the shared budget " +
                                   std::to_string(head.nominal_budget()));
        if (t.env_spec.kind != head.env_spec.kind ||
            t.env_spec.response_length != head.env_spec.response_length ||
            t.env_spec.alphabet_size != head.env_spec.alphabet_size ||
            t.env_spec.instance_seed != head.env_spec.instance_seed)
            throw cfg::ConfigError("config '" + label + "' does not share the environment");
    }

    fs::create_directories(output_dir);
    fs::path dir(output_dir);
    std::ofstream rows(dir / "comparison.csv");
    rows << "method,seed,final_J_single,final_J_multi\n";
    std::ofstream summary(dir / "summary.csv");
    summary << "method,mean_J_single,se_J_single,mean_J_multi,se_J_multi,budget\n";

    for (const auto& [label, config] : configs) {
        double s1 = 0.0, s1q = 0.0, s2 = 0.0, s2q = 0.0;
        for (int s = 0; s < n_seeds; ++s) {
            TrainerConfig t = config.trainer;
            t.seed = base_seed + std::uint64_t(s);
            TrainingRun run = train(t);
            double j1 = run.eval_curve.back().j_single;
            double j2 = run.eval_curve.back().j_multi;
            rows << label << ',' << t.seed << ',' << cfg::fmt_double(j1) << ','
                 << cfg::fmt_double(j2) << '\n';
            s1 += j1;
            s1q += j1 * j1;
            s2 += j2;
            s2q += j2 * j2;
        }
        double m1 = s1 / n_seeds, m2 = s2 / n_seeds;
        double e1 = n_seeds > 1
                        ? std::sqrt(std::max(0.0, (s1q / n_seeds - m1 * m1) / (n_seeds - 1)))
                        : 0.0;
        double e2 = n_seeds > 1
                        ? std::sqrt(std::max(0.0, (s2q / n_seeds - m2 * m2) / (n_seeds - 1)))
                        : 0.0;
        summary << label << ',' << cfg::fmt_double(m1) << ',' << cfg::fmt_double(e1) << ','
                << cfg::fmt_double(m2) << ',' << cfg::fmt_double(e2) << ','
                << config.trainer.nominal_budget() << '\n';
        std::printf("%-28s J_single %.4f +- %.4f   J_multi %.4f +- %.4f\n", label.c_str(), m1,
                    e1, m2, e2);
    }
    std::printf("wrote %s and %s\n", (dir / "comparison.csv").c_str(),
                (dir / "summary.csv").c_str());
    return kExitOk;
}

int run_eval(const std::string& checkpoint_path, const std::string& env_config_path,
             int instances, int horizon, int episodes, std::uint64_t seed) {
    PolicyParams theta = load_checkpoint(checkpoint_path);
    EnvSpec spec = cfg::env_spec_from(cfg::parse_flat_config_file(env_config_path));
    Environment env(spec);
    theta.check_compatible(env);
    auto eval_instances = env.sample_instances(instances, kEvalInstanceBase);
    ScalarEstimate js = eval_single_turn(theta, env, eval_instances);
    MultiTurnEval mt = eval_multi_turn(theta, env, eval_instances, horizon, 1.0, true, episodes,
                                       RngStream(seed).child(2));
    std::printf("J_single = %.6f (exact over %d instances)\n", js.value, instances);
    std::printf("J_multi  = %.6f +- %.6f (final-turn success, H=%d)\n", mt.final_success,
                mt.final_success_se, horizon);
    std::printf("return   = %.6f +- %.6f\n", mt.return_mean, mt.return_se);
    return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"desk-scale lab for multi-turn RL from programmatic critiques"};
    app.require_subcommand(1);

    std::string train_config;
    CLI::App* train_cmd = app.add_subcommand("train", "run one training configuration");
    train_cmd->add_option("config", train_config, "flat config file or manifest.json")
        ->required();

    std::uint64_t verify_seed = 1;
    std::string verify_budget = "quick";
    std::string verify_inject;
    std::string verify_output = "theory_report.json";
    CLI::App* verify_cmd = app.add_subcommand("verify", "run the verification suite");
    verify_cmd->add_option("--seed", verify_seed, "suite seed");
    verify_cmd->add_option("--budget", verify_budget, "quick or full");
    verify_cmd->add_option("--output", verify_output, "report path");
    verify_cmd
        ->add_option("--inject-bug", verify_inject,
                     "negative-control fixture (shrinkage-mislabel)")
        ->group("");  // hidden from the default help

    std::string compare_dir;
    std::string compare_out = "compare_results";
    int compare_seeds = 5;
    std::uint64_t compare_base_seed = 1;
    CLI::App* compare_cmd =
        app.add_subcommand("compare", "run every config in a directory over shared seeds");
    compare_cmd->add_option("config_dir", compare_dir, "directory of .cfg files")->required();
    compare_cmd->add_option("--seeds", compare_seeds, "seeds per method");
    compare_cmd->add_option("--base-seed", compare_base_seed, "first shared seed");
    compare_cmd->add_option("--output", compare_out, "output directory");

    std::string eval_checkpoint, eval_env_config;
    int eval_instances_n = 64, eval_horizon = 2, eval_episodes_n = 32;
    std::uint64_t eval_seed = 1;
    CLI::App* eval_cmd = app.add_subcommand("eval", "evaluate a checkpoint on an environment");
    eval_cmd->add_option("checkpoint", eval_checkpoint, "policy checkpoint")->required();
    eval_cmd->add_option("env_config", eval_env_config, "config file with an [env] section")
        ->required();
    eval_cmd->add_option("--instances", eval_instances_n, "evaluation instances");
    eval_cmd->add_option("--horizon", eval_horizon, "multi-turn horizon");
    eval_cmd->add_option("--episodes", eval_episodes_n, "episodes per instance");
    eval_cmd->add_option("--seed", eval_seed, "evaluation seed");

    try {
        app.parse(argc, argv);
        if (*train_cmd) return run_train(train_config);
        if (*verify_cmd)
            return run_verify(verify_seed, verify_budget, verify_inject, verify_output);
        if (*compare_cmd)
            return run_compare(compare_dir, compare_seeds, compare_base_seed, compare_out);
        if (*eval_cmd)
            return run_eval(eval_checkpoint, eval_env_config, eval_instances_n, eval_horizon,
                            eval_episodes_n, eval_seed);
    } catch (const CLI::ParseError& e) {
        return app.exit(e);
    } catch (const cfg::ConfigError& e) {
        std::fprintf(stderr, "configuration error: %s\n", e.what());
        return kExitConfigError;
    } catch (const NumericAbort& e) {
        std::fprintf(stderr, "numeric abort: %s\n", e.what());
        return kExitNumericAbort;
    } catch (const std::invalid_argument& e) {
        std::fprintf(stderr, "configuration error: %s\n", e.what());
        return kExitConfigError;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return kExitVerifyFailure;
    }
    return kExitOk;
}
