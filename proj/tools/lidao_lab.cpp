// lidao_lab: decoding-time debiasing laboratory CLI.
//
//   verify      run the math verification suite (exit 1 on any failed check)
//   make-toy    build a synthetic world + ready-to-run experiment config
//   generate    sample one continuation per method x prompt, print JSON lines
//   evaluate    re-score an existing generations file into a bias report
//   experiment  run the full method sweep and write all report files
//
// Exit codes: 0 ok, 1 check/processing failure, 2 configuration error.

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "lidao/controller.hpp"
#include "lidao/errors.hpp"
#include "lidao/eval.hpp"
#include "lidao/experiment.hpp"
#include "lidao/toyworld.hpp"
#include "lidao/verify.hpp"

namespace {

using nlohmann::ordered_json;

void write_file(const std::filesystem::path& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw lidao::ConfigError("cannot write file: " + path.string());
    out << text;
}

std::vector<std::string> split_csv_list(const std::string& joined) {
    std::vector<std::string> out;
    std::stringstream ss(joined);
    std::string item;
    while (std::getline(ss, item, ',')) {
        if (!item.empty()) out.push_back(item);
    }
    return out;
}

// Shared post-load tweaks: --methods filter, --seed and --out overrides.
lidao::experiment::ExperimentConfig load_config(const std::string& config_path,
                                                const std::string& methods_csv,
                                                const std::optional<std::uint64_t>& seed,
                                                const std::string& out_dir) {
    if (config_path.empty()) throw lidao::ConfigError("--config is required");
    auto cfg = lidao::experiment::ExperimentConfig::load(config_path);
    if (!methods_csv.empty()) cfg.methods = split_csv_list(methods_csv);
    if (seed.has_value()) cfg.global_seed = *seed;
    if (!out_dir.empty()) cfg.out_dir = out_dir;
    cfg.validate();
    return cfg;
}

int cmd_verify(std::uint64_t seed, const std::string& out_path) {
    lidao::verify::VerifyOptions opts;
    opts.seed = seed;
    const lidao::verify::VerificationReport report = lidao::verify::run_verification(opts);
    const std::string doc = report.to_json_string();
    std::cout << doc;
    if (!out_path.empty()) write_file(out_path, doc);
    return report.all_pass() ? 0 : 1;
}

int cmd_make_toy(std::uint64_t seed, double bias, const std::string& out_dir) {
    const std::filesystem::path dir = out_dir.empty() ? "toyworld" : out_dir;
    std::filesystem::create_directories(dir);
    const lidao::world::ToyWorld world = lidao::world::make_toy_world(seed, bias);
    world.vocab.save(dir / "vocab.json");
    world.generator.save(dir / "generator.json");
    world.evaluator.save(dir / "evaluator.json");
    lidao::experiment::save_prompts(dir / "prompts.jsonl", world.prompts);

    ordered_json cfg;
    cfg["vocab"] = "vocab.json";
    cfg["generator"] = "generator.json";
    cfg["evaluator"] = "evaluator.json";
    cfg["prompts"] = "prompts.jsonl";
    cfg["out_dir"] = "results";
    cfg["methods"] = {"none", "g_only", "a_only", "uddia_sum", "lidao_min", "lidao_prod",
                      "elidao_min", "elidao_prod"};
    cfg["n_continuations"] = 5;
    cfg["sanitize_threshold"] = 200.0;
    cfg["global_seed"] = seed;
    cfg["sampling"] = {{"coverage", 0.9}, {"temperature", 1.0}, {"repetition_penalty", 1.0}};
    // Operating point strong enough to steer these saturated worlds, with a
    // horizon short enough that the exact outcome summary stays enumerable.
    cfg["intervention"] = {{"tau", 0.9},        {"gamma", 0.5},        {"lr", 100.0},
                           {"adam_beta1", 0.9}, {"adam_beta2", 0.999}, {"adam_eps", 1.0},
                           {"max_len", 5},      {"elidao_boost", 2.0}};
    write_file(dir / "config.json", cfg.dump(2) + "\n");

    std::cout << "wrote toy world (bias_strength=" << bias << ", seed=" << seed << ") to "
              << dir.string() << "\n"
              << "run: lidao_lab experiment --config " << (dir / "config.json").string() << "\n";
    return 0;
}

int cmd_generate(const std::string& config_path, const std::string& methods_csv,
                 const std::optional<std::uint64_t>& seed, const std::string& out_path) {
    const auto cfg = load_config(config_path, methods_csv, seed, "");
    const auto vocab = lidao::seqcore::Vocabulary::load(cfg.vocab_path);
    const auto generator = lidao::toylm::ToyLM::load(cfg.generator_path);
    const auto evaluator = lidao::toylm::ToyLM::load(cfg.evaluator_path);
    const auto prompts = lidao::experiment::load_prompts(cfg.prompts_path);

    std::ostringstream lines;
    for (const std::string& method : cfg.methods) {
        const auto icfg = cfg.intervention_for(method);
        for (const auto& prompt : prompts) {
            const auto bundle = lidao::world::make_attr_bundle(vocab, generator, prompt.group);
            const std::uint64_t cell_seed =
                lidao::experiment::derive_seed(cfg.global_seed, method, prompt.pair_id, 0);
            std::mt19937_64 rng(cell_seed);
            const auto rec = lidao::controller::generate(generator, bundle, icfg, cfg.sampling,
                                                         prompt.tokens, vocab.eos_id, rng);
            std::string text;
            for (std::size_t i = 0; i < rec.output.ids.size(); ++i) {
                if (i > 0) text += ' ';
                text += vocab.tokens.at(static_cast<std::size_t>(rec.output.ids[i]));
            }
            ordered_json j;
            j["method"] = method;
            j["pair_id"] = prompt.pair_id;
            j["group_prompt"] = prompt.group;
            j["seed"] = cell_seed;
            j["token_ids"] = rec.output.ids;
            j["text"] = text;
            j["ppl"] = lidao::eval::perplexity(rec.full_sequence(), evaluator);
            lines << j.dump() << "\n";
        }
    }
    std::cout << lines.str();
    if (!out_path.empty()) write_file(out_path, lines.str());
    return 0;
}

int cmd_evaluate(const std::string& config_path, const std::string& generations,
                 const std::string& mode, const std::string& out_dir) {
    const auto cfg = load_config(config_path, "", std::nullopt, out_dir);
    const auto vocab = lidao::seqcore::Vocabulary::load(cfg.vocab_path);
    const auto evaluator = lidao::toylm::ToyLM::load(cfg.evaluator_path);
    const std::filesystem::path gen_path =
        generations.empty() ? cfg.out_dir / "generations.jsonl" : std::filesystem::path(generations);

    lidao::eval::BiasReport report = lidao::experiment::evaluate_generations_file(
        gen_path, vocab, evaluator, cfg.sanitize_threshold);
    if (mode != "both") {
        std::vector<lidao::eval::BiasReportRow> kept;
        for (const auto& row : report.rows) {
            if (row.mode == mode) kept.push_back(row);
        }
        report.rows = std::move(kept);
    }
    std::cout << report.to_csv();
    std::filesystem::create_directories(cfg.out_dir);
    write_file(cfg.out_dir / "report.csv", report.to_csv());
    write_file(cfg.out_dir / "report.json", report.to_json_string());
    return 0;
}

int cmd_experiment(const std::string& config_path, const std::string& methods_csv,
                   const std::optional<std::uint64_t>& seed, const std::string& out_dir) {
    const auto cfg = load_config(config_path, methods_csv, seed, out_dir);
    const auto result = lidao::experiment::run_experiment(cfg);
    std::size_t failed = 0;
    for (const auto& cell : result.cells) {
        if (cell.failed) ++failed;
    }
    std::cout << result.report.to_csv() << "cells: " << result.cells.size()
              << " (failed: " << failed << ")\n"
              << "wrote: " << result.generations_path.string() << "\n"
              << "       " << result.report_csv_path.string() << "\n"
              << "       " << result.report_json_path.string() << "\n"
              << "       " << result.summary_path.string() << "\n";
    return 0;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"decoding-time debiasing laboratory"};
    app.require_subcommand(1);

    std::string config_path, methods_csv, out_path, mode = "both", generations;
    std::uint64_t seed = 0;
    bool seed_given = false;
    double bias = 1.0;

    auto add_seed = [&](CLI::App* cmd) {
        cmd->add_option("--seed", seed, "global RNG seed")->each([&](const std::string&) {
            seed_given = true;
        });
    };

    CLI::App* verify = app.add_subcommand("verify", "run the math verification suite");
    add_seed(verify);
    verify->add_option("--out", out_path, "also write the report JSON here");

    CLI::App* make_toy = app.add_subcommand("make-toy", "build a synthetic world");
    add_seed(make_toy);
    make_toy->add_option("--bias", bias, "coupling strength in [0, 1]")
        ->check(CLI::Range(0.0, 1.0));
    make_toy->add_option("--out", out_path, "output directory (default: toyworld)");

    CLI::App* generate = app.add_subcommand("generate", "sample one continuation per cell");
    generate->add_option("--config", config_path, "experiment config JSON")->required();
    generate->add_option("--methods", methods_csv, "comma-separated method filter");
    add_seed(generate);
    generate->add_option("--out", out_path, "also write the JSON lines here");

    CLI::App* evaluate = app.add_subcommand("evaluate", "re-score a generations file");
    evaluate->add_option("--config", config_path, "experiment config JSON")->required();
    evaluate->add_option("--generations", generations,
                         "generations file (default: <out_dir>/generations.jsonl)");
    evaluate->add_option("--mode", mode, "report rows to keep: gen | joint | both")
        ->check(CLI::IsMember({"gen", "joint", "both"}));
    evaluate->add_option("--out", out_path, "report output directory (default: config out_dir)");

    CLI::App* experiment = app.add_subcommand("experiment", "run the full method sweep");
    experiment->add_option("--config", config_path, "experiment config JSON")->required();
    experiment->add_option("--methods", methods_csv, "comma-separated method filter");
    add_seed(experiment);
    experiment->add_option("--out", out_path, "output directory override");

    CLI11_PARSE(app, argc, argv);

    try {
        const std::optional<std::uint64_t> seed_opt =
            seed_given ? std::optional<std::uint64_t>(seed) : std::nullopt;
        if (verify->parsed()) return cmd_verify(seed, out_path);
        if (make_toy->parsed()) return cmd_make_toy(seed, bias, out_path);
        if (generate->parsed()) return cmd_generate(config_path, methods_csv, seed_opt, out_path);
        if (evaluate->parsed()) return cmd_evaluate(config_path, generations, mode, out_path);
        if (experiment->parsed())
            return cmd_experiment(config_path, methods_csv, seed_opt, out_path);
    } catch (const lidao::ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 2;
}
