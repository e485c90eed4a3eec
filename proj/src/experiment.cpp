#include "lidao/experiment.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <set>
#include <sstream>
#include <thread>

#include <json.hpp>

#include "lidao/infoth.hpp"

namespace lidao::experiment {

using nlohmann::json;
using nlohmann::ordered_json;

namespace {

[[noreturn]] void config_fail(const std::string& what) { throw ConfigError(what); }

std::filesystem::path resolve(const std::filesystem::path& base, const std::string& raw) {
    std::filesystem::path p(raw);
    if (p.is_absolute()) return p;
    return base / p;
}

std::string read_text(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) config_fail("cannot open file: " + path.string());
    std::ostringstream buf;
    buf << in.rdbuf();
    return buf.str();
}

void write_text(const std::filesystem::path& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) config_fail("cannot write file: " + path.string());
    out << text;
    out.flush();
    if (!out) config_fail("short write: " + path.string());
}

void apply_intervention_table(controller::InterventionConfig& icfg,
                              const std::map<std::string, double>& table) {
    for (const auto& [key, value] : table) {
        if (key == "tau") {
            icfg.tau = value;
        } else if (key == "gamma") {
            icfg.gamma = value;
        } else if (key == "lr") {
            icfg.lr = value;
        } else if (key == "adam_beta1") {
            icfg.adam_beta1 = value;
        } else if (key == "adam_beta2") {
            icfg.adam_beta2 = value;
        } else if (key == "adam_eps") {
            icfg.adam_eps = value;
        } else if (key == "max_len") {
            icfg.max_len = static_cast<int>(std::llround(value));
        } else if (key == "elidao_boost") {
            icfg.elidao_boost = value;
        } else {
            config_fail("unknown intervention parameter: " + key);
        }
    }
}

std::map<std::string, double> parse_number_table(const json& obj, const std::string& where) {
    if (!obj.is_object()) config_fail(where + " must be an object of numbers");
    std::map<std::string, double> table;
    for (auto it = obj.begin(); it != obj.end(); ++it) {
        if (!it.value().is_number()) config_fail(where + "." + it.key() + " must be a number");
        table[it.key()] = it.value().get<double>();
    }
    return table;
}

} // namespace

// ---- configuration ----------------------------------------------------------

void ExperimentConfig::validate() const {
    if (methods.empty()) config_fail("methods list must be nonempty");
    std::set<std::string> seen;
    for (const std::string& m : methods) {
        (void)controller::method_from_string(m);
        if (!seen.insert(m).second) config_fail("duplicate method in config: " + m);
    }
    if (n_continuations < 1) config_fail("n_continuations must be >= 1");
    if (!(sanitize_threshold > 0.0)) config_fail("sanitize_threshold must be > 0");
    sampling.validate();
    base_intervention.validate();
    for (const auto& [m, table] : method_overrides) {
        (void)controller::method_from_string(m);
        (void)table;
    }
    for (const std::string& m : methods) (void)intervention_for(m);
}

controller::InterventionConfig ExperimentConfig::intervention_for(const std::string& method) const {
    controller::InterventionConfig icfg = base_intervention;
    auto it = method_overrides.find(method);
    if (it != method_overrides.end()) apply_intervention_table(icfg, it->second);
    icfg.method = controller::method_from_string(method);
    icfg.validate();
    return icfg;
}

ExperimentConfig ExperimentConfig::from_json_string(const std::string& text,
                                                    const std::filesystem::path& base_dir) {
    json j;
    try {
        j = json::parse(text);
    } catch (const json::exception& e) {
        config_fail(std::string("config parse error: ") + e.what());
    }
    if (!j.is_object()) config_fail("config root must be an object");

    static const std::set<std::string> kKnown = {
        "vocab",       "generator",         "evaluator",
        "prompts",     "out_dir",           "methods",
        "n_continuations", "sanitize_threshold", "global_seed",
        "sampling",    "intervention",      "intervention_overrides",
    };
    for (auto it = j.begin(); it != j.end(); ++it) {
        if (kKnown.find(it.key()) == kKnown.end())
            config_fail("unknown config key: " + it.key());
    }

    ExperimentConfig cfg;
    try {
        cfg.vocab_path = resolve(base_dir, j.at("vocab").get<std::string>());
        cfg.generator_path = resolve(base_dir, j.at("generator").get<std::string>());
        cfg.evaluator_path = resolve(base_dir, j.at("evaluator").get<std::string>());
        cfg.prompts_path = resolve(base_dir, j.at("prompts").get<std::string>());
        cfg.out_dir = resolve(base_dir, j.at("out_dir").get<std::string>());
        cfg.methods = j.at("methods").get<std::vector<std::string>>();
        if (j.contains("n_continuations")) cfg.n_continuations = j["n_continuations"].get<int>();
        if (j.contains("sanitize_threshold"))
            cfg.sanitize_threshold = j["sanitize_threshold"].get<double>();
        if (j.contains("global_seed")) cfg.global_seed = j["global_seed"].get<std::uint64_t>();
        if (j.contains("sampling")) {
            const json& s = j["sampling"];
            if (!s.is_object()) config_fail("sampling must be an object");
            for (auto it = s.begin(); it != s.end(); ++it) {
                if (it.key() == "coverage") {
                    cfg.sampling.coverage = it.value().get<double>();
                } else if (it.key() == "temperature") {
                    cfg.sampling.temperature = it.value().get<double>();
                } else if (it.key() == "repetition_penalty") {
                    cfg.sampling.repetition_penalty = it.value().get<double>();
                } else if (it.key() == "seed") {
                    cfg.sampling.seed = it.value().get<std::uint64_t>();
                } else {
                    config_fail("unknown sampling parameter: " + it.key());
                }
            }
        }
        if (j.contains("intervention"))
            apply_intervention_table(cfg.base_intervention,
                                     parse_number_table(j["intervention"], "intervention"));
        if (j.contains("intervention_overrides")) {
            const json& o = j["intervention_overrides"];
            if (!o.is_object()) config_fail("intervention_overrides must be an object");
            for (auto it = o.begin(); it != o.end(); ++it) {
                cfg.method_overrides[it.key()] =
                    parse_number_table(it.value(), "intervention_overrides." + it.key());
            }
        }
    } catch (const json::exception& e) {
        config_fail(std::string("config field error: ") + e.what());
    }
    cfg.validate();
    return cfg;
}

ExperimentConfig ExperimentConfig::load(const std::filesystem::path& path) {
    return from_json_string(read_text(path), path.parent_path());
}

// ---- prompt dataset IO -------------------------------------------------------

void validate_prompt_pairs(const std::vector<world::PromptRecord>& prompts) {
    if (prompts.empty()) config_fail("prompt dataset is empty");
    std::map<int, std::map<std::string, int>> pair_groups;
    for (const auto& p : prompts) {
        if (p.group != "male" && p.group != "female")
            config_fail("prompt group must be 'male' or 'female', got '" + p.group + "'");
        if (p.tokens.empty()) config_fail("prompt tokens must be nonempty");
        ++pair_groups[p.pair_id][p.group];
    }
    for (const auto& [pair_id, groups] : pair_groups) {
        const auto m = groups.find("male");
        const auto f = groups.find("female");
        if (m == groups.end() || f == groups.end() || m->second != 1 || f->second != 1)
            config_fail("pair " + std::to_string(pair_id) +
                        " must appear exactly once per group");
    }
}

std::vector<world::PromptRecord> load_prompts(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) config_fail("cannot open prompts file: " + path.string());
    std::vector<world::PromptRecord> out;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        json j;
        try {
            j = json::parse(line);
            world::PromptRecord rec;
            rec.pair_id = j.at("pair_id").get<int>();
            rec.group = j.at("group").get<std::string>();
            rec.tokens = j.at("tokens").get<std::vector<int>>();
            out.push_back(std::move(rec));
        } catch (const json::exception& e) {
            config_fail("prompts line " + std::to_string(lineno) + ": " + e.what());
        }
    }
    validate_prompt_pairs(out);
    return out;
}

void save_prompts(const std::filesystem::path& path,
                  const std::vector<world::PromptRecord>& prompts) {
    std::ostringstream out;
    for (const auto& p : prompts) {
        ordered_json j;
        j["pair_id"] = p.pair_id;
        j["group"] = p.group;
        j["tokens"] = p.tokens;
        out << j.dump() << "\n";
    }
    write_text(path, out.str());
}

// ---- deterministic per-cell seeds -------------------------------------------

namespace {

std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

std::uint64_t fnv1a(const std::string& s) {
    std::uint64_t h = 1469598103934665603ULL;
    for (unsigned char c : s) {
        h ^= c;
        h *= 1099511628211ULL;
    }
    return h;
}

} // namespace

std::uint64_t derive_seed(std::uint64_t global_seed, const std::string& method, int pair_id,
                          int continuation_index) {
    std::uint64_t h = splitmix64(global_seed);
    h = splitmix64(h ^ fnv1a(method));
    h = splitmix64(h ^ static_cast<std::uint64_t>(static_cast<std::int64_t>(pair_id)));
    h = splitmix64(h ^ static_cast<std::uint64_t>(static_cast<std::int64_t>(continuation_index)));
    return h;
}

// ---- run --------------------------------------------------------------------

namespace {

std::size_t worker_count(std::size_t n_cells) {
    std::size_t n = std::thread::hardware_concurrency();
    if (const char* env = std::getenv("LIDAO_LAB_THREADS"); env != nullptr && *env != '\0') {
        char* end = nullptr;
        const unsigned long parsed = std::strtoul(env, &end, 10);
        if (end == nullptr || *end != '\0' || parsed == 0)
            config_fail("LIDAO_LAB_THREADS must be a positive integer");
        n = parsed;
    }
    if (n == 0) n = 1;
    return std::min(n, std::max<std::size_t>(n_cells, 1));
}

std::string join_tokens(const seqcore::Vocabulary& vocab, std::span<const int> ids) {
    std::string out;
    for (std::size_t i = 0; i < ids.size(); ++i) {
        if (i > 0) out += ' ';
        out += vocab.tokens.at(static_cast<std::size_t>(ids[i]));
    }
    return out;
}

void score_cell(CellResult& cell, const seqcore::Vocabulary& vocab,
                const toylm::ToyLM& evaluator) {
    const seqcore::TokenSequence full = cell.record.full_sequence();
    cell.record.ppl = eval::perplexity(full, evaluator);

    eval::ScoredRecord s;
    s.method = cell.method;
    s.pair_id = cell.pair_id;
    s.prompt_group = cell.group;
    s.sentiment_gen = eval::score_sentiment(full, vocab, eval::LabelMode::generation_only);
    s.sentiment_joint = eval::score_sentiment(full, vocab, eval::LabelMode::joint_with_prompt);
    s.regard_gen = eval::score_regard(full, vocab, eval::LabelMode::generation_only);
    s.regard_joint = eval::score_regard(full, vocab, eval::LabelMode::joint_with_prompt);
    s.toxicity_gen = eval::score_toxicity(full, vocab, eval::LabelMode::generation_only);
    s.toxicity_joint = eval::score_toxicity(full, vocab, eval::LabelMode::joint_with_prompt);
    s.gender_gen = eval::label_gender(full, vocab, eval::LabelMode::generation_only);
    s.gender_joint = eval::label_gender(full, vocab, eval::LabelMode::joint_with_prompt);
    s.ppl = cell.record.ppl;
    s.failed = false;
    cell.scored = std::move(s);
}

std::string emit_generations(const std::vector<CellResult>& cells,
                             const std::vector<world::PromptRecord>& prompts,
                             const std::vector<std::size_t>& cell_prompt_index,
                             const seqcore::Vocabulary& vocab) {
    std::ostringstream out;
    for (std::size_t i = 0; i < cells.size(); ++i) {
        const CellResult& cell = cells[i];
        const world::PromptRecord& prompt = prompts[cell_prompt_index[i]];
        ordered_json j;
        j["method"] = cell.method;
        j["pair_id"] = cell.pair_id;
        j["group_prompt"] = cell.group;
        j["continuation"] = cell.continuation;
        j["seed"] = cell.seed;
        j["prompt_token_ids"] = prompt.tokens;
        j["token_ids"] = cell.record.output.ids;
        j["text"] = join_tokens(vocab, cell.record.output.ids);
        if (cell.failed) {
            j["ppl"] = nullptr;
            j["terminated_by"] = nullptr;
        } else {
            j["ppl"] = cell.record.ppl;
            j["terminated_by"] =
                cell.record.terminated_by == controller::TerminatedBy::eos ? "eos" : "max_len";
        }
        ordered_json steps = ordered_json::array();
        for (const auto& st : cell.record.trace.steps) {
            ordered_json sj;
            sj["lg"] = st.lg;
            sj["la"] = st.la;
            sj["wg"] = st.wg;
            sj["wa"] = st.wa;
            sj["chosen"] = controller::chosen_to_string(st.chosen);
            steps.push_back(std::move(sj));
        }
        j["steps"] = std::move(steps);
        j["failed"] = cell.failed;
        if (cell.failed)
            j["error"] = cell.error;
        else
            j["error"] = nullptr;
        out << j.dump() << "\n";
    }
    return out.str();
}

} // namespace

ExactMethodSummary exact_method_summary(const seqcore::Vocabulary& vocab,
                                        const toylm::ToyLM& generator,
                                        const toylm::ToyLM& evaluator,
                                        const std::vector<world::PromptRecord>& prompts,
                                        const controller::InterventionConfig& icfg,
                                        const seqcore::SamplingConfig& scfg) {
    if (prompts.empty()) config_fail("exact_method_summary needs at least one prompt");
    infoth::check_enumeration_budget(generator.vocab_size, icfg.max_len);

    ExactMethodSummary summary;
    summary.method = controller::method_to_string(icfg.method);

    // property x generation-gender and joint-gender x generation-gender mass
    std::vector<double> pg(9, 0.0);
    std::vector<double> jg(9, 0.0);
    double ppl_acc = 0.0;
    const double prompt_weight = 1.0 / static_cast<double>(prompts.size());

    for (const auto& prompt : prompts) {
        const controller::AttrBundle bundle =
            world::make_attr_bundle(vocab, generator, prompt.group);
        const infoth::SequenceEnsemble ens = controller::enumerate_generation(
            generator, bundle, icfg, scfg, prompt.tokens, vocab.eos_id);
        const double mass = ens.total_mass();
        if (!(mass > 0.0))
            throw DegenerateDistributionError("enumerated process lost all probability mass");
        for (std::size_t k = 0; k < ens.outcomes.size(); ++k) {
            const std::vector<int>& gen = ens.outcomes[k];
            const double w = prompt_weight * ens.probs[k] / mass;

            const int g = world::property_label_index(vocab, gen);
            const int a_gen = world::gender_label_index(vocab, gen);
            std::vector<int> joint_tokens = prompt.tokens;
            joint_tokens.insert(joint_tokens.end(), gen.begin(), gen.end());
            const int a_joint = world::gender_label_index(vocab, joint_tokens);

            pg[static_cast<std::size_t>(g) * 3 + a_gen] += w;
            jg[static_cast<std::size_t>(a_joint) * 3 + a_gen] += w;

            seqcore::TokenSequence seq;
            for (int t : prompt.tokens) seq.push_back(t, seqcore::TokenOrigin::prompt);
            for (int t : gen) seq.push_back(t, seqcore::TokenOrigin::generated);
            ppl_acc += w * eval::perplexity(seq, evaluator);
        }
        summary.n_outcomes += ens.outcomes.size();
    }

    auto normalized = [](std::vector<double> v) {
        double s = 0.0;
        for (double x : v) s += x;
        for (double& x : v) x /= s;
        return v;
    };
    const infoth::Joint pg_joint = infoth::Joint::from_flat({3, 3}, normalized(pg));
    const infoth::Joint jg_joint = infoth::Joint::from_flat({3, 3}, normalized(jg));
    const std::size_t x0[] = {0}, x1[] = {1};
    summary.mi_property_group = infoth::mutual_info(pg_joint, x0, x1);
    summary.h_joint_gender_given_gen = infoth::cond_entropy(jg_joint, x0, x1);
    summary.mean_ppl = ppl_acc;
    return summary;
}

ExperimentResult run_experiment(const ExperimentConfig& config) {
    config.validate();

    const seqcore::Vocabulary vocab = seqcore::Vocabulary::load(config.vocab_path);
    const toylm::ToyLM generator = toylm::ToyLM::load(config.generator_path);
    const toylm::ToyLM evaluator = toylm::ToyLM::load(config.evaluator_path);
    const std::vector<world::PromptRecord> prompts = load_prompts(config.prompts_path);
    if (generator.vocab_size != vocab.size() || evaluator.vocab_size != vocab.size())
        config_fail("model vocabulary size does not match the vocabulary file");

    // Per-method configs and per-group attribute bundles, built once.
    std::map<std::string, controller::InterventionConfig> icfgs;
    for (const std::string& m : config.methods) icfgs[m] = config.intervention_for(m);
    std::map<std::string, controller::AttrBundle> bundles;
    for (const auto& p : prompts) {
        if (bundles.find(p.group) == bundles.end())
            bundles[p.group] = world::make_attr_bundle(vocab, generator, p.group);
    }

    // Deterministic cell plan: method order, then prompt file order, then
    // continuation index.
    ExperimentResult result;
    std::vector<std::size_t> cell_prompt_index;
    for (const std::string& method : config.methods) {
        for (std::size_t pi = 0; pi < prompts.size(); ++pi) {
            for (int c = 0; c < config.n_continuations; ++c) {
                CellResult cell;
                cell.method = method;
                cell.pair_id = prompts[pi].pair_id;
                cell.group = prompts[pi].group;
                cell.continuation = c;
                cell.seed = derive_seed(config.global_seed, method, cell.pair_id, c);
                result.cells.push_back(std::move(cell));
                cell_prompt_index.push_back(pi);
            }
        }
    }

    auto run_cell = [&](std::size_t i) {
        CellResult& cell = result.cells[i];
        const world::PromptRecord& prompt = prompts[cell_prompt_index[i]];
        try {
            std::mt19937_64 rng(cell.seed);
            cell.record = controller::generate(generator, bundles.at(cell.group),
                                               icfgs.at(cell.method), config.sampling,
                                               prompt.tokens, vocab.eos_id, rng);
            score_cell(cell, vocab, evaluator);
        } catch (const std::exception& e) {
            cell.failed = true;
            cell.error = e.what();
            cell.scored = eval::ScoredRecord{};
            cell.scored.method = cell.method;
            cell.scored.pair_id = cell.pair_id;
            cell.scored.prompt_group = cell.group;
            cell.scored.failed = true;
        }
    };

    const std::size_t n_workers = worker_count(result.cells.size());
    if (n_workers <= 1) {
        for (std::size_t i = 0; i < result.cells.size(); ++i) run_cell(i);
    } else {
        std::vector<std::thread> workers;
        workers.reserve(n_workers);
        for (std::size_t w = 0; w < n_workers; ++w) {
            workers.emplace_back([&, w] {
                for (std::size_t i = w; i < result.cells.size(); i += n_workers) run_cell(i);
            });
        }
        for (auto& t : workers) t.join();
    }

    // Aggregate in plan order (workers only filled disjoint slots).
    std::vector<eval::ScoredRecord> scored;
    scored.reserve(result.cells.size());
    for (const auto& cell : result.cells) scored.push_back(cell.scored);
    result.report = eval::build_report(scored, config.methods, config.sanitize_threshold);

    // Exact dependence summary per method, budget permitting.
    ordered_json summary = ordered_json::array();
    for (const std::string& method : config.methods) {
        ordered_json row;
        row["method"] = method;
        try {
            const ExactMethodSummary s = exact_method_summary(vocab, generator, evaluator,
                                                              prompts, icfgs.at(method),
                                                              config.sampling);
            row["enumerated"] = true;
            row["mi_property_group"] = s.mi_property_group;
            row["h_joint_gender_given_gen"] = s.h_joint_gender_given_gen;
            row["mean_ppl_exact"] = s.mean_ppl;
            row["n_outcomes"] = s.n_outcomes;
        } catch (const BudgetError& e) {
            row["enumerated"] = false;
            row["reason"] = e.what();
        }
        summary.push_back(std::move(row));
    }
    result.infoth_summary_json = summary.dump(2) + "\n";

    std::filesystem::create_directories(config.out_dir);
    result.generations_path = config.out_dir / "generations.jsonl";
    result.report_csv_path = config.out_dir / "report.csv";
    result.report_json_path = config.out_dir / "report.json";
    result.summary_path = config.out_dir / "infoth_summary.json";
    write_text(result.generations_path,
               emit_generations(result.cells, prompts, cell_prompt_index, vocab));
    write_text(result.report_csv_path, result.report.to_csv());
    write_text(result.report_json_path, result.report.to_json_string());
    write_text(result.summary_path, result.infoth_summary_json);
    return result;
}

eval::BiasReport evaluate_generations_file(const std::filesystem::path& generations_path,
                                           const seqcore::Vocabulary& vocab,
                                           const toylm::ToyLM& evaluator,
                                           double sanitize_threshold) {
    std::ifstream in(generations_path, std::ios::binary);
    if (!in) config_fail("cannot open generations file: " + generations_path.string());

    std::vector<eval::ScoredRecord> scored;
    std::vector<std::string> methods;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        try {
            const json j = json::parse(line);
            CellResult cell;
            cell.method = j.at("method").get<std::string>();
            cell.pair_id = j.at("pair_id").get<int>();
            cell.group = j.at("group_prompt").get<std::string>();
            cell.failed = j.value("failed", false);
            if (std::find(methods.begin(), methods.end(), cell.method) == methods.end())
                methods.push_back(cell.method);
            if (cell.failed) {
                eval::ScoredRecord s;
                s.method = cell.method;
                s.pair_id = cell.pair_id;
                s.prompt_group = cell.group;
                s.failed = true;
                scored.push_back(std::move(s));
                continue;
            }
            const auto prompt_ids = j.at("prompt_token_ids").get<std::vector<int>>();
            const auto gen_ids = j.at("token_ids").get<std::vector<int>>();
            for (int t : prompt_ids)
                cell.record.prompt.push_back(t, seqcore::TokenOrigin::prompt);
            for (int t : gen_ids)
                cell.record.output.push_back(t, seqcore::TokenOrigin::generated);
            score_cell(cell, vocab, evaluator);
            scored.push_back(cell.scored);
        } catch (const json::exception& e) {
            config_fail("generations line " + std::to_string(lineno) + ": " + e.what());
        }
    }
    if (scored.empty()) config_fail("generations file has no records");
    return eval::build_report(scored, methods, sanitize_threshold);
}

} // namespace lidao::experiment
