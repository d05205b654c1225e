#include "botwars/experiment.hpp"

#include "botwars/csv.hpp"
#include "botwars/log.hpp"
#include "botwars/transcript.hpp"

#include <glob.h>

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <sstream>
#include <tuple>

namespace botwars {

namespace fs = std::filesystem;
using nlohmann::json;

// ---- configuration ---------------------------------------------------------

const ProviderConfig& ExperimentConfig::provider(const std::string& id) const
{
    for (const auto& p : providers) {
        if (p.provider_id == id) {
            return p;
        }
    }
    throw std::out_of_range("unknown provider '" + id + "'");
}

BatchSpec ExperimentConfig::batch_spec() const
{
    BatchSpec spec;
    spec.dialogues_per_cell = dialogues_per_cell;
    spec.scam_types = scam_types;
    for (const auto& p : pairs) {
        spec.model_pairs.push_back({provider(p.scammer), provider(p.victim)});
    }
    spec.parallelism = parallelism;
    spec.output_dir = output_dir;
    spec.settings = settings;
    return spec;
}

Gateway ExperimentConfig::gateway() const
{
    return Gateway(providers);
}

namespace {

const std::set<std::string> kTopLevelKeys = {
    "providers",   "pairs",       "scam_types",     "dialogues_per_cell",  "window_size",
    "max_turns",   "word_limit",  "reprompt_on_overflow", "truncate_on_overflow",
    "exit_markers", "seed",       "templates_dir",  "personas",            "eval",
    "output_dir",  "parallelism"};

const std::set<std::string> kEvalKeys = {
    "quant_backend",  "similarity_judge", "repetition_scope", "repetition_diagonal",
    "cognitive_judge", "judge_temperature", "judge_samples",  "judge_sees_scam_type",
    "rubrics_dir",    "content_mode",     "content_judge",    "reference_file"};

class Reader {
public:
    explicit Reader(std::vector<std::string>& errors) : errors_(errors) {}

    template <typename T>
    bool get(const json& obj, const std::string& key, const std::string& path, T& out)
    {
        if (!obj.contains(key)) {
            return false;
        }
        try {
            obj.at(key).get_to(out);
            return true;
        } catch (const json::exception&) {
            errors_.push_back(path + ": wrong type");
            return false;
        }
    }

private:
    std::vector<std::string>& errors_;
};

fs::path resolve(const fs::path& base, const fs::path& p)
{
    return p.is_absolute() ? p : (base / p).lexically_normal();
}

void check_unknown(const json& obj, const std::set<std::string>& known, const std::string& prefix,
                   std::vector<std::string>& errors)
{
    for (const auto& [k, v] : obj.items()) {
        if (!known.count(k)) {
            errors.push_back((prefix.empty() ? k : prefix + "." + k) + ": unknown key");
        }
    }
}

} // namespace

ExperimentConfig parse_config_json(const json& j, const fs::path& base_dir)
{
    std::vector<std::string> errors;
    ExperimentConfig c;
    if (!j.is_object()) {
        throw ConfigInvalid({"<root>: must be an object"});
    }
    check_unknown(j, kTopLevelKeys, "", errors);
    Reader rd(errors);

    // providers
    std::set<std::string> ids;
    if (!j.contains("providers") || !j.at("providers").is_array() || j.at("providers").empty()) {
        errors.push_back("providers: must be a non-empty array");
    } else {
        const auto& arr = j.at("providers");
        for (std::size_t i = 0; i < arr.size(); ++i) {
            const std::string path = "providers[" + std::to_string(i) + "]";
            try {
                auto p = provider_from_json(arr[i], path);
                if (!ids.insert(p.provider_id).second) {
                    errors.push_back(path + ".provider_id: duplicate id '" + p.provider_id + "'");
                }
                c.providers.push_back(std::move(p));
            } catch (const ConfigInvalid& e) {
                errors.insert(errors.end(), e.errors().begin(), e.errors().end());
            }
        }
    }

    // pairs
    if (!j.contains("pairs") || !j.at("pairs").is_array() || j.at("pairs").empty()) {
        errors.push_back("pairs: must be a non-empty array");
    } else {
        const auto& arr = j.at("pairs");
        for (std::size_t i = 0; i < arr.size(); ++i) {
            const std::string path = "pairs[" + std::to_string(i) + "]";
            ProviderPair pair;
            if (!arr[i].is_object()) {
                errors.push_back(path + ": must be an object");
                continue;
            }
            bool ok = rd.get(arr[i], "scammer", path + ".scammer", pair.scammer);
            ok = rd.get(arr[i], "victim", path + ".victim", pair.victim) && ok;
            if (!ok) {
                errors.push_back(path + ": needs string fields scammer and victim");
                continue;
            }
            for (auto role : {AgentRole::scammer, AgentRole::victim}) {
                const auto& id = role == AgentRole::scammer ? pair.scammer : pair.victim;
                const std::string where = path + "." + std::string(to_string(role));
                auto it = std::find_if(c.providers.begin(), c.providers.end(),
                                       [&](const ProviderConfig& p) { return p.provider_id == id; });
                if (it == c.providers.end()) {
                    if (!ids.count(id)) {
                        errors.push_back(where + ": unknown provider '" + id + "'");
                    }
                    continue;
                }
                if (auto d = check_role_policy(*it, role); !d) {
                    errors.push_back(where + ": role policy: " + d.reason);
                }
            }
            c.pairs.push_back(std::move(pair));
        }
    }

    // matrix and run settings
    if (j.contains("scam_types")) {
        std::vector<std::string> names;
        if (rd.get(j, "scam_types", "scam_types", names)) {
            c.scam_types.clear();
            for (std::size_t i = 0; i < names.size(); ++i) {
                try {
                    c.scam_types.push_back(parse_scam_type(names[i]));
                } catch (const std::invalid_argument& e) {
                    errors.push_back("scam_types[" + std::to_string(i) + "]: " + e.what());
                }
            }
            if (names.empty()) {
                errors.push_back("scam_types: must be non-empty");
            }
        }
    }
    rd.get(j, "dialogues_per_cell", "dialogues_per_cell", c.dialogues_per_cell);
    if (c.dialogues_per_cell < 1) {
        errors.push_back("dialogues_per_cell: must be positive");
    }
    rd.get(j, "window_size", "window_size", c.settings.window_size);
    if (c.settings.window_size == 0) {
        errors.push_back("window_size: must be positive");
    }
    rd.get(j, "max_turns", "max_turns", c.settings.max_turns);
    if (c.settings.max_turns < 1 || c.settings.max_turns > kMaxTurns) {
        errors.push_back("max_turns: must lie in [1, " + std::to_string(kMaxTurns) + "]");
    }
    rd.get(j, "word_limit", "word_limit", c.settings.word_limit);
    if (c.settings.word_limit == 0) {
        errors.push_back("word_limit: must be positive");
    }
    rd.get(j, "reprompt_on_overflow", "reprompt_on_overflow", c.settings.reprompt_on_overflow);
    rd.get(j, "truncate_on_overflow", "truncate_on_overflow", c.settings.truncate_on_overflow);
    rd.get(j, "exit_markers", "exit_markers", c.settings.exit_markers);
    std::uint64_t seed = 0;
    if (rd.get(j, "seed", "seed", seed)) {
        c.settings.seed = seed;
    }
    rd.get(j, "parallelism", "parallelism", c.parallelism);
    if (c.parallelism < 1) {
        errors.push_back("parallelism: must be positive");
    }

    // paths
    std::string s;
    if (rd.get(j, "templates_dir", "templates_dir", s)) {
        c.templates_dir = s;
    }
    c.templates_dir = resolve(base_dir, c.templates_dir);
    if (rd.get(j, "output_dir", "output_dir", s)) {
        c.output_dir = s;
    }
    c.output_dir = resolve(base_dir, c.output_dir);
    if (j.contains("personas")) {
        const auto& pj = j.at("personas");
        if (!pj.is_object()) {
            errors.push_back("personas: must be an object");
        } else {
            check_unknown(pj, {"scammer", "victim"}, "personas", errors);
            if (rd.get(pj, "scammer", "personas.scammer", s)) {
                c.scammer_persona = resolve(base_dir, s);
            }
            if (rd.get(pj, "victim", "personas.victim", s)) {
                c.victim_persona = resolve(base_dir, s);
            }
        }
    }

    // evaluation
    if (j.contains("eval")) {
        const auto& ej = j.at("eval");
        auto& e = c.eval;
        if (!ej.is_object()) {
            errors.push_back("eval: must be an object");
        } else {
            check_unknown(ej, kEvalKeys, "eval", errors);
            rd.get(ej, "quant_backend", "eval.quant_backend", e.quant_backend);
            if (e.quant_backend != "lexical" && e.quant_backend != "judge") {
                errors.push_back("eval.quant_backend: must be 'lexical' or 'judge'");
            }
            if (rd.get(ej, "similarity_judge", "eval.similarity_judge", s)) {
                e.similarity_judge = s;
            }
            if (rd.get(ej, "repetition_scope", "eval.repetition_scope", s)) {
                if (s == "per_role") {
                    e.quant.scope = RepetitionScope::per_role;
                } else if (s == "dialogue") {
                    e.quant.scope = RepetitionScope::dialogue;
                } else {
                    errors.push_back("eval.repetition_scope: must be 'per_role' or 'dialogue'");
                }
            }
            if (rd.get(ej, "repetition_diagonal", "eval.repetition_diagonal", s)) {
                if (s == "include") {
                    e.quant.diagonal = DiagonalMode::include;
                } else if (s == "exclude") {
                    e.quant.diagonal = DiagonalMode::exclude;
                } else {
                    errors.push_back("eval.repetition_diagonal: must be 'include' or 'exclude'");
                }
            }
            if (rd.get(ej, "cognitive_judge", "eval.cognitive_judge", s)) {
                e.cognitive_judge = s;
            }
            rd.get(ej, "judge_temperature", "eval.judge_temperature", e.judge.temperature);
            rd.get(ej, "judge_samples", "eval.judge_samples", e.judge.samples);
            if (e.judge.samples < 1) {
                errors.push_back("eval.judge_samples: must be at least 1");
            }
            rd.get(ej, "judge_sees_scam_type", "eval.judge_sees_scam_type",
                   e.judge.include_scam_type);
            if (rd.get(ej, "rubrics_dir", "eval.rubrics_dir", s)) {
                e.rubrics_dir = resolve(base_dir, s);
            }
            if (rd.get(ej, "content_mode", "eval.content_mode", s)) {
                try {
                    const auto m = parse_analysis_mode(s);
                    e.content = {m, m, m};
                } catch (const std::invalid_argument&) {
                    errors.push_back("eval.content_mode: must be 'rule' or 'judge'");
                }
            }
            if (rd.get(ej, "content_judge", "eval.content_judge", s)) {
                e.content_judge = s;
            }
            if (rd.get(ej, "reference_file", "eval.reference_file", s)) {
                e.reference_file = resolve(base_dir, s);
            }
        }
        auto check_judge = [&](const std::optional<std::string>& id, const std::string& path,
                               bool required) {
            if (!id) {
                if (required) {
                    errors.push_back(path + ": required by the selected mode");
                }
                return;
            }
            auto it = std::find_if(c.providers.begin(), c.providers.end(),
                                   [&](const ProviderConfig& p) { return p.provider_id == *id; });
            if (it == c.providers.end()) {
                if (!ids.count(*id)) {
                    errors.push_back(path + ": unknown provider '" + *id + "'");
                }
            } else if (!it->may_judge) {
                errors.push_back(path + ": role policy: provider '" + *id +
                                 "' is not permitted to judge");
            }
        };
        check_judge(e.similarity_judge, "eval.similarity_judge", e.quant_backend == "judge");
        check_judge(e.cognitive_judge, "eval.cognitive_judge", false);
        check_judge(e.content_judge, "eval.content_judge",
                    e.content.pii == AnalysisMode::judge_based);
    }

    if (!errors.empty()) {
        throw ConfigInvalid(std::move(errors));
    }
    return c;
}

ExperimentConfig parse_config(const fs::path& path)
{
    std::ifstream in(path);
    if (!in) {
        throw ConfigInvalid({path.string() + ": cannot read config file"});
    }
    json j;
    try {
        j = json::parse(in);
    } catch (const json::parse_error& e) {
        throw ConfigInvalid({path.string() + ": " + e.what()});
    }
    return parse_config_json(j, path.parent_path());
}

// ---- run -------------------------------------------------------------------

std::string dry_run_plan(const ExperimentConfig& cfg)
{
    std::ostringstream os;
    os << "planned cells (scammer x victim x scam type: dialogues)\n";
    for (const auto& p : cfg.pairs) {
        for (auto st : cfg.scam_types) {
            os << "  " << p.scammer << " x " << p.victim << " x " << to_string(st) << ": "
               << cfg.dialogues_per_cell << "\n";
        }
    }
    os << cfg.pairs.size() << " pairs x " << cfg.scam_types.size() << " scam types x "
       << cfg.dialogues_per_cell << " dialogues = " << cfg.batch_spec().planned_dialogues()
       << " dialogues\n";
    return os.str();
}

int cmd_run(const RunCommand& cmd, std::ostream& out, std::ostream& err, const GatewayHook& hook)
{
    try {
        auto cfg = parse_config(cmd.config);
        if (cmd.out) {
            cfg.output_dir = *cmd.out;
        }
        if (cmd.parallelism) {
            cfg.parallelism = *cmd.parallelism;
        }
        if (cmd.seed) {
            cfg.settings.seed = *cmd.seed;
        }
        if (cmd.dry_run) {
            validate_batch(cfg.batch_spec());
            out << dry_run_plan(cfg);
            return kExitOk;
        }
        const auto registry = TemplateRegistry::load(cfg.templates_dir);
        PersonaPair personas;
        if (cfg.scammer_persona) {
            personas.scammer = load_persona(*cfg.scammer_persona);
        }
        if (cfg.victim_persona) {
            personas.victim = load_persona(*cfg.victim_persona);
        }
        Gateway gw = cfg.gateway();
        if (hook) {
            hook(gw);
        }
        const auto summary = run_batch(cfg.batch_spec(), registry, personas, gw);
        out << "dialogues: " << summary.completed << " completed, " << summary.failed
            << " failed, " << summary.total << " planned\n";
        out << "terminations:\n";
        for (const auto& [reason, n] : summary.termination_histogram) {
            out << "  " << to_string(reason) << ": " << n << "\n";
        }
        out << "output: " << cfg.output_dir.string() << "\n";
        return summary.failed > 0 ? kExitPartial : kExitOk;
    } catch (const ConfigInvalid& e) {
        err << e.what() << "\n";
    } catch (const StorageError& e) {
        err << "storage error: " << e.what() << "\n";
    } catch (const TemplateMissing& e) {
        err << e.what() << "\n";
    } catch (const TemplateFormatError& e) {
        err << e.what() << "\n";
    } catch (const PlaceholderUndeclared& e) {
        err << e.what() << "\n";
    } catch (const PersonaInvalid& e) {
        err << e.what() << "\n";
    }
    return kExitFailure;
}

// ---- evaluate --------------------------------------------------------------

std::vector<fs::path> expand_patterns(const std::vector<std::string>& patterns)
{
    std::set<fs::path> found;
    for (const auto& p : patterns) {
        glob_t g{};
        const int rc = ::glob(p.c_str(), 0, nullptr, &g);
        if (rc == 0) {
            for (std::size_t i = 0; i < g.gl_pathc; ++i) {
                fs::path f = g.gl_pathv[i];
                // Sidecar event logs share the shard directory.
                const auto name = f.filename().string();
                if (name.size() > 13 && name.compare(name.size() - 13, 13, ".events.jsonl") == 0) {
                    continue;
                }
                if (fs::is_regular_file(f)) {
                    found.insert(f);
                }
            }
        }
        globfree(&g);
        if (rc == GLOB_NOMATCH && fs::is_regular_file(p)) {
            found.insert(p);
        }
    }
    return {found.begin(), found.end()};
}

std::vector<Dialogue> load_dialogues(const std::vector<fs::path>& files)
{
    std::vector<Dialogue> out;
    for (const auto& f : files) {
        auto ds = read_transcripts(f);
        out.insert(out.end(), std::make_move_iterator(ds.begin()),
                   std::make_move_iterator(ds.end()));
    }
    std::stable_sort(out.begin(), out.end(), [](const Dialogue& a, const Dialogue& b) {
        return a.dialogue_id < b.dialogue_id;
    });
    return out;
}

namespace {

std::uint64_t session_seed(const std::string& s)
{
    std::uint64_t h = 1469598103934665603ull;
    for (unsigned char c : s) {
        h ^= c;
        h *= 1099511628211ull;
    }
    return h;
}

json dialogue_index_entry(const Dialogue& d)
{
    return {{"dialogue_id", d.dialogue_id},
            {"scam_type", to_string(d.scam_type)},
            {"scammer_model", d.scammer_model},
            {"victim_model", d.victim_model},
            {"turn_count", d.turn_count()},
            {"utterance_count", d.utterances.size()},
            {"termination", d.termination ? json(to_string(*d.termination)) : json(nullptr)}};
}

void write_lines(const fs::path& path, const std::vector<json>& lines)
{
    std::ofstream out(path, std::ios::trunc | std::ios::binary);
    for (const auto& l : lines) {
        out << l.dump() << '\n';
    }
    if (!out) {
        throw StorageError("cannot write " + path.string());
    }
}

std::vector<json> read_lines(const fs::path& path)
{
    std::ifstream in(path);
    if (!in) {
        throw StorageError("cannot read " + path.string());
    }
    std::vector<json> out;
    std::string line;
    std::size_t n = 0;
    while (std::getline(in, line)) {
        ++n;
        if (line.find_first_not_of(" \t\r") == std::string::npos) {
            continue;
        }
        try {
            out.push_back(json::parse(line));
        } catch (const json::exception& e) {
            throw SchemaError(path.string(), n, e.what());
        }
    }
    return out;
}

std::unique_ptr<ChatClient> open_judge(Gateway* gw, const ExperimentConfig* cfg,
                                       const std::optional<std::string>& id, const char* what,
                                       const std::string& seed_key)
{
    if (!cfg || !gw || !id) {
        throw ConfigInvalid({std::string("eval.") + what + ": a judge provider is required"});
    }
    check_judge_policy(cfg->provider(*id));
    return gw->open(*id, session_seed(seed_key));
}

} // namespace

EvaluateResult evaluate(const EvaluateCommand& cmd, const std::vector<Dialogue>& dialogues,
                        const ExperimentConfig* config, Gateway* gateway)
{
    for (const auto& s : cmd.suites) {
        if (s != "quant" && s != "content" && s != "cognitive") {
            throw ConfigInvalid({"suites: unknown suite '" + s + "'"});
        }
    }
    std::error_code ec;
    fs::create_directories(cmd.out, ec);
    if (ec || !fs::is_directory(cmd.out)) {
        throw StorageError("cannot create output directory " + cmd.out.string());
    }

    EvaluateResult res;
    res.dialogues = dialogues.size();
    const EvalSettings defaults;
    const EvalSettings& es = config ? config->eval : defaults;

    std::vector<json> index;
    for (const auto& d : dialogues) {
        index.push_back(dialogue_index_entry(d));
    }
    write_lines(cmd.out / "dialogues.jsonl", index);
    res.files.push_back(cmd.out / "dialogues.jsonl");

    if (cmd.suites.count("quant")) {
        std::unique_ptr<SimilarityBackend> backend;
        if (es.quant_backend == "judge") {
            backend = std::make_unique<JudgeSimilarity>(
                open_judge(gateway, config, es.similarity_judge, "similarity_judge", "similarity"));
        } else {
            backend = std::make_unique<LexicalSimilarity>();
        }
        std::vector<QuantReport> reports;
        for (const auto& d : dialogues) {
            try {
                reports.push_back(evaluate_quant(d, *backend, es.quant));
            } catch (const BackendFailure& e) {
                res.failures.push_back(d.dialogue_id + ": quant: " + e.what());
            }
        }
        write_quant_jsonl(reports, cmd.out / "quant.jsonl");
        write_quant_cells_csv(aggregate_quant(reports), cmd.out / "quant_cells.csv");
        write_quant_roles_csv(aggregate_quant_roles(reports), cmd.out / "quant_roles.csv");
        for (const char* f : {"quant.jsonl", "quant_cells.csv", "quant_roles.csv"}) {
            res.files.push_back(cmd.out / f);
        }
    }

    if (cmd.suites.count("content")) {
        const bool judged = es.content.pii == AnalysisMode::judge_based ||
                            es.content.demographics == AnalysisMode::judge_based ||
                            es.content.tactics == AnalysisMode::judge_based;
        std::vector<ContentReport> reports;
        for (const auto& d : dialogues) {
            try {
                std::unique_ptr<ChatClient> judge;
                if (judged) {
                    judge = open_judge(gateway, config, es.content_judge, "content_judge",
                                       d.dialogue_id);
                }
                reports.push_back(analyze_content(d, es.content, judge.get()));
            } catch (const ProviderError& e) {
                res.failures.push_back(d.dialogue_id + ": content: " + e.what());
            }
        }
        write_content_jsonl(reports, cmd.out / "content.jsonl");
        write_persona_pii_csv(persona_pii_rows(reports), cmd.out / "persona_pii.csv");

        std::vector<DialogueTactics> dt;
        std::vector<DemographicProfile> profiles;
        for (const auto& r : reports) {
            dt.push_back({r.scam_type, r.tactics});
            profiles.push_back(r.profile);
        }
        CsvTable tactics;
        tactics.header = {"scam_type", "tactic", "pct_dialogues", "dialogues"};
        for (const auto& [st, share] : tactics_distribution(dt)) {
            for (auto t : kAllTactics) {
                tactics.rows.push_back({std::string(to_string(st)), std::string(to_string(t)),
                                        format_number(share.pct.at(t)),
                                        std::to_string(share.dialogues)});
            }
        }
        tactics.write(cmd.out / "tactics.csv");

        if (!profiles.empty()) {
            const auto ref = es.reference_file ? load_reference(*es.reference_file) : accc_reference();
            std::ofstream demo(cmd.out / "demographics.json", std::ios::trunc | std::ios::binary);
            demo << to_json(compare_to_reference(profiles, ref)).dump(2) << '\n';
            res.files.push_back(cmd.out / "demographics.json");
        }
        for (const char* f : {"content.jsonl", "persona_pii.csv", "tactics.csv"}) {
            res.files.push_back(cmd.out / f);
        }
    }

    if (cmd.suites.count("cognitive")) {
        const RubricSet rubrics = es.rubrics_dir ? RubricSet::load(*es.rubrics_dir) : RubricSet();
        if (!config || !es.cognitive_judge) {
            throw ConfigInvalid({"eval.cognitive_judge: required for the cognitive suite"});
        }
        std::vector<JudgeVerdict> verdicts;
        for (const auto& d : dialogues) {
            try {
                auto judge = open_judge(gateway, config, es.cognitive_judge, "cognitive_judge",
                                        d.dialogue_id);
                auto v = judge_dialogue(*judge, d, rubrics, es.judge);
                verdicts.insert(verdicts.end(), v.begin(), v.end());
            } catch (const ProviderError& e) {
                res.failures.push_back(d.dialogue_id + ": cognitive: " + e.what());
            } catch (const JudgeOutputUnparseable& e) {
                res.failures.push_back(d.dialogue_id + ": cognitive: " + e.what());
            }
        }
        write_verdicts_jsonl(verdicts, cmd.out / "cognitive.jsonl");
        write_cognitive_csv(aggregate_cognitive_cells(verdicts, dialogues),
                            cmd.out / "cognitive.csv");
        res.files.push_back(cmd.out / "cognitive.jsonl");
        res.files.push_back(cmd.out / "cognitive.csv");
    }

    json summary{{"dialogues", res.dialogues},
                 {"suites", std::vector<std::string>(cmd.suites.begin(), cmd.suites.end())},
                 {"failures", res.failures}};
    std::ofstream sj(cmd.out / "evaluation.json", std::ios::trunc | std::ios::binary);
    sj << summary.dump(2) << '\n';
    res.files.push_back(cmd.out / "evaluation.json");
    return res;
}

int cmd_evaluate(const EvaluateCommand& cmd, std::ostream& out, std::ostream& err,
                 const GatewayHook& hook)
{
    try {
        std::optional<ExperimentConfig> cfg;
        std::optional<Gateway> gw;
        if (cmd.config) {
            cfg = parse_config(*cmd.config);
            gw.emplace(cfg->providers);
            if (hook) {
                hook(*gw);
            }
        }
        const auto files = expand_patterns(cmd.transcripts);
        if (files.empty()) {
            err << "no transcript files match the given patterns\n";
            return kExitFailure;
        }
        const auto dialogues = load_dialogues(files);
        const auto res = evaluate(cmd, dialogues, cfg ? &*cfg : nullptr, gw ? &*gw : nullptr);
        out << "evaluated " << res.dialogues << " dialogues from " << files.size() << " files\n";
        for (const auto& f : res.files) {
            out << "  wrote " << f.string() << "\n";
        }
        if (!res.failures.empty()) {
            err << res.failures.size() << " dialogue evaluations failed:\n";
            for (const auto& f : res.failures) {
                err << "  " << f << "\n";
            }
            return kExitPartial;
        }
        return kExitOk;
    } catch (const SchemaError& e) {
        err << "schema error: " << e.what() << "\n";
    } catch (const ConfigInvalid& e) {
        err << e.what() << "\n";
    } catch (const StorageError& e) {
        err << "storage error: " << e.what() << "\n";
    }
    return kExitFailure;
}

// ---- charts ----------------------------------------------------------------

namespace {

std::string xml_escape(std::string_view s)
{
    std::string out;
    for (char c : s) {
        switch (c) {
        case '&':
            out += "&amp;";
            break;
        case '<':
            out += "&lt;";
            break;
        case '>':
            out += "&gt;";
            break;
        case '"':
            out += "&quot;";
            break;
        default:
            out.push_back(c);
        }
    }
    return out;
}

std::string fmt(double v)
{
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.1f", v);
    return buf;
}

} // namespace

std::string render_svg(const BarChart& chart)
{
    static const char* palette[] = {"#4e79a7", "#f28e2b", "#59a14f", "#e15759",
                                    "#76b7b2", "#edc948", "#b07aa1", "#9c755f"};
    const double bar_w = 14.0;
    const double gap = 18.0;
    const double left = 60.0;
    const double top = 40.0;
    const double plot_h = 220.0;
    const std::size_t nseries = std::max<std::size_t>(chart.series.size(), 1);
    const double group_w = bar_w * static_cast<double>(nseries) + gap;
    const double plot_w = std::max(group_w * static_cast<double>(chart.categories.size()), 120.0);
    const double legend_h = 18.0 * static_cast<double>(chart.series.size());
    const double width = left + plot_w + 20.0;
    const double height = top + plot_h + 90.0 + legend_h;
    const double y_max = chart.y_max > 0 ? chart.y_max : 1.0;

    std::ostringstream os;
    os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << fmt(width) << "\" height=\""
       << fmt(height) << "\" font-family=\"sans-serif\" font-size=\"11\">\n";
    os << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
    os << "<text x=\"" << fmt(width / 2) << "\" y=\"20\" text-anchor=\"middle\" font-size=\"14\">"
       << xml_escape(chart.title) << "</text>\n";

    for (int i = 0; i <= 4; ++i) {
        const double v = y_max * i / 4.0;
        const double y = top + plot_h - plot_h * v / y_max;
        os << "<line x1=\"" << fmt(left) << "\" y1=\"" << fmt(y) << "\" x2=\""
           << fmt(left + plot_w) << "\" y2=\"" << fmt(y) << "\" stroke=\"#ddd\"/>\n";
        os << "<text x=\"" << fmt(left - 6) << "\" y=\"" << fmt(y + 4)
           << "\" text-anchor=\"end\">" << format_number(v) << "</text>\n";
    }
    os << "<text x=\"14\" y=\"" << fmt(top + plot_h / 2) << "\" transform=\"rotate(-90 14 "
       << fmt(top + plot_h / 2) << ")\" text-anchor=\"middle\">" << xml_escape(chart.y_label)
       << "</text>\n";

    for (std::size_t c = 0; c < chart.categories.size(); ++c) {
        const double gx = left + group_w * static_cast<double>(c) + gap / 2;
        for (std::size_t s = 0; s < chart.series.size(); ++s) {
            const auto& vals = chart.series[s].values;
            if (c >= vals.size() || !vals[c]) {
                continue;
            }
            const double v = std::clamp(*vals[c], 0.0, y_max);
            const double h = plot_h * v / y_max;
            os << "<rect x=\"" << fmt(gx + bar_w * static_cast<double>(s)) << "\" y=\""
               << fmt(top + plot_h - h) << "\" width=\"" << fmt(bar_w - 2) << "\" height=\""
               << fmt(h) << "\" fill=\"" << palette[s % 8] << "\"><title>"
               << xml_escape(chart.series[s].name) << " / " << xml_escape(chart.categories[c])
               << ": " << format_number(*vals[c]) << "</title></rect>\n";
        }
        const double lx = gx + bar_w * static_cast<double>(nseries) / 2;
        const double ly = top + plot_h + 12;
        os << "<text x=\"" << fmt(lx) << "\" y=\"" << fmt(ly) << "\" transform=\"rotate(30 "
           << fmt(lx) << " " << fmt(ly) << ")\">" << xml_escape(chart.categories[c])
           << "</text>\n";
    }
    os << "<line x1=\"" << fmt(left) << "\" y1=\"" << fmt(top + plot_h) << "\" x2=\""
       << fmt(left + plot_w) << "\" y2=\"" << fmt(top + plot_h) << "\" stroke=\"black\"/>\n";

    for (std::size_t s = 0; s < chart.series.size(); ++s) {
        const double y = top + plot_h + 80 + 18.0 * static_cast<double>(s);
        os << "<rect x=\"" << fmt(left) << "\" y=\"" << fmt(y - 10) << "\" width=\"10\" height=\"10\" fill=\""
           << palette[s % 8] << "\"/>\n";
        os << "<text x=\"" << fmt(left + 16) << "\" y=\"" << fmt(y) << "\">"
           << xml_escape(chart.series[s].name) << "</text>\n";
    }
    os << "</svg>\n";
    return os.str();
}

// ---- report ----------------------------------------------------------------

namespace {

struct IndexEntry {
    std::string scammer_model;
    std::string victim_model;
    ScamType scam_type = ScamType::support;
    std::size_t turn_count = 0;
};

void write_text(const fs::path& path, const std::string& text)
{
    std::ofstream out(path, std::ios::trunc | std::ios::binary);
    out << text;
    if (!out) {
        throw StorageError("cannot write " + path.string());
    }
}

std::string md_table(const CsvTable& t)
{
    std::string s = "|";
    for (const auto& h : t.header) {
        s += " " + h + " |";
    }
    s += "\n|";
    for (std::size_t i = 0; i < t.header.size(); ++i) {
        s += "---|";
    }
    s += "\n";
    for (const auto& r : t.rows) {
        s += "|";
        for (const auto& c : r) {
            s += " " + (c.empty() ? std::string("-") : c) + " |";
        }
        s += "\n";
    }
    return s;
}

// Models per role with one series per metric.
BarChart role_chart(const std::string& title, AgentRole role,
                    const std::vector<std::tuple<AgentRole, std::string, std::string, std::optional<double>>>& rows,
                    const std::vector<std::string>& metrics)
{
    BarChart ch;
    ch.title = title;
    ch.y_label = "mean score (1-3)";
    std::set<std::string> models;
    for (const auto& [r, model, metric, v] : rows) {
        if (r == role) {
            models.insert(model);
        }
    }
    ch.categories.assign(models.begin(), models.end());
    for (const auto& m : metrics) {
        BarSeries s{m, {}};
        for (const auto& model : ch.categories) {
            std::optional<double> val;
            for (const auto& [r, mo, me, v] : rows) {
                if (r == role && mo == model && me == m) {
                    val = v;
                }
            }
            s.values.push_back(val);
        }
        ch.series.push_back(std::move(s));
    }
    return ch;
}

} // namespace

ReportResult build_report(const ReportCommand& cmd)
{
    const auto& dir = cmd.eval_dir;
    const bool has_quant = fs::is_regular_file(dir / "quant.jsonl");
    const bool has_content = fs::is_regular_file(dir / "content.jsonl");
    const bool has_cognitive = fs::is_regular_file(dir / "cognitive.jsonl");
    if (!has_quant && !has_content && !has_cognitive) {
        throw EmptyInput("no suite reports found in " + dir.string());
    }
    const fs::path out = cmd.out.value_or(dir / "report");
    std::error_code ec;
    fs::create_directories(out, ec);
    if (ec || !fs::is_directory(out)) {
        throw StorageError("cannot create report directory " + out.string());
    }

    ReportResult res;
    (has_quant ? res.present_suites : res.absent_suites).push_back("quant");
    (has_content ? res.present_suites : res.absent_suites).push_back("content");
    (has_cognitive ? res.present_suites : res.absent_suites).push_back("cognitive");

    std::map<std::string, IndexEntry> index;
    if (fs::is_regular_file(dir / "dialogues.jsonl")) {
        for (const auto& j : read_lines(dir / "dialogues.jsonl")) {
            IndexEntry e;
            e.scammer_model = j.at("scammer_model").get<std::string>();
            e.victim_model = j.at("victim_model").get<std::string>();
            e.scam_type = parse_scam_type(j.at("scam_type").get<std::string>());
            e.turn_count = j.at("turn_count").get<std::size_t>();
            index[j.at("dialogue_id").get<std::string>()] = e;
        }
    }

    std::ostringstream md;
    md << "# Experiment report\n\n";
    md << "Suites present: ";
    for (std::size_t i = 0; i < res.present_suites.size(); ++i) {
        md << (i ? ", " : "") << res.present_suites[i];
    }
    md << "\n\nSuites absent: ";
    if (res.absent_suites.empty()) {
        md << "none";
    }
    for (std::size_t i = 0; i < res.absent_suites.size(); ++i) {
        md << (i ? ", " : "") << res.absent_suites[i];
    }
    md << "\n\nEvery number below is copied from the CSV file named in its section.\n";

    auto emit = [&](const std::string& name, const std::string& text) {
        write_text(out / name, text);
        res.files.push_back(out / name);
    };

    // Turn counts come from the quant reports, or the dialogue index without them.
    std::vector<std::tuple<std::string, std::string, ScamType, std::size_t>> turns;

    // -- quantitative
    if (has_quant) {
        const auto reports = read_quant_jsonl(dir / "quant.jsonl");
        for (const auto& r : reports) {
            turns.emplace_back(r.scammer_model, r.victim_model, r.scam_type, r.turn_count);
        }
        const auto cells = aggregate_quant(reports);
        write_quant_cells_csv(cells, out / "quant_cells.csv");
        res.files.push_back(out / "quant_cells.csv");
        const auto roles = aggregate_quant_roles(reports);
        write_quant_roles_csv(roles, out / "quant_roles.csv");
        res.files.push_back(out / "quant_roles.csv");

        std::vector<std::tuple<AgentRole, std::string, std::string, std::optional<double>>> rows;
        for (const auto& r : roles) {
            rows.emplace_back(r.role, r.model, r.metric, r.mean_score);
        }
        for (auto role : {AgentRole::scammer, AgentRole::victim}) {
            const std::string name = "quant_roles_" + std::string(to_string(role)) + ".svg";
            emit(name, render_svg(role_chart("Quantitative scores, " +
                                                 std::string(to_string(role)) + " role",
                                             role, rows, {"word_count", "repetition"})));
        }
        md << "\n## Quantitative metrics per cell (quant_cells.csv)\n\n"
           << md_table(read_csv(out / "quant_cells.csv"));
        md << "\n## Quantitative metrics per role (quant_roles.csv)\n\n"
           << md_table(read_csv(out / "quant_roles.csv"));
    } else {
        for (const auto& [id, e] : index) {
            turns.emplace_back(e.scammer_model, e.victim_model, e.scam_type, e.turn_count);
        }
        md << "\n## Quantitative metrics\n\nabsent (no quant.jsonl)\n";
    }

    // -- turn counts
    if (!turns.empty()) {
        using Key = std::tuple<std::string, std::string, ScamType>;
        std::map<Key, std::pair<std::size_t, std::size_t>> acc;
        std::size_t sum = 0;
        for (const auto& [s, v, st, t] : turns) {
            auto& a = acc[{s, v, st}];
            a.first += t;
            ++a.second;
            sum += t;
        }
        res.mean_turns = static_cast<double>(sum) / static_cast<double>(turns.size());
        CsvTable t;
        t.header = {"scammer_model", "victim_model", "scam_type", "mean_turns", "dialogues"};
        BarChart ch;
        ch.title = "Average dialogue turns";
        ch.y_label = "turns";
        ch.y_max = kMaxTurns;
        std::set<std::string> pairs;
        for (const auto& [key, a] : acc) {
            const auto& [s, v, st] = key;
            t.rows.push_back({s, v, std::string(to_string(st)),
                              format_number(static_cast<double>(a.first) / static_cast<double>(a.second)),
                              std::to_string(a.second)});
            pairs.insert(s + " / " + v);
        }
        t.rows.push_back({"ALL", "ALL", "ALL", format_number(*res.mean_turns),
                          std::to_string(turns.size())});
        t.write(out / "turns_by_cell.csv");
        res.files.push_back(out / "turns_by_cell.csv");
        ch.categories.assign(pairs.begin(), pairs.end());
        for (auto st : kAllScamTypes) {
            BarSeries series{std::string(to_string(st)), {}};
            bool any = false;
            for (const auto& p : ch.categories) {
                std::optional<double> val;
                for (const auto& [key, a] : acc) {
                    const auto& [s, v, kst] = key;
                    if (kst == st && s + " / " + v == p) {
                        val = static_cast<double>(a.first) / static_cast<double>(a.second);
                        any = true;
                    }
                }
                series.values.push_back(val);
            }
            if (any) {
                ch.series.push_back(std::move(series));
            }
        }
        emit("turns_by_cell.svg", render_svg(ch));
        md << "\n## Dialogue turns (turns_by_cell.csv)\n\n" << md_table(read_csv(out / "turns_by_cell.csv"));
        md << "\nAverage turns over all dialogues: " << format_number(*res.mean_turns) << "\n";
    }

    // -- content
    if (has_content) {
        const auto reports = read_content_jsonl(dir / "content.jsonl");
        auto rows = persona_pii_rows(reports);
        if (cmd.baseline) {
            const auto& base = baiter_reference_rows();
            rows.insert(rows.end(), base.begin(), base.end());
        }
        write_persona_pii_csv(rows, out / "persona_pii.csv");
        res.files.push_back(out / "persona_pii.csv");
        md << "\n## PII and persona statistics (persona_pii.csv)\n\n" << md_table(read_csv(out / "persona_pii.csv"));
        if (cmd.baseline) {
            md << "\nRows labelled Baiter / Human are published human scam-baiter reference "
                  "values, shown for comparison.\n";
        }
        md << "\nAge columns: pct_age_over55 counts the 55-64 and 65plus buckets; "
              "pct_age_under54 counts every other stated age, so ages 54 and 55 fall on "
              "different sides of a boundary the column names leave ambiguous.\n";

        std::vector<DialogueTactics> dt;
        for (const auto& r : reports) {
            dt.push_back({r.scam_type, r.tactics});
        }
        const auto dist = tactics_distribution(dt);
        CsvTable t;
        t.header = {"scam_type", "tactic", "pct_dialogues", "dialogues"};
        BarChart ch;
        ch.title = "Dialogues using each tactic";
        ch.y_label = "% of dialogues";
        ch.y_max = 100.0;
        for (auto tac : kAllTactics) {
            ch.categories.emplace_back(to_string(tac));
        }
        for (const auto& [st, share] : dist) {
            BarSeries series{std::string(to_string(st)), {}};
            for (auto tac : kAllTactics) {
                t.rows.push_back({std::string(to_string(st)), std::string(to_string(tac)),
                                  format_number(share.pct.at(tac)), std::to_string(share.dialogues)});
                series.values.push_back(share.pct.at(tac));
            }
            ch.series.push_back(std::move(series));
        }
        t.write(out / "tactics_by_type.csv");
        res.files.push_back(out / "tactics_by_type.csv");
        emit("tactics_by_type.svg", render_svg(ch));
        md << "\n## Tactics (tactics_by_type.csv)\n\n" << md_table(read_csv(out / "tactics_by_type.csv"));
    } else {
        md << "\n## PII, persona and tactic statistics\n\nabsent (no content.jsonl)\n";
    }

    // -- cognitive
    if (has_cognitive) {
        const auto verdicts = read_verdicts_jsonl(dir / "cognitive.jsonl");
        using Key = std::tuple<AgentRole, std::string, CognitiveMetric>;
        std::map<Key, std::pair<long, std::size_t>> acc;
        std::size_t unmatched = 0;
        for (const auto& v : verdicts) {
            auto it = index.find(v.dialogue_id);
            if (it == index.end()) {
                ++unmatched;
                continue;
            }
            const auto& model =
                v.role == AgentRole::scammer ? it->second.scammer_model : it->second.victim_model;
            auto& a = acc[{v.role, model, v.metric}];
            a.first += v.score;
            ++a.second;
        }
        CsvTable t;
        t.header = {"role", "model", "metric", "mean_score", "n"};
        std::vector<std::tuple<AgentRole, std::string, std::string, std::optional<double>>> rows;
        for (const auto& [key, a] : acc) {
            const auto& [role, model, metric] = key;
            const double mean = static_cast<double>(a.first) / static_cast<double>(a.second);
            t.rows.push_back({std::string(to_string(role)), model, std::string(to_string(metric)),
                              format_number(mean), std::to_string(a.second)});
            rows.emplace_back(role, model, std::string(to_string(metric)), mean);
        }
        t.write(out / "cognitive_roles.csv");
        res.files.push_back(out / "cognitive_roles.csv");
        for (auto role : {AgentRole::scammer, AgentRole::victim}) {
            const std::string name = "cognitive_roles_" + std::string(to_string(role)) + ".svg";
            emit(name, render_svg(role_chart("Cognitive scores, " + std::string(to_string(role)) + " role",
                                             role, rows, {"coherence", "naturalness", "engagingness"})));
        }
        md << "\n## Cognitive metrics per role (cognitive_roles.csv)\n\n"
           << md_table(read_csv(out / "cognitive_roles.csv"));
        if (unmatched) {
            md << "\n" << unmatched << " verdicts referenced dialogues missing from dialogues.jsonl.\n";
        }
    } else {
        md << "\n## Cognitive metrics\n\nabsent (no cognitive.jsonl)\n";
    }

    emit("summary.md", md.str());
    return res;
}

int cmd_report(const ReportCommand& cmd, std::ostream& out, std::ostream& err)
{
    try {
        const auto res = build_report(cmd);
        for (const auto& f : res.files) {
            out << "wrote " << f.string() << "\n";
        }
        for (const auto& s : res.absent_suites) {
            out << "suite absent: " << s << "\n";
        }
        return kExitOk;
    } catch (const EmptyInput& e) {
        err << e.what() << "\n";
    } catch (const SchemaError& e) {
        err << "schema error: " << e.what() << "\n";
    } catch (const StorageError& e) {
        err << "storage error: " << e.what() << "\n";
    }
    return kExitFailure;
}

// ---- inspect ---------------------------------------------------------------

std::string render_inspection(const Dialogue& d)
{
    LexicalSimilarity lex;
    const auto quant = evaluate_quant(d, lex);
    const auto content = analyze_content(d);

    std::ostringstream os;
    os << "dialogue " << d.dialogue_id << " [" << to_string(d.scam_type) << "]\n";
    os << "scammer: " << d.scammer_model << "   victim: " << d.victim_model << "\n";
    os << "turns: " << d.turn_count() << "   termination: "
       << (d.termination ? std::string(to_string(*d.termination)) : std::string("open"))
       << "   duration score: " << quant.duration_score << "\n";
    for (const auto& [key, rep] : quant.repetition) {
        os << "repetition (" << key << "): raw " << format_number(rep.raw) << ", score "
           << rep.score << ", n " << rep.n << "\n";
    }
    os << "persona: age " << to_string(content.profile.age_bucket) << ", gender "
       << to_string(content.profile.gender) << ", name "
       << (content.profile.persona_name ? "stated" : "absent") << "\n\n";

    for (const auto& u : d.utterances) {
        std::string text = u.text;
        std::vector<const PiiEvent*> ev;
        for (const auto& e : content.pii_events) {
            if (e.turn_index == u.index) {
                ev.push_back(&e);
            }
        }
        std::vector<Span> masks;
        for (const auto* e : ev) {
            if (e->direction == PiiDirection::disclosure) {
                masks.push_back(e->evidence);
            }
        }
        std::sort(masks.begin(), masks.end(),
                  [](const Span& a, const Span& b) { return a.begin > b.begin; });
        std::size_t floor = text.size();
        for (const auto& m : masks) {
            if (m.end > floor || m.end > text.size()) {
                continue;
            }
            text.replace(m.begin, m.end - m.begin, "[redacted]");
            floor = m.begin;
        }
        os << "[" << u.index << "] " << to_string(u.role) << " (" << u.word_count
           << " words, len " << quant.length_scores.at(u.index) << ")";
        auto th = content.tactic_hits.find(u.index);
        if (th != content.tactic_hits.end()) {
            os << " tactics:";
            for (auto t : th->second) {
                os << " " << to_string(t);
            }
        }
        for (const auto* e : ev) {
            os << " pii:" << to_string(e->direction) << "/" << to_string(e->category);
        }
        os << "\n    " << text << "\n";
    }
    return os.str();
}

int cmd_inspect(const InspectCommand& cmd, std::ostream& out, std::ostream& err)
{
    try {
        const auto ds = read_transcripts(cmd.transcripts);
        bool shown = false;
        for (const auto& d : ds) {
            if (cmd.dialogue_id && d.dialogue_id != *cmd.dialogue_id) {
                continue;
            }
            out << render_inspection(d) << "\n";
            shown = true;
        }
        if (!shown) {
            err << "no matching dialogue in " << cmd.transcripts.string() << "\n";
            return kExitFailure;
        }
        return kExitOk;
    } catch (const SchemaError& e) {
        err << "schema error: " << e.what() << "\n";
    } catch (const StorageError& e) {
        err << "storage error: " << e.what() << "\n";
    }
    return kExitFailure;
}

} // namespace botwars
