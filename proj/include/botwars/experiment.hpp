#pragma once

#include "botwars/eval_cognitive.hpp"
#include "botwars/eval_content.hpp"
#include "botwars/eval_quant.hpp"
#include "botwars/orchestrator.hpp"

#include <filesystem>
#include <iosfwd>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

namespace botwars {

// ---- configuration ---------------------------------------------------------

struct EvalSettings {
    std::string quant_backend = "lexical"; // or "judge"
    std::optional<std::string> similarity_judge;
    QuantOptions quant;
    std::optional<std::string> cognitive_judge;
    JudgeOptions judge;
    std::optional<std::filesystem::path> rubrics_dir;
    ContentOptions content;
    std::optional<std::string> content_judge;
    std::optional<std::filesystem::path> reference_file;
};

struct ProviderPair {
    std::string scammer;
    std::string victim;
};

struct ExperimentConfig {
    std::vector<ProviderConfig> providers;
    std::vector<ProviderPair> pairs;
    std::vector<ScamType> scam_types{std::begin(kAllScamTypes), std::end(kAllScamTypes)};
    int dialogues_per_cell = 1;
    RunSettings settings;
    std::filesystem::path templates_dir = "templates";
    std::optional<std::filesystem::path> scammer_persona;
    std::optional<std::filesystem::path> victim_persona;
    EvalSettings eval;
    std::filesystem::path output_dir = "runs";
    int parallelism = 1;

    const ProviderConfig& provider(const std::string& id) const;
    BatchSpec batch_spec() const;
    Gateway gateway() const;
};

// Relative paths resolve against `base_dir`. Collects every problem and
// throws ConfigInvalid with field paths.
ExperimentConfig parse_config_json(const nlohmann::json& j, const std::filesystem::path& base_dir);
ExperimentConfig parse_config(const std::filesystem::path& path);

// ---- exit codes ------------------------------------------------------------

inline constexpr int kExitOk = 0;
inline constexpr int kExitPartial = 1;
inline constexpr int kExitFailure = 2;

// ---- run -------------------------------------------------------------------

struct RunCommand {
    std::filesystem::path config;
    std::optional<std::filesystem::path> out;
    std::optional<int> parallelism;
    std::optional<std::uint64_t> seed;
    bool dry_run = false;
};

// Overrides client construction (tests). May be null.
using GatewayHook = std::function<void(Gateway&)>;

int cmd_run(const RunCommand& cmd, std::ostream& out, std::ostream& err,
            const GatewayHook& hook = {});

// Planned cell matrix: one line per pair and scam type, then the total.
std::string dry_run_plan(const ExperimentConfig& cfg);

// ---- evaluate --------------------------------------------------------------

struct EvaluateCommand {
    std::vector<std::string> transcripts; // files or glob patterns
    std::set<std::string> suites{"quant", "content"};
    std::filesystem::path out;
    std::optional<std::filesystem::path> config; // needed for judge-backed suites
};

struct EvaluateResult {
    std::size_t dialogues = 0;
    std::vector<std::string> failures; // "<dialogue_id>: <error>"
    std::vector<std::filesystem::path> files;
};

std::vector<std::filesystem::path> expand_patterns(const std::vector<std::string>& patterns);
std::vector<Dialogue> load_dialogues(const std::vector<std::filesystem::path>& files);

EvaluateResult evaluate(const EvaluateCommand& cmd, const std::vector<Dialogue>& dialogues,
                        const ExperimentConfig* config, Gateway* gateway);

int cmd_evaluate(const EvaluateCommand& cmd, std::ostream& out, std::ostream& err,
                 const GatewayHook& hook = {});

// ---- report ----------------------------------------------------------------

struct ReportCommand {
    std::filesystem::path eval_dir;
    std::optional<std::filesystem::path> out; // defaults to <eval_dir>/report
    bool baseline = false;
};

struct ReportResult {
    std::vector<std::string> present_suites;
    std::vector<std::string> absent_suites;
    std::optional<double> mean_turns;
    std::vector<std::filesystem::path> files;
};

// Throws EmptyInput when no suite output is present.
ReportResult build_report(const ReportCommand& cmd);
int cmd_report(const ReportCommand& cmd, std::ostream& out, std::ostream& err);

// ---- inspect ---------------------------------------------------------------

struct InspectCommand {
    std::filesystem::path transcripts;
    std::optional<std::string> dialogue_id;
};

// Disclosed values are masked in the rendering.
std::string render_inspection(const Dialogue& d);
int cmd_inspect(const InspectCommand& cmd, std::ostream& out, std::ostream& err);

// ---- charts ----------------------------------------------------------------

struct BarSeries {
    std::string name;
    std::vector<std::optional<double>> values; // one per category
};

struct BarChart {
    std::string title;
    std::string y_label;
    std::vector<std::string> categories;
    std::vector<BarSeries> series;
    double y_max = 3.0;
};

std::string render_svg(const BarChart& chart);

} // namespace botwars
