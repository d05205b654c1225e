// Command-line front end: run | evaluate | report | inspect.

#include "botwars/experiment.hpp"

#include <CLI11.hpp>

#include <iostream>
#include <sstream>

using namespace botwars;

namespace {

std::set<std::string> split_suites(const std::string& list)
{
    std::set<std::string> out;
    std::stringstream ss(list);
    std::string item;
    while (std::getline(ss, item, ',')) {
        if (!item.empty()) {
            out.insert(item);
        }
    }
    return out;
}

} // namespace

int main(int argc, char** argv)
{
    CLI::App app{"Scam-baiting dialogue simulator and evaluation toolkit"};
    app.require_subcommand(1);

    RunCommand run;
    std::string run_out;
    int run_parallelism = 0;
    std::uint64_t run_seed = 0;
    auto* run_cmd = app.add_subcommand("run", "Generate a batch of dialogues");
    run_cmd->add_option("--config", run.config, "Experiment config (JSON)")->required();
    run_cmd->add_option("--out", run_out, "Output directory (overrides config)");
    run_cmd->add_option("--parallelism", run_parallelism, "Concurrent dialogues")
        ->check(CLI::PositiveNumber);
    run_cmd->add_option("--seed", run_seed, "Seed for logical timestamps and scripted sessions");
    run_cmd->add_flag("--dry-run", run.dry_run, "Print the planned cell matrix only");

    EvaluateCommand eval;
    std::string suites = "quant,content";
    std::string eval_config;
    auto* eval_cmd = app.add_subcommand("evaluate", "Score transcripts");
    eval_cmd->add_option("transcripts", eval.transcripts, "Transcript files or glob patterns")
        ->required();
    eval_cmd->add_option("--suites", suites, "Comma list of quant, content, cognitive");
    eval_cmd->add_option("--out", eval.out, "Evaluation output directory")->required();
    eval_cmd->add_option("--config", eval_config, "Config naming judge providers");

    ReportCommand report;
    std::string report_out;
    auto* report_cmd = app.add_subcommand("report", "Build tables, charts and a summary");
    report_cmd->add_option("--eval-dir", report.eval_dir, "Directory written by evaluate")
        ->required();
    report_cmd->add_option("--out", report_out, "Report directory (default <eval-dir>/report)");
    report_cmd->add_flag("--baseline", report.baseline, "Append human scam-baiter reference rows");

    InspectCommand inspect;
    std::string inspect_id;
    auto* inspect_cmd = app.add_subcommand("inspect", "Pretty-print dialogues with per-turn metrics");
    inspect_cmd->add_option("transcripts", inspect.transcripts, "Transcript JSONL file")->required();
    inspect_cmd->add_option("--id", inspect_id, "Dialogue id");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? kExitOk : kExitFailure;
    }

    if (*run_cmd) {
        if (!run_out.empty()) {
            run.out = run_out;
        }
        if (run_parallelism > 0) {
            run.parallelism = run_parallelism;
        }
        if (run_cmd->count("--seed")) {
            run.seed = run_seed;
        }
        return cmd_run(run, std::cout, std::cerr);
    }
    if (*eval_cmd) {
        eval.suites = split_suites(suites);
        if (!eval_config.empty()) {
            eval.config = eval_config;
        }
        return cmd_evaluate(eval, std::cout, std::cerr);
    }
    if (*report_cmd) {
        if (!report_out.empty()) {
            report.out = report_out;
        }
        return cmd_report(report, std::cout, std::cerr);
    }
    if (!inspect_id.empty()) {
        inspect.dialogue_id = inspect_id;
    }
    return cmd_inspect(inspect, std::cout, std::cerr);
}
