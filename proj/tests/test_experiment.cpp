#include "botwars/experiment.hpp"
#include "botwars/transcript.hpp"

#include "support.hpp"

#include <doctest.h>

#include <sstream>

using namespace botwars;
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

json scripted_config()
{
    auto j = json::parse(testing::slurp(testing::source_dir() / "configs" / "scripted.json"));
    const auto root = testing::source_dir();
    j["templates_dir"] = (root / "templates").string();
    j["personas"] = {{"scammer", (root / "personas" / "scammer.persona").string()},
                     {"victim", (root / "personas" / "victim.persona").string()}};
    return j;
}

fs::path write_config(const testing::TempDir& dir, json j, const std::string& name = "cfg.json")
{
    if (!j.contains("output_dir") || j["output_dir"] == scripted_config()["output_dir"]) {
        j["output_dir"] = (dir / "runs").string();
    }
    testing::spit(dir / name, j.dump(2));
    return dir / name;
}

std::string config_error(const json& j)
{
    try {
        parse_config_json(j, testing::source_dir() / "configs");
    } catch (const ConfigInvalid& e) {
        return e.what();
    }
    return {};
}

// Shard lines are appended in completion order, so compare per dialogue id.
std::map<std::string, std::string> read_all_shards(const fs::path& dir)
{
    std::map<std::string, std::string> by_id;
    for (const auto& e : fs::directory_iterator(dir)) {
        if (e.path().extension() == ".jsonl" &&
            e.path().filename().string().find(".events.") == std::string::npos) {
            for (const auto& d : read_transcripts(e.path())) {
                by_id[e.path().filename().string() + "/" + d.dialogue_id] = to_jsonl_line(d);
            }
        }
    }
    return by_id;
}

struct Ran {
    int code;
    std::string out;
    std::string err;
};

Ran run(const RunCommand& cmd, const GatewayHook& hook = {})
{
    std::ostringstream out, err;
    const int code = cmd_run(cmd, out, err, hook);
    return {code, out.str(), err.str()};
}

Ran evaluate_cmd(const EvaluateCommand& cmd, const GatewayHook& hook = {})
{
    std::ostringstream out, err;
    const int code = cmd_evaluate(cmd, out, err, hook);
    return {code, out.str(), err.str()};
}

} // namespace

TEST_CASE("config validation names the offending field")
{
    auto j = scripted_config();
    CHECK(config_error(j).empty());

    auto unknown = j;
    unknown["pairs"].push_back({{"scammer", "nobody"}, {"victim", "scripted-victim"}});
    const auto e1 = config_error(unknown);
    CHECK(e1.find("pairs[1]") != std::string::npos);
    CHECK(e1.find("nobody") != std::string::npos);

    auto gpt = j;
    gpt["providers"].push_back({{"provider_id", "gpt4"},
                                {"endpoint_url", "https://api.openai.com/v1/chat/completions"},
                                {"model_name", "gpt-4"}});
    gpt["pairs"] = json::array({{{"scammer", "gpt4"}, {"victim", "scripted-victim"}}});
    const auto e2 = config_error(gpt);
    CHECK(e2.find("pairs[0]") != std::string::npos);
    CHECK(e2.find("role policy") != std::string::npos);

    auto several = j;
    several["dialogues_per_cell"] = 0;
    several["bogus_key"] = 1;
    const auto e3 = config_error(several);
    CHECK(e3.find("dialogues_per_cell") != std::string::npos);
    CHECK(e3.find("bogus_key") != std::string::npos);

    auto judge = j;
    judge["providers"][1]["may_judge"] = false;
    judge["eval"]["cognitive_judge"] = "scripted-victim";
    CHECK(config_error(judge).find("eval.cognitive_judge") != std::string::npos);
}

TEST_CASE("dry run prints the planned matrix")
{
    RunCommand cmd;
    cmd.config = testing::source_dir() / "configs" / "full_scale.json";
    cmd.dry_run = true;
    const auto r = run(cmd);
    CHECK(r.code == kExitOk);
    CHECK(r.out.find("8 pairs x 4 scam types x 100 dialogues = 3200 dialogues") !=
          std::string::npos);
    const auto cfg = parse_config(cmd.config);
    CHECK(cfg.batch_spec().planned_dialogues() == 8 * 4 * 100);
    CHECK_FALSE(fs::exists(cfg.output_dir / "manifest.json"));
}

TEST_CASE("run on the scripted config")
{
    testing::TempDir dir;
    RunCommand cmd;
    cmd.config = write_config(dir, scripted_config());
    const auto r = run(cmd);
    CHECK_MESSAGE(r.code == kExitOk, r.err);
    CHECK(r.out.find("8 completed, 0 failed, 8 planned") != std::string::npos);

    const auto manifest = json::parse(testing::slurp(dir / "runs" / "manifest.json"));
    CHECK(manifest["total"] == 8);
    CHECK(manifest["completed"] == 8);
    std::size_t n = 0;
    for (const auto& shard : manifest["shards"]) {
        n += read_transcripts(dir / "runs" / shard["file"].get<std::string>()).size();
    }
    CHECK(n == 8);

    SUBCASE("re-running with the same seed reproduces every dialogue")
    {
        const auto first = read_all_shards(dir / "runs");
        RunCommand again = cmd;
        again.out = dir / "runs2";
        CHECK(run(again).code == kExitOk);
        CHECK(first.size() == 8);
        CHECK(read_all_shards(dir / "runs2") == first);
    }
}

TEST_CASE("run fails cleanly on an unwritable output directory")
{
    testing::TempDir dir;
    testing::spit(dir / "blocker", "file, not a directory");
    auto j = scripted_config();
    j["output_dir"] = (dir / "blocker" / "runs").string();
    RunCommand cmd;
    cmd.config = write_config(dir, j);
    const auto r = run(cmd);
    CHECK(r.code == kExitFailure);
    CHECK(r.err.find("storage error") != std::string::npos);

    auto bad = scripted_config();
    bad["pairs"][0]["scammer"] = "missing";
    RunCommand cmd2;
    cmd2.config = write_config(dir, bad, "bad.json");
    const auto r2 = run(cmd2);
    CHECK(r2.code == kExitFailure);
    CHECK(r2.err.find("pairs[0]") != std::string::npos);
    CHECK_FALSE(fs::exists(dir / "runs"));
}

TEST_CASE("evaluate reports the malformed line")
{
    testing::TempDir dir;
    const auto good = to_json(testing::make_dialogue({"Hello.", "Hi."}, "g1")).dump();
    const auto good2 = to_json(testing::make_dialogue({"Hello.", "Hi."}, "g2")).dump();
    testing::spit(dir / "t.jsonl", good + "\n" + good2 + "\n{\"dialogue_id\": 3\n");
    EvaluateCommand cmd;
    cmd.transcripts = {(dir / "t.jsonl").string()};
    cmd.out = dir / "eval";
    const auto r = evaluate_cmd(cmd);
    CHECK(r.code == kExitFailure);
    CHECK(r.err.find("line 3") != std::string::npos);
    try {
        read_transcripts(dir / "t.jsonl");
        FAIL("expected SchemaError");
    } catch (const SchemaError& e) {
        CHECK(e.line() == 3);
    }

    EvaluateCommand none;
    none.transcripts = {(dir / "nothing-*.jsonl").string()};
    none.out = dir / "eval2";
    CHECK(evaluate_cmd(none).code == kExitFailure);
}

TEST_CASE("end-to-end: run, evaluate, report")
{
    testing::TempDir dir;
    auto j = scripted_config();
    j["providers"].push_back({{"provider_id", "judge"},
                              {"kind", "scripted"},
                              {"model_name", "judge"},
                              {"allowed_roles", {"victim"}},
                              {"may_judge", true},
                              {"script", {{"replies", {"2"}}, {"exhaust", "repeat_last"}}}});
    j["eval"]["cognitive_judge"] = "judge";
    RunCommand rc;
    rc.config = write_config(dir, j);
    const auto ran = run(rc);
    REQUIRE_MESSAGE(ran.code == kExitOk, ran.err);

    auto log = std::make_shared<testing::SpyLog>();
    const GatewayHook hook = [log](Gateway& gw) {
        gw.register_factory("judge",
                            testing::spy_factory(log, [](const PromptBundle&, std::size_t) {
                                return std::string("2");
                            }));
    };

    EvaluateCommand ec;
    ec.transcripts = {(dir / "runs" / "*.jsonl").string()};
    ec.suites = {"quant", "content", "cognitive"};
    ec.out = dir / "eval";
    ec.config = rc.config;
    const auto er = evaluate_cmd(ec, hook);
    CHECK_MESSAGE(er.code == kExitOk, er.err);
    CHECK(er.out.find("evaluated 8 dialogues") != std::string::npos);
    CHECK(log->calls > 0);

    const auto verdicts = read_verdicts_jsonl(dir / "eval" / "cognitive.jsonl");
    CHECK_FALSE(verdicts.empty());
    for (const auto& v : verdicts) {
        CHECK(v.score == 2);
    }

    ReportCommand full;
    full.eval_dir = dir / "eval";
    const auto all = build_report(full);
    CHECK(all.absent_suites.empty());
    CHECK(fs::exists(dir / "eval" / "report" / "summary.md"));

    SUBCASE("quant-only report")
    {
        EvaluateCommand q = ec;
        q.suites = {"quant"};
        q.out = dir / "quant-only";
        q.config.reset();
        REQUIRE(evaluate_cmd(q).code == kExitOk);
        ReportCommand rep;
        rep.eval_dir = dir / "quant-only";
        const auto res = build_report(rep);
        CHECK(res.present_suites == std::vector<std::string>{"quant"});
        CHECK(res.absent_suites == std::vector<std::string>{"content", "cognitive"});
        const auto md = testing::slurp(dir / "quant-only" / "report" / "summary.md");
        CHECK(md.find("content") != std::string::npos);

        const auto manifest = json::parse(testing::slurp(dir / "runs" / "manifest.json"));
        double sum = 0, n = 0;
        for (const auto& [k, v] : manifest["turn_histogram"].items()) {
            sum += std::stod(k) * v.get<double>();
            n += v.get<double>();
        }
        REQUIRE(res.mean_turns);
        CHECK(*res.mean_turns == doctest::Approx(sum / n));
    }

    SUBCASE("report is deterministic")
    {
        ReportCommand again;
        again.eval_dir = dir / "eval";
        again.out = dir / "report2";
        build_report(again);
        for (const auto& f : all.files) {
            CHECK(testing::slurp(f) == testing::slurp(dir / "report2" / f.filename()));
        }
    }

    SUBCASE("baseline rows")
    {
        ReportCommand base;
        base.eval_dir = dir / "eval";
        base.out = dir / "report-baseline";
        base.baseline = true;
        build_report(base);
        bool found = false;
        for (const auto& e : fs::directory_iterator(dir / "report-baseline")) {
            if (e.path().extension() == ".csv" &&
                testing::slurp(e.path()).find("Baiter") != std::string::npos) {
                found = true;
            }
        }
        CHECK(found);
    }

    SUBCASE("no disclosed value survives evaluation")
    {
        for (const auto& e : fs::directory_iterator(dir / "eval")) {
            if (fs::is_regular_file(e.path())) {
                const auto text = testing::slurp(e.path());
                CHECK(text.find("Edith Palmer") == std::string::npos);
            }
        }
    }

    CHECK_THROWS_AS(build_report(ReportCommand{dir / "runs", dir / "r3", false}), EmptyInput);
}

TEST_CASE("evaluate without a judge config rejects the cognitive suite")
{
    testing::TempDir dir;
    testing::spit(dir / "t.jsonl", to_json(testing::make_dialogue({"Hello.", "Hi."})).dump() + "\n");
    EvaluateCommand cmd;
    cmd.transcripts = {(dir / "t.jsonl").string()};
    cmd.suites = {"cognitive"};
    cmd.out = dir / "eval";
    CHECK(evaluate_cmd(cmd).code == kExitFailure);
}

TEST_CASE("inspect masks disclosed values")
{
    auto d = testing::make_dialogue({"What is your Social Security number?",
                                     "My social security number is 123-45-6789.",
                                     "And your card number?", "The card number is 4111 1111 1111 1111."},
                                    "inspect-me", ScamType::ssn);
    const auto text = render_inspection(d);
    CHECK(text.find("123-45-6789") == std::string::npos);
    CHECK(text.find("4111 1111 1111 1111") == std::string::npos);
    CHECK(text.find("[redacted]") != std::string::npos);
    CHECK(text.find("pii:request/identity") != std::string::npos);
    CHECK(text.find("pii:disclosure/financial") != std::string::npos);

    testing::TempDir dir;
    testing::spit(dir / "t.jsonl", to_json(d).dump() + "\n");
    std::ostringstream out, err;
    CHECK(cmd_inspect({dir / "t.jsonl", std::string("inspect-me")}, out, err) == kExitOk);
    CHECK(out.str() == text + "\n");
    std::ostringstream out2, err2;
    CHECK(cmd_inspect({dir / "t.jsonl", std::string("absent")}, out2, err2) == kExitFailure);
}

TEST_CASE("svg charts")
{
    BarChart c;
    c.title = "Engagingness";
    c.y_label = "score";
    c.categories = {"ssn", "support"};
    c.series = {{"a", {1.5, std::nullopt}}, {"b", {3.0, 2.0}}};
    const auto svg = render_svg(c);
    CHECK(svg.rfind("<svg", 0) == 0);
    CHECK(svg.find("Engagingness") != std::string::npos);
    CHECK(svg.find("</svg>") != std::string::npos);
    CHECK(render_svg(c) == svg);
}
