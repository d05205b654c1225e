// Acceptance runner: one PASS/FAIL line per criterion, nonzero exit on any FAIL.

#include "botwars/eval_cognitive.hpp"
#include "botwars/eval_content.hpp"
#include "botwars/eval_quant.hpp"
#include "botwars/experiment.hpp"
#include "botwars/log.hpp"
#include "botwars/orchestrator.hpp"
#include "botwars/transcript.hpp"

#include "support.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <iostream>
#include <random>
#include <sstream>

using namespace botwars;
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

// Wall-clock ceilings per criterion, in seconds.
constexpr double kLimitFormulas = 1.0;
constexpr double kLimitOracle = 10.0;
constexpr double kLimitConstraints = 30.0;
constexpr double kLimitDeterminism = 30.0;
constexpr double kLimitPipeline = 60.0;

// Tolerance for the reference-distribution divergence.
constexpr double kL1Tolerance = 0.01;

struct Check {
    std::vector<std::string> failures;

    void expect(bool ok, const std::string& what)
    {
        if (!ok && failures.size() < 5) {
            failures.push_back(what);
        }
        if (!ok && failures.size() == 5) {
            failures.push_back("...");
        }
    }
    bool ok() const { return failures.empty(); }
};

using Clock = std::chrono::steady_clock;

int g_failed = 0;

void report(int n, const std::string& title, const Check& c, double seconds, double limit)
{
    Check out = c;
    if (limit > 0 && seconds >= limit) {
        char buf[96];
        std::snprintf(buf, sizeof buf, "runtime %.2fs exceeds %.0fs", seconds, limit);
        out.failures.push_back(buf);
    }
    char t[32];
    std::snprintf(t, sizeof t, "%.3fs", seconds);
    std::cout << (out.ok() ? "PASS" : "FAIL") << " criterion " << n << ": " << title << " ("
              << t << ")";
    for (const auto& f : out.failures) {
        std::cout << " | " << f;
    }
    std::cout << std::endl;
    g_failed += out.ok() ? 0 : 1;
}

template <typename F>
void criterion(int n, const std::string& title, double limit, F&& body)
{
    Check c;
    const auto t0 = Clock::now();
    try {
        body(c);
    } catch (const std::exception& e) {
        c.failures.push_back(std::string("exception: ") + e.what());
    }
    const double secs = std::chrono::duration<double>(Clock::now() - t0).count();
    report(n, title, c, secs, limit);
}

const TemplateRegistry& registry()
{
    static const auto reg = TemplateRegistry::load(testing::source_dir() / "templates");
    return reg;
}

double jaccard(const std::string& a, const std::string& b)
{
    auto tokens = [](const std::string& s) {
        std::istringstream in(s);
        std::set<std::string> out;
        std::string w;
        while (in >> w) {
            for (auto& ch : w) {
                ch = static_cast<char>(std::tolower(static_cast<unsigned char>(ch)));
            }
            out.insert(w);
        }
        return out;
    };
    const auto A = tokens(a);
    const auto B = tokens(b);
    if (A.empty() && B.empty()) {
        return 1.0;
    }
    std::size_t inter = 0;
    for (const auto& t : A) {
        inter += B.count(t);
    }
    return static_cast<double>(inter) / static_cast<double>(A.size() + B.size() - inter);
}

double double_loop(const std::vector<std::string>& r)
{
    double sum = 0.0;
    for (const auto& a : r) {
        for (const auto& b : r) {
            sum += jaccard(a, b);
        }
    }
    const double n = static_cast<double>(r.size());
    return 1.0 - sum / (n * n);
}

std::vector<std::string> responses(std::mt19937_64& rng, std::size_t n)
{
    std::vector<std::string> out;
    for (std::size_t i = 0; i < n; ++i) {
        out.push_back(testing::random_sentence(rng, 12));
    }
    return out;
}

void formulas(Check& c)
{
    const std::vector<std::pair<std::size_t, int>> len{{0, 3},  {1, 3},  {30, 3}, {31, 2},
                                                       {45, 2}, {46, 1}, {200, 1}};
    for (const auto& [w, s] : len) {
        c.expect(score_length_words(w) == s, "length " + std::to_string(w));
    }
    const std::vector<std::pair<double, int>> rep{
        {0.0, 1}, {std::nextafter(0.60, 0.0), 1}, {0.60, 2}, {std::nextafter(0.85, 0.0), 2},
        {0.85, 3}, {1.0, 3}};
    for (const auto& [r, s] : rep) {
        c.expect(score_repetition(r) == s, "repetition " + std::to_string(r));
    }
    const std::vector<std::pair<std::size_t, int>> dur{{0, 1},  {9, 1},  {10, 2}, {19, 2},
                                                       {20, 3}, {50, 3}};
    for (const auto& [t, s] : dur) {
        c.expect(score_duration_turns(t) == s, "duration " + std::to_string(t));
    }
    for (std::size_t w = 0; w <= 100; ++w) {
        c.expect(score_length_words(w) == (w <= 30 ? 3 : w <= 45 ? 2 : 1), "length sweep");
    }
    for (std::size_t t = 0; t <= 50; ++t) {
        c.expect(score_duration_turns(t) == (t >= 20 ? 3 : t >= 10 ? 2 : 1), "duration sweep");
    }
}

void oracle(Check& c)
{
    std::mt19937_64 rng(2024);
    LexicalSimilarity lex;
    for (int i = 0; i < 200; ++i) {
        const auto n = std::uniform_int_distribution<std::size_t>(1, 50)(rng);
        const auto r = responses(rng, n);
        c.expect(repetition_measure(r, lex) == double_loop(r), "oracle mismatch");
    }
    for (std::size_t n = 1; n <= 20; ++n) {
        const double bound = 1.0 - 1.0 / static_cast<double>(n);
        for (int k = 0; k < 25; ++k) {
            c.expect(repetition_measure(responses(rng, n), lex) <= bound + 1e-12,
                     "bound n=" + std::to_string(n));
        }
    }
}

void constraints(Check& c)
{
    std::size_t violations_logged = 0;
    set_log_sink([&](LogLevel level, std::string_view m) {
        if (level == LogLevel::warn && m.find("truncated") != std::string_view::npos) {
            ++violations_logged;
        }
    });
    std::size_t truncations = 0;
    std::mt19937_64 master(77);
    for (int i = 0; i < 100; ++i) {
        auto log = std::make_shared<testing::SpyLog>();
        const std::uint64_t seed = master();
        auto factory = [log, seed](const ProviderConfig& cfg, std::uint64_t session) {
            auto rng = std::make_shared<std::mt19937_64>(
                seed ^ session ^ std::hash<std::string>{}(cfg.provider_id));
            return std::make_unique<testing::SpyClient>(
                cfg, log, [rng](const PromptBundle&, std::size_t) {
                    auto s = testing::random_sentence(*rng, 50);
                    return s.empty() ? std::string("hm") : s;
                });
        };
        RunConfig rc;
        rc.scam_type = kAllScamTypes[static_cast<std::size_t>(i) % 4];
        rc.scammer_provider = testing::scripted("s", {"x"}, {AgentRole::scammer});
        rc.victim_provider = testing::scripted("v", {"y"}, {AgentRole::victim});
        rc.dialogue_id = "acc" + std::to_string(i);
        rc.settings.seed = 5;
        rc.settings.max_turns = std::uniform_int_distribution<int>(1, 60)(master);
        rc.settings.max_turns = std::min(rc.settings.max_turns, 50);
        Gateway gw({rc.scammer_provider, rc.victim_provider});
        gw.register_factory("s", factory);
        gw.register_factory("v", factory);
        const auto rec = run_dialogue(rc, registry(), PersonaPair{}, gw);
        const auto& d = rec.dialogue;
        c.expect(d.termination.has_value(), "open dialogue");
        c.expect(d.turn_count() <= 50, "turn cap");
        for (std::size_t k = 0; k < d.utterances.size(); ++k) {
            const auto& u = d.utterances[k];
            c.expect(u.role == (k % 2 ? AgentRole::victim : AgentRole::scammer), "alternation");
            c.expect(u.word_count <= 30, "word limit");
        }
        c.expect(log->max_context <= 20, "context window");
        // One call per utterance plus exactly one reprompt per overflow.
        c.expect(log->calls == d.utterances.size() + rec.length_events.size(), "reprompt count");
        for (const auto& ev : rec.length_events) {
            c.expect(ev.original_words > 30, "event without overflow");
            c.expect(ev.reprompt_words.has_value(), "overflow not reprompted");
            const bool truncated = ev.action == LengthAction::truncated;
            c.expect(truncated == (*ev.reprompt_words > 30), "truncation decision");
            c.expect(ev.violation == truncated, "violation flag");
            truncations += truncated ? 1 : 0;
        }
    }
    set_log_sink(nullptr);
    c.expect(truncations > 0, "no truncation exercised");
    c.expect(violations_logged == truncations, "violations not logged");
}

BatchSpec determinism_batch(const fs::path& out, int parallelism)
{
    BatchSpec spec;
    spec.dialogues_per_cell = 3;
    spec.model_pairs = {{testing::scripted("s", {"Hello, this is support.", "Your PC has a virus.",
                                                 "Please confirm your card number?"},
                                           {AgentRole::scammer}),
                         testing::scripted("v", {"Who is this?", "Oh no, really?",
                                                 "Let me find my glasses."},
                                           {AgentRole::victim})}};
    spec.parallelism = parallelism;
    spec.output_dir = out;
    spec.settings.max_turns = 8;
    spec.settings.seed = 11;
    return spec;
}

std::map<std::string, std::string> lines_by_id(const fs::path& dir)
{
    std::map<std::string, std::string> out;
    for (const auto& e : fs::directory_iterator(dir)) {
        const auto name = e.path().filename().string();
        if (e.path().extension() != ".jsonl" || name.find(".events.") != std::string::npos) {
            continue;
        }
        for (const auto& d : read_transcripts(e.path())) {
            out[d.dialogue_id] = to_jsonl_line(d);
        }
    }
    return out;
}

void determinism(Check& c)
{
    testing::TempDir a, b;
    const auto s1 = determinism_batch(a.path(), 1);
    Gateway gw({s1.model_pairs[0].scammer, s1.model_pairs[0].victim});
    run_batch(s1, registry(), PersonaPair{}, gw);
    run_batch(determinism_batch(b.path(), 8), registry(), PersonaPair{}, gw);
    const auto la = lines_by_id(a.path());
    c.expect(la.size() == 12, "expected 12 dialogues");
    c.expect(la == lines_by_id(b.path()), "shards differ between parallelism 1 and 8");
}

void role_policy(Check& c)
{
    auto log = std::make_shared<testing::SpyLog>();
    const auto spy = testing::spy_factory(log, [](const PromptBundle&, std::size_t) {
        return std::string("unused");
    });
    auto gpt = testing::scripted("gpt4", {"x"}, {AgentRole::victim});
    auto victim = testing::scripted("v", {"y"}, {AgentRole::victim});
    Gateway gw({gpt, victim});
    gw.register_factory("gpt4", spy);
    gw.register_factory("v", spy);

    RunConfig rc;
    rc.scammer_provider = gpt;
    rc.victim_provider = victim;
    rc.dialogue_id = "policy";
    bool rejected = false;
    try {
        run_dialogue(rc, registry(), PersonaPair{}, gw);
    } catch (const ConfigInvalid&) {
        rejected = true;
    }
    c.expect(rejected, "run_dialogue accepted a victim-only scammer");

    testing::TempDir dir;
    BatchSpec spec;
    spec.model_pairs = {{gpt, victim}};
    spec.output_dir = dir / "out";
    rejected = false;
    try {
        run_batch(spec, registry(), PersonaPair{}, gw);
    } catch (const ConfigInvalid&) {
        rejected = true;
    }
    c.expect(rejected, "run_batch accepted a victim-only scammer");
    c.expect(!fs::exists(dir / "out"), "output created before validation");

    // The same rule through the config file, using the provider defaults for GPT models.
    json j = json::parse(testing::slurp(testing::source_dir() / "configs" / "scripted.json"));
    j["providers"].push_back({{"provider_id", "gpt35"},
                              {"endpoint_url", "https://api.openai.com/v1/chat/completions"},
                              {"model_name", "gpt-3.5-turbo"}});
    j["pairs"] = json::array({{{"scammer", "gpt35"}, {"victim", "scripted-victim"}}});
    rejected = false;
    try {
        parse_config_json(j, testing::source_dir() / "configs");
    } catch (const ConfigInvalid& e) {
        rejected = std::string(e.what()).find("role policy") != std::string::npos;
    }
    c.expect(rejected, "config with a GPT scammer accepted");
    c.expect(log->calls == 0, "provider called before validation");
}

std::vector<json> jsonl(const fs::path& p)
{
    std::vector<json> out;
    std::ifstream in(p);
    std::string line;
    while (std::getline(in, line)) {
        if (!line.empty()) {
            out.push_back(json::parse(line));
        }
    }
    return out;
}

AgentRole role_of(const json& row)
{
    return row.at("role") == "scammer" ? AgentRole::scammer : AgentRole::victim;
}

Utterance utter(AgentRole role, const std::string& text)
{
    Utterance u;
    u.role = role;
    u.text = text;
    u.word_count = word_count(text);
    return u;
}

void content_fixtures(Check& c)
{
    const auto rows = jsonl(testing::fixture("pii_corpus.jsonl"));
    c.expect(rows.size() >= 40, "PII corpus smaller than 40");
    std::size_t tp = 0, fp = 0, fn = 0;
    std::set<std::pair<std::string, std::string>> covered;
    for (const auto& row : rows) {
        std::set<std::pair<std::string, std::string>> want, got;
        for (const auto& e : row.at("expected")) {
            want.insert({e.at("direction").get<std::string>(), e.at("category").get<std::string>()});
        }
        for (const auto& e : extract_pii_events(utter(role_of(row), row.at("text")))) {
            got.insert({std::string(to_string(e.direction)), std::string(to_string(e.category))});
        }
        covered.insert(want.begin(), want.end());
        for (const auto& l : got) {
            (want.count(l) ? tp : fp)++;
        }
        for (const auto& l : want) {
            fn += got.count(l) ? 0 : 1;
        }
        c.expect(got == want, "PII " + row.at("id").get<std::string>());
    }
    c.expect(covered.size() == 10, "PII corpus does not span 5 categories x 2 directions");
    c.expect(fp == 0 && fn == 0 && tp > 0, "PII precision/recall below 100%");

    for (const auto& row : jsonl(testing::fixture("tactic_cues.jsonl"))) {
        std::set<Tactic> want;
        for (const auto& t : row.at("tactics")) {
            want.insert(parse_tactic(t.get<std::string>()));
        }
        c.expect(detect_tactics(utter(role_of(row), row.at("text"))) == want,
                 "tactic " + row.at("id").get<std::string>());
    }

    const auto a = read_annotations(testing::fixture("agreement_a.jsonl"));
    const auto b = read_annotations(testing::fixture("agreement_b.jsonl"));
    c.expect(inter_rater_agreement(a, b) == 83.0, "agreement != 83.0");
    c.expect(inter_rater_agreement(a, a) == 100.0, "self agreement != 100.0");
}

void reference_arithmetic(Check& c)
{
    DemographicProfile old;
    old.age_bucket = AgeBucket::a65plus;
    const auto r = compare_to_reference(std::vector<DemographicProfile>(25, old), accc_reference());
    c.expect(r.age_with_na.l1 && std::fabs(*r.age_with_na.l1 - 154.67) <= kL1Tolerance,
             "L1 != 154.67");

    // Self-comparison: profiles drawn in the reference proportions (two decimals -> 10000).
    std::vector<DemographicProfile> mirror;
    for (auto bucket : kAllAgeBuckets) {
        const auto n = static_cast<std::size_t>(
            std::llround(accc_reference().age_pcts.at(bucket) * 100.0));
        DemographicProfile p;
        p.age_bucket = bucket;
        mirror.insert(mirror.end(), n, p);
    }
    ReferenceDistribution self;
    self.source_label = "self";
    const auto total = static_cast<double>(mirror.size());
    for (auto bucket : kAllAgeBuckets) {
        std::size_t n = 0;
        for (const auto& p : mirror) {
            n += p.age_bucket == bucket;
        }
        self.age_pcts[bucket] = 100.0 * static_cast<double>(n) / total;
    }
    self.gender_pcts = {{Gender::na, 100.0}};
    const auto s = compare_to_reference(mirror, self);
    c.expect(s.age_with_na.l1 && std::fabs(*s.age_with_na.l1) <= 1e-9, "self L1 != 0");
    c.expect(s.gender_with_na.l1 && std::fabs(*s.gender_with_na.l1) <= 1e-9,
             "self gender L1 != 0");
}

std::string marker(std::size_t i)
{
    return "MARK" + std::to_string(i) + "X";
}

void cognitive(Check& c)
{
    auto log = std::make_shared<testing::SpyLog>();
    testing::SpyClient two(testing::judge_config(), log,
                           [](const PromptBundle&, std::size_t) { return std::string("2"); });
    std::mt19937_64 rng(88);
    for (int i = 0; i < 5; ++i) {
        std::vector<std::string> texts;
        const auto n = std::uniform_int_distribution<std::size_t>(2, 12)(rng);
        for (std::size_t k = 0; k < n; ++k) {
            texts.push_back(testing::random_sentence(rng, 10) + " ok");
        }
        const auto d = testing::make_dialogue(texts, "cog" + std::to_string(i));
        const auto s = aggregate_cognitive(judge_dialogue(two, d), d);
        for (auto role : {AgentRole::scammer, AgentRole::victim}) {
            for (auto m : kAllCognitiveMetrics) {
                const auto& mm = s.at(role, m);
                c.expect(mm.mean && *mm.mean == 2.0, "constant judge mean != 2.0");
            }
        }
    }

    for (int k = 0; k < 50; ++k) {
        const auto n = std::uniform_int_distribution<std::size_t>(1, 30)(rng);
        std::vector<std::string> texts;
        for (std::size_t i = 0; i < n; ++i) {
            texts.push_back(testing::random_sentence(rng, 8) + " " + marker(i));
        }
        const auto d = testing::make_dialogue(texts, "leak", kAllScamTypes[n % 4]);
        for (const auto& u : d.utterances) {
            for (auto m : kAllCognitiveMetrics) {
                const auto text = build_judge_prompt(m, u, d).system_text;
                for (std::size_t j = u.index + 1; j < n; ++j) {
                    c.expect(text.find(marker(j)) == std::string::npos, "future utterance leaked");
                }
            }
        }
    }

    auto junk_log = std::make_shared<testing::SpyLog>();
    testing::SpyClient junk(testing::judge_config(), junk_log,
                            [](const PromptBundle&, std::size_t) {
                                return std::string("no idea");
                            });
    const auto d = testing::make_dialogue({"hello", "hi"}, "junk");
    bool surfaced = false;
    try {
        judge_utterance(junk, CognitiveMetric::coherence, d.utterances[0], d);
    } catch (const JudgeOutputUnparseable&) {
        surfaced = true;
    }
    c.expect(surfaced, "JudgeOutputUnparseable not raised");
    c.expect(junk_log->calls == 2, "expected exactly one retry");
}

void pipeline(Check& c)
{
    testing::TempDir dir;
    json j = json::parse(testing::slurp(testing::source_dir() / "configs" / "scripted.json"));
    const auto root = testing::source_dir();
    j["templates_dir"] = (root / "templates").string();
    j["personas"] = {{"scammer", (root / "personas" / "scammer.persona").string()},
                     {"victim", (root / "personas" / "victim.persona").string()}};
    j["output_dir"] = (dir / "runs").string();
    j["dialogues_per_cell"] = 2;
    testing::spit(dir / "cfg.json", j.dump(2));

    std::ostringstream out, err;
    RunCommand rc;
    rc.config = dir / "cfg.json";
    c.expect(cmd_run(rc, out, err) == kExitOk, "run failed: " + err.str());
    const auto manifest = json::parse(testing::slurp(dir / "runs" / "manifest.json"));
    c.expect(manifest.at("completed") == 8, "expected 8 completed dialogues");

    EvaluateCommand ec;
    ec.transcripts = {(dir / "runs" / "*.jsonl").string()};
    ec.suites = {"quant", "content"};
    ec.out = dir / "eval";
    c.expect(cmd_evaluate(ec, out, err) == kExitOk, "evaluate failed: " + err.str());

    ReportCommand rep;
    rep.eval_dir = dir / "eval";
    c.expect(cmd_report(rep, out, err) == kExitOk, "report failed: " + err.str());
    c.expect(fs::exists(dir / "eval" / "report" / "summary.md"), "summary.md missing");

    std::ifstream table(dir / "eval" / "persona_pii.csv");
    std::string header, line;
    std::getline(table, header);
    std::size_t cells = 0;
    while (std::getline(table, line)) {
        cells += line.empty() ? 0 : 1;
    }
    c.expect(header.rfind("scammer_model,victim_model,scam_type,avg_pii_req", 0) == 0,
             "table header layout");
    c.expect(cells == 4, "expected 4 table cells, got " + std::to_string(cells));

    std::ostringstream plan, perr;
    RunCommand dry;
    dry.config = root / "configs" / "full_scale.json";
    dry.dry_run = true;
    c.expect(cmd_run(dry, plan, perr) == kExitOk, "dry run failed");
    c.expect(plan.str().find("= 3200 dialogues") != std::string::npos, "dry run total != 3200");
}

} // namespace

int main()
{
    criterion(1, "quantitative formula fidelity", kLimitFormulas, formulas);
    criterion(2, "repetition oracle equivalence", kLimitOracle, oracle);
    criterion(3, "orchestrator constraint suite", kLimitConstraints, constraints);
    criterion(4, "determinism across parallelism", kLimitDeterminism, determinism);
    criterion(5, "role-policy enforcement", 0, role_policy);
    criterion(6, "content-analysis fixtures", 0, content_fixtures);
    criterion(7, "reference-distribution arithmetic", 0, reference_arithmetic);
    criterion(8, "cognitive pipeline with mock judge", 0, cognitive);
    criterion(9, "end-to-end offline pipeline", kLimitPipeline, pipeline);
    return g_failed == 0 ? 0 : 1;
}
