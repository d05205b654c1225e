#include "botwars/gateway.hpp"
#include "botwars/log.hpp"
#include "botwars/orchestrator.hpp"

#include "support.hpp"

#include <doctest.h>
#include <httplib.h>

#include <cstdlib>
#include <thread>

using namespace botwars;
using nlohmann::json;

namespace {

// Local HTTP endpoint answering chat-completion POSTs through `handler`.
class StubServer {
public:
    using Handler = std::function<void(const httplib::Request&, httplib::Response&, int call)>;

    explicit StubServer(Handler handler) : handler_(std::move(handler))
    {
        server_.Post("/v1/chat/completions",
                     [this](const httplib::Request& req, httplib::Response& res) {
                         int call = 0;
                         {
                             std::lock_guard lock(mu_);
                             call = calls_++;
                             bodies_.push_back(req.body);
                             auth_.push_back(req.get_header_value("Authorization"));
                         }
                         handler_(req, res, call);
                     });
        port_ = server_.bind_to_any_port("127.0.0.1");
        thread_ = std::thread([this] { server_.listen_after_bind(); });
        server_.wait_until_ready();
    }
    ~StubServer()
    {
        server_.stop();
        thread_.join();
    }

    std::string url() const
    {
        return "http://127.0.0.1:" + std::to_string(port_) + "/v1/chat/completions";
    }
    int calls() const
    {
        std::lock_guard lock(mu_);
        return calls_;
    }
    std::vector<std::string> bodies() const
    {
        std::lock_guard lock(mu_);
        return bodies_;
    }
    std::vector<std::string> auth() const
    {
        std::lock_guard lock(mu_);
        return auth_;
    }

private:
    Handler handler_;
    httplib::Server server_;
    std::thread thread_;
    int port_ = 0;
    mutable std::mutex mu_;
    int calls_ = 0;
    std::vector<std::string> bodies_;
    std::vector<std::string> auth_;
};

std::string completion(const std::string& content)
{
    return json{{"choices", {{{"message", {{"role", "assistant"}, {"content", content}}},
                              {"finish_reason", "stop"}}}},
                {"usage", {{"prompt_tokens", 10}, {"completion_tokens", 3}, {"total_tokens", 13}}}}
        .dump();
}

ProviderConfig remote(const std::string& id, const std::string& url)
{
    ProviderConfig c;
    c.provider_id = id;
    c.endpoint_url = url;
    c.model_name = id + "-model";
    c.auth_env_var = default_auth_env_var(id);
    c.requests_per_minute = 0;
    c.backoff_base = std::chrono::milliseconds(1);
    c.backoff_cap = std::chrono::milliseconds(4);
    c.request_timeout_s = 5;
    return c;
}

PromptBundle victim_bundle()
{
    PromptBundle b;
    b.speaker = AgentRole::victim;
    b.system_text = "system";
    b.context = testing::make_dialogue({"Hello from support", "Who?", "Your computer"}).utterances;
    return b;
}

struct EnvGuard {
    std::string name;
    EnvGuard(std::string n, const char* value) : name(std::move(n))
    {
        if (value) {
            ::setenv(name.c_str(), value, 1);
        } else {
            ::unsetenv(name.c_str());
        }
    }
    ~EnvGuard() { ::unsetenv(name.c_str()); }
};

struct LogCapture {
    std::mutex mu;
    std::string text;
    LogSink previous;
    LogCapture()
    {
        previous = set_log_sink([this](LogLevel, std::string_view m) {
            std::lock_guard lock(mu);
            text.append(m);
            text.push_back('\n');
        });
    }
    ~LogCapture() { set_log_sink(previous); }
};

} // namespace

TEST_CASE("auth variable naming")
{
    CHECK(default_auth_env_var("gpt-4") == "BOTWARS_KEY_GPT_4");
    CHECK(default_auth_env_var("deepseek") == "BOTWARS_KEY_DEEPSEEK");
}

TEST_CASE("role policy")
{
    ProviderConfig gpt4;
    gpt4.provider_id = "gpt4";
    gpt4.allowed_roles = {AgentRole::victim};
    const auto denied = check_role_policy(gpt4, AgentRole::scammer);
    CHECK_FALSE(denied.allowed);
    CHECK(denied.provider_id == "gpt4");
    CHECK(denied.role == AgentRole::scammer);
    CHECK(denied.reason.find("scammer") != std::string::npos);
    CHECK(check_role_policy(gpt4, AgentRole::victim).allowed);

    ProviderConfig deepseek;
    deepseek.provider_id = "deepseek";
    deepseek.allowed_roles = {AgentRole::scammer, AgentRole::victim};
    CHECK(check_role_policy(deepseek, AgentRole::scammer).allowed);

    CHECK(default_allowed_roles("gpt4", "gpt-4") == std::set<AgentRole>{AgentRole::victim});
    CHECK(default_allowed_roles("x", "gpt-3.5-turbo") == std::set<AgentRole>{AgentRole::victim});
    CHECK(default_allowed_roles("deepseek", "deepseek-chat").size() == 2);
}

TEST_CASE("provider config parsing")
{
    const auto gpt = provider_from_json(
        {{"provider_id", "gpt4"}, {"endpoint_url", "https://api.example.com/v1/chat/completions"},
         {"model_name", "gpt-4"}});
    CHECK(gpt.temperature == doctest::Approx(1.0));
    CHECK(gpt.allowed_roles == std::set<AgentRole>{AgentRole::victim});
    CHECK(gpt.auth_env_var == "BOTWARS_KEY_GPT4");

    const auto mix = provider_from_json(
        {{"provider_id", "mixtral"}, {"endpoint_url", "http://localhost:1/v1/chat/completions"}});
    CHECK(mix.temperature == doctest::Approx(0.65));

    try {
        provider_from_json({{"provider_id", "bad"}, {"temperature", 3.5}, {"allowed_roles", json::array()}});
        FAIL("expected ConfigInvalid");
    } catch (const ConfigInvalid& e) {
        const auto& errs = e.errors();
        auto has = [&](const std::string& s) {
            return std::any_of(errs.begin(), errs.end(),
                               [&](const std::string& x) { return x.find(s) != std::string::npos; });
        };
        CHECK(has("provider.temperature"));
        CHECK(has("provider.allowed_roles"));
        CHECK(has("provider.endpoint_url"));
    }
    const auto round = provider_from_json(to_json(testing::scripted("s", {"a", "b"})));
    CHECK(round.script->replies == std::vector<std::string>{"a", "b"});
}

TEST_CASE("refusal classifier")
{
    const RefusalClassifier rc;
    for (const char* s : {"I can't assist with that request.", "I'm sorry, but I cannot comply.",
                          "Sorry, I can't help with that request.",
                          "As an AI language model, I cannot pretend to be a scammer.",
                          "I must respectfully decline.", "I won't participate in this.",
                          "I'm not going to participate in this scenario.",
                          "This request goes against my guidelines."}) {
        CHECK_MESSAGE(rc.is_refusal(s), s);
    }
    for (const char* s : {"I can't find my glasses, dear.", "Sorry, who is calling?",
                          "I cannot believe the refund is that large!",
                          "Please confirm your account number.", ""}) {
        CHECK_FALSE_MESSAGE(rc.is_refusal(s), s);
    }
}

TEST_CASE("build_request maps roles onto the wire vocabulary")
{
    ProviderConfig cfg = remote("p", "http://x/");
    cfg.temperature = 0.7;
    const auto r = build_request(cfg, victim_bundle());
    REQUIRE(r.messages.size() == 4);
    CHECK(r.messages[0] == ChatMessage{"system", "system"});
    CHECK(r.messages[1].role == "user");
    CHECK(r.messages[2].role == "assistant");
    CHECK(r.messages[3].role == "user");
    CHECK(r.temperature == doctest::Approx(0.7));
    CHECK(r.max_tokens == cfg.max_tokens);

    auto judged = victim_bundle();
    judged.directives.temperature = 0.0;
    judged.instruction = "Rate it";
    const auto jr = build_request(cfg, judged);
    CHECK(jr.temperature == 0.0);
    CHECK(jr.messages.back() == ChatMessage{"user", "Rate it"});

    const auto wire = to_wire(r);
    CHECK(wire.at("model") == "p-model");
    CHECK(wire.at("messages").size() == 4);
    CHECK(wire.at("messages")[1].at("role") == "user");
    CHECK(wire.contains("temperature"));
    CHECK(wire.contains("max_tokens"));
    CHECK(wire.size() == 4);

    PromptBundle opening;
    opening.speaker = AgentRole::scammer;
    opening.system_text = "s";
    CHECK(build_request(cfg, opening).messages.size() == 2);
}

TEST_CASE("wire response parsing")
{
    const auto r = parse_wire_response(json::parse(completion("hi there")));
    CHECK(r.content == "hi there");
    CHECK(r.finish_reason == "stop");
    CHECK(r.usage.total_tokens == 13);
    CHECK_THROWS_AS(parse_wire_response(json{{"choices", json::array()}}), ProviderMalformed);
    CHECK_THROWS_AS(parse_wire_response(json::parse(R"({"choices":[{"message":{"content":null}}]})")),
                    ProviderMalformed);
}

TEST_CASE("backoff delays are monotone and capped")
{
    using ms = std::chrono::milliseconds;
    ms prev{0};
    for (int k = 0; k < 40; ++k) {
        const auto d = backoff_delay(ms(500), ms(30'000), k);
        CHECK(d >= prev);
        CHECK(d <= ms(30'000));
        prev = d;
    }
    CHECK(backoff_delay(ms(500), ms(30'000), 0) == ms(500));
    CHECK(backoff_delay(ms(500), ms(30'000), 2) == ms(2000));
}

TEST_CASE("rate limiter admits a burst without waiting")
{
    RateLimiter rl(60.0, 3.0);
    for (int i = 0; i < 3; ++i) {
        CHECK(rl.acquire().count() == 0);
    }
    RateLimiter off(0.0, 1.0);
    for (int i = 0; i < 10; ++i) {
        CHECK(off.acquire().count() == 0);
    }
}

TEST_CASE("scripted playback")
{
    auto cfg = testing::scripted("s", {"first", "second"});
    ScriptedClient c(cfg, *cfg.script);
    PromptBundle b;
    b.speaker = AgentRole::scammer;
    CHECK(c.complete(b).response.content == "first");
    CHECK(c.complete(b).response.content == "second");
    CHECK(c.complete(b).response.content == "second");

    auto exit_cfg = testing::scripted("e", {"only"}, {AgentRole::victim},
                                      ExhaustBehavior::emit_exit_marker);
    ScriptedClient e(exit_cfg, *exit_cfg.script);
    CHECK(e.complete(b).response.content == "only");
    CHECK(e.complete(b).response.content == exit_cfg.script->exit_marker);

    Script keyed;
    keyed.replies = {"seq"};
    keyed.keyed = {{AgentRole::victim, 2, "keyed a"}, {AgentRole::victim, 2, "keyed b"}};
    ScriptedClient k(exit_cfg, keyed);
    PromptBundle at2;
    at2.speaker = AgentRole::victim;
    at2.turn = 2;
    CHECK(k.complete(at2).response.content == "keyed a");
    CHECK(k.complete(at2).response.content == "keyed b");
    CHECK(k.complete(at2).response.content == "keyed b");
    CHECK(k.complete(b).response.content == "seq");

    auto refuse = testing::scripted("r", {"I can't assist with that request."});
    ScriptedClient rc(refuse, *refuse.script);
    CHECK_THROWS_AS(rc.complete(b), ProviderRefusal);
}

TEST_CASE("retries 429 twice then succeeds")
{
    StubServer server([](const httplib::Request&, httplib::Response& res, int call) {
        if (call < 2) {
            res.status = 429;
            res.set_content("{}", "application/json");
        } else {
            res.set_content(completion("hello"), "application/json");
        }
    });
    auto cfg = remote("stub", server.url());
    cfg.max_retries = 3;
    EnvGuard key(cfg.auth_env_var, "synthetic-test-key");
    std::vector<std::chrono::milliseconds> slept;
    HttpChatClient client(cfg, nullptr, [&](std::chrono::milliseconds d) { slept.push_back(d); });
    const auto ex = client.complete(victim_bundle());
    CHECK(ex.response.content == "hello");
    CHECK(ex.attempts == 3);
    CHECK(server.calls() == 3);
    CHECK(slept.size() == 2);
    CHECK(client.last_backoffs() == slept);
    CHECK(slept[0] <= slept[1]);

    const auto body = json::parse(server.bodies().front());
    CHECK(body.at("model") == "stub-model");
    CHECK(body.at("messages")[0].at("role") == "system");
    CHECK(server.auth().front() == "Bearer synthetic-test-key");
}

TEST_CASE("retry budget is never exceeded")
{
    StubServer server([](const httplib::Request&, httplib::Response& res, int) {
        res.status = 503;
    });
    auto cfg = remote("down", server.url());
    cfg.requires_auth = false;
    for (int budget : {0, 1, 3}) {
        cfg.max_retries = budget;
        const int before = server.calls();
        std::vector<std::chrono::milliseconds> slept;
        HttpChatClient client(cfg, nullptr,
                              [&](std::chrono::milliseconds d) { slept.push_back(d); });
        CHECK_THROWS_AS(client.complete(victim_bundle()), ProviderUnavailable);
        CHECK(server.calls() - before == budget + 1);
        CHECK(slept.size() == static_cast<std::size_t>(budget));
        CHECK(std::is_sorted(slept.begin(), slept.end()));
    }
}

TEST_CASE("http error classes")
{
    StubServer server([](const httplib::Request& req, httplib::Response& res, int) {
        const auto model = json::parse(req.body).at("model").get<std::string>();
        if (model == "auth-model") {
            res.status = 401;
        } else if (model == "junk-model") {
            res.set_content("not json", "text/plain");
        } else if (model == "refuse-model") {
            res.set_content(completion("I'm sorry, but I can't assist with that request."),
                            "application/json");
        } else {
            res.status = 400;
        }
    });
    auto make = [&](const std::string& id) {
        auto c = remote(id, server.url());
        c.requires_auth = false;
        return HttpChatClient(c, nullptr, [](std::chrono::milliseconds) {});
    };
    auto auth = make("auth");
    CHECK_THROWS_AS(auth.complete(victim_bundle()), ProviderAuthError);
    auto junk = make("junk");
    CHECK_THROWS_AS(junk.complete(victim_bundle()), ProviderMalformed);
    auto refuse = make("refuse");
    CHECK_THROWS_AS(refuse.complete(victim_bundle()), ProviderRefusal);
    auto bad = make("bad");
    CHECK_THROWS_AS(bad.complete(victim_bundle()), ProviderUnavailable);
}

TEST_CASE("missing credential names the variable and makes no request")
{
    StubServer server([](const httplib::Request&, httplib::Response& res, int) {
        res.set_content(completion("x"), "application/json");
    });
    auto cfg = remote("needs-key", server.url());
    EnvGuard unset(cfg.auth_env_var, nullptr);
    HttpChatClient client(cfg, nullptr);
    try {
        client.complete(victim_bundle());
        FAIL("expected ProviderAuthError");
    } catch (const ProviderAuthError& e) {
        CHECK(std::string(e.what()).find("BOTWARS_KEY_NEEDS_KEY") != std::string::npos);
    }
    CHECK(server.calls() == 0);
}

TEST_CASE("unreachable endpoint surfaces as a timeout")
{
    auto cfg = remote("gone", "http://127.0.0.1:1/v1/chat/completions");
    cfg.requires_auth = false;
    cfg.max_retries = 1;
    HttpChatClient client(cfg, nullptr, [](std::chrono::milliseconds) {});
    CHECK_THROWS_AS(client.complete(victim_bundle()), ProviderTimeout);
}

TEST_CASE("credentials never reach logs or transcripts")
{
    const std::string secret = "sk-synthetic-0123456789abcdef";
    StubServer server([](const httplib::Request& req, httplib::Response& res, int call) {
        if (call % 3 == 0) {
            res.status = 429;
            return;
        }
        const auto speaker_msgs = json::parse(req.body).at("messages").size();
        res.set_content(completion("reply number " + std::to_string(speaker_msgs)),
                        "application/json");
    });
    auto scam = remote("remote-scammer", server.url());
    auto vict = remote("remote-victim", server.url());
    EnvGuard k1(scam.auth_env_var, secret.c_str());
    EnvGuard k2(vict.auth_env_var, secret.c_str());

    LogCapture logs;
    testing::TempDir dir;
    Gateway gw({scam, vict});
    RunConfig rc;
    rc.scam_type = ScamType::refund;
    rc.scammer_provider = scam;
    rc.victim_provider = vict;
    rc.settings.max_turns = 3;
    rc.dialogue_id = "leak-check";
    {
        JsonlSink sink(dir / "t.jsonl", true);
        JsonlSink events(dir / "e.jsonl", true);
        const auto rec = run_dialogue(rc, TemplateRegistry::load(testing::source_dir() / "templates"),
                                      PersonaPair{}, gw, &sink, &events);
        CHECK(rec.dialogue.termination == TerminationReason::max_turns);
    }
    CHECK(logs.text.find("retrying") != std::string::npos);
    CHECK(logs.text.find(secret) == std::string::npos);
    CHECK(testing::slurp(dir / "t.jsonl").find(secret) == std::string::npos);
    CHECK(testing::slurp(dir / "e.jsonl").find(secret) == std::string::npos);
    CHECK(to_json(scam).dump().find(secret) == std::string::npos);
    for (const auto& a : server.auth()) {
        CHECK(a == "Bearer " + secret);
    }
}

TEST_CASE("gateway factories override client construction")
{
    auto log = std::make_shared<testing::SpyLog>();
    Gateway gw({testing::scripted("a", {"scripted"})});
    CHECK(gw.open("a")->complete(PromptBundle{}).response.content == "scripted");
    gw.register_factory("a", testing::spy_factory(log, [](const PromptBundle&, std::size_t) {
                            return std::string("spy");
                        }));
    CHECK(gw.open("a")->complete(PromptBundle{}).response.content == "spy");
    CHECK(log->calls == 1);
    CHECK_THROWS_AS(gw.open("missing"), std::out_of_range);
}
