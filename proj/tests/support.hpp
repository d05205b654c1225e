#pragma once

#include "botwars/dialogue.hpp"
#include "botwars/gateway.hpp"

#include <atomic>
#include <filesystem>
#include <fstream>
#include <functional>
#include <memory>
#include <mutex>
#include <random>
#include <sstream>
#include <string>
#include <vector>

namespace testing {

namespace fs = std::filesystem;

inline fs::path source_dir()
{
    return fs::path(BOTWARS_SOURCE_DIR);
}

inline fs::path fixture(const std::string& name)
{
    return source_dir() / "tests" / "fixtures" / name;
}

class TempDir {
public:
    TempDir()
    {
        std::random_device rd;
        std::mt19937_64 rng((static_cast<std::uint64_t>(rd()) << 32) ^ rd());
        path_ = fs::temp_directory_path() / ("botwars-test-" + std::to_string(rng()));
        fs::create_directories(path_);
    }
    ~TempDir()
    {
        std::error_code ec;
        fs::remove_all(path_, ec);
    }
    TempDir(const TempDir&) = delete;
    TempDir& operator=(const TempDir&) = delete;

    const fs::path& path() const { return path_; }
    fs::path operator/(const std::string& p) const { return path_ / p; }

private:
    fs::path path_;
};

inline std::string slurp(const fs::path& p)
{
    std::ifstream in(p, std::ios::binary);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

inline void spit(const fs::path& p, const std::string& text)
{
    std::ofstream out(p, std::ios::binary | std::ios::trunc);
    out << text;
}

inline botwars::ProviderConfig scripted(const std::string& id, std::vector<std::string> replies,
                                        std::set<botwars::AgentRole> roles = {
                                            botwars::AgentRole::scammer,
                                            botwars::AgentRole::victim},
                                        botwars::ExhaustBehavior exhaust =
                                            botwars::ExhaustBehavior::repeat_last)
{
    botwars::ProviderConfig c;
    c.provider_id = id;
    c.kind = botwars::ProviderKind::scripted;
    c.model_name = id;
    c.allowed_roles = std::move(roles);
    c.requires_auth = false;
    c.requests_per_minute = 0;
    botwars::Script s;
    s.replies = std::move(replies);
    s.exhaust = exhaust;
    c.script = s;
    return c;
}

// Observations shared by every client a spy factory opens.
struct SpyLog {
    std::atomic<std::size_t> calls{0};
    std::atomic<std::size_t> max_context{0};
    std::mutex mu;
    std::vector<botwars::PromptBundle> bundles;
    bool keep_bundles = false;
};

using ReplyFn = std::function<std::string(const botwars::PromptBundle&, std::size_t call)>;

// Records every bundle it is asked to complete and answers through `fn`.
class SpyClient : public botwars::ChatClient {
public:
    SpyClient(botwars::ProviderConfig cfg, std::shared_ptr<SpyLog> log, ReplyFn fn)
        : ChatClient(std::move(cfg)), log_(std::move(log)), fn_(std::move(fn))
    {}

    std::size_t calls() const { return calls_; }

protected:
    botwars::ChatExchange do_complete(const botwars::PromptBundle& bundle) override
    {
        ++log_->calls;
        std::size_t prev = log_->max_context.load();
        while (bundle.context.size() > prev &&
               !log_->max_context.compare_exchange_weak(prev, bundle.context.size())) {
        }
        if (log_->keep_bundles) {
            std::lock_guard lock(log_->mu);
            log_->bundles.push_back(bundle);
        }
        botwars::ChatExchange ex;
        ex.request = botwars::build_request(config(), bundle);
        ex.response.content = fn_(bundle, calls_++);
        ex.response.finish_reason = "stop";
        return ex;
    }

private:
    std::shared_ptr<SpyLog> log_;
    ReplyFn fn_;
    std::size_t calls_ = 0;
};

inline botwars::ClientFactory spy_factory(std::shared_ptr<SpyLog> log, ReplyFn fn)
{
    return [log, fn](const botwars::ProviderConfig& cfg, std::uint64_t) {
        return std::make_unique<SpyClient>(cfg, log, fn);
    };
}

inline botwars::ProviderConfig judge_config(const std::string& id = "judge")
{
    auto c = scripted(id, {"2"});
    c.may_judge = true;
    return c;
}

// Alternating scammer-first dialogue over `texts`.
inline botwars::Dialogue make_dialogue(const std::vector<std::string>& texts,
                                       const std::string& id = "d0",
                                       botwars::ScamType type = botwars::ScamType::support)
{
    botwars::Dialogue d;
    d.dialogue_id = id;
    d.scam_type = type;
    d.scammer_model = "model-s";
    d.victim_model = "model-v";
    for (std::size_t i = 0; i < texts.size(); ++i) {
        d = botwars::append_utterance(
            std::move(d), texts[i],
            i % 2 == 0 ? botwars::AgentRole::scammer : botwars::AgentRole::victim, std::nullopt,
            botwars::Timestamp{std::chrono::seconds{1'700'000'000 + static_cast<long>(i)}});
    }
    d.termination = botwars::TerminationReason::max_turns;
    return d;
}

inline std::string random_sentence(std::mt19937_64& rng, std::size_t max_words)
{
    static const std::vector<std::string> vocab{
        "the", "call", "account", "please", "verify", "hello", "my", "dear", "computer",
        "refund", "wait", "bank", "Card", "number", "again", "slowly", "What", "glasses",
        "kettle", "office", "now", "today", "sir", "madam", "code", "ok", "yes", "no"};
    std::uniform_int_distribution<std::size_t> len(0, max_words);
    std::uniform_int_distribution<std::size_t> pick(0, vocab.size() - 1);
    const auto n = len(rng);
    std::string out;
    for (std::size_t i = 0; i < n; ++i) {
        if (i) {
            out += ' ';
        }
        out += vocab[pick(rng)];
    }
    return out;
}

} // namespace testing
