#pragma once

#include "botwars/dialogue.hpp"
#include "botwars/prompt.hpp"

#include <nlohmann/json.hpp>

#include <chrono>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <regex>
#include <set>
#include <stdexcept>
#include <string>
#include <vector>

namespace botwars {

// Validation failure listing every problem found, each prefixed with its field path.
class ConfigInvalid : public std::runtime_error {
public:
    explicit ConfigInvalid(std::vector<std::string> errors);
    const std::vector<std::string>& errors() const { return errors_; }

private:
    std::vector<std::string> errors_;
};

// ---- scripted playback -----------------------------------------------------

enum class ExhaustBehavior { repeat_last, emit_exit_marker };

struct KeyedReply {
    std::optional<AgentRole> role;
    std::size_t turn = 0;
    std::string text;
};

struct Script {
    std::vector<std::string> replies;
    // Matched on (speaker, turn) before the sequential list is consulted. Several
    // entries with the same key are played in order, the last one repeating.
    std::vector<KeyedReply> keyed;
    ExhaustBehavior exhaust = ExhaustBehavior::repeat_last;
    std::string exit_marker = "Goodbye, I'm hanging up now.";
};

// ---- provider configuration ------------------------------------------------

enum class ProviderKind { openai, scripted };

struct ProviderConfig {
    std::string provider_id;
    ProviderKind kind = ProviderKind::openai;
    std::string endpoint_url;
    std::string model_name;
    double temperature = 0.65;
    int max_tokens = 256;
    std::set<AgentRole> allowed_roles{AgentRole::scammer, AgentRole::victim};
    bool may_judge = true;
    std::string auth_env_var;
    bool requires_auth = true;
    double request_timeout_s = 30.0;
    int max_retries = 3;
    double requests_per_minute = 60.0;
    double rate_burst = 5.0;
    std::chrono::milliseconds backoff_base{500};
    std::chrono::milliseconds backoff_cap{30'000};
    // Empty means the default refusal phrase list.
    std::vector<std::string> refusal_patterns;
    std::optional<Script> script;
};

// BOTWARS_KEY_<PROVIDER_ID>, upper-cased, non-alphanumerics mapped to '_'.
std::string default_auth_env_var(std::string_view provider_id);

// Collects problems as "<prefix>.<field>: message" without throwing.
void validate(const ProviderConfig& c, std::vector<std::string>& errors,
              const std::string& prefix = "provider");

nlohmann::json to_json(const ProviderConfig& c);
// Fills unspecified fields with defaults (see default_allowed_roles). Throws ConfigInvalid.
ProviderConfig provider_from_json(const nlohmann::json& j, const std::string& prefix = "provider");

// Providers labelled as GPT models default to victim-only.
std::set<AgentRole> default_allowed_roles(std::string_view provider_id, std::string_view model);

// ---- role policy -----------------------------------------------------------

struct PolicyDecision {
    bool allowed = true;
    std::string provider_id;
    AgentRole role = AgentRole::scammer;
    std::string reason;

    explicit operator bool() const { return allowed; }
};

PolicyDecision check_role_policy(const ProviderConfig& config, AgentRole role);

// ---- wire types ------------------------------------------------------------

struct ChatMessage {
    std::string role; // system | user | assistant
    std::string content;

    friend bool operator==(const ChatMessage&, const ChatMessage&) = default;
};

struct ChatRequest {
    std::string model;
    std::vector<ChatMessage> messages;
    double temperature = 0.0;
    int max_tokens = 0;
};

struct Usage {
    int prompt_tokens = 0;
    int completion_tokens = 0;
    int total_tokens = 0;
};

struct ChatResponse {
    std::string content;
    std::string finish_reason;
    Usage usage;
};

struct ChatExchange {
    ChatRequest request;
    ChatResponse response;
    std::chrono::milliseconds latency{0};
    int attempts = 1;
};

// The speaker's own past utterances become "assistant" messages, the other
// party's become "user" messages. An empty context gets a call-start cue.
ChatRequest build_request(const ProviderConfig& config, const PromptBundle& bundle);

nlohmann::json to_wire(const ChatRequest& r);
// Throws ProviderMalformed.
ChatResponse parse_wire_response(const nlohmann::json& body);

// ---- errors ----------------------------------------------------------------

class ProviderError : public std::runtime_error {
public:
    ProviderError(std::string provider_id, const std::string& what);
    const std::string& provider_id() const { return provider_id_; }

private:
    std::string provider_id_;
};

struct ProviderAuthError : ProviderError {
    using ProviderError::ProviderError;
};
struct ProviderTimeout : ProviderError {
    using ProviderError::ProviderError;
};
struct ProviderMalformed : ProviderError {
    using ProviderError::ProviderError;
};
// Retryable HTTP failures (429, 5xx) that outlived max_retries, or other non-2xx codes.
struct ProviderUnavailable : ProviderError {
    using ProviderError::ProviderError;
};

class ProviderRefusal : public ProviderError {
public:
    ProviderRefusal(std::string provider_id, ChatExchange exchange);
    const ChatExchange& exchange() const { return exchange_; }

private:
    ChatExchange exchange_;
};

// ---- refusal classification ------------------------------------------------

const std::vector<std::string>& default_refusal_patterns();

// Case-insensitive regex list matched against the start of the reply's
// normalized text (explicit safety-decline phrasing).
class RefusalClassifier {
public:
    explicit RefusalClassifier(const std::vector<std::string>& patterns = default_refusal_patterns());
    bool is_refusal(std::string_view reply) const;

private:
    std::vector<std::regex> patterns_;
};

// ---- rate limiting and backoff ---------------------------------------------

// Token bucket; acquire() blocks until a request slot is available. Non-positive
// rate disables limiting.
class RateLimiter {
public:
    RateLimiter(double requests_per_minute, double burst);
    // Returns how long the caller waited.
    std::chrono::milliseconds acquire();

private:
    using clock = std::chrono::steady_clock;
    std::mutex mu_;
    double rate_per_s_;
    double capacity_;
    double tokens_;
    clock::time_point last_;
};

// Delay before retry k (0-based): min(base * 2^k, cap). Monotone non-decreasing.
std::chrono::milliseconds backoff_delay(std::chrono::milliseconds base,
                                        std::chrono::milliseconds cap, int retry);

// ---- clients ---------------------------------------------------------------

// One conversation's connection to a provider. Not shared between dialogues.
class ChatClient {
public:
    explicit ChatClient(ProviderConfig config);
    virtual ~ChatClient() = default;

    // Throws ProviderRefusal when the reply is a safety decline.
    ChatExchange complete(const PromptBundle& bundle);

    const ProviderConfig& config() const { return config_; }

protected:
    virtual ChatExchange do_complete(const PromptBundle& bundle) = 0;

private:
    ProviderConfig config_;
    RefusalClassifier refusals_;
};

class ScriptedClient : public ChatClient {
public:
    ScriptedClient(ProviderConfig config, Script script);

protected:
    ChatExchange do_complete(const PromptBundle& bundle) override;

private:
    Script script_;
    std::size_t cursor_ = 0;
    std::map<std::pair<int, std::size_t>, std::size_t> keyed_cursor_;
};

// Hooks for tests: replaces the sleep used between retries.
using SleepFn = std::function<void(std::chrono::milliseconds)>;

class HttpChatClient : public ChatClient {
public:
    HttpChatClient(ProviderConfig config, std::shared_ptr<RateLimiter> limiter,
                   SleepFn sleep = {});

    // Delays slept between attempts by the most recent call.
    const std::vector<std::chrono::milliseconds>& last_backoffs() const { return backoffs_; }

protected:
    ChatExchange do_complete(const PromptBundle& bundle) override;

private:
    std::shared_ptr<RateLimiter> limiter_;
    SleepFn sleep_;
    std::vector<std::chrono::milliseconds> backoffs_;
};

using ClientFactory =
    std::function<std::unique_ptr<ChatClient>(const ProviderConfig&, std::uint64_t seed)>;

// Shared across dialogue tasks; owns per-provider rate limiters. Thread-safe.
class Gateway {
public:
    explicit Gateway(std::vector<ProviderConfig> providers = {});

    void add_provider(ProviderConfig c);
    // Overrides client construction for one provider id.
    void register_factory(const std::string& provider_id, ClientFactory factory);

    bool has(const std::string& provider_id) const;
    const ProviderConfig& config(const std::string& provider_id) const;

    // Opens a per-dialogue session. `seed` is handed to custom factories.
    std::unique_ptr<ChatClient> open(const std::string& provider_id, std::uint64_t seed = 0);

private:
    mutable std::mutex mu_;
    std::map<std::string, ProviderConfig> providers_;
    std::map<std::string, std::shared_ptr<RateLimiter>> limiters_;
    std::map<std::string, ClientFactory> factories_;
};

} // namespace botwars
