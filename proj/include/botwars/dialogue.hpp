#pragma once

#include <chrono>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace botwars {

enum class ScamType { support, ssn, refund, reward };
enum class AgentRole { scammer, victim };

enum class TerminationReason {
    max_turns,
    agent_exit,
    provider_refusal,
    provider_error,
    word_limit_unrecoverable,
};

inline constexpr ScamType kAllScamTypes[] = {
    ScamType::support, ScamType::ssn, ScamType::refund, ScamType::reward};

// Hard ceiling on turns, where a turn is one scammer utterance plus the victim reply.
inline constexpr int kMaxTurns = 50;
inline constexpr std::size_t kDefaultWindowSize = 20;

std::string_view to_string(ScamType s);
std::string_view to_string(AgentRole r);
std::string_view to_string(TerminationReason t);

// Parsers throw std::invalid_argument on unknown names.
ScamType parse_scam_type(std::string_view s);
AgentRole parse_agent_role(std::string_view s);
TerminationReason parse_termination(std::string_view s);

inline AgentRole other(AgentRole r)
{
    return r == AgentRole::scammer ? AgentRole::victim : AgentRole::scammer;
}

using Timestamp = std::chrono::sys_time<std::chrono::milliseconds>;

Timestamp now_utc();
std::string format_iso8601(Timestamp t);
Timestamp parse_iso8601(std::string_view s);

// Number of maximal runs of non-whitespace characters.
std::size_t word_count(std::string_view text);

// Splits on any whitespace run; leading/trailing whitespace yields no empty tokens.
std::vector<std::string_view> whitespace_tokens(std::string_view text);

struct Utterance {
    std::size_t index = 0;
    AgentRole role = AgentRole::scammer;
    std::string text;
    std::size_t word_count = 0;
    std::optional<std::string> reasoning;
    Timestamp timestamp{};

    friend bool operator==(const Utterance&, const Utterance&) = default;
};

struct RoleOrderViolation : std::logic_error {
    using std::logic_error::logic_error;
};

struct DialogueClosed : std::logic_error {
    using std::logic_error::logic_error;
};

struct Dialogue {
    std::string dialogue_id;
    ScamType scam_type = ScamType::support;
    std::string scammer_model;
    std::string victim_model;
    std::vector<Utterance> utterances;
    std::optional<TerminationReason> termination;
    std::optional<std::string> persona_notes;

    // Completed (scammer, victim) pairs.
    std::size_t turn_count() const { return utterances.size() / 2; }
    bool closed() const { return termination.has_value(); }

    friend bool operator==(const Dialogue&, const Dialogue&) = default;
};

// Returns a copy of `dialogue` with one more utterance. Roles must alternate
// starting with the scammer.
Dialogue append_utterance(Dialogue dialogue, std::string text, AgentRole role,
                          std::optional<std::string> reasoning = std::nullopt,
                          std::optional<Timestamp> timestamp = std::nullopt);

// Role expected for the next utterance.
AgentRole next_role(const Dialogue& dialogue);

class DialogueHistory {
public:
    explicit DialogueHistory(std::vector<Utterance> utterances = {},
                             std::size_t window_size = kDefaultWindowSize);

    const std::vector<Utterance>& utterances() const { return utterances_; }
    std::size_t window_size() const { return window_size_; }
    std::size_t size() const { return utterances_.size(); }

    DialogueHistory with(Utterance u) const;

private:
    std::vector<Utterance> utterances_;
    std::size_t window_size_;
};

// Last min(window_size, total) utterances, in order.
std::vector<Utterance> context_window(const DialogueHistory& history);

} // namespace botwars
