#include "botwars/dialogue.hpp"

#include <algorithm>
#include <array>
#include <cctype>
#include <cstdio>
#include <utility>

namespace botwars {

namespace {

constexpr std::array<std::string_view, 4> kScamNames{"support", "ssn", "refund", "reward"};
constexpr std::array<std::string_view, 2> kRoleNames{"scammer", "victim"};
constexpr std::array<std::string_view, 5> kTerminationNames{
    "max_turns", "agent_exit", "provider_refusal", "provider_error", "word_limit_unrecoverable"};

bool is_space(char c)
{
    return std::isspace(static_cast<unsigned char>(c)) != 0;
}

template <typename Enum, std::size_t N>
Enum parse_enum(std::string_view s, const std::array<std::string_view, N>& names,
                std::string_view what)
{
    for (std::size_t i = 0; i < N; ++i) {
        if (names[i] == s) {
            return static_cast<Enum>(i);
        }
    }
    throw std::invalid_argument("unknown " + std::string(what) + ": '" + std::string(s) + "'");
}

} // namespace

std::string_view to_string(ScamType s) { return kScamNames.at(static_cast<std::size_t>(s)); }
std::string_view to_string(AgentRole r) { return kRoleNames.at(static_cast<std::size_t>(r)); }
std::string_view to_string(TerminationReason t)
{
    return kTerminationNames.at(static_cast<std::size_t>(t));
}

ScamType parse_scam_type(std::string_view s)
{
    return parse_enum<ScamType>(s, kScamNames, "scam type");
}
AgentRole parse_agent_role(std::string_view s)
{
    return parse_enum<AgentRole>(s, kRoleNames, "agent role");
}
TerminationReason parse_termination(std::string_view s)
{
    return parse_enum<TerminationReason>(s, kTerminationNames, "termination reason");
}

Timestamp now_utc()
{
    return std::chrono::time_point_cast<std::chrono::milliseconds>(
        std::chrono::system_clock::now());
}

std::string format_iso8601(Timestamp t)
{
    using namespace std::chrono;
    const auto day = floor<days>(t);
    const year_month_day ymd{day};
    const hh_mm_ss hms{t - day};
    char buf[64];
    std::snprintf(buf, sizeof buf, "%04d-%02u-%02uT%02ld:%02ld:%02ld.%03ldZ",
                  static_cast<int>(ymd.year()), static_cast<unsigned>(ymd.month()),
                  static_cast<unsigned>(ymd.day()), static_cast<long>(hms.hours().count()),
                  static_cast<long>(hms.minutes().count()),
                  static_cast<long>(hms.seconds().count()),
                  static_cast<long>(hms.subseconds().count()));
    return buf;
}

Timestamp parse_iso8601(std::string_view s)
{
    using namespace std::chrono;
    int y = 0;
    unsigned mo = 0, d = 0, h = 0, mi = 0, sec = 0, ms = 0;
    const std::string str(s);
    int consumed = 0;
    if (std::sscanf(str.c_str(), "%4d-%2u-%2uT%2u:%2u:%2u%n", &y, &mo, &d, &h, &mi, &sec,
                    &consumed) != 6) {
        throw std::invalid_argument("bad ISO-8601 timestamp: '" + str + "'");
    }
    std::string_view rest = s.substr(static_cast<std::size_t>(consumed));
    if (!rest.empty() && rest.front() == '.') {
        rest.remove_prefix(1);
        unsigned scale = 100;
        while (!rest.empty() && std::isdigit(static_cast<unsigned char>(rest.front()))) {
            ms += static_cast<unsigned>(rest.front() - '0') * scale;
            scale /= 10;
            rest.remove_prefix(1);
        }
    }
    if (rest != "Z") {
        throw std::invalid_argument("timestamp must be UTC ('Z' suffix): '" + str + "'");
    }
    const year_month_day ymd{year{y}, month{mo}, day{d}};
    if (!ymd.ok() || h > 23 || mi > 59 || sec > 60) {
        throw std::invalid_argument("bad ISO-8601 timestamp: '" + str + "'");
    }
    return sys_days{ymd} + hours{h} + minutes{mi} + seconds{sec} + milliseconds{ms};
}

std::vector<std::string_view> whitespace_tokens(std::string_view text)
{
    std::vector<std::string_view> out;
    std::size_t i = 0;
    while (i < text.size()) {
        while (i < text.size() && is_space(text[i])) {
            ++i;
        }
        const std::size_t start = i;
        while (i < text.size() && !is_space(text[i])) {
            ++i;
        }
        if (i > start) {
            out.push_back(text.substr(start, i - start));
        }
    }
    return out;
}

std::size_t word_count(std::string_view text)
{
    std::size_t n = 0;
    bool in_word = false;
    for (char c : text) {
        if (is_space(c)) {
            in_word = false;
        } else if (!in_word) {
            in_word = true;
            ++n;
        }
    }
    return n;
}

AgentRole next_role(const Dialogue& dialogue)
{
    return dialogue.utterances.size() % 2 == 0 ? AgentRole::scammer : AgentRole::victim;
}

Dialogue append_utterance(Dialogue dialogue, std::string text, AgentRole role,
                          std::optional<std::string> reasoning,
                          std::optional<Timestamp> timestamp)
{
    if (dialogue.closed()) {
        throw DialogueClosed("dialogue " + dialogue.dialogue_id + " already terminated (" +
                             std::string(to_string(*dialogue.termination)) + ")");
    }
    const AgentRole expected = next_role(dialogue);
    if (role != expected) {
        throw RoleOrderViolation("utterance " + std::to_string(dialogue.utterances.size()) +
                                 " must come from " + std::string(to_string(expected)) +
                                 ", got " + std::string(to_string(role)));
    }
    Utterance u;
    u.index = dialogue.utterances.size();
    u.role = role;
    u.word_count = word_count(text);
    u.text = std::move(text);
    u.reasoning = std::move(reasoning);
    u.timestamp = timestamp.value_or(now_utc());
    dialogue.utterances.push_back(std::move(u));
    return dialogue;
}

DialogueHistory::DialogueHistory(std::vector<Utterance> utterances, std::size_t window_size)
    : utterances_(std::move(utterances)), window_size_(window_size)
{
    if (window_size_ == 0) {
        throw std::invalid_argument("window_size must be positive");
    }
}

DialogueHistory DialogueHistory::with(Utterance u) const
{
    auto copy = utterances_;
    copy.push_back(std::move(u));
    return DialogueHistory(std::move(copy), window_size_);
}

std::vector<Utterance> context_window(const DialogueHistory& history)
{
    const auto& all = history.utterances();
    const std::size_t n = std::min(history.window_size(), all.size());
    return {all.end() - static_cast<std::ptrdiff_t>(n), all.end()};
}

} // namespace botwars
