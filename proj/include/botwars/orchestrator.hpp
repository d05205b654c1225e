#pragma once

#include "botwars/dialogue.hpp"
#include "botwars/gateway.hpp"
#include "botwars/prompt.hpp"
#include "botwars/transcript.hpp"

#include <nlohmann/json.hpp>

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <regex>
#include <string>
#include <vector>

namespace botwars {

struct RunSettings {
    int max_turns = kMaxTurns;
    std::size_t window_size = kDefaultWindowSize;
    std::size_t word_limit = kDefaultMaxWords;
    bool reprompt_on_overflow = true;
    // When false, a reply still over the limit after the reprompt ends the
    // dialogue with word_limit_unrecoverable instead of being cut.
    bool truncate_on_overflow = true;
    // Set for scripted runs: makes timestamps logical so output is reproducible.
    std::optional<std::uint64_t> seed;
    // Case-insensitive regexes; empty means default_exit_markers().
    std::vector<std::string> exit_markers;
};

struct RunConfig {
    ScamType scam_type = ScamType::support;
    ProviderConfig scammer_provider;
    ProviderConfig victim_provider;
    RunSettings settings;
    std::string dialogue_id;
};

struct PersonaPair {
    PersonaConstraints scammer = default_persona(AgentRole::scammer);
    PersonaConstraints victim = default_persona(AgentRole::victim);
};

// ---- length enforcement ----------------------------------------------------

enum class LengthAction { none, reprompt, reprompted, truncated };

std::string_view to_string(LengthAction a);

struct LengthCheck {
    std::string text;
    bool violation = false;
    LengthAction action = LengthAction::none;
};

// Under the limit: unchanged. Over with reprompt allowed: unchanged text and
// action=reprompt, signalling the caller to re-ask once. Over otherwise: cut to
// the first `word_limit` whitespace tokens, violation set.
LengthCheck enforce_length(std::string_view text, std::size_t word_limit, bool reprompt_allowed);

// First n whitespace tokens joined by single spaces.
std::string truncate_words(std::string_view text, std::size_t n);

struct LengthEvent {
    std::size_t utterance_index = 0;
    AgentRole role = AgentRole::scammer;
    std::size_t original_words = 0;
    std::optional<std::size_t> reprompt_words;
    LengthAction action = LengthAction::none;
    bool violation = false;
};

nlohmann::json to_json(const LengthEvent& e);

// ---- termination -----------------------------------------------------------

const std::vector<std::string>& default_exit_markers();

class ExitMarkerSet {
public:
    explicit ExitMarkerSet(const std::vector<std::string>& patterns = default_exit_markers());
    bool matches(std::string_view reply) const;

private:
    std::vector<std::regex> patterns_;
};

std::optional<TerminationReason> detect_termination(const DialogueHistory& history,
                                                    std::string_view latest_reply,
                                                    std::size_t turn_count,
                                                    const RunSettings& settings,
                                                    const ExitMarkerSet& markers);

// ---- single dialogue -------------------------------------------------------

struct DialogueRecord {
    Dialogue dialogue;
    std::vector<LengthEvent> length_events;
    // Provider failure text when the dialogue ended on provider_error/refusal.
    std::optional<std::string> error;
};

// Throws ConfigInvalid on role-policy or settings violations before any call.
void validate_run(const RunConfig& config);

// Runs one scammer-first dialogue to termination. When `sink` is given the
// transcript line is appended before returning; `events` receives the length
// events and error, if any.
DialogueRecord run_dialogue(const RunConfig& config, const TemplateRegistry& registry,
                            const PersonaPair& personas, Gateway& gateway,
                            JsonlSink* sink = nullptr, JsonlSink* events = nullptr);

// ---- batches ---------------------------------------------------------------

struct ModelPair {
    ProviderConfig scammer;
    ProviderConfig victim;
};

struct BatchSpec {
    int dialogues_per_cell = 1;
    std::vector<ScamType> scam_types{std::begin(kAllScamTypes), std::end(kAllScamTypes)};
    std::vector<ModelPair> model_pairs;
    int parallelism = 1;
    std::filesystem::path output_dir;
    RunSettings settings;

    std::size_t planned_dialogues() const;
};

struct ShardInfo {
    std::string file;
    std::string scammer_model;
    std::string victim_model;
    ScamType scam_type = ScamType::support;
    std::size_t count = 0;
};

struct BatchSummary {
    std::size_t total = 0;
    std::size_t completed = 0;
    std::size_t failed = 0;
    std::map<TerminationReason, std::size_t> termination_histogram;
    std::map<std::size_t, std::size_t> turn_histogram;
    std::vector<ShardInfo> shards;
    std::string config_hash;
    std::string started_at;
    std::string finished_at;
    std::size_t max_in_flight = 0;
};

nlohmann::json to_json(const BatchSummary& s);

// <scammer_model>__<victim_model>__<scam_type>.jsonl, with path-unsafe characters replaced.
std::string shard_name(std::string_view scammer_model, std::string_view victim_model,
                       ScamType scam_type);

// Collects every problem (role policy, counts) and throws ConfigInvalid.
void validate_batch(const BatchSpec& spec);

// Stable FNV-1a digest of the batch parameters.
std::string config_hash(const BatchSpec& spec);

BatchSummary run_batch(const BatchSpec& spec, const TemplateRegistry& registry,
                       const PersonaPair& personas, Gateway& gateway);

} // namespace botwars
