#pragma once

#include "botwars/dialogue.hpp"

#include <filesystem>
#include <map>
#include <optional>
#include <set>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace botwars {

// ---- tactical sequences ----------------------------------------------------

struct Phase {
    std::string name;
    std::vector<std::string> tactics;

    friend bool operator==(const Phase&, const Phase&) = default;
};

// Ordered phase/tactic structure a chain-of-thought stream is asked to follow.
// The scammer sequences carry a scam type; the victim sequence does not.
struct TacticalSequence {
    std::optional<ScamType> scam_type;
    std::vector<Phase> phases;

    std::size_t atom_count() const;
    friend bool operator==(const TacticalSequence&, const TacticalSequence&) = default;
};

const TacticalSequence& scammer_sequence(ScamType s);
const TacticalSequence& victim_sequence();

// Numbered reasoning steps, one phase per line:
//   1. problem_establish: issue_identify, risk_escalate, urgency
std::string render_sequence(const TacticalSequence& seq);

// One-line scenario context for a scam type.
std::string_view scenario_text(ScamType s);

// ---- persona constraints ---------------------------------------------------

// Trait bounds that guide, but never pin down, a generated persona.
struct PersonaConstraints {
    AgentRole role = AgentRole::victim;
    std::map<std::string, std::string> trait_bounds;

    friend bool operator==(const PersonaConstraints&, const PersonaConstraints&) = default;
};

struct PersonaInvalid : std::invalid_argument {
    using std::invalid_argument::invalid_argument;
};

// Traits that together would fully specify a persona. A constraint set must
// leave at least one of these to the model.
const std::vector<std::string>& persona_identity_traits();

void validate(const PersonaConstraints& c);
PersonaConstraints default_persona(AgentRole role);

// Same front-matter format as templates:
//   ---
//   role: victim
//   ---
//   age_range: 65+
PersonaConstraints parse_persona(std::string_view text, std::string_view source = "<string>");
std::string serialize(const PersonaConstraints& c);
PersonaConstraints load_persona(const std::filesystem::path& path);

// ---- templates -------------------------------------------------------------

struct PromptTemplate {
    std::string name;
    AgentRole role = AgentRole::victim;
    std::optional<ScamType> scam_type;
    std::set<std::string> placeholders;
    std::string base_layer;
    std::string behavioral_layer;
};

class TemplateMissing : public std::runtime_error {
public:
    TemplateMissing(AgentRole role, std::optional<ScamType> scam_type);
    AgentRole role() const { return role_; }
    std::optional<ScamType> scam_type() const { return scam_type_; }

private:
    AgentRole role_;
    std::optional<ScamType> scam_type_;
};

class PlaceholderUndeclared : public std::runtime_error {
public:
    PlaceholderUndeclared(std::string name, std::string source, std::string detail);
    const std::string& name() const { return name_; }

private:
    std::string name_;
};

struct TemplateFormatError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// File stem for a template slot: scammer_<scam_type> or victim.
std::string template_name(AgentRole role, std::optional<ScamType> scam_type);
inline constexpr std::string_view kTemplateExtension = ".tmpl";

// Render inputs a template of the given role may reference.
const std::set<std::string>& known_placeholders(AgentRole role);

PromptTemplate parse_template(std::string_view text, std::string_view source = "<string>");

// Substitutes {name} placeholders; "{{" and "}}" are literal braces.
// Throws PlaceholderUndeclared for names missing from `values`.
std::string substitute(std::string_view text, const std::map<std::string, std::string>& values,
                       std::string_view source = "<string>");

// Immutable after load.
class TemplateRegistry {
public:
    static TemplateRegistry load(const std::filesystem::path& directory);

    void add(PromptTemplate t);
    const PromptTemplate& scammer(ScamType s) const;
    const PromptTemplate& victim() const;
    std::size_t size() const { return templates_.size(); }

private:
    std::map<std::string, PromptTemplate> templates_;
};

// ---- rendered prompts ------------------------------------------------------

inline constexpr std::size_t kDefaultMaxWords = 30;

struct GenerationDirectives {
    std::size_t max_words = kDefaultMaxWords;
    std::string style_notes;
    // Overrides the provider's configured temperature (judge calls use 0).
    std::optional<double> temperature;

    friend bool operator==(const GenerationDirectives&, const GenerationDirectives&) = default;
};

struct PromptBundle {
    // Agent the reply is requested for; empty for judge prompts.
    std::optional<AgentRole> speaker;
    std::string system_text;
    std::vector<Utterance> context;
    GenerationDirectives directives;
    // 0-based turn the reply belongs to; local metadata, never sent.
    std::size_t turn = 0;
    // Extra trailing user message (reprompt reminders, judge instructions).
    std::optional<std::string> instruction;

    friend bool operator==(const PromptBundle&, const PromptBundle&) = default;
};

PromptBundle render_scammer_prompt(const TemplateRegistry& registry, ScamType scam_type,
                                   const PersonaConstraints& constraints,
                                   const DialogueHistory& history,
                                   std::size_t max_words = kDefaultMaxWords);

PromptBundle render_victim_prompt(const TemplateRegistry& registry,
                                  const PersonaConstraints& constraints,
                                  const DialogueHistory& history,
                                  std::size_t max_words = kDefaultMaxWords);

// ---- reply delimiting ------------------------------------------------------

inline constexpr std::string_view kReasoningOpen = "<reasoning>";
inline constexpr std::string_view kReasoningClose = "</reasoning>";
inline constexpr std::string_view kPersonaOpen = "<persona>";
inline constexpr std::string_view kPersonaClose = "</persona>";

struct SplitReply {
    std::string spoken;
    std::optional<std::string> reasoning;
    std::optional<std::string> persona_notes;
};

// Removes delimited scratchpad and persona blocks from a raw model reply. An
// unclosed block swallows the rest of the reply.
SplitReply split_reply(std::string_view raw);

} // namespace botwars
