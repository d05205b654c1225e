#include "botwars/prompt.hpp"

#include <algorithm>
#include <fstream>
#include <sstream>

namespace botwars {

namespace {

std::string_view trim(std::string_view s)
{
    const auto b = s.find_first_not_of(" \t\r\n");
    if (b == std::string_view::npos) {
        return {};
    }
    const auto e = s.find_last_not_of(" \t\r\n");
    return s.substr(b, e - b + 1);
}

std::vector<std::string_view> split_lines(std::string_view text)
{
    std::vector<std::string_view> lines;
    std::size_t start = 0;
    while (start <= text.size()) {
        const auto nl = text.find('\n', start);
        if (nl == std::string_view::npos) {
            lines.push_back(text.substr(start));
            break;
        }
        lines.push_back(text.substr(start, nl - start));
        start = nl + 1;
    }
    for (auto& l : lines) {
        if (!l.empty() && l.back() == '\r') {
            l.remove_suffix(1);
        }
    }
    return lines;
}

std::string read_file(const std::filesystem::path& path)
{
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw std::runtime_error("cannot read " + path.string());
    }
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

struct FrontMatter {
    std::map<std::string, std::string> header;
    std::string body;
};

FrontMatter split_front_matter(std::string_view text, std::string_view source)
{
    const auto lines = split_lines(text);
    std::size_t i = 0;
    while (i < lines.size() && trim(lines[i]).empty()) {
        ++i;
    }
    if (i == lines.size() || trim(lines[i]) != "---") {
        throw TemplateFormatError(std::string(source) + ": missing '---' front-matter block");
    }
    FrontMatter fm;
    for (++i; i < lines.size(); ++i) {
        const auto line = trim(lines[i]);
        if (line == "---") {
            break;
        }
        if (line.empty() || line.front() == '#') {
            continue;
        }
        const auto colon = line.find(':');
        if (colon == std::string_view::npos) {
            throw TemplateFormatError(std::string(source) + ": bad front-matter line '" +
                                      std::string(line) + "'");
        }
        fm.header[std::string(trim(line.substr(0, colon)))] =
            std::string(trim(line.substr(colon + 1)));
    }
    if (i == lines.size()) {
        throw TemplateFormatError(std::string(source) + ": unterminated front-matter block");
    }
    std::string body;
    for (++i; i < lines.size(); ++i) {
        body.append(lines[i]);
        body.push_back('\n');
    }
    fm.body = std::move(body);
    return fm;
}

std::set<std::string> split_list(std::string_view s)
{
    std::set<std::string> out;
    std::size_t start = 0;
    while (start <= s.size()) {
        auto comma = s.find(',', start);
        if (comma == std::string_view::npos) {
            comma = s.size();
        }
        const auto item = trim(s.substr(start, comma - start));
        if (!item.empty()) {
            out.emplace(item);
        }
        start = comma + 1;
    }
    return out;
}

bool is_placeholder_char(char c)
{
    return (c >= 'a' && c <= 'z') || (c >= '0' && c <= '9') || c == '_';
}

// Names referenced as {name}; {{ and }} are escapes.
std::set<std::string> referenced_placeholders(std::string_view text, std::string_view source)
{
    std::set<std::string> names;
    for (std::size_t i = 0; i < text.size(); ++i) {
        if (text[i] == '{') {
            if (i + 1 < text.size() && text[i + 1] == '{') {
                ++i;
                continue;
            }
            const auto close = text.find('}', i);
            if (close == std::string_view::npos) {
                throw TemplateFormatError(std::string(source) + ": unterminated placeholder");
            }
            const auto name = text.substr(i + 1, close - i - 1);
            if (name.empty() || !std::all_of(name.begin(), name.end(), is_placeholder_char)) {
                throw TemplateFormatError(std::string(source) + ": bad placeholder name '{" +
                                          std::string(name) + "}'");
            }
            names.emplace(name);
            i = close;
        } else if (text[i] == '}' && i + 1 < text.size() && text[i + 1] == '}') {
            ++i;
        }
    }
    return names;
}

std::string render_traits(const PersonaConstraints& c)
{
    std::string out;
    for (const auto& [k, v] : c.trait_bounds) {
        out += "- " + k + ": " + v + "\n";
    }
    if (!out.empty()) {
        out.pop_back();
    }
    return out;
}

std::string reasoning_format_text()
{
    return "Before each reply, think through the steps above privately inside " +
           std::string(kReasoningOpen) + " ... " + std::string(kReasoningClose) +
           ". Only the text after that block is spoken on the call.";
}

std::string persona_format_text()
{
    return "In your first reply only, describe the persona you have chosen (name, age, "
           "circumstances) inside " +
           std::string(kPersonaOpen) + " ... " + std::string(kPersonaClose) +
           ". That block is never spoken.";
}

constexpr std::string_view kSafetyRules =
    "Every personal detail you give (names, numbers, addresses, account or card details, "
    "codes) must be fabricated on the spot; never use real information. Your objective is "
    "prolonging the call as long as possible without revealing that you are stalling.";

const std::set<std::string>& required_placeholders(AgentRole role)
{
    static const std::set<std::string> scammer{"tactical_sequence"};
    static const std::set<std::string> victim{"tactical_sequence", "safety_rules"};
    return role == AgentRole::scammer ? scammer : victim;
}

PromptBundle make_bundle(AgentRole speaker, std::string system_text,
                         const DialogueHistory& history, std::size_t max_words)
{
    PromptBundle b;
    b.speaker = speaker;
    b.system_text = std::move(system_text);
    b.context = context_window(history);
    b.directives.max_words = max_words;
    b.directives.style_notes =
        "Spoken phone-call register; at most " + std::to_string(max_words) + " words.";
    b.turn = history.size() / 2;
    return b;
}

std::string render_layers(const PromptTemplate& t, const std::map<std::string, std::string>& v)
{
    return substitute(t.base_layer, v, t.name) + "\n\n" + substitute(t.behavioral_layer, v, t.name);
}

} // namespace

// ---- tactical sequences ----------------------------------------------------

std::size_t TacticalSequence::atom_count() const
{
    std::size_t n = 0;
    for (const auto& p : phases) {
        n += p.tactics.size();
    }
    return n;
}

namespace {

TacticalSequence refund_reward_sequence(ScamType s)
{
    return {s,
            {{"offer_present", {"reward_state", "check_eligible", "deadline"}},
             {"setup_process", {"need_docs", "verify_steps", "rush_action"}},
             {"data_collect", {"check_account", "state_fees", "get_payment"}}}};
}

} // namespace

const TacticalSequence& scammer_sequence(ScamType s)
{
    static const TacticalSequence support{
        ScamType::support,
        {{"problem_establish", {"issue_identify", "risk_escalate", "urgency"}},
         {"solution_propose", {"expertise_show", "action_require", "assist"}},
         {"compliance_induce", {"authority_assert", "guide", "payment"}}}};
    static const TacticalSequence ssn{
        ScamType::ssn,
        {{"authority_establish", {"agency_present", "legal_state", "urgency"}},
         {"threat_develop", {"fraud_allege", "consequence_state", "pressure"}},
         {"resolution_offer", {"verify_process", "identity_confirm", "info_collect"}}}};
    // Refund and reward scams share one benefit-based sequence.
    static const TacticalSequence refund = refund_reward_sequence(ScamType::refund);
    static const TacticalSequence reward = refund_reward_sequence(ScamType::reward);
    switch (s) {
    case ScamType::support: return support;
    case ScamType::ssn: return ssn;
    case ScamType::refund: return refund;
    case ScamType::reward: return reward;
    }
    throw std::invalid_argument("bad scam type");
}

const TacticalSequence& victim_sequence()
{
    static const TacticalSequence seq{
        std::nullopt,
        {{"delay_act", {"tech_confuse", "process_clarify", "info_seek"}},
         {"engage_maintain", {"part_comply", "show_interest", "ask_followup"}},
         {"evade_tactics", {"resist_indirect", "give_excuse", "defer_commit"}}}};
    return seq;
}

std::string render_sequence(const TacticalSequence& seq)
{
    std::string out;
    for (std::size_t i = 0; i < seq.phases.size(); ++i) {
        const auto& p = seq.phases[i];
        out += std::to_string(i + 1) + ". " + p.name + ":";
        for (std::size_t k = 0; k < p.tactics.size(); ++k) {
            out += (k == 0 ? " " : ", ") + p.tactics[k];
        }
        if (i + 1 < seq.phases.size()) {
            out += "\n";
        }
    }
    return out;
}

std::string_view scenario_text(ScamType s)
{
    switch (s) {
    case ScamType::support:
        return "You claim to be from a technology company's support team calling about a "
               "problem detected on the callee's computer.";
    case ScamType::ssn:
        return "You claim to be an official from a government agency calling about the "
               "callee's social security number being involved in fraud.";
    case ScamType::refund:
        return "You claim the callee is owed a refund for an overcharge and must complete a "
               "verification process to receive it.";
    case ScamType::reward:
        return "You claim the callee has won a reward or prize that must be claimed quickly "
               "through a short process.";
    }
    throw std::invalid_argument("bad scam type");
}

// ---- persona ---------------------------------------------------------------

const std::vector<std::string>& persona_identity_traits()
{
    static const std::vector<std::string> traits{"name", "age", "gender", "location",
                                                 "occupation"};
    return traits;
}

void validate(const PersonaConstraints& c)
{
    if (c.trait_bounds.empty()) {
        return;
    }
    for (const auto& trait : persona_identity_traits()) {
        const bool bounded = std::any_of(c.trait_bounds.begin(), c.trait_bounds.end(),
                                         [&](const auto& kv) {
                                             return kv.first == trait ||
                                                    kv.first.rfind(trait + "_", 0) == 0;
                                         });
        if (!bounded) {
            return;
        }
    }
    throw PersonaInvalid("persona constraints for " + std::string(to_string(c.role)) +
                         " fix every identity trait; leave at least one to the model");
}

PersonaConstraints default_persona(AgentRole role)
{
    if (role == AgentRole::scammer) {
        return {AgentRole::scammer,
                {{"age_range", "25-45"},
                 {"professional_demeanor", "calm, scripted, confident call-centre agent"}}};
    }
    return {AgentRole::victim,
            {{"age_range", "65+"},
             {"gender", "any (mixed across calls)"},
             {"tech_familiarity", "low to moderate"}}};
}

PersonaConstraints parse_persona(std::string_view text, std::string_view source)
{
    const auto fm = split_front_matter(text, source);
    const auto role = fm.header.find("role");
    if (role == fm.header.end()) {
        throw TemplateFormatError(std::string(source) + ": front matter lacks 'role'");
    }
    PersonaConstraints c;
    c.role = parse_agent_role(role->second);
    for (const auto line : split_lines(fm.body)) {
        const auto t = trim(line);
        if (t.empty() || t.front() == '#') {
            continue;
        }
        const auto colon = t.find(':');
        if (colon == std::string_view::npos) {
            throw TemplateFormatError(std::string(source) + ": bad trait line '" +
                                      std::string(t) + "'");
        }
        c.trait_bounds[std::string(trim(t.substr(0, colon)))] =
            std::string(trim(t.substr(colon + 1)));
    }
    validate(c);
    return c;
}

std::string serialize(const PersonaConstraints& c)
{
    std::string out = "---\nrole: " + std::string(to_string(c.role)) + "\n---\n";
    for (const auto& [k, v] : c.trait_bounds) {
        out += k + ": " + v + "\n";
    }
    return out;
}

PersonaConstraints load_persona(const std::filesystem::path& path)
{
    return parse_persona(read_file(path), path.string());
}

// ---- templates -------------------------------------------------------------

TemplateMissing::TemplateMissing(AgentRole role, std::optional<ScamType> scam_type)
    : std::runtime_error("missing template " + template_name(role, scam_type)),
      role_(role),
      scam_type_(scam_type)
{}

PlaceholderUndeclared::PlaceholderUndeclared(std::string name, std::string source,
                                             std::string detail)
    : std::runtime_error(source + ": placeholder {" + name + "} " + detail),
      name_(std::move(name))
{}

std::string template_name(AgentRole role, std::optional<ScamType> scam_type)
{
    if (role == AgentRole::victim) {
        return "victim";
    }
    return "scammer_" + (scam_type ? std::string(to_string(*scam_type)) : std::string("?"));
}

const std::set<std::string>& known_placeholders(AgentRole role)
{
    static const std::set<std::string> scammer{"scam_type",         "scenario",
                                               "persona_traits",    "tactical_sequence",
                                               "max_words",         "reasoning_format"};
    static const std::set<std::string> victim{"demographic_bounds", "persona_traits",
                                              "tactical_sequence",  "max_words",
                                              "reasoning_format",   "persona_format",
                                              "safety_rules"};
    return role == AgentRole::scammer ? scammer : victim;
}

PromptTemplate parse_template(std::string_view text, std::string_view source)
{
    const auto fm = split_front_matter(text, source);
    const auto src = std::string(source);
    PromptTemplate t;

    const auto role = fm.header.find("role");
    if (role == fm.header.end()) {
        throw TemplateFormatError(src + ": front matter lacks 'role'");
    }
    t.role = parse_agent_role(role->second);
    if (const auto st = fm.header.find("scam_type"); st != fm.header.end() && !st->second.empty()) {
        t.scam_type = parse_scam_type(st->second);
    }
    if (t.role == AgentRole::scammer && !t.scam_type) {
        throw TemplateFormatError(src + ": scammer template needs a scam_type");
    }
    if (t.role == AgentRole::victim && t.scam_type) {
        throw TemplateFormatError(src + ": victim template must not declare a scam_type");
    }
    t.name = template_name(t.role, t.scam_type);
    if (const auto ph = fm.header.find("placeholders"); ph != fm.header.end()) {
        t.placeholders = split_list(ph->second);
    }

    // Body: [base] section then [behavioral] section.
    std::string* current = nullptr;
    for (const auto line : split_lines(fm.body)) {
        const auto tl = trim(line);
        if (tl == "[base]") {
            current = &t.base_layer;
            continue;
        }
        if (tl == "[behavioral]") {
            current = &t.behavioral_layer;
            continue;
        }
        if (current == nullptr) {
            if (!tl.empty()) {
                throw TemplateFormatError(src + ": text before the [base] section");
            }
            continue;
        }
        current->append(line);
        current->push_back('\n');
    }
    t.base_layer = std::string(trim(t.base_layer));
    t.behavioral_layer = std::string(trim(t.behavioral_layer));
    if (t.base_layer.empty() || t.behavioral_layer.empty()) {
        throw TemplateFormatError(src + ": both [base] and [behavioral] layers are required");
    }

    const auto& known = known_placeholders(t.role);
    for (const auto& name : t.placeholders) {
        if (!known.count(name)) {
            throw PlaceholderUndeclared(name, src, "is not a render input for " +
                                                       std::string(to_string(t.role)));
        }
    }
    auto refs = referenced_placeholders(t.base_layer, src);
    refs.merge(referenced_placeholders(t.behavioral_layer, src));
    for (const auto& name : refs) {
        if (!t.placeholders.count(name)) {
            throw PlaceholderUndeclared(name, src, "is referenced but not declared");
        }
    }
    for (const auto& name : required_placeholders(t.role)) {
        if (!refs.count(name)) {
            throw TemplateFormatError(src + ": template must reference {" + name + "}");
        }
    }
    return t;
}

std::string substitute(std::string_view text, const std::map<std::string, std::string>& values,
                       std::string_view source)
{
    std::string out;
    out.reserve(text.size());
    for (std::size_t i = 0; i < text.size(); ++i) {
        const char c = text[i];
        if (c == '{' && i + 1 < text.size() && text[i + 1] == '{') {
            out.push_back('{');
            ++i;
        } else if (c == '}' && i + 1 < text.size() && text[i + 1] == '}') {
            out.push_back('}');
            ++i;
        } else if (c == '{') {
            const auto close = text.find('}', i);
            if (close == std::string_view::npos) {
                throw TemplateFormatError(std::string(source) + ": unterminated placeholder");
            }
            const std::string name(text.substr(i + 1, close - i - 1));
            const auto it = values.find(name);
            if (it == values.end()) {
                throw PlaceholderUndeclared(name, std::string(source), "has no render value");
            }
            out += it->second;
            i = close;
        } else {
            out.push_back(c);
        }
    }
    return out;
}

TemplateRegistry TemplateRegistry::load(const std::filesystem::path& directory)
{
    namespace fs = std::filesystem;
    if (!fs::is_directory(directory)) {
        throw std::runtime_error("template directory not found: " + directory.string());
    }
    TemplateRegistry reg;
    auto load_slot = [&](AgentRole role, std::optional<ScamType> s) {
        const auto name = template_name(role, s);
        const auto path = directory / (name + std::string(kTemplateExtension));
        if (!fs::is_regular_file(path)) {
            throw TemplateMissing(role, s);
        }
        auto t = parse_template(read_file(path), path.string());
        if (t.name != name) {
            throw TemplateFormatError(path.string() + ": front matter declares " + t.name);
        }
        reg.add(std::move(t));
    };
    for (auto s : kAllScamTypes) {
        load_slot(AgentRole::scammer, s);
    }
    load_slot(AgentRole::victim, std::nullopt);
    return reg;
}

void TemplateRegistry::add(PromptTemplate t)
{
    auto name = t.name;
    templates_.insert_or_assign(std::move(name), std::move(t));
}

const PromptTemplate& TemplateRegistry::scammer(ScamType s) const
{
    const auto it = templates_.find(template_name(AgentRole::scammer, s));
    if (it == templates_.end()) {
        throw TemplateMissing(AgentRole::scammer, s);
    }
    return it->second;
}

const PromptTemplate& TemplateRegistry::victim() const
{
    const auto it = templates_.find("victim");
    if (it == templates_.end()) {
        throw TemplateMissing(AgentRole::victim, std::nullopt);
    }
    return it->second;
}

// ---- rendering -------------------------------------------------------------

PromptBundle render_scammer_prompt(const TemplateRegistry& registry, ScamType scam_type,
                                   const PersonaConstraints& constraints,
                                   const DialogueHistory& history, std::size_t max_words)
{
    if (constraints.role != AgentRole::scammer) {
        throw PersonaInvalid("scammer prompt rendered with victim constraints");
    }
    const auto& t = registry.scammer(scam_type);
    const std::map<std::string, std::string> values{
        {"scam_type", std::string(to_string(scam_type))},
        {"scenario", std::string(scenario_text(scam_type))},
        {"persona_traits", render_traits(constraints)},
        {"tactical_sequence", render_sequence(scammer_sequence(scam_type))},
        {"max_words", std::to_string(max_words)},
        {"reasoning_format", reasoning_format_text()},
    };
    return make_bundle(AgentRole::scammer, render_layers(t, values), history, max_words);
}

PromptBundle render_victim_prompt(const TemplateRegistry& registry,
                                  const PersonaConstraints& constraints,
                                  const DialogueHistory& history, std::size_t max_words)
{
    if (constraints.role != AgentRole::victim) {
        throw PersonaInvalid("victim prompt rendered with scammer constraints");
    }
    const auto& t = registry.victim();
    const auto traits = render_traits(constraints);
    const std::map<std::string, std::string> values{
        {"demographic_bounds", traits},
        {"persona_traits", traits},
        {"tactical_sequence", render_sequence(victim_sequence())},
        {"max_words", std::to_string(max_words)},
        {"reasoning_format", reasoning_format_text()},
        {"persona_format", persona_format_text()},
        {"safety_rules", std::string(kSafetyRules)},
    };
    return make_bundle(AgentRole::victim, render_layers(t, values), history, max_words);
}

// ---- reply delimiting ------------------------------------------------------

SplitReply split_reply(std::string_view raw)
{
    SplitReply out;
    std::string spoken;
    std::string reasoning;
    std::string persona;
    bool saw_reasoning = false;
    bool saw_persona = false;

    std::size_t i = 0;
    while (i < raw.size()) {
        const auto r = raw.find(kReasoningOpen, i);
        const auto p = raw.find(kPersonaOpen, i);
        const auto next = std::min(r, p);
        if (next == std::string_view::npos) {
            spoken.append(raw.substr(i));
            break;
        }
        spoken.append(raw.substr(i, next - i));
        const bool is_reasoning = next == r;
        const auto open = is_reasoning ? kReasoningOpen : kPersonaOpen;
        const auto close = is_reasoning ? kReasoningClose : kPersonaClose;
        const auto body_start = next + open.size();
        const auto end = raw.find(close, body_start);
        const auto body = raw.substr(body_start, end == std::string_view::npos
                                                     ? std::string_view::npos
                                                     : end - body_start);
        auto& sink = is_reasoning ? reasoning : persona;
        if (!sink.empty()) {
            sink.push_back('\n');
        }
        sink.append(trim(body));
        (is_reasoning ? saw_reasoning : saw_persona) = true;
        if (end == std::string_view::npos) {
            break;
        }
        i = end + close.size();
        spoken.push_back(' ');
    }
    out.spoken = std::string(trim(spoken));
    if (saw_reasoning) {
        out.reasoning = std::move(reasoning);
    }
    if (saw_persona) {
        out.persona_notes = std::move(persona);
    }
    return out;
}

} // namespace botwars
