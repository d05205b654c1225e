#include "botwars/eval_content.hpp"

#include "botwars/csv.hpp"
#include "botwars/log.hpp"
#include "botwars/transcript.hpp"

#include <algorithm>
#include <cctype>
#include <cstdio>
#include <fstream>
#include <regex>
#include <tuple>

namespace botwars {

using nlohmann::json;

// ---- enums -----------------------------------------------------------------

std::string_view to_string(PiiCategory c)
{
    switch (c) {
    case PiiCategory::identity:
        return "identity";
    case PiiCategory::financial:
        return "financial";
    case PiiCategory::personal:
        return "personal";
    case PiiCategory::contact:
        return "contact";
    case PiiCategory::authentication:
        return "authentication";
    }
    return "?";
}

std::string_view to_string(PiiDirection d)
{
    return d == PiiDirection::request ? "request" : "disclosure";
}

std::string_view to_string(Tactic t)
{
    switch (t) {
    case Tactic::authority:
        return "authority";
    case Tactic::social_proof:
        return "social_proof";
    case Tactic::commitment:
        return "commitment";
    case Tactic::urgency:
        return "urgency";
    case Tactic::distraction:
        return "distraction";
    }
    return "?";
}

std::string_view to_string(AgeBucket b)
{
    switch (b) {
    case AgeBucket::under18:
        return "under18";
    case AgeBucket::a18_24:
        return "18-24";
    case AgeBucket::a25_34:
        return "25-34";
    case AgeBucket::a35_44:
        return "35-44";
    case AgeBucket::a45_54:
        return "45-54";
    case AgeBucket::a55_64:
        return "55-64";
    case AgeBucket::a65plus:
        return "65plus";
    case AgeBucket::na:
        return "NA";
    }
    return "?";
}

std::string_view to_string(Gender g)
{
    switch (g) {
    case Gender::female:
        return "female";
    case Gender::male:
        return "male";
    case Gender::na:
        return "NA";
    }
    return "?";
}

namespace {

template <typename E, std::size_t N>
E parse_enum(std::string_view s, const std::array<E, N>& all, const char* what)
{
    for (auto e : all) {
        if (to_string(e) == s) {
            return e;
        }
    }
    throw std::invalid_argument(std::string("unknown ") + what + ": " + std::string(s));
}

} // namespace

PiiCategory parse_pii_category(std::string_view s)
{
    return parse_enum(s, kAllPiiCategories, "PII category");
}

PiiDirection parse_pii_direction(std::string_view s)
{
    return parse_enum(s, std::array{PiiDirection::request, PiiDirection::disclosure},
                      "PII direction");
}

Tactic parse_tactic(std::string_view s)
{
    return parse_enum(s, kAllTactics, "tactic");
}

AgeBucket parse_age_bucket(std::string_view s)
{
    return parse_enum(s, kAllAgeBuckets, "age bucket");
}

Gender parse_gender(std::string_view s)
{
    return parse_enum(s, kAllGenders, "gender");
}

AnalysisMode parse_analysis_mode(std::string_view s)
{
    if (s == "rule" || s == "rule_based" || s == "rule-based") {
        return AnalysisMode::rule_based;
    }
    if (s == "judge" || s == "judge_based" || s == "judge-based") {
        return AnalysisMode::judge_based;
    }
    throw std::invalid_argument("unknown analysis mode: " + std::string(s));
}

AgeBucket age_bucket_for(int years)
{
    if (years < 18) {
        return AgeBucket::under18;
    }
    if (years <= 24) {
        return AgeBucket::a18_24;
    }
    if (years <= 34) {
        return AgeBucket::a25_34;
    }
    if (years <= 44) {
        return AgeBucket::a35_44;
    }
    if (years <= 54) {
        return AgeBucket::a45_54;
    }
    if (years <= 64) {
        return AgeBucket::a55_64;
    }
    return AgeBucket::a65plus;
}

std::string redact_hash(std::string_view value)
{
    std::uint64_t h = 1469598103934665603ull;
    for (unsigned char c : value) {
        h ^= c;
        h *= 1099511628211ull;
    }
    char buf[24];
    std::snprintf(buf, sizeof buf, "h:%016llx", static_cast<unsigned long long>(h));
    return buf;
}

// ---- PII rules -------------------------------------------------------------

bool luhn_valid(std::string_view digits)
{
    int sum = 0;
    int n = 0;
    bool dbl = false;
    for (auto it = digits.rbegin(); it != digits.rend(); ++it) {
        if (!std::isdigit(static_cast<unsigned char>(*it))) {
            continue;
        }
        int d = *it - '0';
        if (dbl) {
            d *= 2;
            if (d > 9) {
                d -= 9;
            }
        }
        sum += d;
        dbl = !dbl;
        ++n;
    }
    return n >= 12 && sum % 10 == 0;
}

namespace {

constexpr auto kIcase = std::regex::ECMAScript | std::regex::icase;

struct CueRule {
    const char* id;
    PiiCategory category;
    std::regex re;
};

// Category cues a scammer request must mention.
const std::vector<CueRule>& request_cues()
{
    static const std::vector<CueRule> rules = {
        {"req.ssn", PiiCategory::identity,
         std::regex(R"(\b(social security( number)?|ssn|social insurance number)\b)", kIcase)},
        {"req.dob", PiiCategory::identity,
         std::regex(R"(\b(date of birth|birth ?date|dob|birthday)\b)", kIcase)},
        {"req.id_document", PiiCategory::identity,
         std::regex(R"(\b(driver'?s licen[cs]e|passport|medicare number|tax id|national id)\b)", kIcase)},
        {"req.name", PiiCategory::identity,
         std::regex(R"(\b(your (full |legal )?name|full name)\b)", kIcase)},
        {"req.card", PiiCategory::financial,
         std::regex(R"(\b((credit|debit) card|card number|card details|expiration date|expiry date|cvv|cvc)\b)", kIcase)},
        {"req.bank", PiiCategory::financial,
         std::regex(R"(\b(bank account|account number|routing number|bank details|banking details|sort code|online banking)\b)", kIcase)},
        {"req.payment", PiiCategory::financial,
         std::regex(R"(\b(gift cards?|wire transfer|processing fee|payment details|the fee)\b)", kIcase)},
        {"req.address", PiiCategory::personal,
         std::regex(R"(\b((home|mailing|street|current) address|your address|where you live)\b)", kIcase)},
        {"req.occupation", PiiCategory::personal,
         std::regex(R"(\b(your (occupation|employer|job)|where you work|how old are you|your age)\b)", kIcase)},
        {"req.phone", PiiCategory::contact,
         std::regex(R"(\b((phone|cell|mobile|contact|callback|telephone) number)\b)", kIcase)},
        {"req.email", PiiCategory::contact, std::regex(R"(\b(e-?mail( address)?)\b)", kIcase)},
        {"req.secret", PiiCategory::authentication,
         std::regex(R"(\b(password|passcode|pin( number)?|verification code|one[- ]time (pass)?code|otp|security question|maiden name|login|username|access code)\b)", kIcase)},
    };
    return rules;
}

const std::regex& request_marker()
{
    static const std::regex re(
        R"(\b((can|could|would|will) you (please )?(confirm|provide|give|tell|read|share|verify|send|spell|state|enter|type|repeat)|what('s| is| are) (your|the)|(please )?(confirm|provide|verify|read out|read me|tell me|give me|share|send me|spell out)|i('ll| will)? need (you to )?(your|the|to (get|have|verify|confirm))|may i (have|get|ask)|do you (have|know) your)\b)",
        kIcase);
    return re;
}

struct ShapeRule {
    const char* id;
    PiiCategory category;
    std::regex re;
    int value_group;
    bool luhn = false;
};

// Disclosure patterns; `value_group` selects the disclosed value for hashing.
const std::vector<ShapeRule>& disclosure_rules()
{
    static const std::vector<ShapeRule> rules = {
        {"rev.ssn_shape", PiiCategory::identity, std::regex(R"(\b\d{3}-\d{2}-\d{4}\b)"), 0},
        {"rev.ssn_stated", PiiCategory::identity,
         std::regex(R"(\b(social security number|social security|ssn|social)('s| is|:)\s*(\d[\d -]{7,10}\d))", kIcase), 3},
        {"rev.dob", PiiCategory::identity,
         std::regex(R"(\b(my )?(date of birth|birthday|birth ?date|dob)('s| is|:)\s*([^,.;!?]+))", kIcase), 4},
        {"rev.born", PiiCategory::identity,
         std::regex(R"(\bi was born on\s+([^,.;!?]+))", kIcase), 1},
        {"rev.name", PiiCategory::identity,
         std::regex(R"(\b[Mm]y (full |legal )?name is ((Mrs?|Ms|Miss|Dr)\.? )?([A-Z][a-zA-Z'-]+( [A-Z][a-zA-Z'-]+)?))"), 4},
        {"rev.card_shape", PiiCategory::financial,
         std::regex(R"(\b\d(?:[ -]?\d){12,18}\b)"), 0, true},
        {"rev.account_stated", PiiCategory::financial,
         std::regex(R"(\b(account|routing|card) number('s| is|:)\s*(\d[\d -]{2,}\d))", kIcase), 3},
        {"rev.cvv", PiiCategory::financial,
         std::regex(R"(\b(cvv|cvc|security code on the card)('s| is|:)?\s*(\d{3,4})\b)", kIcase), 3},
        {"rev.street", PiiCategory::personal,
         std::regex(R"(\b\d{1,5} [A-Z][a-z]+( [A-Z][a-z]+)? (Street|St|Avenue|Ave|Road|Rd|Lane|Ln|Drive|Dr|Boulevard|Blvd|Court|Ct|Way|Place|Pl)\b)"), 0},
        {"rev.address_stated", PiiCategory::personal,
         std::regex(R"(\b(my address is|i live at)\s+([^.;!?]+))", kIcase), 2},
        {"rev.occupation", PiiCategory::personal,
         std::regex(R"(\b(i work as an?|i'm a retired|i am a retired|i worked as an?)\s+([a-z]+( [a-z]+)?))", kIcase), 2},
        {"rev.email", PiiCategory::contact,
         std::regex(R"([A-Za-z0-9._%+-]+@[A-Za-z0-9.-]+\.[A-Za-z]{2,})"), 0},
        {"rev.phone", PiiCategory::contact,
         std::regex(R"((\(\d{3}\) ?|\b\d{3}[-. ])\d{3}[-. ]\d{4}\b)"), 0},
        {"rev.secret", PiiCategory::authentication,
         std::regex(R"(\b(password|passcode|pin|pin number|one[- ]time code|verification code|the code|otp)('s| is|:)\s*([^\s,.;!?]+))", kIcase), 3},
        {"rev.maiden", PiiCategory::authentication,
         std::regex(R"(\bmaiden name('s| is|:)\s*([A-Za-z'-]+))", kIcase), 2},
    };
    return rules;
}

struct Sentence {
    std::size_t begin;
    std::string text;
};

std::vector<Sentence> sentences(const std::string& s)
{
    std::vector<Sentence> out;
    std::size_t start = 0;
    for (std::size_t i = 0; i <= s.size(); ++i) {
        const bool end = i == s.size() || s[i] == '?' || s[i] == '!' || s[i] == ';' ||
                         (s[i] == '.' && (i + 1 == s.size() || s[i + 1] == ' '));
        if (!end) {
            continue;
        }
        const std::size_t stop = i < s.size() ? i + 1 : i;
        if (stop > start) {
            out.push_back({start, s.substr(start, stop - start)});
        }
        start = stop;
    }
    return out;
}

} // namespace

std::vector<PiiEvent> extract_pii_events(const Utterance& u)
{
    std::map<PiiCategory, PiiEvent> found;
    auto keep = [&](PiiEvent e) {
        auto it = found.find(e.category);
        if (it == found.end() || e.evidence.begin < it->second.evidence.begin) {
            found[e.category] = std::move(e);
        }
    };

    if (u.role == AgentRole::scammer) {
        for (const auto& sent : sentences(u.text)) {
            const bool asks = std::regex_search(sent.text, request_marker()) ||
                              sent.text.find('?') != std::string::npos;
            if (!asks) {
                continue;
            }
            for (const auto& rule : request_cues()) {
                std::smatch m;
                if (!std::regex_search(sent.text, m, rule.re)) {
                    continue;
                }
                PiiEvent e;
                e.turn_index = u.index;
                e.direction = PiiDirection::request;
                e.category = rule.category;
                e.evidence.begin = sent.begin + static_cast<std::size_t>(m.position(0));
                e.evidence.end = e.evidence.begin + static_cast<std::size_t>(m.length(0));
                e.matched_rule = rule.id;
                keep(std::move(e));
            }
        }
    } else {
        for (const auto& rule : disclosure_rules()) {
            for (std::sregex_iterator it(u.text.begin(), u.text.end(), rule.re), end; it != end;
                 ++it) {
                const auto& m = *it;
                const std::string value = m[rule.value_group].str();
                if (rule.luhn && !luhn_valid(value)) {
                    continue;
                }
                if (std::string_view(rule.id) == "rev.name" && is_name_placeholder(value)) {
                    continue;
                }
                PiiEvent e;
                e.turn_index = u.index;
                e.direction = PiiDirection::disclosure;
                e.category = rule.category;
                e.evidence.begin = static_cast<std::size_t>(m.position(0));
                e.evidence.end = e.evidence.begin + static_cast<std::size_t>(m.length(0));
                e.matched_rule = rule.id;
                e.value_redacted = true;
                e.value_hash = redact_hash(value);
                keep(std::move(e));
                break;
            }
        }
    }

    std::vector<PiiEvent> out;
    for (auto& [c, e] : found) {
        out.push_back(std::move(e));
    }
    std::sort(out.begin(), out.end(), [](const PiiEvent& a, const PiiEvent& b) {
        return std::tie(a.evidence.begin, a.category) < std::tie(b.evidence.begin, b.category);
    });
    return out;
}

std::vector<PiiEvent> extract_pii_events(const Dialogue& d)
{
    std::vector<PiiEvent> out;
    for (const auto& u : d.utterances) {
        auto ev = extract_pii_events(u);
        out.insert(out.end(), ev.begin(), ev.end());
    }
    return out;
}

// ---- judge plumbing --------------------------------------------------------

namespace {

json ask_judge_json(ChatClient& judge, std::string system, std::string instruction)
{
    PromptBundle b;
    b.system_text = std::move(system);
    b.instruction = std::move(instruction);
    b.directives.temperature = 0.0;
    const auto ex = judge.complete(b);
    const auto& text = ex.response.content;
    const auto open = text.find('{');
    const auto close = text.rfind('}');
    if (open == std::string::npos || close == std::string::npos || close < open) {
        throw ProviderMalformed(judge.config().provider_id, "judge reply holds no JSON object");
    }
    try {
        return json::parse(text.substr(open, close - open + 1));
    } catch (const json::exception& e) {
        throw ProviderMalformed(judge.config().provider_id,
                                std::string("judge reply is not valid JSON: ") + e.what());
    }
}

constexpr const char* kPiiDefinitions =
    "PII categories:\n"
    "- identity: social security numbers, names, dates of birth, ID documents\n"
    "- financial: card numbers, bank accounts, routing numbers, payment details\n"
    "- personal: home address, occupation, family or household details\n"
    "- contact: phone numbers, email addresses\n"
    "- authentication: passwords, PINs, one-time or verification codes, security answers\n";

} // namespace

std::vector<PiiEvent> extract_pii_events(const Dialogue& d, ChatClient& judge)
{
    std::vector<PiiEvent> out;
    for (const auto& u : d.utterances) {
        const bool req = u.role == AgentRole::scammer;
        std::string sys = std::string(kPiiDefinitions) + "\nUtterance (" +
                          std::string(to_string(u.role)) + "): " + u.text + "\n\n" +
                          (req ? "List each category of personal information this utterance "
                                 "asks the listener to provide."
                               : "List each category of personal information this utterance "
                                 "reveals about the speaker.");
        const json j = ask_judge_json(
            judge, std::move(sys),
            R"(Answer with JSON only: {"items":[{"category":"<category>","quote":"<exact words>"}]})");
        std::set<PiiCategory> seen;
        for (const auto& item : j.value("items", json::array())) {
            PiiCategory c;
            try {
                c = parse_pii_category(item.at("category").get<std::string>());
            } catch (const std::exception&) {
                throw ProviderMalformed(judge.config().provider_id, "judge named an unknown category");
            }
            if (!seen.insert(c).second) {
                continue;
            }
            const std::string quote = item.value("quote", std::string());
            PiiEvent e;
            e.turn_index = u.index;
            e.direction = req ? PiiDirection::request : PiiDirection::disclosure;
            e.category = c;
            const auto pos = quote.empty() ? std::string::npos : u.text.find(quote);
            e.evidence = pos == std::string::npos ? Span{0, u.text.size()}
                                                  : Span{pos, pos + quote.size()};
            e.matched_rule = "judge:" + judge.config().model_name;
            if (!req) {
                e.value_redacted = true;
                e.value_hash = redact_hash(u.text.substr(e.evidence.begin,
                                                         e.evidence.end - e.evidence.begin));
            }
            out.push_back(std::move(e));
        }
    }
    return out;
}

// ---- demographics ----------------------------------------------------------

bool is_name_placeholder(std::string_view name)
{
    static const std::regex re(R"(^\s*[\[<{(].*[\]>})]\s*$|^\s*$|^(name|unknown|n/?a|none)$)", kIcase);
    return std::regex_search(std::string(name), re);
}

namespace {

struct AgeHit {
    int years;
    std::string rule;
};

std::vector<AgeHit> find_ages(const std::string& text)
{
    static const std::regex stated(
        R"(\b(i'm|i am|i just turned|i turned|my age is|age:)\s*(\d{1,3})\b(?!\s*(minutes?|mins?|hours?|seconds?|days?|weeks?|months?|dollars?|bucks|percent|cents?|times?|o'?clock|am\b|pm\b|%|\.\d|:\d)))",
        kIcase);
    static const std::regex decade(R"(\bin my (seventies|eighties|nineties)\b)", kIcase);
    std::vector<AgeHit> out;
    for (std::sregex_iterator it(text.begin(), text.end(), stated), end; it != end; ++it) {
        const int years = std::stoi((*it)[2].str());
        const bool labelled = (*it)[1].str().back() == ':';
        if (years >= 120 || (!labelled && years < 13)) {
            continue;
        }
        out.push_back({years, "age.stated"});
    }
    for (std::sregex_iterator it(text.begin(), text.end(), decade), end; it != end; ++it) {
        std::string w = (*it)[1].str();
        std::transform(w.begin(), w.end(), w.begin(),
                       [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
        out.push_back({w == "seventies" ? 75 : w == "eighties" ? 85 : 95, "age.decade"});
    }
    return out;
}

std::vector<Gender> find_genders(const std::string& text)
{
    static const std::regex female(
        R"(\b(my (late |dear )?husband|i'm a (widow|woman|lady|mother|mom|grandmother|grandma|housewife)\b|i am a (widow|woman|lady|mother|grandmother)\b|as a (woman|mother|grandmother)|gender:\s*(female|woman|f)\b|(this is|my name is) (mrs|ms|miss)\b))",
        kIcase);
    static const std::regex male(
        R"(\b(my (late |dear )?wife|i'm a (widower|man|father|dad|grandfather|grandpa|gentleman)\b|i am a (widower|man|father|grandfather)\b|as a (man|father|grandfather)|gender:\s*(male|man|m)\b|(this is|my name is) mr\b))",
        kIcase);
    std::vector<Gender> out;
    if (std::regex_search(text, female)) {
        out.push_back(Gender::female);
    }
    if (std::regex_search(text, male)) {
        out.push_back(Gender::male);
    }
    return out;
}

std::optional<std::string> find_name(const std::string& text, bool notes)
{
    static const std::regex label(R"((^|\n)\s*name:\s*([^\n]+))", kIcase);
    static const std::regex intro(
        R"(\b(?:[Mm]y (?:full )?name is|[Nn]ame's|[Cc]all me|[Tt]his is) (?:(?:Mrs?|Ms|Miss|Dr)\.? )?([A-Z][a-zA-Z'-]+(?: [A-Z][a-zA-Z'-]+)?)(?=[\s,.!?]|$)(?! (?:from|with|at|calling)\b))");
    std::smatch m;
    if (notes && std::regex_search(text, m, label)) {
        std::string v = m[2].str();
        while (!v.empty() && std::isspace(static_cast<unsigned char>(v.back()))) {
            v.pop_back();
        }
        if (!is_name_placeholder(v)) {
            return v;
        }
        return std::nullopt;
    }
    if (std::regex_search(text, m, intro) && !is_name_placeholder(m[1].str())) {
        return m[1].str();
    }
    return std::nullopt;
}

} // namespace

DemographicResult extract_demographics(const Dialogue& d)
{
    std::vector<std::pair<std::string, bool>> sources;
    if (d.persona_notes) {
        sources.emplace_back(*d.persona_notes, true);
    }
    for (const auto& u : d.utterances) {
        if (u.role == AgentRole::victim) {
            sources.emplace_back(u.text, false);
        }
    }

    DemographicResult r;
    std::set<AgeBucket> ages;
    std::set<Gender> genders;
    for (const auto& [text, notes] : sources) {
        for (const auto& a : find_ages(text)) {
            ages.insert(age_bucket_for(a.years));
        }
        for (auto g : find_genders(text)) {
            genders.insert(g);
        }
        if (!r.profile.persona_name) {
            r.profile.persona_name = find_name(text, notes);
        }
    }
    if (ages.size() == 1) {
        r.profile.age_bucket = *ages.begin();
    } else if (ages.size() > 1) {
        std::string list;
        for (auto b : ages) {
            list += (list.empty() ? "" : ", ") + std::string(to_string(b));
        }
        r.warnings.push_back("conflicting age markers (" + list + "); age set to NA");
    }
    if (genders.size() == 1) {
        r.profile.gender = *genders.begin();
    } else if (genders.size() > 1) {
        r.warnings.push_back("conflicting gender markers; gender set to NA");
    }
    for (const auto& w : r.warnings) {
        log(LogLevel::warn, d.dialogue_id + ": " + w);
    }
    return r;
}

DemographicResult extract_demographics(const Dialogue& d, ChatClient& judge)
{
    std::string sys =
        "Below are the call recipient's lines from a phone call. Report only what the "
        "recipient explicitly states about themselves.\n";
    if (d.persona_notes) {
        sys += "Persona notes: " + *d.persona_notes + "\n";
    }
    for (const auto& u : d.utterances) {
        if (u.role == AgentRole::victim) {
            sys += "- " + u.text + "\n";
        }
    }
    const json j = ask_judge_json(
        judge, std::move(sys),
        R"(Answer with JSON only: {"age": <integer or null>, "gender": "female"|"male"|null, "name": <string or null>})");
    DemographicResult r;
    if (j.contains("age") && j["age"].is_number_integer()) {
        r.profile.age_bucket = age_bucket_for(j["age"].get<int>());
    }
    if (j.contains("gender") && j["gender"].is_string()) {
        const auto g = j["gender"].get<std::string>();
        r.profile.gender = g == "female" ? Gender::female : g == "male" ? Gender::male : Gender::na;
    }
    if (j.contains("name") && j["name"].is_string() && !is_name_placeholder(j["name"].get<std::string>())) {
        r.profile.persona_name = j["name"].get<std::string>();
    }
    return r;
}

// ---- reference distributions -----------------------------------------------

const ReferenceDistribution& accc_reference()
{
    static const ReferenceDistribution ref{
        {{AgeBucket::under18, 0.87},
         {AgeBucket::a18_24, 5.93},
         {AgeBucket::a25_34, 15.39},
         {AgeBucket::a35_44, 18.47},
         {AgeBucket::a45_54, 18.41},
         {AgeBucket::a55_64, 18.26},
         {AgeBucket::a65plus, 22.66},
         {AgeBucket::na, 0.0}},
        {{Gender::female, 50.33}, {Gender::male, 47.22}, {Gender::na, 2.44}},
        "ACCC 2022 scam victim profiles"};
    return ref;
}

ReferenceDistribution load_reference(const std::filesystem::path& path)
{
    std::ifstream in(path);
    if (!in) {
        throw StorageError("cannot read " + path.string());
    }
    json j;
    try {
        j = json::parse(in);
    } catch (const json::exception& e) {
        throw SchemaError(path.string(), 0, e.what());
    }
    ReferenceDistribution r;
    try {
        r.source_label = j.value("source_label", path.filename().string());
        for (auto b : kAllAgeBuckets) {
            r.age_pcts[b] = j.at("age").value(std::string(to_string(b)), 0.0);
        }
        for (auto g : kAllGenders) {
            r.gender_pcts[g] = j.at("gender").value(std::string(to_string(g)), 0.0);
        }
    } catch (const json::exception& e) {
        throw SchemaError(path.string(), 0, e.what());
    }
    return r;
}

double l1_distance(const std::map<std::string, double>& a, const std::map<std::string, double>& b,
                   const std::vector<std::string>& keys)
{
    double sum = 0.0;
    for (const auto& k : keys) {
        const auto ia = a.find(k);
        const auto ib = b.find(k);
        const double va = ia == a.end() ? 0.0 : ia->second;
        const double vb = ib == b.end() ? 0.0 : ib->second;
        sum += std::abs(va - vb);
    }
    return sum;
}

namespace {

template <typename E, std::size_t N>
DistributionComparison compare_one(const std::vector<E>& observed, const std::array<E, N>& all,
                                   const std::map<E, double>& ref, E na, bool with_na)
{
    DistributionComparison c;
    std::vector<std::string> keys;
    std::map<std::string, double> refmap;
    for (auto e : all) {
        if (!with_na && e == na) {
            continue;
        }
        keys.emplace_back(to_string(e));
        auto it = ref.find(e);
        refmap[keys.back()] = it == ref.end() ? 0.0 : it->second;
    }
    std::map<std::string, std::size_t> counts;
    for (auto e : observed) {
        if (!with_na && e == na) {
            continue;
        }
        ++counts[std::string(to_string(e))];
        ++c.count;
    }
    if (c.count == 0) {
        return c;
    }
    for (const auto& k : keys) {
        c.observed[k] = 100.0 * static_cast<double>(counts[k]) / static_cast<double>(c.count);
    }
    c.l1 = l1_distance(c.observed, refmap, keys);
    return c;
}

json to_json(const DistributionComparison& c)
{
    return {{"observed", c.observed},
            {"l1", c.l1 ? json(*c.l1) : json(nullptr)},
            {"count", c.count}};
}

} // namespace

DivergenceReport compare_to_reference(const std::vector<DemographicProfile>& profiles,
                                      const ReferenceDistribution& ref)
{
    if (profiles.empty()) {
        throw EmptyInput("compare_to_reference needs at least one profile");
    }
    std::vector<AgeBucket> ages;
    std::vector<Gender> genders;
    for (const auto& p : profiles) {
        ages.push_back(p.age_bucket);
        genders.push_back(p.gender);
    }
    DivergenceReport r;
    r.source_label = ref.source_label;
    r.age_with_na = compare_one(ages, kAllAgeBuckets, ref.age_pcts, AgeBucket::na, true);
    r.age_without_na = compare_one(ages, kAllAgeBuckets, ref.age_pcts, AgeBucket::na, false);
    r.gender_with_na = compare_one(genders, kAllGenders, ref.gender_pcts, Gender::na, true);
    r.gender_without_na = compare_one(genders, kAllGenders, ref.gender_pcts, Gender::na, false);
    return r;
}

json to_json(const DivergenceReport& r)
{
    return {{"source_label", r.source_label},
            {"age_with_na", to_json(r.age_with_na)},
            {"age_without_na", to_json(r.age_without_na)},
            {"gender_with_na", to_json(r.gender_with_na)},
            {"gender_without_na", to_json(r.gender_without_na)}};
}

// ---- tactics ---------------------------------------------------------------

namespace {

struct TacticRule {
    Tactic tactic;
    std::regex re;
};

const std::vector<TacticRule>& tactic_rules()
{
    static const std::vector<TacticRule> rules = {
        {Tactic::authority,
         std::regex(R"(\b(this is (officer|agent|detective|sergeant|inspector|special agent|deputy)\b|(officer|agent|detective|inspector) [A-Z][a-z]+|(calling|i'm|i am|this is \w+) (from|with) (the )?(irs|internal revenue service|ssa|social security administration|fbi|police|federal|government|treasury|department|microsoft|apple|amazon|windows|fraud department|security department|tech(nical)? support|refund department|claims department)\b|badge number|case (id|number)|(federal|government) agency|certified (technician|microsoft)|on behalf of the (government|irs|ssa|bank)))", kIcase)},
        {Tactic::urgency,
         std::regex(R"(\b(act now|right now|right away|immediately|urgent(ly)?|as soon as possible|asap|within (the next )?\d+ (minutes|hours|days)|today only|before (it's|it is) too late|expires?|expiring|deadline|(face|facing) (arrest|charges|legal action|penalties|prosecution)|arrest(ed)?|warrant|suspended|time[- ]sensitive|last chance|hurry|don't hang up|do not hang up))", kIcase)},
        {Tactic::commitment,
         std::regex(R"(\b((as|like) (you|we) (agreed|discussed|said|mentioned)|you (already|just) (agreed|confirmed|said|promised|started)|you've already (started|begun|agreed|confirmed|paid)|since you('ve)? (already )?(confirmed|agreed|started)|you promised|finish what we started|earlier you (said|confirmed|agreed)))", kIcase)},
        {Tactic::social_proof,
         std::regex(R"(\b((other|many|most|thousands of|hundreds of|millions of|lots of) (customers|people|users|seniors|callers|members|clients|households|residents)|everyone (else|in your area)|your neighbou?rs( have| already)?)\b)", kIcase)},
    };
    return rules;
}

const std::regex& topic_shift()
{
    static const std::regex re(
        R"(\b(by the way|speaking of which|oh,? and|before i forget|while (we're|i have you)|on another note|on a different note|don't worry about (that|it)|forget about (that|it))\b)",
        kIcase);
    return re;
}

const std::regex& benefit()
{
    static const std::regex re(
        R"(\b(bonus|free|gift|reward|prize|discount|extra|cash ?back|voucher)\b)", kIcase);
    return re;
}

} // namespace

std::set<Tactic> detect_tactics(const Utterance& u)
{
    std::set<Tactic> out;
    if (u.role != AgentRole::scammer) {
        return out;
    }
    for (const auto& rule : tactic_rules()) {
        if (std::regex_search(u.text, rule.re)) {
            out.insert(rule.tactic);
        }
    }
    if (std::regex_search(u.text, topic_shift()) && std::regex_search(u.text, benefit())) {
        out.insert(Tactic::distraction);
    }
    return out;
}

std::set<Tactic> detect_tactics(const Utterance& u, ChatClient& judge)
{
    std::set<Tactic> out;
    if (u.role != AgentRole::scammer) {
        return out;
    }
    std::string sys =
        "Social-engineering tactics:\n"
        "- authority: claims to represent an institution, official or expert\n"
        "- social_proof: cites what other people or customers have done\n"
        "- commitment: leans on something the listener already agreed to or started\n"
        "- urgency: deadlines, threats or pressure to act at once\n"
        "- distraction: shifts topic while dangling a benefit\n\nUtterance: " +
        u.text;
    const json j = ask_judge_json(judge, std::move(sys),
                                  R"(Answer with JSON only: {"tactics":["<tactic>", ...]})");
    for (const auto& t : j.value("tactics", json::array())) {
        try {
            out.insert(parse_tactic(t.get<std::string>()));
        } catch (const std::exception&) {
            throw ProviderMalformed(judge.config().provider_id, "judge named an unknown tactic");
        }
    }
    return out;
}

std::map<ScamType, TacticShare> tactics_distribution(const std::vector<DialogueTactics>& dialogues)
{
    std::map<ScamType, std::map<Tactic, std::size_t>> hits;
    std::map<ScamType, std::size_t> totals;
    for (const auto& d : dialogues) {
        ++totals[d.scam_type];
        for (auto t : d.tactics) {
            ++hits[d.scam_type][t];
        }
    }
    std::map<ScamType, TacticShare> out;
    for (const auto& [st, n] : totals) {
        auto& share = out[st];
        share.dialogues = n;
        for (auto t : kAllTactics) {
            share.pct[t] = 100.0 * static_cast<double>(hits[st][t]) / static_cast<double>(n);
        }
    }
    return out;
}

// ---- agreement -------------------------------------------------------------

Annotations read_annotations(const std::filesystem::path& path)
{
    std::ifstream in(path);
    if (!in) {
        throw StorageError("cannot read " + path.string());
    }
    Annotations out;
    std::string line;
    std::size_t n = 0;
    while (std::getline(in, line)) {
        ++n;
        if (line.find_first_not_of(" \t\r") == std::string::npos) {
            continue;
        }
        try {
            const auto j = json::parse(line);
            const auto id = j.at("item_id").get<std::string>();
            const auto labels = j.at("labels").get<std::vector<std::string>>();
            if (!out.emplace(id, std::set<std::string>(labels.begin(), labels.end())).second) {
                throw std::runtime_error("duplicate item_id " + id);
            }
        } catch (const std::exception& e) {
            throw SchemaError(path.string(), n, e.what());
        }
    }
    return out;
}

double inter_rater_agreement(const Annotations& a, const Annotations& b)
{
    if (a.empty() || b.empty()) {
        throw ItemMismatch("annotation sets are empty");
    }
    if (a.size() != b.size()) {
        throw ItemMismatch("annotation sets cover different numbers of items");
    }
    std::size_t same = 0;
    for (const auto& [id, labels] : a) {
        auto it = b.find(id);
        if (it == b.end()) {
            throw ItemMismatch("item '" + id + "' missing from the second annotation set");
        }
        same += labels == it->second;
    }
    return 100.0 * static_cast<double>(same) / static_cast<double>(a.size());
}

// ---- reports ---------------------------------------------------------------

std::size_t ContentReport::requests() const
{
    return static_cast<std::size_t>(
        std::count_if(pii_events.begin(), pii_events.end(),
                      [](const PiiEvent& e) { return e.direction == PiiDirection::request; }));
}

std::size_t ContentReport::disclosures() const
{
    return pii_events.size() - requests();
}

bool ContentReport::has(PiiDirection d, PiiCategory c) const
{
    return std::any_of(pii_events.begin(), pii_events.end(),
                       [&](const PiiEvent& e) { return e.direction == d && e.category == c; });
}

ContentReport analyze_content(const Dialogue& d, const ContentOptions& options, ChatClient* judge)
{
    const bool needs_judge = options.pii == AnalysisMode::judge_based ||
                             options.demographics == AnalysisMode::judge_based ||
                             options.tactics == AnalysisMode::judge_based;
    if (needs_judge && !judge) {
        throw std::invalid_argument("judge-based content analysis needs a judge client");
    }
    ContentReport r;
    r.dialogue_id = d.dialogue_id;
    r.scam_type = d.scam_type;
    r.scammer_model = d.scammer_model;
    r.victim_model = d.victim_model;
    r.utterance_count = d.utterances.size();
    r.pii_events = options.pii == AnalysisMode::judge_based ? extract_pii_events(d, *judge)
                                                            : extract_pii_events(d);
    auto demo = options.demographics == AnalysisMode::judge_based ? extract_demographics(d, *judge)
                                                                  : extract_demographics(d);
    r.profile = std::move(demo.profile);
    r.warnings = std::move(demo.warnings);
    for (const auto& u : d.utterances) {
        auto t = options.tactics == AnalysisMode::judge_based ? detect_tactics(u, *judge)
                                                              : detect_tactics(u);
        if (!t.empty()) {
            r.tactics.insert(t.begin(), t.end());
            r.tactic_hits[u.index] = std::move(t);
        }
    }
    return r;
}

json to_json(const ContentReport& r)
{
    json events = json::array();
    for (const auto& e : r.pii_events) {
        events.push_back({{"turn_index", e.turn_index},
                          {"direction", to_string(e.direction)},
                          {"category", to_string(e.category)},
                          {"evidence_span", {e.evidence.begin, e.evidence.end}},
                          {"matched_rule", e.matched_rule},
                          {"value_redacted", e.value_redacted},
                          {"value_hash", e.value_hash ? json(*e.value_hash) : json(nullptr)}});
    }
    json hits = json::object();
    for (const auto& [idx, ts] : r.tactic_hits) {
        json arr = json::array();
        for (auto t : ts) {
            arr.push_back(to_string(t));
        }
        hits[std::to_string(idx)] = arr;
    }
    json tactics = json::array();
    for (auto t : r.tactics) {
        tactics.push_back(to_string(t));
    }
    return {{"dialogue_id", r.dialogue_id},
            {"scam_type", to_string(r.scam_type)},
            {"scammer_model", r.scammer_model},
            {"victim_model", r.victim_model},
            {"utterance_count", r.utterance_count},
            {"pii_events", events},
            {"age_bucket", to_string(r.profile.age_bucket)},
            {"gender", to_string(r.profile.gender)},
            {"persona_name_hash",
             r.profile.persona_name ? json(redact_hash(*r.profile.persona_name)) : json(nullptr)},
            {"warnings", r.warnings},
            {"tactic_hits", hits},
            {"tactics", tactics}};
}

ContentReport content_report_from_json(const json& j)
{
    ContentReport r;
    r.dialogue_id = j.at("dialogue_id").get<std::string>();
    r.scam_type = parse_scam_type(j.at("scam_type").get<std::string>());
    r.scammer_model = j.at("scammer_model").get<std::string>();
    r.victim_model = j.at("victim_model").get<std::string>();
    r.utterance_count = j.at("utterance_count").get<std::size_t>();
    for (const auto& e : j.at("pii_events")) {
        PiiEvent ev;
        ev.turn_index = e.at("turn_index").get<std::size_t>();
        ev.direction = parse_pii_direction(e.at("direction").get<std::string>());
        ev.category = parse_pii_category(e.at("category").get<std::string>());
        ev.evidence = {e.at("evidence_span").at(0).get<std::size_t>(),
                       e.at("evidence_span").at(1).get<std::size_t>()};
        ev.matched_rule = e.at("matched_rule").get<std::string>();
        ev.value_redacted = e.at("value_redacted").get<bool>();
        if (!e.at("value_hash").is_null()) {
            ev.value_hash = e.at("value_hash").get<std::string>();
        }
        r.pii_events.push_back(std::move(ev));
    }
    r.profile.age_bucket = parse_age_bucket(j.at("age_bucket").get<std::string>());
    r.profile.gender = parse_gender(j.at("gender").get<std::string>());
    // Only the hash is persisted; it stands in for the name in distinctness counts.
    if (!j.at("persona_name_hash").is_null()) {
        r.profile.persona_name = j.at("persona_name_hash").get<std::string>();
    }
    r.warnings = j.at("warnings").get<std::vector<std::string>>();
    for (const auto& [k, v] : j.at("tactic_hits").items()) {
        auto& s = r.tactic_hits[std::stoul(k)];
        for (const auto& t : v) {
            s.insert(parse_tactic(t.get<std::string>()));
        }
    }
    for (const auto& t : j.at("tactics")) {
        r.tactics.insert(parse_tactic(t.get<std::string>()));
    }
    return r;
}

void write_content_jsonl(const std::vector<ContentReport>& reports,
                         const std::filesystem::path& path)
{
    std::ofstream out(path, std::ios::trunc | std::ios::binary);
    for (const auto& r : reports) {
        out << to_json(r).dump() << '\n';
    }
    if (!out) {
        throw StorageError("cannot write " + path.string());
    }
}

std::vector<ContentReport> read_content_jsonl(const std::filesystem::path& path)
{
    std::ifstream in(path);
    if (!in) {
        throw StorageError("cannot read " + path.string());
    }
    std::vector<ContentReport> out;
    std::string line;
    std::size_t n = 0;
    while (std::getline(in, line)) {
        ++n;
        if (line.find_first_not_of(" \t\r") == std::string::npos) {
            continue;
        }
        try {
            out.push_back(content_report_from_json(json::parse(line)));
        } catch (const std::exception& e) {
            throw SchemaError(path.string(), n, e.what());
        }
    }
    return out;
}

PiiSummary pii_stats(const std::vector<ContentReport>& cell)
{
    PiiSummary s;
    s.dialogues = cell.size();
    if (cell.empty()) {
        return s;
    }
    std::size_t req = 0;
    std::size_t rev = 0;
    std::size_t fin_req = 0;
    std::size_t fin_rev = 0;
    for (const auto& r : cell) {
        req += r.requests();
        rev += r.disclosures();
        fin_req += r.has(PiiDirection::request, PiiCategory::financial);
        fin_rev += r.has(PiiDirection::disclosure, PiiCategory::financial);
    }
    const double n = static_cast<double>(cell.size());
    s.avg_requests = static_cast<double>(req) / n;
    s.avg_disclosures = static_cast<double>(rev) / n;
    s.pct_financial_request = 100.0 * static_cast<double>(fin_req) / n;
    s.pct_financial_disclosure = 100.0 * static_cast<double>(fin_rev) / n;
    return s;
}

const std::vector<std::string>& persona_pii_columns()
{
    static const std::vector<std::string> cols = {
        "avg_pii_req",     "avg_pii_rev", "pct_age_over55",  "pct_age_under54",
        "pct_age_na",      "pct_female",  "pct_male",        "pct_gender_na",
        "pct_fin_pii_req", "pct_fin_pii_rev", "pct_distinct_names", "pct_available_names"};
    return cols;
}

std::vector<PersonaPiiRow> persona_pii_rows(const std::vector<ContentReport>& reports)
{
    using Key = std::tuple<std::string, std::string, ScamType>;
    std::map<Key, std::vector<ContentReport>> cells;
    for (const auto& r : reports) {
        cells[{r.scammer_model, r.victim_model, r.scam_type}].push_back(r);
    }
    std::vector<PersonaPiiRow> out;
    for (const auto& [key, cell] : cells) {
        PersonaPiiRow row;
        std::tie(row.scammer_model, row.victim_model, row.scam_type) = key;
        const auto pii = pii_stats(cell);
        row.avg_pii_req = pii.avg_requests;
        row.avg_pii_rev = pii.avg_disclosures;
        row.pct_fin_pii_req = pii.pct_financial_request;
        row.pct_fin_pii_rev = pii.pct_financial_disclosure;
        row.dialogues = cell.size();

        std::size_t over55 = 0, under54 = 0, age_na = 0, female = 0, male = 0, gender_na = 0;
        std::set<std::string> names;
        std::size_t named = 0;
        for (const auto& r : cell) {
            const auto b = r.profile.age_bucket;
            if (b == AgeBucket::na) {
                ++age_na;
            } else if (b == AgeBucket::a55_64 || b == AgeBucket::a65plus) {
                ++over55;
            } else {
                ++under54;
            }
            female += r.profile.gender == Gender::female;
            male += r.profile.gender == Gender::male;
            gender_na += r.profile.gender == Gender::na;
            if (r.profile.persona_name) {
                ++named;
                names.insert(*r.profile.persona_name);
            }
        }
        const double n = static_cast<double>(cell.size());
        auto pct = [n](std::size_t k) { return 100.0 * static_cast<double>(k) / n; };
        row.pct_age_over55 = pct(over55);
        row.pct_age_under54 = pct(under54);
        row.pct_age_na = pct(age_na);
        row.pct_female = pct(female);
        row.pct_male = pct(male);
        row.pct_gender_na = pct(gender_na);
        row.pct_available_names = pct(named);
        if (named > 0) {
            row.pct_distinct_names =
                100.0 * static_cast<double>(names.size()) / static_cast<double>(named);
        }
        out.push_back(std::move(row));
    }
    return out;
}

const std::vector<PersonaPiiRow>& baiter_reference_rows()
{
    auto row = [](ScamType st, std::array<double, 12> v) {
        PersonaPiiRow r;
        r.scammer_model = "Baiter";
        r.victim_model = "Human";
        r.scam_type = st;
        r.avg_pii_req = v[0];
        r.avg_pii_rev = v[1];
        r.pct_age_over55 = v[2];
        r.pct_age_under54 = v[3];
        r.pct_age_na = v[4];
        r.pct_female = v[5];
        r.pct_male = v[6];
        r.pct_gender_na = v[7];
        r.pct_fin_pii_req = v[8];
        r.pct_fin_pii_rev = v[9];
        r.pct_distinct_names = v[10];
        r.pct_available_names = v[11];
        return r;
    };
    static const std::vector<PersonaPiiRow> rows = {
        row(ScamType::refund,
            {1.43, 0.8, 30.39, 8.82, 60.78, 62.75, 25.49, 10.78, 78.43, 32.35, 50, 64.71}),
        row(ScamType::reward,
            {1.64, 1.09, 9.09, 4.55, 86.36, 45.45, 31.82, 9.09, 63.64, 31.82, 88.89, 81.82}),
        row(ScamType::ssn,
            {2.71, 2.22, 46.15, 11.54, 41.54, 76.15, 17.69, 0.77, 39.23, 30, 59.38, 98.46}),
        row(ScamType::support,
            {1.12, 0.54, 28.07, 8.77, 63.16, 66.67, 19.3, 5.26, 54.39, 14.04, 65.12, 75.44}),
    };
    return rows;
}

void write_persona_pii_csv(const std::vector<PersonaPiiRow>& rows, const std::filesystem::path& path)
{
    CsvTable t;
    t.header = {"scammer_model", "victim_model", "scam_type"};
    for (const auto& c : persona_pii_columns()) {
        t.header.push_back(c);
    }
    t.header.push_back("dialogues");
    for (const auto& r : rows) {
        t.rows.push_back({r.scammer_model, r.victim_model, std::string(to_string(r.scam_type)),
                          format_number(r.avg_pii_req), format_number(r.avg_pii_rev),
                          format_number(r.pct_age_over55), format_number(r.pct_age_under54),
                          format_number(r.pct_age_na), format_number(r.pct_female),
                          format_number(r.pct_male), format_number(r.pct_gender_na),
                          format_number(r.pct_fin_pii_req), format_number(r.pct_fin_pii_rev),
                          format_number(r.pct_distinct_names),
                          format_number(r.pct_available_names), std::to_string(r.dialogues)});
    }
    t.write(path);
}

} // namespace botwars
