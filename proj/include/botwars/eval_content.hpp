#pragma once

#include "botwars/dialogue.hpp"
#include "botwars/gateway.hpp"

#include <array>
#include <filesystem>
#include <map>
#include <optional>
#include <set>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

namespace botwars {

enum class PiiCategory { identity, financial, personal, contact, authentication };
enum class PiiDirection { request, disclosure };
enum class Tactic { authority, social_proof, commitment, urgency, distraction };
enum class AgeBucket { under18, a18_24, a25_34, a35_44, a45_54, a55_64, a65plus, na };
enum class Gender { female, male, na };
enum class AnalysisMode { rule_based, judge_based };

inline constexpr std::array<PiiCategory, 5> kAllPiiCategories = {
    PiiCategory::identity, PiiCategory::financial, PiiCategory::personal, PiiCategory::contact,
    PiiCategory::authentication};
inline constexpr std::array<Tactic, 5> kAllTactics = {Tactic::authority, Tactic::social_proof,
                                                      Tactic::commitment, Tactic::urgency,
                                                      Tactic::distraction};
inline constexpr std::array<AgeBucket, 8> kAllAgeBuckets = {
    AgeBucket::under18, AgeBucket::a18_24, AgeBucket::a25_34, AgeBucket::a35_44,
    AgeBucket::a45_54,  AgeBucket::a55_64, AgeBucket::a65plus, AgeBucket::na};
inline constexpr std::array<Gender, 3> kAllGenders = {Gender::female, Gender::male, Gender::na};

std::string_view to_string(PiiCategory c);
std::string_view to_string(PiiDirection d);
std::string_view to_string(Tactic t);
std::string_view to_string(AgeBucket b);
std::string_view to_string(Gender g);
PiiCategory parse_pii_category(std::string_view s);
PiiDirection parse_pii_direction(std::string_view s);
Tactic parse_tactic(std::string_view s);
AgeBucket parse_age_bucket(std::string_view s);
Gender parse_gender(std::string_view s);
AnalysisMode parse_analysis_mode(std::string_view s);

AgeBucket age_bucket_for(int years);

struct EmptyInput : std::invalid_argument {
    using std::invalid_argument::invalid_argument;
};

struct ItemMismatch : std::invalid_argument {
    using std::invalid_argument::invalid_argument;
};

// Stable digest used wherever a disclosed value must be kept out of reports.
std::string redact_hash(std::string_view value);

// ---- PII -------------------------------------------------------------------

struct Span {
    std::size_t begin = 0;
    std::size_t end = 0; // exclusive

    friend bool operator==(const Span&, const Span&) = default;
};

struct PiiEvent {
    std::size_t turn_index = 0; // utterance index
    PiiDirection direction = PiiDirection::request;
    PiiCategory category = PiiCategory::identity;
    Span evidence;
    std::string matched_rule;
    bool value_redacted = false;
    std::optional<std::string> value_hash;
};

bool luhn_valid(std::string_view digits);

// Rule-based events for one utterance. Requests come only from scammer
// utterances and disclosures only from victim utterances; at most one event
// per category.
std::vector<PiiEvent> extract_pii_events(const Utterance& u);

std::vector<PiiEvent> extract_pii_events(const Dialogue& d);

// Judge-based extraction; the judge returns {"items":[{"category":..,"quote":..}]}.
std::vector<PiiEvent> extract_pii_events(const Dialogue& d, ChatClient& judge);

// ---- demographics ----------------------------------------------------------

struct DemographicProfile {
    AgeBucket age_bucket = AgeBucket::na;
    Gender gender = Gender::na;
    std::optional<std::string> persona_name;

    friend bool operator==(const DemographicProfile&, const DemographicProfile&) = default;
};

struct DemographicResult {
    DemographicProfile profile;
    // Conflicting explicit markers; the affected field is NA.
    std::vector<std::string> warnings;
};

DemographicResult extract_demographics(const Dialogue& d);
DemographicResult extract_demographics(const Dialogue& d, ChatClient& judge);

// Persona name placeholders such as "[NAME]" or "<victim name>" count as unavailable.
bool is_name_placeholder(std::string_view name);

struct ReferenceDistribution {
    std::map<AgeBucket, double> age_pcts;
    std::map<Gender, double> gender_pcts;
    std::string source_label;
};

const ReferenceDistribution& accc_reference();
// JSON: {"source_label": .., "age": {"under18": ..}, "gender": {"female": ..}}
ReferenceDistribution load_reference(const std::filesystem::path& path);

struct DistributionComparison {
    // Observed percentages; empty when `count` is 0.
    std::map<std::string, double> observed;
    std::optional<double> l1;
    std::size_t count = 0;
};

struct DivergenceReport {
    std::string source_label;
    DistributionComparison age_with_na;
    DistributionComparison age_without_na;
    DistributionComparison gender_with_na;
    DistributionComparison gender_without_na;
};

// Sum of |a[k] - b[k]| over `keys`; absent keys count as 0.
double l1_distance(const std::map<std::string, double>& a, const std::map<std::string, double>& b,
                   const std::vector<std::string>& keys);

// Throws EmptyInput when `profiles` is empty.
DivergenceReport compare_to_reference(const std::vector<DemographicProfile>& profiles,
                                      const ReferenceDistribution& ref);

nlohmann::json to_json(const DivergenceReport& r);

// ---- tactics ---------------------------------------------------------------

// Victim utterances always yield the empty set.
std::set<Tactic> detect_tactics(const Utterance& u);
std::set<Tactic> detect_tactics(const Utterance& u, ChatClient& judge);

struct DialogueTactics {
    ScamType scam_type = ScamType::support;
    std::set<Tactic> tactics;
};

struct TacticShare {
    std::map<Tactic, double> pct;
    std::size_t dialogues = 0;
};

// Percentage of dialogues per scam type with at least one hit of each tactic.
std::map<ScamType, TacticShare> tactics_distribution(const std::vector<DialogueTactics>& dialogues);

// ---- agreement -------------------------------------------------------------

using Annotations = std::map<std::string, std::set<std::string>>;

// JSONL records {"item_id": .., "labels": [..]}. Throws SchemaError.
Annotations read_annotations(const std::filesystem::path& path);

// 100 * (#items with identical label sets) / #items. Throws ItemMismatch when
// the item ids differ or there are none.
double inter_rater_agreement(const Annotations& a, const Annotations& b);

// ---- per-dialogue report and cell statistics -------------------------------

struct ContentReport {
    std::string dialogue_id;
    ScamType scam_type = ScamType::support;
    std::string scammer_model;
    std::string victim_model;
    std::size_t utterance_count = 0;
    std::vector<PiiEvent> pii_events;
    DemographicProfile profile;
    std::vector<std::string> warnings;
    std::map<std::size_t, std::set<Tactic>> tactic_hits; // utterance index -> tactics
    std::set<Tactic> tactics;

    std::size_t requests() const;
    std::size_t disclosures() const;
    bool has(PiiDirection d, PiiCategory c) const;
};

struct ContentOptions {
    AnalysisMode pii = AnalysisMode::rule_based;
    AnalysisMode demographics = AnalysisMode::rule_based;
    AnalysisMode tactics = AnalysisMode::rule_based;
};

// `judge` is required when any option is judge_based.
ContentReport analyze_content(const Dialogue& d, const ContentOptions& options = {},
                              ChatClient* judge = nullptr);

// The persona name is stored only as a hash.
nlohmann::json to_json(const ContentReport& r);
ContentReport content_report_from_json(const nlohmann::json& j);

void write_content_jsonl(const std::vector<ContentReport>& reports,
                         const std::filesystem::path& path);
std::vector<ContentReport> read_content_jsonl(const std::filesystem::path& path);

struct PiiSummary {
    double avg_requests = 0.0;
    double avg_disclosures = 0.0;
    double pct_financial_request = 0.0;
    double pct_financial_disclosure = 0.0;
    std::size_t dialogues = 0;
};

PiiSummary pii_stats(const std::vector<ContentReport>& cell);

// One row of the demographic/PII summary table.
struct PersonaPiiRow {
    std::string scammer_model;
    std::string victim_model;
    ScamType scam_type = ScamType::support;
    double avg_pii_req = 0.0;
    double avg_pii_rev = 0.0;
    double pct_age_over55 = 0.0;
    double pct_age_under54 = 0.0;
    double pct_age_na = 0.0;
    double pct_female = 0.0;
    double pct_male = 0.0;
    double pct_gender_na = 0.0;
    double pct_fin_pii_req = 0.0;
    double pct_fin_pii_rev = 0.0;
    std::optional<double> pct_distinct_names;
    double pct_available_names = 0.0;
    std::size_t dialogues = 0;
};

const std::vector<std::string>& persona_pii_columns();

// Rows ordered by (scammer_model, victim_model, scam_type).
std::vector<PersonaPiiRow> persona_pii_rows(const std::vector<ContentReport>& reports);

// Human scam-baiter reference rows, one per scam type.
const std::vector<PersonaPiiRow>& baiter_reference_rows();

void write_persona_pii_csv(const std::vector<PersonaPiiRow>& rows, const std::filesystem::path& path);

} // namespace botwars
