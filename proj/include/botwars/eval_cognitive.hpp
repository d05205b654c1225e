#pragma once

#include "botwars/dialogue.hpp"
#include "botwars/gateway.hpp"
#include "botwars/prompt.hpp"

#include <array>
#include <filesystem>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

namespace botwars {

enum class CognitiveMetric { coherence, naturalness, engagingness };

inline constexpr std::array<CognitiveMetric, 3> kAllCognitiveMetrics = {
    CognitiveMetric::coherence, CognitiveMetric::naturalness, CognitiveMetric::engagingness};

std::string_view to_string(CognitiveMetric m);
CognitiveMetric parse_cognitive_metric(std::string_view s);

// Rubric text per metric. Defaults are compiled in; a directory holding
// <metric>.txt files overrides individual entries.
class RubricSet {
public:
    RubricSet();
    static RubricSet load(const std::filesystem::path& directory);

    const std::string& text(CognitiveMetric m) const;
    void set(CognitiveMetric m, std::string text);

private:
    std::map<CognitiveMetric, std::string> texts_;
};

const std::string& default_rubric(CognitiveMetric m);

struct JudgeOptions {
    bool include_scam_type = true;
    double temperature = 0.0;
    // Independent samples per verdict, combined by majority vote.
    int samples = 1;
};

// h_t is every utterance of `dialogue` with index below response.index.
// Throws std::invalid_argument if the response is not part of the dialogue.
PromptBundle build_judge_prompt(CognitiveMetric metric, const Utterance& response,
                                const Dialogue& dialogue, const RubricSet& rubrics = {},
                                const JudgeOptions& options = {});

inline constexpr std::string_view kJudgeInstruction =
    "Rate the reply. Answer with a single digit: 1, 2 or 3.";
inline constexpr std::string_view kJudgeRetryInstruction =
    "Your previous answer could not be read. Reply with exactly one character, 1, 2 or 3, "
    "and nothing else.";

// First character in {1,2,3} that is not part of a longer number or word.
std::optional<int> parse_judge_score(std::string_view raw);

struct JudgeVerdict {
    std::string dialogue_id;
    CognitiveMetric metric = CognitiveMetric::coherence;
    std::size_t turn_index = 0; // utterance index of the judged response
    AgentRole role = AgentRole::scammer;
    int score = 0;
    std::string raw_output;
    std::string judge_model;

    friend bool operator==(const JudgeVerdict&, const JudgeVerdict&) = default;
};

class JudgeOutputUnparseable : public std::runtime_error {
public:
    explicit JudgeOutputUnparseable(std::vector<std::string> outputs);
    const std::vector<std::string>& outputs() const { return outputs_; }

private:
    std::vector<std::string> outputs_;
};

struct DuplicateVerdict : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Throws ConfigInvalid when the provider may not act as a judge. Provider
// errors propagate unchanged.
void check_judge_policy(const ProviderConfig& judge);

JudgeVerdict judge_utterance(ChatClient& judge, CognitiveMetric metric, const Utterance& response,
                             const Dialogue& dialogue, const RubricSet& rubrics = {},
                             const JudgeOptions& options = {});

struct MetricMean {
    std::optional<double> mean;
    std::size_t count = 0;
};

struct CognitiveSummary {
    std::string dialogue_id;
    std::map<std::pair<AgentRole, CognitiveMetric>, MetricMean> means;
    // Utterance indices without a verdict, per metric.
    std::map<CognitiveMetric, std::vector<std::size_t>> missing;

    const MetricMean& at(AgentRole role, CognitiveMetric metric) const;
};

CognitiveSummary aggregate_cognitive(const std::vector<JudgeVerdict>& verdicts,
                                     const Dialogue& dialogue);

// Scores every utterance of a dialogue on every metric.
std::vector<JudgeVerdict> judge_dialogue(ChatClient& judge, const Dialogue& dialogue,
                                         const RubricSet& rubrics = {},
                                         const JudgeOptions& options = {});

nlohmann::json to_json(const JudgeVerdict& v);
JudgeVerdict verdict_from_json(const nlohmann::json& j);

void write_verdicts_jsonl(const std::vector<JudgeVerdict>& verdicts,
                          const std::filesystem::path& path);
std::vector<JudgeVerdict> read_verdicts_jsonl(const std::filesystem::path& path);

struct CognitiveRow {
    std::string scammer_model;
    std::string victim_model;
    ScamType scam_type = ScamType::support;
    AgentRole role = AgentRole::scammer;
    CognitiveMetric metric = CognitiveMetric::coherence;
    std::optional<double> mean_score;
    std::size_t n = 0;
};

// One row per (cell, role, metric). `dialogues` supplies model and scam-type keys.
std::vector<CognitiveRow> aggregate_cognitive_cells(const std::vector<JudgeVerdict>& verdicts,
                                                    const std::vector<Dialogue>& dialogues);

void write_cognitive_csv(const std::vector<CognitiveRow>& rows, const std::filesystem::path& path);

} // namespace botwars
