#pragma once

#include "botwars/dialogue.hpp"
#include "botwars/gateway.hpp"

#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

namespace botwars {

struct DomainError : std::domain_error {
    using std::domain_error::domain_error;
};

struct BackendFailure : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// ---- step scores -----------------------------------------------------------

inline constexpr std::size_t kLengthBest = 30;
inline constexpr std::size_t kLengthFair = 45;
inline constexpr double kRepetitionBest = 0.85;
inline constexpr double kRepetitionFair = 0.60;
inline constexpr std::size_t kDurationBest = 20;
inline constexpr std::size_t kDurationFair = 10;

int score_length_words(std::size_t word_count);
int score_length(const Utterance& response);

// Throws DomainError outside [0, 1].
int score_repetition(double rep_raw);

int score_duration_turns(std::size_t turns);
int score_duration(const Dialogue& dialogue);

// ---- similarity ------------------------------------------------------------

// Jaccard index of lower-cased whitespace-token sets.
double lexical_similarity(std::string_view a, std::string_view b);

class SimilarityBackend {
public:
    virtual ~SimilarityBackend() = default;
    virtual std::string name() const = 0;
    // Full n x n matrix, row-major. Entries in [0, 1].
    virtual std::vector<std::vector<double>> matrix(const std::vector<std::string>& responses) = 0;
};

class LexicalSimilarity final : public SimilarityBackend {
public:
    std::string name() const override { return "lexical"; }
    std::vector<std::vector<double>> matrix(const std::vector<std::string>& responses) override;
};

// Asks a judge model for a similarity in [0, 1]. Queries i < j only; the
// diagonal is 1 and the lower triangle mirrors the upper one.
class JudgeSimilarity final : public SimilarityBackend {
public:
    explicit JudgeSimilarity(std::unique_ptr<ChatClient> judge);
    std::string name() const override { return "judge"; }
    std::vector<std::vector<double>> matrix(const std::vector<std::string>& responses) override;

    double query(const std::string& a, const std::string& b);

private:
    std::unique_ptr<ChatClient> judge_;
};

// First standalone decimal in [0, 1] ("0", "1", "0.35", "1.0").
std::optional<double> parse_similarity(std::string_view raw);

enum class DiagonalMode { include, exclude };

// 1 - (1/n^2) * sum_{i,j} sim(r_i, r_j). With DiagonalMode::exclude the sum
// runs over i != j and is normalized by n(n-1); a single response then scores 1.
// Throws std::invalid_argument on empty input.
double repetition_measure(const std::vector<std::string>& responses, SimilarityBackend& backend,
                          DiagonalMode mode = DiagonalMode::include);

// ---- reports ---------------------------------------------------------------

enum class RepetitionScope { per_role, dialogue };

struct QuantOptions {
    RepetitionScope scope = RepetitionScope::per_role;
    DiagonalMode diagonal = DiagonalMode::include;
};

struct RepetitionResult {
    double raw = 0.0;
    int score = 1;
    std::size_t n = 0;
};

struct QuantReport {
    std::string dialogue_id;
    ScamType scam_type = ScamType::support;
    std::string scammer_model;
    std::string victim_model;
    std::size_t turn_count = 0;
    std::vector<int> length_scores;      // one per utterance, in order
    std::vector<AgentRole> speakers;     // parallel to length_scores
    // Keyed by role under per_role scope; a single entry keyed "dialogue" otherwise.
    std::map<std::string, RepetitionResult> repetition;
    int duration_score = 1;
};

QuantReport evaluate_quant(const Dialogue& d, SimilarityBackend& backend,
                           const QuantOptions& options = {});

nlohmann::json to_json(const QuantReport& r);
QuantReport quant_report_from_json(const nlohmann::json& j);

struct QuantCell {
    std::string scammer_model;
    std::string victim_model;
    ScamType scam_type = ScamType::support;
    std::optional<double> mean_len_score;
    std::optional<double> mean_rep_score;
    double mean_dur_score = 0.0;
    double mean_turns = 0.0;
    std::size_t dialogues = 0;
};

// Cells are ordered by (scammer_model, victim_model, scam_type).
std::vector<QuantCell> aggregate_quant(const std::vector<QuantReport>& reports);

// Per-role means across the models that played that role.
struct QuantRoleRow {
    AgentRole role = AgentRole::scammer;
    std::string model;
    std::string metric; // "word_count" or "repetition"
    std::optional<double> mean_score;
    std::size_t n = 0;
};

std::vector<QuantRoleRow> aggregate_quant_roles(const std::vector<QuantReport>& reports);

void write_quant_jsonl(const std::vector<QuantReport>& reports, const std::filesystem::path& path);
std::vector<QuantReport> read_quant_jsonl(const std::filesystem::path& path);
void write_quant_cells_csv(const std::vector<QuantCell>& cells, const std::filesystem::path& path);
void write_quant_roles_csv(const std::vector<QuantRoleRow>& rows, const std::filesystem::path& path);

} // namespace botwars
