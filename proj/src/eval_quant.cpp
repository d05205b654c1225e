#include "botwars/eval_quant.hpp"

#include "botwars/csv.hpp"
#include "botwars/transcript.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <regex>
#include <set>
#include <tuple>

namespace botwars {

using nlohmann::json;

int score_length_words(std::size_t word_count)
{
    if (word_count <= kLengthBest) {
        return 3;
    }
    if (word_count <= kLengthFair) {
        return 2;
    }
    return 1;
}

int score_length(const Utterance& response)
{
    return score_length_words(response.word_count);
}

int score_repetition(double rep_raw)
{
    if (!(rep_raw >= 0.0 && rep_raw <= 1.0)) {
        throw DomainError("repetition value outside [0, 1]");
    }
    if (rep_raw >= kRepetitionBest) {
        return 3;
    }
    if (rep_raw >= kRepetitionFair) {
        return 2;
    }
    return 1;
}

int score_duration_turns(std::size_t turns)
{
    if (turns >= kDurationBest) {
        return 3;
    }
    if (turns >= kDurationFair) {
        return 2;
    }
    return 1;
}

int score_duration(const Dialogue& dialogue)
{
    return score_duration_turns(dialogue.turn_count());
}

// ---- similarity ------------------------------------------------------------

namespace {

std::set<std::string> token_set(std::string_view s)
{
    std::set<std::string> out;
    for (auto tok : whitespace_tokens(s)) {
        std::string t(tok);
        std::transform(t.begin(), t.end(), t.begin(),
                       [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
        out.insert(std::move(t));
    }
    return out;
}

double jaccard(const std::set<std::string>& a, const std::set<std::string>& b)
{
    if (a.empty() && b.empty()) {
        return 1.0;
    }
    if (a.empty() || b.empty()) {
        return 0.0;
    }
    std::size_t common = 0;
    for (const auto& t : a) {
        common += b.count(t);
    }
    const std::size_t uni = a.size() + b.size() - common;
    return static_cast<double>(common) / static_cast<double>(uni);
}

} // namespace

double lexical_similarity(std::string_view a, std::string_view b)
{
    return jaccard(token_set(a), token_set(b));
}

std::vector<std::vector<double>> LexicalSimilarity::matrix(const std::vector<std::string>& responses)
{
    std::vector<std::set<std::string>> sets;
    sets.reserve(responses.size());
    for (const auto& r : responses) {
        sets.push_back(token_set(r));
    }
    const auto n = responses.size();
    std::vector<std::vector<double>> m(n, std::vector<double>(n, 0.0));
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = i; j < n; ++j) {
            m[i][j] = m[j][i] = jaccard(sets[i], sets[j]);
        }
    }
    return m;
}

std::optional<double> parse_similarity(std::string_view raw)
{
    static const std::regex re(R"((^|[^0-9.])(0(\.[0-9]+)?|1(\.0+)?|\.[0-9]+)(?![0-9.]))");
    const std::string s(raw);
    std::smatch m;
    if (!std::regex_search(s, m, re)) {
        return std::nullopt;
    }
    return std::stod(m[2].str());
}

JudgeSimilarity::JudgeSimilarity(std::unique_ptr<ChatClient> judge) : judge_(std::move(judge))
{
    if (!judge_) {
        throw std::invalid_argument("judge similarity backend needs a client");
    }
}

double JudgeSimilarity::query(const std::string& a, const std::string& b)
{
    PromptBundle bundle;
    bundle.system_text =
        "You compare two replies from a phone conversation and rate how similar they are "
        "in meaning, on a scale from 0 (unrelated) to 1 (same content).\n\n"
        "Reply A: " + a + "\nReply B: " + b;
    bundle.directives.temperature = 0.0;
    bundle.instruction = "Answer with one number between 0 and 1.";
    try {
        for (int attempt = 0; attempt < 2; ++attempt) {
            const auto ex = judge_->complete(bundle);
            if (auto v = parse_similarity(ex.response.content)) {
                return *v;
            }
            bundle.instruction = "Output only a decimal number between 0 and 1, nothing else.";
        }
    } catch (const ProviderError& e) {
        throw BackendFailure(std::string("similarity judge failed: ") + e.what());
    }
    throw BackendFailure("similarity judge output unparseable");
}

std::vector<std::vector<double>> JudgeSimilarity::matrix(const std::vector<std::string>& responses)
{
    const auto n = responses.size();
    std::vector<std::vector<double>> m(n, std::vector<double>(n, 1.0));
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = i + 1; j < n; ++j) {
            m[i][j] = m[j][i] = query(responses[i], responses[j]);
        }
    }
    return m;
}

double repetition_measure(const std::vector<std::string>& responses, SimilarityBackend& backend,
                          DiagonalMode mode)
{
    const auto n = responses.size();
    if (n == 0) {
        throw std::invalid_argument("repetition needs at least one response");
    }
    if (mode == DiagonalMode::exclude && n == 1) {
        return 1.0;
    }
    const auto m = backend.matrix(responses);
    double sum = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < n; ++j) {
            if (mode == DiagonalMode::exclude && i == j) {
                continue;
            }
            const double s = m[i][j];
            if (!(s >= 0.0 && s <= 1.0)) {
                throw BackendFailure("similarity outside [0, 1] from " + backend.name());
            }
            sum += s;
        }
    }
    const double nn = static_cast<double>(n);
    const double denom = mode == DiagonalMode::include ? nn * nn : nn * (nn - 1.0);
    return std::clamp(1.0 - sum / denom, 0.0, 1.0);
}

// ---- reports ---------------------------------------------------------------

QuantReport evaluate_quant(const Dialogue& d, SimilarityBackend& backend, const QuantOptions& options)
{
    QuantReport r;
    r.dialogue_id = d.dialogue_id;
    r.scam_type = d.scam_type;
    r.scammer_model = d.scammer_model;
    r.victim_model = d.victim_model;
    r.turn_count = d.turn_count();
    r.duration_score = score_duration(d);

    std::map<std::string, std::vector<std::string>> groups;
    for (const auto& u : d.utterances) {
        r.length_scores.push_back(score_length(u));
        r.speakers.push_back(u.role);
        const std::string key = options.scope == RepetitionScope::per_role
                                    ? std::string(to_string(u.role))
                                    : std::string("dialogue");
        groups[key].push_back(u.text);
    }
    for (const auto& [key, texts] : groups) {
        RepetitionResult rr;
        rr.raw = repetition_measure(texts, backend, options.diagonal);
        rr.score = score_repetition(rr.raw);
        rr.n = texts.size();
        r.repetition[key] = rr;
    }
    return r;
}

json to_json(const QuantReport& r)
{
    json speakers = json::array();
    for (auto s : r.speakers) {
        speakers.push_back(to_string(s));
    }
    json rep = json::object();
    for (const auto& [k, v] : r.repetition) {
        rep[k] = {{"repetition_raw", v.raw}, {"repetition_score", v.score}, {"n", v.n}};
    }
    return {{"dialogue_id", r.dialogue_id},
            {"scam_type", to_string(r.scam_type)},
            {"scammer_model", r.scammer_model},
            {"victim_model", r.victim_model},
            {"turn_count", r.turn_count},
            {"length_scores", r.length_scores},
            {"speakers", speakers},
            {"repetition", rep},
            {"duration_score", r.duration_score}};
}

QuantReport quant_report_from_json(const json& j)
{
    QuantReport r;
    r.dialogue_id = j.at("dialogue_id").get<std::string>();
    r.scam_type = parse_scam_type(j.at("scam_type").get<std::string>());
    r.scammer_model = j.at("scammer_model").get<std::string>();
    r.victim_model = j.at("victim_model").get<std::string>();
    r.turn_count = j.at("turn_count").get<std::size_t>();
    r.length_scores = j.at("length_scores").get<std::vector<int>>();
    for (const auto& s : j.at("speakers")) {
        r.speakers.push_back(parse_agent_role(s.get<std::string>()));
    }
    for (const auto& [k, v] : j.at("repetition").items()) {
        RepetitionResult rr;
        rr.raw = v.at("repetition_raw").get<double>();
        rr.score = v.at("repetition_score").get<int>();
        rr.n = v.at("n").get<std::size_t>();
        r.repetition[k] = rr;
    }
    r.duration_score = j.at("duration_score").get<int>();
    return r;
}

namespace {

struct Mean {
    double sum = 0.0;
    std::size_t n = 0;
    void add(double v)
    {
        sum += v;
        ++n;
    }
    std::optional<double> value() const
    {
        if (n == 0) {
            return std::nullopt;
        }
        return sum / static_cast<double>(n);
    }
};

} // namespace

std::vector<QuantCell> aggregate_quant(const std::vector<QuantReport>& reports)
{
    using Key = std::tuple<std::string, std::string, ScamType>;
    struct Acc {
        Mean len, rep, dur, turns;
    };
    std::map<Key, Acc> acc;
    for (const auto& r : reports) {
        auto& a = acc[{r.scammer_model, r.victim_model, r.scam_type}];
        for (int s : r.length_scores) {
            a.len.add(s);
        }
        for (const auto& [k, v] : r.repetition) {
            a.rep.add(v.score);
        }
        a.dur.add(r.duration_score);
        a.turns.add(static_cast<double>(r.turn_count));
    }
    std::vector<QuantCell> out;
    for (const auto& [key, a] : acc) {
        QuantCell c;
        std::tie(c.scammer_model, c.victim_model, c.scam_type) = key;
        c.mean_len_score = a.len.value();
        c.mean_rep_score = a.rep.value();
        c.mean_dur_score = a.dur.value().value_or(0.0);
        c.mean_turns = a.turns.value().value_or(0.0);
        c.dialogues = a.dur.n;
        out.push_back(std::move(c));
    }
    return out;
}

std::vector<QuantRoleRow> aggregate_quant_roles(const std::vector<QuantReport>& reports)
{
    using Key = std::tuple<AgentRole, std::string, std::string>;
    std::map<Key, Mean> acc;
    for (const auto& r : reports) {
        for (std::size_t i = 0; i < r.length_scores.size(); ++i) {
            const auto role = r.speakers.at(i);
            const auto& model = role == AgentRole::scammer ? r.scammer_model : r.victim_model;
            acc[{role, model, "word_count"}].add(r.length_scores[i]);
        }
        for (auto role : {AgentRole::scammer, AgentRole::victim}) {
            auto it = r.repetition.find(std::string(to_string(role)));
            if (it == r.repetition.end()) {
                continue;
            }
            const auto& model = role == AgentRole::scammer ? r.scammer_model : r.victim_model;
            acc[{role, model, "repetition"}].add(it->second.score);
        }
    }
    std::vector<QuantRoleRow> out;
    for (const auto& [key, m] : acc) {
        QuantRoleRow row;
        std::tie(row.role, row.model, row.metric) = key;
        row.mean_score = m.value();
        row.n = m.n;
        out.push_back(std::move(row));
    }
    return out;
}

void write_quant_jsonl(const std::vector<QuantReport>& reports, const std::filesystem::path& path)
{
    std::ofstream out(path, std::ios::trunc | std::ios::binary);
    for (const auto& r : reports) {
        out << to_json(r).dump() << '\n';
    }
    if (!out) {
        throw StorageError("cannot write " + path.string());
    }
}

std::vector<QuantReport> read_quant_jsonl(const std::filesystem::path& path)
{
    std::ifstream in(path);
    if (!in) {
        throw StorageError("cannot read " + path.string());
    }
    std::vector<QuantReport> out;
    std::string line;
    std::size_t n = 0;
    while (std::getline(in, line)) {
        ++n;
        if (line.find_first_not_of(" \t\r") == std::string::npos) {
            continue;
        }
        try {
            out.push_back(quant_report_from_json(json::parse(line)));
        } catch (const std::exception& e) {
            throw SchemaError(path.string(), n, e.what());
        }
    }
    return out;
}

void write_quant_cells_csv(const std::vector<QuantCell>& cells, const std::filesystem::path& path)
{
    CsvTable t;
    t.header = {"scammer_model", "victim_model",   "scam_type", "mean_len_score",
                "mean_rep_score", "mean_dur_score", "mean_turns"};
    for (const auto& c : cells) {
        t.rows.push_back({c.scammer_model, c.victim_model, std::string(to_string(c.scam_type)),
                          format_number(c.mean_len_score), format_number(c.mean_rep_score),
                          format_number(c.mean_dur_score), format_number(c.mean_turns)});
    }
    t.write(path);
}

void write_quant_roles_csv(const std::vector<QuantRoleRow>& rows, const std::filesystem::path& path)
{
    CsvTable t;
    t.header = {"role", "model", "metric", "mean_score", "n"};
    for (const auto& r : rows) {
        t.rows.push_back({std::string(to_string(r.role)), r.model, r.metric,
                          format_number(r.mean_score), std::to_string(r.n)});
    }
    t.write(path);
}

} // namespace botwars
