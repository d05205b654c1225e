#include "botwars/transcript.hpp"

#include <set>

namespace botwars {

using nlohmann::json;

SchemaError::SchemaError(std::string source, std::size_t line, const std::string& what)
    : std::runtime_error(source + ": line " + std::to_string(line) + ": " + what),
      source_(std::move(source)),
      line_(line)
{}

namespace {

json optional_string(const std::optional<std::string>& s)
{
    return s ? json(*s) : json(nullptr);
}

void expect_keys(const json& j, const std::set<std::string>& keys, std::string_view what)
{
    if (!j.is_object()) {
        throw std::invalid_argument(std::string(what) + " must be an object");
    }
    for (const auto& k : keys) {
        if (!j.contains(k)) {
            throw std::invalid_argument(std::string(what) + " missing field '" + k + "'");
        }
    }
    for (const auto& [k, v] : j.items()) {
        if (!keys.count(k)) {
            throw std::invalid_argument(std::string(what) + " has unknown field '" + k + "'");
        }
    }
}

const std::string& get_string(const json& j, const char* key)
{
    const auto& v = j.at(key);
    if (!v.is_string()) {
        throw std::invalid_argument(std::string("field '") + key + "' must be a string");
    }
    return v.get_ref<const std::string&>();
}

std::optional<std::string> get_optional_string(const json& j, const char* key)
{
    const auto& v = j.at(key);
    if (v.is_null()) {
        return std::nullopt;
    }
    if (!v.is_string()) {
        throw std::invalid_argument(std::string("field '") + key + "' must be a string or null");
    }
    return v.get<std::string>();
}

std::size_t get_count(const json& j, const char* key)
{
    const auto& v = j.at(key);
    if (!v.is_number_unsigned()) {
        throw std::invalid_argument(std::string("field '") + key +
                                    "' must be a non-negative integer");
    }
    return v.get<std::size_t>();
}

} // namespace

json to_json(const Utterance& u)
{
    return json{{"index", u.index},
                {"role", to_string(u.role)},
                {"text", u.text},
                {"word_count", u.word_count},
                {"reasoning", optional_string(u.reasoning)},
                {"timestamp", format_iso8601(u.timestamp)}};
}

json to_json(const Dialogue& d)
{
    json utterances = json::array();
    for (const auto& u : d.utterances) {
        utterances.push_back(to_json(u));
    }
    return json{{"dialogue_id", d.dialogue_id},
                {"scam_type", to_string(d.scam_type)},
                {"scammer_model", d.scammer_model},
                {"victim_model", d.victim_model},
                {"termination", d.termination ? json(to_string(*d.termination)) : json(nullptr)},
                {"persona_notes", optional_string(d.persona_notes)},
                {"utterances", std::move(utterances)}};
}

Dialogue dialogue_from_json(const json& j)
{
    expect_keys(j,
                {"dialogue_id", "scam_type", "scammer_model", "victim_model", "termination",
                 "persona_notes", "utterances"},
                "dialogue");
    Dialogue d;
    d.dialogue_id = get_string(j, "dialogue_id");
    d.scam_type = parse_scam_type(get_string(j, "scam_type"));
    d.scammer_model = get_string(j, "scammer_model");
    d.victim_model = get_string(j, "victim_model");
    if (auto t = get_optional_string(j, "termination")) {
        d.termination = parse_termination(*t);
    }
    d.persona_notes = get_optional_string(j, "persona_notes");

    const auto& us = j.at("utterances");
    if (!us.is_array()) {
        throw std::invalid_argument("field 'utterances' must be an array");
    }
    for (const auto& uj : us) {
        expect_keys(uj, {"index", "role", "text", "word_count", "reasoning", "timestamp"},
                    "utterance");
        Utterance u;
        u.index = get_count(uj, "index");
        u.role = parse_agent_role(get_string(uj, "role"));
        u.text = get_string(uj, "text");
        u.word_count = get_count(uj, "word_count");
        u.reasoning = get_optional_string(uj, "reasoning");
        u.timestamp = parse_iso8601(get_string(uj, "timestamp"));
        const std::size_t pos = d.utterances.size();
        if (u.index != pos) {
            throw std::invalid_argument("utterance index " + std::to_string(u.index) +
                                        " out of order (expected " + std::to_string(pos) + ")");
        }
        if (u.role != (pos % 2 == 0 ? AgentRole::scammer : AgentRole::victim)) {
            throw std::invalid_argument("utterance " + std::to_string(pos) +
                                        " breaks scammer-first role alternation");
        }
        if (u.word_count != word_count(u.text)) {
            throw std::invalid_argument("utterance " + std::to_string(pos) +
                                        " word_count does not match its text");
        }
        d.utterances.push_back(std::move(u));
    }
    if (d.turn_count() > static_cast<std::size_t>(kMaxTurns)) {
        throw std::invalid_argument("dialogue exceeds " + std::to_string(kMaxTurns) + " turns");
    }
    return d;
}

std::string to_jsonl_line(const Dialogue& d)
{
    return to_json(d).dump();
}

std::vector<Dialogue> read_transcripts(const std::filesystem::path& path)
{
    std::ifstream in(path);
    if (!in) {
        throw StorageError("cannot open transcript file " + path.string());
    }
    std::vector<Dialogue> out;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.find_first_not_of(" \t\r") == std::string::npos) {
            continue;
        }
        try {
            out.push_back(dialogue_from_json(json::parse(line)));
        } catch (const json::exception& e) {
            throw SchemaError(path.string(), lineno, e.what());
        } catch (const std::invalid_argument& e) {
            throw SchemaError(path.string(), lineno, e.what());
        }
    }
    return out;
}

JsonlSink::JsonlSink(std::filesystem::path path, bool truncate)
    : path_(std::move(path)),
      out_(path_, truncate ? std::ios::out | std::ios::trunc : std::ios::out | std::ios::app)
{
    if (!out_) {
        throw StorageError("cannot open " + path_.string() + " for writing");
    }
}

void JsonlSink::append(const std::string& line)
{
    std::lock_guard lock(mu_);
    out_ << line << '\n';
    out_.flush();
    if (!out_) {
        throw StorageError("write failed on " + path_.string());
    }
    ++lines_;
}

std::size_t JsonlSink::lines_written() const
{
    std::lock_guard lock(mu_);
    return lines_;
}

} // namespace botwars
