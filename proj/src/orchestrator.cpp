#include "botwars/orchestrator.hpp"

#include "botwars/log.hpp"

#include <algorithm>
#include <atomic>
#include <cctype>
#include <cstdio>
#include <exception>
#include <mutex>
#include <thread>

namespace botwars {

using nlohmann::json;

namespace {

std::string lower(std::string_view s)
{
    std::string out(s);
    std::transform(out.begin(), out.end(), out.begin(),
                   [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
    return out;
}

std::string sanitize(std::string_view s)
{
    std::string out;
    for (unsigned char c : s) {
        out.push_back(std::isalnum(c) || c == '.' || c == '-' || c == '_' ? static_cast<char>(c)
                                                                          : '_');
    }
    return out;
}

std::uint64_t fnv1a(std::string_view s)
{
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : s) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

std::string hex64(std::uint64_t v)
{
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
    return buf;
}

// Epoch for logical timestamps in seeded runs.
Timestamp logical_time(std::uint64_t seed, std::size_t index)
{
    using namespace std::chrono;
    return Timestamp{sys_days{year{2000} / January / 1}} +
           seconds{static_cast<long long>(seed % 1'000'000'000ULL)} +
           seconds{static_cast<long long>(index)};
}

struct Reply {
    std::string text;
    std::optional<std::string> reasoning;
    std::optional<std::string> persona_notes;
    std::optional<LengthEvent> event;
};

struct WordLimitUnrecoverable : std::runtime_error {
    using std::runtime_error::runtime_error;
};

std::string reprompt_instruction(std::size_t words, std::size_t limit)
{
    return "Your last reply was " + std::to_string(words) + " words long. Give the same reply "
           "again in at most " + std::to_string(limit) + " words.";
}

Reply obtain_reply(ChatClient& client, const PromptBundle& bundle, const RunSettings& s,
                   std::size_t utterance_index)
{
    const auto raw = client.complete(bundle);
    auto split = split_reply(raw.response.content);
    Reply r{split.spoken, split.reasoning, split.persona_notes, std::nullopt};

    const auto check = enforce_length(r.text, s.word_limit, s.reprompt_on_overflow);
    if (check.action == LengthAction::none) {
        return r;
    }

    LengthEvent ev;
    ev.utterance_index = utterance_index;
    ev.role = *bundle.speaker;
    ev.original_words = word_count(r.text);

    std::string candidate = r.text;
    if (check.action == LengthAction::reprompt) {
        PromptBundle again = bundle;
        again.instruction = reprompt_instruction(ev.original_words, s.word_limit);
        const auto retry = client.complete(again);
        auto split2 = split_reply(retry.response.content);
        ev.reprompt_words = word_count(split2.spoken);
        candidate = std::move(split2.spoken);
        if (split2.reasoning) {
            r.reasoning = std::move(split2.reasoning);
        }
        if (!r.persona_notes && split2.persona_notes) {
            r.persona_notes = std::move(split2.persona_notes);
        }
        if (*ev.reprompt_words <= s.word_limit) {
            ev.action = LengthAction::reprompted;
            r.text = std::move(candidate);
            r.event = ev;
            return r;
        }
    }
    if (!s.truncate_on_overflow) {
        throw WordLimitUnrecoverable("reply of " + std::to_string(word_count(candidate)) +
                                     " words exceeds limit " + std::to_string(s.word_limit));
    }
    ev.action = LengthAction::truncated;
    ev.violation = true;
    r.text = truncate_words(candidate, s.word_limit);
    r.event = ev;
    return r;
}

} // namespace

// ---- length ----------------------------------------------------------------

std::string_view to_string(LengthAction a)
{
    switch (a) {
    case LengthAction::none: return "none";
    case LengthAction::reprompt: return "reprompt";
    case LengthAction::reprompted: return "reprompted";
    case LengthAction::truncated: return "truncated";
    }
    return "?";
}

std::string truncate_words(std::string_view text, std::size_t n)
{
    const auto tokens = whitespace_tokens(text);
    std::string out;
    for (std::size_t i = 0; i < std::min(n, tokens.size()); ++i) {
        if (i) {
            out.push_back(' ');
        }
        out.append(tokens[i]);
    }
    return out;
}

LengthCheck enforce_length(std::string_view text, std::size_t word_limit, bool reprompt_allowed)
{
    if (word_limit == 0) {
        throw std::invalid_argument("word_limit must be positive");
    }
    if (word_count(text) <= word_limit) {
        return {std::string(text), false, LengthAction::none};
    }
    if (reprompt_allowed) {
        return {std::string(text), false, LengthAction::reprompt};
    }
    return {truncate_words(text, word_limit), true, LengthAction::truncated};
}

json to_json(const LengthEvent& e)
{
    return json{{"utterance_index", e.utterance_index},
                {"role", to_string(e.role)},
                {"original_words", e.original_words},
                {"reprompt_words", e.reprompt_words ? json(*e.reprompt_words) : json(nullptr)},
                {"action", to_string(e.action)},
                {"violation", e.violation}};
}

// ---- termination -----------------------------------------------------------

const std::vector<std::string>& default_exit_markers()
{
    static const std::vector<std::string> markers{
        R"(\bgood-?bye\b)",
        R"(\bbye[- ]bye\b)",
        R"(\b(i'm|i am|i'll|i will|i'm going to|going to) (hang|hanging) up\b)",
        R"(\b(ending|end) (this|the) call\b)",
        R"(\[(call ends|hangs up|call ended|end of call)\])",
    };
    return markers;
}

ExitMarkerSet::ExitMarkerSet(const std::vector<std::string>& patterns)
{
    for (const auto& p : patterns) {
        patterns_.emplace_back(p, std::regex::ECMAScript | std::regex::icase);
    }
}

bool ExitMarkerSet::matches(std::string_view reply) const
{
    auto text = lower(reply);
    std::replace(text.begin(), text.end(), '\n', ' ');
    return std::any_of(patterns_.begin(), patterns_.end(),
                       [&](const std::regex& re) { return std::regex_search(text, re); });
}

std::optional<TerminationReason> detect_termination(const DialogueHistory&,
                                                    std::string_view latest_reply,
                                                    std::size_t turn_count,
                                                    const RunSettings& settings,
                                                    const ExitMarkerSet& markers)
{
    if (turn_count >= static_cast<std::size_t>(settings.max_turns)) {
        return TerminationReason::max_turns;
    }
    if (markers.matches(latest_reply)) {
        return TerminationReason::agent_exit;
    }
    return std::nullopt;
}

// ---- single dialogue -------------------------------------------------------

namespace {

void validate_settings(const RunSettings& s, std::vector<std::string>& errors)
{
    if (s.max_turns < 1 || s.max_turns > kMaxTurns) {
        errors.push_back("max_turns: must lie in [1, " + std::to_string(kMaxTurns) + "]");
    }
    if (s.window_size == 0) {
        errors.push_back("window_size: must be positive");
    }
    if (s.word_limit == 0) {
        errors.push_back("word_limit: must be positive");
    }
    for (std::size_t i = 0; i < s.exit_markers.size(); ++i) {
        try {
            std::regex re(s.exit_markers[i]);
        } catch (const std::regex_error& e) {
            errors.push_back("exit_markers[" + std::to_string(i) + "]: bad regex: " + e.what());
        }
    }
}

void check_pair(const ProviderConfig& scammer, const ProviderConfig& victim,
                const std::string& where, std::vector<std::string>& errors)
{
    if (auto d = check_role_policy(scammer, AgentRole::scammer); !d) {
        errors.push_back(where + ".scammer: role policy: " + d.reason);
    }
    if (auto d = check_role_policy(victim, AgentRole::victim); !d) {
        errors.push_back(where + ".victim: role policy: " + d.reason);
    }
}

} // namespace

void validate_run(const RunConfig& config)
{
    std::vector<std::string> errors;
    validate_settings(config.settings, errors);
    check_pair(config.scammer_provider, config.victim_provider, "run", errors);
    if (!errors.empty()) {
        throw ConfigInvalid(std::move(errors));
    }
}

DialogueRecord run_dialogue(const RunConfig& config, const TemplateRegistry& registry,
                            const PersonaPair& personas, Gateway& gateway, JsonlSink* sink,
                            JsonlSink* events)
{
    validate_run(config);
    const auto& s = config.settings;
    const ExitMarkerSet markers(s.exit_markers.empty() ? default_exit_markers() : s.exit_markers);

    DialogueRecord rec;
    Dialogue& d = rec.dialogue;
    d.dialogue_id = config.dialogue_id;
    d.scam_type = config.scam_type;
    d.scammer_model = config.scammer_provider.model_name;
    d.victim_model = config.victim_provider.model_name;

    const std::uint64_t session_seed = fnv1a(config.dialogue_id) ^ s.seed.value_or(0);
    auto scammer = gateway.open(config.scammer_provider.provider_id, session_seed);
    auto victim = gateway.open(config.victim_provider.provider_id, session_seed);

    std::optional<TerminationReason> term;
    while (!term) {
        const AgentRole role = next_role(d);
        const DialogueHistory history(d.utterances, s.window_size);
        const auto bundle =
            role == AgentRole::scammer
                ? render_scammer_prompt(registry, config.scam_type, personas.scammer, history,
                                        s.word_limit)
                : render_victim_prompt(registry, personas.victim, history, s.word_limit);
        ChatClient& client = role == AgentRole::scammer ? *scammer : *victim;

        Reply reply;
        try {
            reply = obtain_reply(client, bundle, s, d.utterances.size());
        } catch (const ProviderRefusal& e) {
            rec.error = e.what();
            term = TerminationReason::provider_refusal;
            break;
        } catch (const WordLimitUnrecoverable& e) {
            rec.error = e.what();
            term = TerminationReason::word_limit_unrecoverable;
            break;
        } catch (const std::exception& e) {
            rec.error = e.what();
            term = TerminationReason::provider_error;
            break;
        }

        if (reply.event) {
            const auto& ev = *reply.event;
            log(ev.violation ? LogLevel::warn : LogLevel::info,
                d.dialogue_id + ": utterance " +
                                    std::to_string(ev.utterance_index) + " was " +
                                    std::to_string(ev.original_words) + " words (limit " +
                                    std::to_string(s.word_limit) + "), " +
                                    std::string(to_string(ev.action)));
            rec.length_events.push_back(ev);
        }
        if (role == AgentRole::victim && reply.persona_notes && !d.persona_notes) {
            d.persona_notes = reply.persona_notes;
        }
        const auto ts = s.seed ? std::optional(logical_time(*s.seed, d.utterances.size()))
                               : std::nullopt;
        d = append_utterance(std::move(d), reply.text, role, reply.reasoning, ts);
        term = detect_termination(DialogueHistory(d.utterances, s.window_size), reply.text,
                                  d.turn_count(), s, markers);
    }
    d.termination = term;

    if (sink) {
        sink->append(to_jsonl_line(d));
    }
    if (events && (!rec.length_events.empty() || rec.error)) {
        json evs = json::array();
        for (const auto& e : rec.length_events) {
            evs.push_back(to_json(e));
        }
        events->append(json{{"dialogue_id", d.dialogue_id},
                            {"length_events", evs},
                            {"error", rec.error ? json(*rec.error) : json(nullptr)}}
                           .dump());
    }
    return rec;
}

// ---- batches ---------------------------------------------------------------

std::size_t BatchSpec::planned_dialogues() const
{
    return static_cast<std::size_t>(std::max(dialogues_per_cell, 0)) * scam_types.size() *
           model_pairs.size();
}

std::string shard_name(std::string_view scammer_model, std::string_view victim_model,
                       ScamType scam_type)
{
    return sanitize(scammer_model) + "__" + sanitize(victim_model) + "__" +
           std::string(to_string(scam_type)) + ".jsonl";
}

void validate_batch(const BatchSpec& spec)
{
    std::vector<std::string> errors;
    if (spec.dialogues_per_cell < 1) {
        errors.push_back("dialogues_per_cell: must be positive");
    }
    if (spec.parallelism < 1) {
        errors.push_back("parallelism: must be positive");
    }
    if (spec.scam_types.empty()) {
        errors.push_back("scam_types: must be non-empty");
    }
    if (spec.model_pairs.empty()) {
        errors.push_back("pairs: must be non-empty");
    }
    validate_settings(spec.settings, errors);
    for (std::size_t i = 0; i < spec.model_pairs.size(); ++i) {
        const auto& p = spec.model_pairs[i];
        check_pair(p.scammer, p.victim, "pairs[" + std::to_string(i) + "]", errors);
    }
    if (!errors.empty()) {
        throw ConfigInvalid(std::move(errors));
    }
}

std::string config_hash(const BatchSpec& spec)
{
    json pairs = json::array();
    for (const auto& p : spec.model_pairs) {
        pairs.push_back({to_json(p.scammer), to_json(p.victim)});
    }
    json types = json::array();
    for (auto t : spec.scam_types) {
        types.push_back(to_string(t));
    }
    const auto& s = spec.settings;
    const json canonical{{"dialogues_per_cell", spec.dialogues_per_cell},
                         {"scam_types", types},
                         {"pairs", pairs},
                         {"max_turns", s.max_turns},
                         {"window_size", s.window_size},
                         {"word_limit", s.word_limit},
                         {"reprompt_on_overflow", s.reprompt_on_overflow},
                         {"truncate_on_overflow", s.truncate_on_overflow},
                         {"seed", s.seed ? json(*s.seed) : json(nullptr)},
                         {"exit_markers", s.exit_markers}};
    return hex64(fnv1a(canonical.dump()));
}

json to_json(const BatchSummary& s)
{
    json shards = json::array();
    for (const auto& sh : s.shards) {
        shards.push_back({{"file", sh.file},
                          {"scammer_model", sh.scammer_model},
                          {"victim_model", sh.victim_model},
                          {"scam_type", to_string(sh.scam_type)},
                          {"count", sh.count}});
    }
    json term = json::object();
    for (const auto& [k, v] : s.termination_histogram) {
        term[std::string(to_string(k))] = v;
    }
    json turns = json::object();
    for (const auto& [k, v] : s.turn_histogram) {
        turns[std::to_string(k)] = v;
    }
    return json{{"total", s.total},
                {"completed", s.completed},
                {"failed", s.failed},
                {"termination_histogram", term},
                {"turn_histogram", turns},
                {"shards", shards},
                {"config_hash", s.config_hash},
                {"started_at", s.started_at},
                {"finished_at", s.finished_at}};
}

BatchSummary run_batch(const BatchSpec& spec, const TemplateRegistry& registry,
                       const PersonaPair& personas, Gateway& gateway)
{
    namespace fs = std::filesystem;
    validate_batch(spec);
    validate(personas.scammer);
    validate(personas.victim);

    std::error_code ec;
    fs::create_directories(spec.output_dir, ec);
    if (ec || !fs::is_directory(spec.output_dir)) {
        throw StorageError("cannot create output directory " + spec.output_dir.string() +
                           (ec ? ": " + ec.message() : ""));
    }

    BatchSummary summary;
    summary.started_at = format_iso8601(now_utc());
    summary.config_hash = config_hash(spec);

    struct Cell {
        std::unique_ptr<JsonlSink> sink;
        std::unique_ptr<JsonlSink> events;
        ShardInfo info;
    };
    struct Job {
        RunConfig config;
        std::size_t cell;
    };
    std::vector<Cell> cells;
    std::vector<Job> jobs;
    for (const auto& pair : spec.model_pairs) {
        for (auto scam : spec.scam_types) {
            Cell c;
            c.info.file = shard_name(pair.scammer.model_name, pair.victim.model_name, scam);
            c.info.scammer_model = pair.scammer.model_name;
            c.info.victim_model = pair.victim.model_name;
            c.info.scam_type = scam;
            const auto path = spec.output_dir / c.info.file;
            auto events_path = path;
            events_path.replace_extension(".events.jsonl");
            c.sink = std::make_unique<JsonlSink>(path, true);
            c.events = std::make_unique<JsonlSink>(events_path, true);
            for (int i = 0; i < spec.dialogues_per_cell; ++i) {
                RunConfig rc;
                rc.scam_type = scam;
                rc.scammer_provider = pair.scammer;
                rc.victim_provider = pair.victim;
                rc.settings = spec.settings;
                char idx[16];
                std::snprintf(idx, sizeof idx, "%04d", i);
                rc.dialogue_id = sanitize(pair.scammer.provider_id) + "__" +
                                 sanitize(pair.victim.provider_id) + "__" +
                                 std::string(to_string(scam)) + "__" + idx;
                jobs.push_back({std::move(rc), cells.size()});
            }
            cells.push_back(std::move(c));
        }
    }

    std::mutex mu;
    std::atomic<std::size_t> next{0};
    std::atomic<std::size_t> in_flight{0};
    std::exception_ptr fatal;

    auto worker = [&] {
        for (;;) {
            {
                std::lock_guard lock(mu);
                if (fatal) {
                    return;
                }
            }
            const auto i = next.fetch_add(1);
            if (i >= jobs.size()) {
                return;
            }
            const auto& job = jobs[i];
            auto& cell = cells[job.cell];
            const auto now_in_flight = in_flight.fetch_add(1) + 1;
            try {
                auto rec = run_dialogue(job.config, registry, personas, gateway, cell.sink.get(),
                                        cell.events.get());
                std::lock_guard lock(mu);
                summary.max_in_flight = std::max(summary.max_in_flight, now_in_flight);
                ++summary.total;
                const auto reason = *rec.dialogue.termination;
                ++summary.termination_histogram[reason];
                ++summary.turn_histogram[rec.dialogue.turn_count()];
                if (reason == TerminationReason::provider_error ||
                    reason == TerminationReason::provider_refusal) {
                    ++summary.failed;
                } else {
                    ++summary.completed;
                }
                ++cell.info.count;
            } catch (...) {
                std::lock_guard lock(mu);
                if (!fatal) {
                    fatal = std::current_exception();
                }
            }
            in_flight.fetch_sub(1);
        }
    };

    const auto workers = std::min<std::size_t>(static_cast<std::size_t>(spec.parallelism),
                                               std::max<std::size_t>(jobs.size(), 1));
    {
        std::vector<std::jthread> pool;
        for (std::size_t w = 0; w < workers; ++w) {
            pool.emplace_back(worker);
        }
    }
    if (fatal) {
        std::rethrow_exception(fatal);
    }

    for (const auto& c : cells) {
        summary.shards.push_back(c.info);
    }
    summary.finished_at = format_iso8601(now_utc());

    auto manifest = to_json(summary);
    manifest["parallelism"] = spec.parallelism;
    manifest["dialogues_per_cell"] = spec.dialogues_per_cell;
    std::ofstream out(spec.output_dir / "manifest.json", std::ios::trunc);
    out << manifest.dump(2) << '\n';
    if (!out) {
        throw StorageError("cannot write manifest in " + spec.output_dir.string());
    }
    return summary;
}

} // namespace botwars
