#include "botwars/dialogue.hpp"
#include "botwars/transcript.hpp"

#include "support.hpp"

#include <doctest.h>

#include <random>
#include <sstream>

using namespace botwars;

namespace {

// Reference tokenizer: iostream extraction splits on any whitespace run.
std::size_t stream_word_count(const std::string& s)
{
    std::istringstream in(s);
    std::string w;
    std::size_t n = 0;
    while (in >> w) {
        ++n;
    }
    return n;
}

std::string random_text(std::mt19937_64& rng)
{
    static const std::string alphabet = "ab c\t\n\r\v\fxyz.,!  ";
    std::uniform_int_distribution<std::size_t> len(0, 40);
    std::uniform_int_distribution<std::size_t> pick(0, alphabet.size() - 1);
    std::string s(len(rng), ' ');
    for (auto& c : s) {
        c = alphabet[pick(rng)];
    }
    return s;
}

std::vector<Utterance> utterances(std::size_t n)
{
    std::vector<Utterance> out;
    for (std::size_t i = 0; i < n; ++i) {
        Utterance u;
        u.index = i;
        u.role = i % 2 ? AgentRole::victim : AgentRole::scammer;
        u.text = "u" + std::to_string(i);
        u.word_count = 1;
        out.push_back(u);
    }
    return out;
}

} // namespace

TEST_CASE("enum names round-trip")
{
    for (auto s : kAllScamTypes) {
        CHECK(parse_scam_type(to_string(s)) == s);
    }
    CHECK(to_string(ScamType::ssn) == "ssn");
    CHECK(parse_agent_role("victim") == AgentRole::victim);
    CHECK(parse_termination("word_limit_unrecoverable") == TerminationReason::word_limit_unrecoverable);
    CHECK_THROWS_AS(parse_scam_type("Support"), std::invalid_argument);
    CHECK_THROWS_AS(parse_agent_role("baiter"), std::invalid_argument);
}

TEST_CASE("word_count examples")
{
    CHECK(word_count("call me tomorrow") == 3);
    CHECK(word_count("") == 0);
    CHECK(word_count("   \t\n ") == 0);
    CHECK(word_count("  a\tb\nc  ") == 3);
    CHECK(word_count("  a\tb\nc  ") == stream_word_count("  a\tb\nc  "));
}

TEST_CASE("word_count matches a stream tokenizer on random text")
{
    std::mt19937_64 rng(11);
    for (int i = 0; i < 500; ++i) {
        const auto s = random_text(rng);
        CHECK(word_count(s) == stream_word_count(s));
        CHECK(whitespace_tokens(s).size() == word_count(s));
    }
}

TEST_CASE("word_count is additive over a space join")
{
    std::mt19937_64 rng(12);
    int checked = 0;
    while (checked < 300) {
        const auto a = random_text(rng);
        const auto b = random_text(rng);
        if (a.empty() || b.empty()) {
            continue;
        }
        CHECK(word_count(a + " " + b) == word_count(a) + word_count(b));
        ++checked;
    }
}

TEST_CASE("append_utterance")
{
    Dialogue d;
    d = append_utterance(d, "Hello, this is tech support", AgentRole::scammer);
    REQUIRE(d.utterances.size() == 1);
    CHECK(d.utterances[0].index == 0);
    CHECK(d.utterances[0].word_count == 5);
    CHECK(d.utterances[0].timestamp.time_since_epoch().count() > 0);

    d = append_utterance(d, "Oh dear, my computer?", AgentRole::victim);
    CHECK(d.utterances[1].index == 1);
    CHECK(d.turn_count() == 1);

    CHECK_THROWS_AS(append_utterance(d, "again", AgentRole::victim), RoleOrderViolation);
    CHECK_THROWS_AS(append_utterance(Dialogue{}, "hi", AgentRole::victim), RoleOrderViolation);

    Dialogue scammer_only = append_utterance(Dialogue{}, "hi", AgentRole::scammer);
    CHECK_THROWS_AS(append_utterance(scammer_only, "text", AgentRole::scammer), RoleOrderViolation);

    d.termination = TerminationReason::agent_exit;
    CHECK_THROWS_AS(append_utterance(d, "more", AgentRole::scammer), DialogueClosed);
}

TEST_CASE("context_window examples")
{
    const auto w45 = context_window(DialogueHistory(utterances(45), 20));
    REQUIRE(w45.size() == 20);
    CHECK(w45.front().index == 25);
    CHECK(w45.back().index == 44);
    CHECK(context_window(DialogueHistory(utterances(5), 20)).size() == 5);
    CHECK(context_window(DialogueHistory(utterances(20), 20)).size() == 20);
    CHECK(DialogueHistory().window_size() == 20);
}

TEST_CASE("context_window bound and concatenation property")
{
    std::mt19937_64 rng(13);
    std::uniform_int_distribution<std::size_t> len(0, 80);
    std::uniform_int_distribution<std::size_t> win(1, 30);
    for (int i = 0; i < 300; ++i) {
        const auto all = utterances(len(rng) + 1);
        const std::vector<Utterance> base(all.begin(), all.end() - 1);
        const auto& u = all.back();
        const DialogueHistory h(base, win(rng));

        const auto w = context_window(h);
        CHECK(w.size() <= h.window_size());
        CHECK(w.size() == std::min(h.window_size(), base.size()));

        auto expected = w;
        expected.push_back(u);
        if (expected.size() > h.window_size()) {
            expected.erase(expected.begin(),
                           expected.end() - static_cast<std::ptrdiff_t>(h.window_size()));
        }
        CHECK(context_window(h.with(u)) == expected);
    }
}

TEST_CASE("iso8601 round-trip")
{
    const Timestamp t{std::chrono::milliseconds{1'700'000'000'123}};
    const auto s = format_iso8601(t);
    CHECK(s == "2023-11-14T22:13:20.123Z");
    CHECK(parse_iso8601(s) == t);
}

TEST_CASE("transcript JSON round-trip and strictness")
{
    auto d = testing::make_dialogue({"Hello there", "Who is this?", "Your bank."});
    d.persona_notes = "age: 70";
    d.utterances[1].reasoning = "stall";
    const auto j = to_json(d);
    CHECK(dialogue_from_json(j) == d);

    std::vector<std::string> keys;
    for (const auto& [k, v] : j.items()) {
        keys.push_back(k);
    }
    CHECK(keys == std::vector<std::string>{"dialogue_id", "persona_notes", "scam_type",
                                           "scammer_model", "termination", "utterances",
                                           "victim_model"});

    auto extra = j;
    extra["score"] = 3;
    CHECK_THROWS_AS(dialogue_from_json(extra), std::invalid_argument);

    auto missing = j;
    missing.erase("persona_notes");
    CHECK_THROWS_AS(dialogue_from_json(missing), std::invalid_argument);

    auto bad_count = j;
    bad_count["utterances"][0]["word_count"] = 7;
    CHECK_THROWS_AS(dialogue_from_json(bad_count), std::invalid_argument);

    auto bad_order = j;
    bad_order["utterances"][1]["role"] = "scammer";
    CHECK_THROWS_AS(dialogue_from_json(bad_order), std::invalid_argument);
}

TEST_CASE("read_transcripts names the malformed line")
{
    testing::TempDir dir;
    const auto good = to_jsonl_line(testing::make_dialogue({"a", "b"}, "x1"));
    const auto good2 = to_jsonl_line(testing::make_dialogue({"a", "b"}, "x2"));
    testing::spit(dir / "t.jsonl", good + "\n\n" + good2 + "\n{\"dialogue_id\": 1}\n");
    try {
        read_transcripts(dir / "t.jsonl");
        FAIL("expected SchemaError");
    } catch (const SchemaError& e) {
        CHECK(e.line() == 4);
        CHECK(std::string(e.what()).find("line 4") != std::string::npos);
    }

    testing::spit(dir / "ok.jsonl", good + "\n" + good2 + "\n");
    CHECK(read_transcripts(dir / "ok.jsonl").size() == 2);
}

TEST_CASE("JsonlSink appends lines")
{
    testing::TempDir dir;
    {
        JsonlSink sink(dir / "s.jsonl", true);
        sink.append("{}");
        sink.append("[]");
        CHECK(sink.lines_written() == 2);
    }
    CHECK(testing::slurp(dir / "s.jsonl") == "{}\n[]\n");
    CHECK_THROWS_AS(JsonlSink(dir / "missing" / "x.jsonl"), StorageError);
}
