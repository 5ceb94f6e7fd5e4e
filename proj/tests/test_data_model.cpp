#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <set>

#include <spdlog/spdlog.h>

#include "excord/data_model.hpp"
#include "excord/errors.hpp"
#include "excord/text.hpp"
#include "test_helpers.hpp"

using namespace excord;
using testing::fixture;

namespace {

// Finds the tokens overlapping [begin, end) by scanning every token.
std::optional<TokenSpan> scan_tokens(const Document& doc, long begin, long end) {
    std::optional<TokenSpan> span;
    for (std::size_t i = 0; i < doc.tokens.size(); ++i) {
        const auto& tok = doc.tokens[i];
        if (static_cast<long>(tok.begin) < end && static_cast<long>(tok.end) > begin) {
            if (!span) span = TokenSpan{i, i};
            span->end = i;
        }
    }
    return span;
}

Dialogue ten_turn_dialogue() {
    Dialogue d;
    d.id = "D10";
    std::string text;
    for (int t = 1; t <= 10; ++t) text += "fact" + std::to_string(t) + " ";
    d.document = Document::make("D10", text);
    for (int t = 1; t <= 10; ++t) {
        Turn turn;
        turn.turn_index = t;
        turn.question_id = "D10_q#" + std::to_string(t);
        turn.question = "question " + std::to_string(t) + "?";
        turn.answer_text = "fact" + std::to_string(t);
        turn.answer_char_start = static_cast<long>(text.find(turn.answer_text + " "));
        turn.answer_char_end = turn.answer_char_start + static_cast<long>(turn.answer_text.size());
        d.turns.push_back(turn);
    }
    return d;
}

}  // namespace

TEST_CASE("tokenizer splits punctuation and keeps byte offsets") {
    const auto toks = text::tokenize("Hi, Édith!  ok");
    REQUIRE(toks.size() == 5);
    CHECK(toks[0].text == "Hi");
    CHECK(toks[1].text == ",");
    CHECK(toks[2].text == "Édith");
    CHECK(toks[2].begin == 4);
    CHECK(toks[2].end == 10);
    CHECK(toks[3].text == "!");
    CHECK(toks[4].text == "ok");
}

TEST_CASE("document gets exactly one trailing sentinel") {
    const Document a = Document::make("a", "Some text.");
    CHECK(a.has_sentinel);
    CHECK(a.tokens.back().text == "CANNOTANSWER");
    CHECK(a.content_token_count() == 3);
    const Document b = Document::make("b", a.text);
    CHECK(b.text == a.text);
    CHECK(b.tokens.size() == a.tokens.size());
    CHECK_THROWS_AS(Document::make("c", "   "), ValidationError);
}

TEST_CASE("QuAC-like fixture loads with mapped spans") {
    const auto dialogues = load_quac_like(fixture("quac_small.json"));
    REQUIRE(dialogues.size() == 3);
    std::size_t unanswerable = 0;
    for (const Dialogue& d : dialogues) {
        CHECK(d.document.has_sentinel);
        CHECK(d.id == d.document.id);
        for (const Turn& turn : d.turns) {
            const TokenSpan gold = gold_token_span(d.document, turn);
            if (turn.unanswerable()) {
                ++unanswerable;
                CHECK(gold.start == d.document.sentinel_token());
                CHECK(gold.end == d.document.sentinel_token());
                continue;
            }
            CHECK(d.document.text.substr(static_cast<std::size_t>(turn.answer_char_start),
                                         static_cast<std::size_t>(turn.answer_char_end - turn.answer_char_start)) ==
                  turn.answer_text);
            const auto scanned = scan_tokens(d.document, turn.answer_char_start, turn.answer_char_end);
            REQUIRE(scanned);
            CHECK(gold == *scanned);
        }
    }
    CHECK(unanswerable == 1);
    // Code-point offsets in the file become byte offsets after a non-ASCII character.
    const Turn& paris = dialogues[1].turn(1);
    CHECK(paris.answer_text == "Paris");
    CHECK(dialogues[1].document.text.substr(static_cast<std::size_t>(paris.answer_char_start), 5) == "Paris");
    CHECK(dialogues[0].turn(2).reference_answers.size() == 2);
}

TEST_CASE("QuAC-like parse errors name the JSON path") {
    const std::string bad = R"({"data": [{"paragraphs": [{"id": "x", "context": "abc", "qas": [{"id": "q", "answers": []}]}]}]})";
    try {
        parse_quac_like(bad, "bad.json");
        FAIL("expected ParseError");
    } catch (const ParseError& e) {
        const std::string message = e.what();
        CHECK(message.find("bad.json") != std::string::npos);
        CHECK(message.find("$.data[0].paragraphs[0].qas[0]") != std::string::npos);
    }
    CHECK_THROWS_AS(parse_quac_like("{not json", "x"), ParseError);
}

TEST_CASE("QuAC-like answer text must match its span") {
    const std::string bad =
        R"({"data": [{"paragraphs": [{"id": "dlg", "context": "alpha beta gamma", "qas": [{"id": "q", "question": "?",)"
        R"( "answers": [{"text": "beta", "answer_start": 0}]}]}]}]})";
    try {
        parse_quac_like(bad, "x");
        FAIL("expected ValidationError");
    } catch (const ValidationError& e) {
        CHECK(std::string(e.what()).find("dlg") != std::string::npos);
    }
}

TEST_CASE("CANARD-like fixture loads five records") {
    const auto records = load_canard(fixture("canard_small.json"));
    REQUIRE(records.size() == 5);
    CHECK(records[1].dialogue_id == "C_leo_0");
    CHECK(records[1].turn_index == 2);
    CHECK(records[1].rewrite == "Where did Leonardo da Vinci train?");
    CHECK(records[1].history_texts.size() == 4);
}

TEST_CASE("CANARD-like records need a non-empty unique rewrite") {
    CHECK_THROWS_AS(parse_canard(R"([{"QuAC_dialog_id": "a", "Question_no": 1, "Question": "q"}])"), ValidationError);
    CHECK_THROWS_AS(parse_canard(R"([{"QuAC_dialog_id": "a", "Question_no": 1, "Question": "q", "Rewrite": 3}])"),
                    ValidationError);
    CHECK_THROWS_AS(parse_canard(R"([{"QuAC_dialog_id": "a", "Question_no": 1, "Question": "q", "Rewrite": ""}])"),
                    ValidationError);
    CHECK_THROWS_AS(parse_canard(R"([{"QuAC_dialog_id": "a", "Question_no": 1, "Question": "q", "Rewrite": "r"},
                                     {"QuAC_dialog_id": "a", "Question_no": 1, "Question": "q", "Rewrite": "s"}])"),
                    ValidationError);
}

TEST_CASE("CoQA-like fixture keeps domains and free-form references") {
    const auto dialogues = load_coqa_like(fixture("coqa_small.json"));
    REQUIRE(dialogues.size() == 2);
    CHECK(dialogues[0].document.domain == "cnn");
    CHECK(dialogues[1].document.domain == "wikipedia");
    CHECK(dialogues[0].document.title == "cnn_storm.story");
    const Turn& first = dialogues[0].turn(1);
    CHECK(first.answer_text == "The storm");
    REQUIRE(first.reference_answers.size() == 2);
    CHECK(first.reference_answers[0] == "the storm");
    CHECK(first.reference_answers[1] == "a storm");
    CHECK(dialogues[0].turn(3).unanswerable());
    CHECK(dialogues[0].turn(3).reference_answers[0] == "CANNOTANSWER");
}

TEST_CASE("CoQA-like misaligned turn ids are rejected") {
    const std::string bad = R"({"data": [{"id": "s", "story": "a b c", "source": "cnn",
        "questions": [{"turn_id": 1, "input_text": "q"}],
        "answers": [{"turn_id": 2, "input_text": "a", "span_start": 0, "span_end": 1}]}]})";
    CHECK_THROWS_AS(parse_coqa_like(bad), ValidationError);
}

TEST_CASE("canonical dialogue JSON round-trips") {
    const auto dialogues = load_quac_like(fixture("quac_small.json"));
    for (const Dialogue& d : dialogues) {
        CHECK(dialogue_from_canonical_json(to_canonical_json(d)) == d);
    }
    const auto dir = testing::scratch_dir("canonical");
    write_dialogues_jsonl(dir / "d.jsonl", dialogues);
    CHECK(read_dialogues_jsonl(dir / "d.jsonl") == dialogues);

    std::vector<QuestionPair> pairs = {{"a", 1, "Q1?", "Q1 full?", Provenance::human},
                                       {"a", 2, "Q2?", "Q2 full?", Provenance::synthetic}};
    write_pairs_jsonl(dir / "p.jsonl", pairs);
    CHECK(read_pairs_jsonl(dir / "p.jsonl") == pairs);
}

TEST_CASE("canonical reader reports the failing line") {
    const auto dir = testing::scratch_dir("canonical-bad");
    const auto dialogues = load_quac_like(fixture("quac_small.json"));
    testing::spit(dir / "d.jsonl", to_canonical_json(dialogues[0]) + "\n{\"id\": 3}\n");
    try {
        read_dialogues_jsonl(dir / "d.jsonl");
        FAIL("expected ParseError");
    } catch (const ParseError& e) {
        CHECK(std::string(e.what()).find(":2") != std::string::npos);
    }
}

TEST_CASE("dev split is deterministic, disjoint and sized by rounding") {
    std::vector<Dialogue> all;
    for (int i = 0; i < 23; ++i) {
        Dialogue d = ten_turn_dialogue();
        d.id = "D" + std::to_string(i);
        all.push_back(d);
    }
    const auto [train, dev] = split_dev(all, 0.2, 11);
    CHECK(dev.size() == 5);  // round(4.6)
    CHECK(train.size() + dev.size() == all.size());
    std::set<std::string> ids;
    for (const auto& d : train) ids.insert(d.id);
    for (const auto& d : dev) CHECK(ids.insert(d.id).second);
    const auto again = split_dev(all, 0.2, 11);
    CHECK(again.second == dev);
    CHECK_THROWS_AS(split_dev(all, 0.0, 1), ArgumentError);
    CHECK_THROWS_AS(split_dev(all, 1.0, 1), ArgumentError);
    CHECK_THROWS_AS(split_dev(std::vector<Dialogue>(all.begin(), all.begin() + 2), 0.1, 1), ArgumentError);
}

TEST_CASE("history window is the slice of the k previous turns") {
    const Dialogue d = ten_turn_dialogue();
    for (int t = 1; t <= 10; ++t) {
        for (std::size_t k = 0; k <= 12; ++k) {
            const auto history = history_window(d, t, k);
            const std::size_t first = static_cast<std::size_t>(t - 1) > k ? static_cast<std::size_t>(t - 1) - k : 0;
            REQUIRE(history.size() == static_cast<std::size_t>(t - 1) - first);
            for (std::size_t i = 0; i < history.size(); ++i) {
                CHECK(history.entries[i].question == d.turns[first + i].question);
                CHECK(history.entries[i].answer == d.turns[first + i].answer_text);
            }
        }
    }
    CHECK_THROWS_AS(history_window(d, 0, 1), ArgumentError);
    CHECK_THROWS_AS(history_window(d, 11, 1), ArgumentError);
}

TEST_CASE("history answer spans skip unanswerable turns") {
    const auto dialogues = load_quac_like(fixture("quac_small.json"));
    const Dialogue& leo = dialogues[0];
    CHECK(history_answer_spans(leo, 4, 3).size() == 2);
    CHECK(history_answer_spans(leo, 4, 1).empty());
    CHECK(history_answer_spans(leo, 2, 1)[0] == gold_token_span(leo.document, leo.turn(1)));
}

TEST_CASE("pairing uses human rewrites first and the rewriter otherwise") {
    spdlog::set_level(spdlog::level::err);
    const Dialogue d = ten_turn_dialogue();
    std::vector<RewriteRecord> records;
    for (int t : {1, 4, 7, 10}) records.push_back({"D10", t, {}, d.turn(t).question, "human " + std::to_string(t)});
    std::vector<std::size_t> seen_history;
    const auto result = build_pairs({d}, records, [&](const RewriteRequest& request) {
        seen_history.push_back(request.history.size());
        return "auto " + std::to_string(request.turn_index);
    });
    CHECK(result.pairs.size() == 10);
    CHECK(result.human_count == 4);
    CHECK(result.synthetic_count == 6);
    CHECK(result.errors.empty());
    for (const QuestionPair& pair : result.pairs) {
        const bool human = pair.turn_index % 3 == 1;
        CHECK((pair.provenance == Provenance::human) == human);
        CHECK(pair.self_contained == (human ? "human " : "auto ") + std::to_string(pair.turn_index));
        CHECK(pair.original == d.turn(pair.turn_index).question);
    }
    // The rewriter sees the full preceding history.
    CHECK(seen_history == std::vector<std::size_t>{1, 2, 4, 5, 7, 8});
}

TEST_CASE("pairing falls back to the original question when rewriting fails") {
    spdlog::set_level(spdlog::level::off);
    const Dialogue d = ten_turn_dialogue();
    const auto result = build_pairs({d}, {}, [](const RewriteRequest& request) -> std::string {
        if (request.turn_index == 3) throw std::runtime_error("backend down");
        if (request.turn_index == 5) return "";
        return "ok";
    });
    CHECK(result.pairs.size() == 10);
    REQUIRE(result.errors.size() == 2);
    CHECK(result.errors[0].turn_index == 3);
    CHECK(result.errors[0].message == "backend down");
    CHECK(result.pairs[2].self_contained == d.turn(3).question);
    CHECK(result.pairs[4].self_contained == d.turn(5).question);
}
