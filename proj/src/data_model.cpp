#include "excord/data_model.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <numeric>
#include <random>
#include <set>
#include <sstream>

#include <spdlog/spdlog.h>

#include "excord/errors.hpp"
#include "json.hpp"

namespace excord {

using nlohmann::json;

namespace {

std::string read_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw ParseError(path.string() + ": cannot open file");
    }
    std::ostringstream buffer;
    buffer << in.rdbuf();
    return buffer.str();
}

json parse_json(std::string_view text, std::string_view source) {
    try {
        return json::parse(text);
    } catch (const json::parse_error& e) {
        throw ParseError(std::string(source) + ": malformed JSON: " + e.what());
    }
}

// Field access that reports the JSON path of whatever is missing or mistyped.
class Reader {
public:
    explicit Reader(std::string_view source) : source_(source) {}

    const json& field(const json& object, std::string_view key, const std::string& path) const {
        if (!object.is_object()) {
            fail(path, "expected an object");
        }
        const auto it = object.find(std::string(key));
        if (it == object.end()) {
            fail(path + "." + std::string(key), "missing field");
        }
        return *it;
    }

    const json* optional_field(const json& object, std::string_view key) const {
        const auto it = object.find(std::string(key));
        return it == object.end() ? nullptr : &*it;
    }

    std::string string(const json& value, const std::string& path) const {
        if (!value.is_string()) {
            fail(path, "expected a string");
        }
        return value.get<std::string>();
    }

    long integer(const json& value, const std::string& path) const {
        if (!value.is_number_integer()) {
            fail(path, "expected an integer");
        }
        return value.get<long>();
    }

    const json& array(const json& value, const std::string& path) const {
        if (!value.is_array()) {
            fail(path, "expected an array");
        }
        return value;
    }

    [[noreturn]] void fail(const std::string& path, std::string_view what) const {
        throw ParseError(source_ + ": " + std::string(what) + " at " + path);
    }

private:
    std::string source_;
};

std::string indexed(const std::string& path, std::string_view key, std::size_t index) {
    return path + "." + std::string(key) + "[" + std::to_string(index) + "]";
}

}  // namespace

// ---- Document ----------------------------------------------------------------

Document Document::make(std::string id, std::string text, std::string title, std::string domain,
                        bool append_sentinel) {
    if (text.find_first_not_of(" \t\r\n") == std::string::npos) {
        throw ValidationError("document '" + id + "' has no text");
    }
    Document doc;
    doc.id = std::move(id);
    doc.title = std::move(title);
    doc.domain = std::move(domain);
    doc.tokens = text::tokenize(text);
    if (append_sentinel) {
        if (doc.tokens.empty() || doc.tokens.back().text != kUnanswerable) {
            text += ' ';
            const std::size_t begin = text.size();
            text += kUnanswerable;
            doc.tokens.push_back({std::string(kUnanswerable), begin, text.size()});
        }
        doc.has_sentinel = true;
    }
    doc.text = std::move(text);
    return doc;
}

const Turn& Dialogue::turn(int t) const {
    if (t < 1 || static_cast<std::size_t>(t) > turns.size()) {
        throw ArgumentError("turn " + std::to_string(t) + " out of range for dialogue '" + id + "' with " +
                            std::to_string(turns.size()) + " turns");
    }
    return turns[static_cast<std::size_t>(t - 1)];
}

std::string_view to_string(Provenance provenance) {
    return provenance == Provenance::human ? "human" : "synthetic";
}

std::optional<TokenSpan> char_span_to_tokens(const Document& document, long char_start, long char_end) {
    if (char_start < 0 || char_end <= char_start) {
        return std::nullopt;
    }
    const auto begin = static_cast<std::size_t>(char_start);
    const auto end = static_cast<std::size_t>(char_end);
    std::optional<std::size_t> first;
    std::size_t last = 0;
    for (std::size_t i = 0; i < document.content_token_count(); ++i) {
        const auto& token = document.tokens[i];
        if (token.end > begin && token.begin < end) {
            if (!first) {
                first = i;
            }
            last = i;
        }
    }
    if (!first) {
        return std::nullopt;
    }
    return TokenSpan{*first, last};
}

TokenSpan gold_token_span(const Document& document, const Turn& turn) {
    if (!turn.unanswerable()) {
        if (auto span = char_span_to_tokens(document, turn.answer_char_start, turn.answer_char_end)) {
            return *span;
        }
    }
    if (!document.has_sentinel) {
        throw ContractError("turn '" + turn.question_id + "' has no token span and document '" + document.id +
                            "' has no sentinel");
    }
    return TokenSpan{document.sentinel_token(), document.sentinel_token()};
}

void validate_dialogue(const Dialogue& dialogue) {
    if (dialogue.turns.empty()) {
        throw ValidationError("dialogue '" + dialogue.id + "' has no turns");
    }
    for (std::size_t i = 0; i < dialogue.turns.size(); ++i) {
        const Turn& turn = dialogue.turns[i];
        if (turn.turn_index != static_cast<int>(i + 1)) {
            throw ValidationError("dialogue '" + dialogue.id + "': turn indices are not contiguous at position " +
                                  std::to_string(i + 1));
        }
        if (turn.unanswerable()) {
            continue;
        }
        const auto start = static_cast<std::size_t>(turn.answer_char_start);
        const auto end = static_cast<std::size_t>(turn.answer_char_end);
        if (turn.answer_char_end < turn.answer_char_start || end > dialogue.document.text.size() ||
            dialogue.document.text.compare(start, end - start, turn.answer_text) != 0) {
            throw ValidationError("dialogue '" + dialogue.id + "', turn " + std::to_string(turn.turn_index) +
                                  ": answer text does not match document offsets");
        }
    }
}

// ---- QuAC ------------------------------------------------------------------------

std::vector<Dialogue> parse_quac_like(std::string_view json_text, std::string_view source_name) {
    const json root = parse_json(json_text, source_name);
    const Reader r(source_name);
    std::vector<Dialogue> dialogues;
    const json& data = r.array(r.field(root, "data", "$"), "$.data");
    for (std::size_t i = 0; i < data.size(); ++i) {
        const std::string article_path = indexed("$", "data", i);
        const json& article = data[i];
        std::string title;
        if (const json* t = r.optional_field(article, "title")) {
            title = r.string(*t, article_path + ".title");
        }
        const json& paragraphs = r.array(r.field(article, "paragraphs", article_path), article_path + ".paragraphs");
        for (std::size_t j = 0; j < paragraphs.size(); ++j) {
            const std::string para_path = indexed(article_path, "paragraphs", j);
            const json& paragraph = paragraphs[j];
            Dialogue dialogue;
            dialogue.id = r.string(r.field(paragraph, "id", para_path), para_path + ".id");
            const std::string context = r.string(r.field(paragraph, "context", para_path), para_path + ".context");
            dialogue.document = Document::make(dialogue.id, context, title, {}, true);

            const json& qas = r.array(r.field(paragraph, "qas", para_path), para_path + ".qas");
            for (std::size_t q = 0; q < qas.size(); ++q) {
                const std::string qa_path = indexed(para_path, "qas", q);
                const json& qa = qas[q];
                Turn turn;
                turn.turn_index = static_cast<int>(q + 1);
                turn.question_id = r.string(r.field(qa, "id", qa_path), qa_path + ".id");
                turn.question = r.string(r.field(qa, "question", qa_path), qa_path + ".question");

                const json& answers = r.array(r.field(qa, "answers", qa_path), qa_path + ".answers");
                for (std::size_t a = 0; a < answers.size(); ++a) {
                    const std::string ans_path = indexed(qa_path, "answers", a);
                    turn.reference_answers.push_back(
                        r.string(r.field(answers[a], "text", ans_path), ans_path + ".text"));
                }
                const json* gold = r.optional_field(qa, "orig_answer");
                std::string gold_path = qa_path + ".orig_answer";
                if (gold == nullptr) {
                    if (answers.empty()) {
                        throw ValidationError(std::string(source_name) + ": dialogue '" + dialogue.id +
                                              "' question '" + turn.question_id + "' has no answers");
                    }
                    gold = &answers[0];
                    gold_path = qa_path + ".answers[0]";
                }
                turn.answer_text = r.string(r.field(*gold, "text", gold_path), gold_path + ".text");
                if (turn.reference_answers.empty()) {
                    turn.reference_answers.push_back(turn.answer_text);
                }
                if (turn.answer_text == kUnanswerable) {
                    turn.answer_char_start = -1;
                    turn.answer_char_end = -1;
                } else {
                    const long cp_start = r.integer(r.field(*gold, "answer_start", gold_path), gold_path + ".answer_start");
                    if (cp_start < 0) {
                        throw ValidationError(std::string(source_name) + ": dialogue '" + dialogue.id +
                                              "': negative answer_start for an answerable question");
                    }
                    const auto start = text::codepoint_to_byte_offset(context, static_cast<std::size_t>(cp_start));
                    const auto end = text::codepoint_to_byte_offset(
                        context, static_cast<std::size_t>(cp_start) + text::codepoint_length(turn.answer_text));
                    turn.answer_char_start = static_cast<long>(start);
                    turn.answer_char_end = static_cast<long>(end);
                }
                dialogue.turns.push_back(std::move(turn));
            }
            try {
                validate_dialogue(dialogue);
            } catch (const ValidationError& e) {
                throw ValidationError(std::string(source_name) + ": " + e.what());
            }
            dialogues.push_back(std::move(dialogue));
        }
    }
    return dialogues;
}

std::vector<Dialogue> load_quac_like(const std::filesystem::path& path) {
    return parse_quac_like(read_file(path), path.string());
}

// ---- CANARD ------------------------------------------------------------------

std::vector<RewriteRecord> parse_canard(std::string_view json_text, std::string_view source_name) {
    const json root = parse_json(json_text, source_name);
    const Reader r(source_name);
    r.array(root, "$");
    std::vector<RewriteRecord> records;
    std::set<std::pair<std::string, int>> seen;
    for (std::size_t i = 0; i < root.size(); ++i) {
        const std::string path = "$[" + std::to_string(i) + "]";
        const json& entry = root[i];
        RewriteRecord record;
        record.dialogue_id = r.string(r.field(entry, "QuAC_dialog_id", path), path + ".QuAC_dialog_id");
        record.turn_index = static_cast<int>(r.integer(r.field(entry, "Question_no", path), path + ".Question_no"));
        record.original = r.string(r.field(entry, "Question", path), path + ".Question");
        if (const json* history = r.optional_field(entry, "History")) {
            r.array(*history, path + ".History");
            for (std::size_t h = 0; h < history->size(); ++h) {
                record.history_texts.push_back(r.string((*history)[h], path + ".History[" + std::to_string(h) + "]"));
            }
        }
        const json* rewrite = r.optional_field(entry, "Rewrite");
        if (rewrite == nullptr || !rewrite->is_string()) {
            throw ValidationError(std::string(source_name) + ": record " + path + " (" + record.dialogue_id + "#" +
                                  std::to_string(record.turn_index) + ") has no Rewrite string");
        }
        record.rewrite = rewrite->get<std::string>();
        if (record.rewrite.empty()) {
            throw ValidationError(std::string(source_name) + ": record " + path + " has an empty Rewrite");
        }
        if (!seen.emplace(record.dialogue_id, record.turn_index).second) {
            throw ValidationError(std::string(source_name) + ": duplicate rewrite for (" + record.dialogue_id + ", " +
                                  std::to_string(record.turn_index) + ")");
        }
        records.push_back(std::move(record));
    }
    return records;
}

std::vector<RewriteRecord> load_canard(const std::filesystem::path& path) {
    return parse_canard(read_file(path), path.string());
}

// ---- CoQA ----------------------------------------------------------------------

std::vector<Dialogue> parse_coqa_like(std::string_view json_text, std::string_view source_name) {
    const json root = parse_json(json_text, source_name);
    const Reader r(source_name);
    const json& data = r.array(r.field(root, "data", "$"), "$.data");
    std::vector<Dialogue> dialogues;
    for (std::size_t i = 0; i < data.size(); ++i) {
        const std::string path = indexed("$", "data", i);
        const json& story = data[i];
        Dialogue dialogue;
        dialogue.id = r.string(r.field(story, "id", path), path + ".id");
        std::string domain;
        if (const json* source = r.optional_field(story, "source")) {
            domain = r.string(*source, path + ".source");
        }
        std::string title;
        if (const json* filename = r.optional_field(story, "filename")) {
            title = r.string(*filename, path + ".filename");
        }
        const std::string text = r.string(r.field(story, "story", path), path + ".story");
        dialogue.document = Document::make(dialogue.id, text, title, domain, true);

        const json& questions = r.array(r.field(story, "questions", path), path + ".questions");
        const json& answers = r.array(r.field(story, "answers", path), path + ".answers");
        if (questions.size() != answers.size()) {
            throw ValidationError(std::string(source_name) + ": dialogue '" + dialogue.id + "' has " +
                                  std::to_string(questions.size()) + " questions but " +
                                  std::to_string(answers.size()) + " answers");
        }
        for (std::size_t q = 0; q < questions.size(); ++q) {
            const std::string q_path = indexed(path, "questions", q);
            const std::string a_path = indexed(path, "answers", q);
            const long q_turn = r.integer(r.field(questions[q], "turn_id", q_path), q_path + ".turn_id");
            const long a_turn = r.integer(r.field(answers[q], "turn_id", a_path), a_path + ".turn_id");
            if (q_turn != a_turn || q_turn != static_cast<long>(q + 1)) {
                throw ValidationError(std::string(source_name) + ": dialogue '" + dialogue.id +
                                      "' has misaligned turn ids at position " + std::to_string(q + 1));
            }
            Turn turn;
            turn.turn_index = static_cast<int>(q + 1);
            turn.question_id = dialogue.id + "_q#" + std::to_string(q_turn);
            turn.question = r.string(r.field(questions[q], "input_text", q_path), q_path + ".input_text");
            const std::string free_form = r.string(r.field(answers[q], "input_text", a_path), a_path + ".input_text");
            const long span_start = r.integer(r.field(answers[q], "span_start", a_path), a_path + ".span_start");
            const long span_end = r.integer(r.field(answers[q], "span_end", a_path), a_path + ".span_end");
            if (span_start < 0) {
                turn.answer_text = std::string(kUnanswerable);
                turn.reference_answers.push_back(std::string(kUnanswerable));
            } else {
                turn.answer_char_start =
                    static_cast<long>(text::codepoint_to_byte_offset(text, static_cast<std::size_t>(span_start)));
                turn.answer_char_end =
                    static_cast<long>(text::codepoint_to_byte_offset(text, static_cast<std::size_t>(span_end)));
                turn.answer_text = text.substr(static_cast<std::size_t>(turn.answer_char_start),
                                               static_cast<std::size_t>(turn.answer_char_end - turn.answer_char_start));
                if (const json* span_text = r.optional_field(answers[q], "span_text")) {
                    if (r.string(*span_text, a_path + ".span_text") != turn.answer_text) {
                        throw ValidationError(std::string(source_name) + ": dialogue '" + dialogue.id + "', turn " +
                                              std::to_string(q + 1) + ": span_text does not match story offsets");
                    }
                }
                turn.reference_answers.push_back(free_form);
            }
            if (const json* extra = r.optional_field(story, "additional_answers"); extra != nullptr && extra->is_object()) {
                for (const auto& [key, list] : extra->items()) {
                    if (list.is_array() && q < list.size() && list[q].contains("input_text") &&
                        list[q]["input_text"].is_string()) {
                        turn.reference_answers.push_back(list[q]["input_text"].get<std::string>());
                    }
                }
            }
            dialogue.turns.push_back(std::move(turn));
        }
        try {
            validate_dialogue(dialogue);
        } catch (const ValidationError& e) {
            throw ValidationError(std::string(source_name) + ": " + e.what());
        }
        dialogues.push_back(std::move(dialogue));
    }
    return dialogues;
}

std::vector<Dialogue> load_coqa_like(const std::filesystem::path& path) {
    return parse_coqa_like(read_file(path), path.string());
}

// ---- canonical format --------------------------------------------------------

std::string to_canonical_json(const Dialogue& dialogue) {
    json turns = json::array();
    for (const Turn& turn : dialogue.turns) {
        turns.push_back({{"turn_index", turn.turn_index},
                         {"question_id", turn.question_id},
                         {"question", turn.question},
                         {"answer_text", turn.answer_text},
                         {"answer_char_start", turn.answer_char_start},
                         {"answer_char_end", turn.answer_char_end},
                         {"reference_answers", turn.reference_answers}});
    }
    const Document& doc = dialogue.document;
    const json object = {{"id", dialogue.id},
                         {"document",
                          {{"id", doc.id},
                           {"text", doc.text},
                           {"title", doc.title},
                           {"domain", doc.domain},
                           {"has_sentinel", doc.has_sentinel}}},
                         {"turns", turns}};
    return object.dump();
}

Dialogue dialogue_from_canonical_json(std::string_view line) {
    const json object = parse_json(line, "canonical dialogue");
    const Reader r("canonical dialogue");
    Dialogue dialogue;
    dialogue.id = r.string(r.field(object, "id", "$"), "$.id");
    const json& doc = r.field(object, "document", "$");
    dialogue.document = Document::make(r.string(r.field(doc, "id", "$.document"), "$.document.id"),
                                       r.string(r.field(doc, "text", "$.document"), "$.document.text"),
                                       r.string(r.field(doc, "title", "$.document"), "$.document.title"),
                                       r.string(r.field(doc, "domain", "$.document"), "$.document.domain"),
                                       r.field(doc, "has_sentinel", "$.document").get<bool>());
    const json& turns = r.array(r.field(object, "turns", "$"), "$.turns");
    for (std::size_t i = 0; i < turns.size(); ++i) {
        const std::string path = indexed("$", "turns", i);
        const json& t = turns[i];
        Turn turn;
        turn.turn_index = static_cast<int>(r.integer(r.field(t, "turn_index", path), path + ".turn_index"));
        turn.question_id = r.string(r.field(t, "question_id", path), path + ".question_id");
        turn.question = r.string(r.field(t, "question", path), path + ".question");
        turn.answer_text = r.string(r.field(t, "answer_text", path), path + ".answer_text");
        turn.answer_char_start = r.integer(r.field(t, "answer_char_start", path), path + ".answer_char_start");
        turn.answer_char_end = r.integer(r.field(t, "answer_char_end", path), path + ".answer_char_end");
        turn.reference_answers = r.field(t, "reference_answers", path).get<std::vector<std::string>>();
        dialogue.turns.push_back(std::move(turn));
    }
    validate_dialogue(dialogue);
    return dialogue;
}

namespace {

template <typename T, typename Parse>
std::vector<T> read_jsonl(const std::filesystem::path& path, Parse parse) {
    std::ifstream in(path);
    if (!in) {
        throw ParseError(path.string() + ": cannot open file");
    }
    std::vector<T> out;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) {
            continue;
        }
        try {
            out.push_back(parse(line));
        } catch (const Error& e) {
            throw ParseError(path.string() + ":" + std::to_string(line_no) + ": " + e.what());
        } catch (const json::exception& e) {
            throw ParseError(path.string() + ":" + std::to_string(line_no) + ": " + e.what());
        }
    }
    return out;
}

template <typename T>
void write_jsonl(const std::filesystem::path& path, const std::vector<T>& items) {
    std::ofstream out(path, std::ios::binary);
    if (!out) {
        throw Error(path.string() + ": cannot open for writing");
    }
    for (const T& item : items) {
        out << to_canonical_json(item) << '\n';
    }
}

}  // namespace

void write_dialogues_jsonl(const std::filesystem::path& path, const std::vector<Dialogue>& dialogues) {
    write_jsonl(path, dialogues);
}

std::vector<Dialogue> read_dialogues_jsonl(const std::filesystem::path& path) {
    return read_jsonl<Dialogue>(path, [](const std::string& line) { return dialogue_from_canonical_json(line); });
}

std::string to_canonical_json(const QuestionPair& pair) {
    const json object = {{"dialogue_id", pair.dialogue_id},
                         {"turn_index", pair.turn_index},
                         {"original", pair.original},
                         {"self_contained", pair.self_contained},
                         {"provenance", std::string(to_string(pair.provenance))}};
    return object.dump();
}

QuestionPair pair_from_canonical_json(std::string_view line) {
    const json object = parse_json(line, "question pair");
    const Reader r("question pair");
    QuestionPair pair;
    pair.dialogue_id = r.string(r.field(object, "dialogue_id", "$"), "$.dialogue_id");
    pair.turn_index = static_cast<int>(r.integer(r.field(object, "turn_index", "$"), "$.turn_index"));
    pair.original = r.string(r.field(object, "original", "$"), "$.original");
    pair.self_contained = r.string(r.field(object, "self_contained", "$"), "$.self_contained");
    const std::string provenance = r.string(r.field(object, "provenance", "$"), "$.provenance");
    if (provenance != "human" && provenance != "synthetic") {
        throw ValidationError("unknown provenance '" + provenance + "'");
    }
    pair.provenance = provenance == "human" ? Provenance::human : Provenance::synthetic;
    return pair;
}

void write_pairs_jsonl(const std::filesystem::path& path, const std::vector<QuestionPair>& pairs) {
    write_jsonl(path, pairs);
}

std::vector<QuestionPair> read_pairs_jsonl(const std::filesystem::path& path) {
    return read_jsonl<QuestionPair>(path, [](const std::string& line) { return pair_from_canonical_json(line); });
}

// ---- operations ----------------------------------------------------------------

std::pair<std::vector<Dialogue>, std::vector<Dialogue>> split_dev(const std::vector<Dialogue>& dialogues,
                                                                  double fraction, std::uint64_t seed) {
    if (!(fraction > 0.0 && fraction < 1.0)) {
        throw ArgumentError("dev fraction must lie in (0, 1), got " + std::to_string(fraction));
    }
    const auto dev_count = static_cast<std::size_t>(std::llround(fraction * static_cast<double>(dialogues.size())));
    if (fraction * static_cast<double>(dialogues.size()) < 1.0 || dev_count == 0) {
        throw ArgumentError("dev fraction " + std::to_string(fraction) + " selects no dialogue out of " +
                            std::to_string(dialogues.size()));
    }
    std::vector<std::size_t> order(dialogues.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::mt19937_64 rng(seed);
    std::shuffle(order.begin(), order.end(), rng);
    std::vector<bool> is_dev(dialogues.size(), false);
    for (std::size_t i = 0; i < dev_count; ++i) {
        is_dev[order[i]] = true;
    }
    std::pair<std::vector<Dialogue>, std::vector<Dialogue>> out;
    for (std::size_t i = 0; i < dialogues.size(); ++i) {
        (is_dev[i] ? out.second : out.first).push_back(dialogues[i]);
    }
    return out;
}

ConversationHistory history_window(const Dialogue& dialogue, int t, std::size_t k) {
    if (t < 1 || static_cast<std::size_t>(t) > dialogue.turns.size()) {
        throw ArgumentError("turn " + std::to_string(t) + " out of range for dialogue '" + dialogue.id + "'");
    }
    const auto previous = static_cast<std::size_t>(t - 1);
    const std::size_t count = std::min(k, previous);
    ConversationHistory history;
    for (std::size_t i = previous - count; i < previous; ++i) {
        history.entries.push_back({dialogue.turns[i].question, dialogue.turns[i].answer_text});
    }
    return history;
}

std::vector<TokenSpan> history_answer_spans(const Dialogue& dialogue, int t, std::size_t k) {
    if (t < 1 || static_cast<std::size_t>(t) > dialogue.turns.size()) {
        throw ArgumentError("turn " + std::to_string(t) + " out of range for dialogue '" + dialogue.id + "'");
    }
    const auto previous = static_cast<std::size_t>(t - 1);
    const std::size_t count = std::min(k, previous);
    std::vector<TokenSpan> spans;
    for (std::size_t i = previous - count; i < previous; ++i) {
        const Turn& turn = dialogue.turns[i];
        if (auto span = char_span_to_tokens(dialogue.document, turn.answer_char_start, turn.answer_char_end)) {
            spans.push_back(*span);
        }
    }
    return spans;
}

PairingResult build_pairs(const std::vector<Dialogue>& dialogues, const std::vector<RewriteRecord>& rewrites,
                          const PairingRewriter& rewriter) {
    std::map<std::pair<std::string, int>, const RewriteRecord*> by_key;
    for (const RewriteRecord& record : rewrites) {
        by_key.emplace(std::make_pair(record.dialogue_id, record.turn_index), &record);
    }
    PairingResult result;
    for (const Dialogue& dialogue : dialogues) {
        for (const Turn& turn : dialogue.turns) {
            QuestionPair pair{dialogue.id, turn.turn_index, turn.question, {}, Provenance::synthetic};
            if (const auto it = by_key.find({dialogue.id, turn.turn_index}); it != by_key.end()) {
                pair.self_contained = it->second->rewrite;
                pair.provenance = Provenance::human;
                ++result.human_count;
            } else {
                RewriteRequest request{dialogue.id, turn.turn_index, turn.question,
                                       history_window(dialogue, turn.turn_index, dialogue.turns.size())};
                std::string failure;
                try {
                    pair.self_contained = rewriter(request);
                    if (pair.self_contained.empty()) {
                        failure = "rewriter returned an empty string";
                    }
                } catch (const std::exception& e) {
                    failure = e.what();
                }
                if (!failure.empty()) {
                    spdlog::warn("rewrite failed for ({}, {}): {}; keeping the original question", dialogue.id,
                                 turn.turn_index, failure);
                    result.errors.push_back({dialogue.id, turn.turn_index, failure});
                    pair.self_contained = turn.question;
                }
                ++result.synthetic_count;
            }
            if (pair.original.empty() || pair.self_contained.empty()) {
                throw ValidationError("dialogue '" + dialogue.id + "', turn " + std::to_string(turn.turn_index) +
                                      ": empty question");
            }
            result.pairs.push_back(std::move(pair));
        }
    }
    return result;
}

}  // namespace excord
