#pragma once

#include <cstddef>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "excord/text.hpp"

namespace excord {

// Gold answer text of unanswerable questions and the token appended to every document.
inline constexpr std::string_view kUnanswerable = "CANNOTANSWER";

struct Document {
    std::string id;
    std::string text;
    std::string title;
    std::string domain;
    std::vector<text::Token> tokens;
    bool has_sentinel = false;

    // Tokenizes `text`. When `append_sentinel` is set the sentinel is appended
    // unless the text already ends with it, so it is present exactly once.
    static Document make(std::string id, std::string text, std::string title = {}, std::string domain = {},
                         bool append_sentinel = true);

    // Number of tokens excluding the trailing sentinel.
    std::size_t content_token_count() const noexcept { return tokens.size() - (has_sentinel ? 1 : 0); }
    std::size_t sentinel_token() const noexcept { return tokens.size() - 1; }

    bool operator==(const Document&) const = default;
};

// Answer offsets are UTF-8 byte offsets into Document::text; [start, end).
struct Turn {
    int turn_index = 1;
    std::string question_id;
    std::string question;
    std::string answer_text;
    long answer_char_start = -1;
    long answer_char_end = -1;
    // Every reference answer for scoring. QuAC dev files carry several; CoQA
    // contributes the free-form answer text here.
    std::vector<std::string> reference_answers;

    bool unanswerable() const noexcept { return answer_char_start < 0; }
    bool operator==(const Turn&) const = default;
};

struct Dialogue {
    std::string id;
    Document document;
    std::vector<Turn> turns;

    const Turn& turn(int t) const;
    bool operator==(const Dialogue&) const = default;
};

struct HistoryEntry {
    std::string question;
    std::string answer;
    bool operator==(const HistoryEntry&) const = default;
};

struct ConversationHistory {
    std::vector<HistoryEntry> entries;

    bool empty() const noexcept { return entries.empty(); }
    std::size_t size() const noexcept { return entries.size(); }
    bool operator==(const ConversationHistory&) const = default;
};

enum class Provenance { human, synthetic };

std::string_view to_string(Provenance provenance);

struct QuestionPair {
    std::string dialogue_id;
    int turn_index = 1;
    std::string original;
    std::string self_contained;
    Provenance provenance = Provenance::synthetic;

    bool operator==(const QuestionPair&) const = default;
};

struct RewriteRecord {
    std::string dialogue_id;
    int turn_index = 1;
    std::vector<std::string> history_texts;
    std::string original;
    std::string rewrite;

    bool operator==(const RewriteRecord&) const = default;
};

// Inclusive token range inside a Document.
struct TokenSpan {
    std::size_t start = 0;
    std::size_t end = 0;
    bool operator==(const TokenSpan&) const = default;
};

// Maps a byte range to the tokens it overlaps. Returns nullopt when it covers no token.
std::optional<TokenSpan> char_span_to_tokens(const Document& document, long char_start, long char_end);

// Gold span in token space; the sentinel token for unanswerable turns.
TokenSpan gold_token_span(const Document& document, const Turn& turn);

void validate_dialogue(const Dialogue& dialogue);

// ---- loaders ---------------------------------------------------------------

std::vector<Dialogue> load_quac_like(const std::filesystem::path& path);
std::vector<Dialogue> parse_quac_like(std::string_view json_text, std::string_view source_name = "<memory>");

std::vector<RewriteRecord> load_canard(const std::filesystem::path& path);
std::vector<RewriteRecord> parse_canard(std::string_view json_text, std::string_view source_name = "<memory>");

std::vector<Dialogue> load_coqa_like(const std::filesystem::path& path);
std::vector<Dialogue> parse_coqa_like(std::string_view json_text, std::string_view source_name = "<memory>");

// ---- canonical format ------------------------------------------------------
// One JSON object per dialogue per line, sorted keys. Schema: docs/dialogue.schema.json.

std::string to_canonical_json(const Dialogue& dialogue);
Dialogue dialogue_from_canonical_json(std::string_view line);
void write_dialogues_jsonl(const std::filesystem::path& path, const std::vector<Dialogue>& dialogues);
std::vector<Dialogue> read_dialogues_jsonl(const std::filesystem::path& path);

std::string to_canonical_json(const QuestionPair& pair);
QuestionPair pair_from_canonical_json(std::string_view line);
void write_pairs_jsonl(const std::filesystem::path& path, const std::vector<QuestionPair>& pairs);
std::vector<QuestionPair> read_pairs_jsonl(const std::filesystem::path& path);

// ---- operations ------------------------------------------------------------

// Deterministic dialogue-level split. Dev size is round(fraction * n).
std::pair<std::vector<Dialogue>, std::vector<Dialogue>> split_dev(const std::vector<Dialogue>& dialogues,
                                                                  double fraction, std::uint64_t seed);

// The last min(k, t-1) turns before turn t.
ConversationHistory history_window(const Dialogue& dialogue, int t, std::size_t k);

// Token spans of the answers inside the same window; unanswerable turns are skipped.
std::vector<TokenSpan> history_answer_spans(const Dialogue& dialogue, int t, std::size_t k);

struct RewriteRequest {
    std::string dialogue_id;
    int turn_index = 1;
    std::string question;
    ConversationHistory history;
};

using PairingRewriter = std::function<std::string(const RewriteRequest&)>;

struct PairingError {
    std::string dialogue_id;
    int turn_index = 1;
    std::string message;
};

struct PairingResult {
    std::vector<QuestionPair> pairs;
    std::vector<PairingError> errors;
    std::size_t human_count = 0;
    std::size_t synthetic_count = 0;
};

// One pair per turn, in (dialogue order, turn order). Human rewrites come from
// matching records; every other turn is rewritten with the full preceding history.
PairingResult build_pairs(const std::vector<Dialogue>& dialogues, const std::vector<RewriteRecord>& rewrites,
                          const PairingRewriter& rewriter);

}  // namespace excord
