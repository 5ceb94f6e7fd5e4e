#pragma once

#include <cstddef>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "excord/data_model.hpp"

namespace excord {

// Answer normalization shared by every F1 computation, applied in order:
//   1. ASCII lower-casing
//   2. removal of ASCII punctuation characters
//   3. removal of the whole words "a", "an", "the"
//   4. whitespace collapse (split on whitespace, join with one space)
std::string normalize_answer(std::string_view answer);

// Bag-of-tokens F1 of `prediction` against each reference, maximized over
// references. The unanswerable marker only matches itself (1 or 0).
double token_f1(std::string_view prediction, std::span<const std::string> references);
double token_f1(std::string_view prediction, std::string_view reference);

// With two or more references: mean over i of token_f1 against all references
// but the i-th. With one reference: plain token_f1.
double leave_one_out_f1(std::string_view prediction, std::span<const std::string> references);

// Human agreement: mean over i of token_f1(reference_i, others). nullopt with
// fewer than two references.
std::optional<double> human_f1(std::span<const std::string> references);

struct QuestionResult {
    std::string question_id;
    std::string dialogue_id;
    double model_f1 = 0.0;
    std::optional<double> human_f1;
    std::string domain;
};

struct HeqScores {
    double heq_q = 0.0;
    double heq_d = 0.0;
};

// Percentages of questions (dialogues) where model F1 >= human F1 (for every
// question of the dialogue). Throws ArgumentError on empty input or a result
// without human_f1.
HeqScores heq(std::span<const QuestionResult> results);

struct EvalReport {
    double overall_f1 = 0.0;
    std::optional<double> heq_q;
    std::optional<double> heq_d;
    std::map<std::string, double> per_domain_f1;
    std::size_t question_count = 0;
    std::size_t dialogue_count = 0;
};

// Overall and per-domain mean F1 (x100). Per-domain output is produced when
// `domains` is non-empty; labels outside it are collected under "other".
// HEQ is reported only when every result carries human_f1.
EvalReport aggregate(std::span<const QuestionResult> results, std::span<const std::string> domains = {});

// Scores a prediction map (question id -> answer) against gold dialogues.
std::vector<QuestionResult> score_predictions(const std::map<std::string, std::string>& predictions,
                                              std::span<const Dialogue> gold);

std::map<std::string, std::string> read_predictions(const std::filesystem::path& path);
void write_predictions(const std::filesystem::path& path, const std::map<std::string, std::string>& predictions);

// One-decimal JSON rendering.
std::string report_to_json(const EvalReport& report);
EvalReport report_from_json(std::string_view json_text);

// Fixed-width "F1 HEQ-Q HEQ-D" comparison table, one row per named report.
std::string format_report_table(std::span<const std::pair<std::string, EvalReport>> rows);

// The seven CoQA source labels.
std::vector<std::string> coqa_domains();

}  // namespace excord
