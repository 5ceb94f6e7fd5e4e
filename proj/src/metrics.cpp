#include "excord/metrics.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <set>
#include <sstream>

#include <spdlog/spdlog.h>

#include "excord/errors.hpp"
#include "json.hpp"

namespace excord {

using nlohmann::json;

namespace {

std::vector<std::string> normalized_tokens(std::string_view answer) {
    std::vector<std::string> tokens;
    std::istringstream in(normalize_answer(answer));
    std::string token;
    while (in >> token) tokens.push_back(token);
    return tokens;
}

bool is_unanswerable(std::string_view answer) {
    const auto begin = answer.find_first_not_of(" \t\n");
    const auto end = answer.find_last_not_of(" \t\n");
    return begin != std::string_view::npos && answer.substr(begin, end - begin + 1) == kUnanswerable;
}

double round1(double value) { return std::round(value * 10.0) / 10.0; }

}  // namespace

std::string normalize_answer(std::string_view answer) {
    std::string stripped;
    stripped.reserve(answer.size());
    for (const char ch : answer) {
        const auto c = static_cast<unsigned char>(ch);
        if (c < 0x80 && std::ispunct(c) != 0) continue;
        stripped += static_cast<char>(std::tolower(c));
    }
    static const std::set<std::string> articles{"a", "an", "the"};
    std::istringstream in(stripped);
    std::string word;
    std::string out;
    while (in >> word) {
        if (articles.count(word) != 0U) continue;
        if (!out.empty()) out += ' ';
        out += word;
    }
    return out;
}

double token_f1(std::string_view prediction, std::string_view reference) {
    const bool pred_none = is_unanswerable(prediction);
    const bool ref_none = is_unanswerable(reference);
    if (pred_none || ref_none) return pred_none && ref_none ? 1.0 : 0.0;
    const auto pred = normalized_tokens(prediction);
    const auto ref = normalized_tokens(reference);
    if (pred.empty() || ref.empty()) return pred.empty() && ref.empty() ? 1.0 : 0.0;
    std::map<std::string, int> counts;
    for (const auto& t : ref) ++counts[t];
    int common = 0;
    for (const auto& t : pred) {
        auto it = counts.find(t);
        if (it != counts.end() && it->second > 0) {
            --it->second;
            ++common;
        }
    }
    if (common == 0) return 0.0;
    const double precision = static_cast<double>(common) / static_cast<double>(pred.size());
    const double recall = static_cast<double>(common) / static_cast<double>(ref.size());
    return 2.0 * precision * recall / (precision + recall);
}

double token_f1(std::string_view prediction, std::span<const std::string> references) {
    if (references.empty()) throw ArgumentError("token_f1 needs at least one reference");
    double best = 0.0;
    for (const auto& reference : references) best = std::max(best, token_f1(prediction, std::string_view(reference)));
    return best;
}

double leave_one_out_f1(std::string_view prediction, std::span<const std::string> references) {
    if (references.size() < 2) return token_f1(prediction, references);
    double total = 0.0;
    for (std::size_t i = 0; i < references.size(); ++i) {
        std::vector<std::string> others;
        for (std::size_t j = 0; j < references.size(); ++j)
            if (j != i) others.push_back(references[j]);
        total += token_f1(prediction, others);
    }
    return total / static_cast<double>(references.size());
}

std::optional<double> human_f1(std::span<const std::string> references) {
    if (references.size() < 2) return std::nullopt;
    double total = 0.0;
    for (std::size_t i = 0; i < references.size(); ++i) {
        std::vector<std::string> others;
        for (std::size_t j = 0; j < references.size(); ++j)
            if (j != i) others.push_back(references[j]);
        total += token_f1(references[i], others);
    }
    return total / static_cast<double>(references.size());
}

HeqScores heq(std::span<const QuestionResult> results) {
    if (results.empty()) throw ArgumentError("HEQ over zero questions is undefined");
    std::map<std::string, bool> dialogue_success;
    std::size_t question_success = 0;
    for (const QuestionResult& r : results) {
        if (!r.human_f1) throw ArgumentError("question '" + r.question_id + "' has no human F1");
        const bool ok = r.model_f1 >= *r.human_f1;
        question_success += ok ? 1 : 0;
        auto [it, inserted] = dialogue_success.emplace(r.dialogue_id, ok);
        if (!inserted) it->second = it->second && ok;
    }
    const auto dialogues_ok = static_cast<std::size_t>(
        std::count_if(dialogue_success.begin(), dialogue_success.end(), [](const auto& kv) { return kv.second; }));
    return {100.0 * static_cast<double>(question_success) / static_cast<double>(results.size()),
            100.0 * static_cast<double>(dialogues_ok) / static_cast<double>(dialogue_success.size())};
}

EvalReport aggregate(std::span<const QuestionResult> results, std::span<const std::string> domains) {
    EvalReport report;
    report.question_count = results.size();
    std::set<std::string> dialogue_ids;
    double total = 0.0;
    std::map<std::string, std::pair<double, std::size_t>> per_domain;
    std::set<std::string> known(domains.begin(), domains.end());
    std::set<std::string> unknown_seen;
    bool all_human = !results.empty();
    for (const QuestionResult& r : results) {
        total += r.model_f1;
        dialogue_ids.insert(r.dialogue_id);
        all_human = all_human && r.human_f1.has_value();
        if (!known.empty()) {
            std::string label = r.domain;
            if (known.count(label) == 0U) {
                if (unknown_seen.insert(label).second) {
                    spdlog::warn("unknown domain label '{}' reported under 'other'", label);
                }
                label = "other";
            }
            auto& [sum, count] = per_domain[label];
            sum += r.model_f1;
            ++count;
        }
    }
    report.dialogue_count = dialogue_ids.size();
    report.overall_f1 = results.empty() ? 0.0 : 100.0 * total / static_cast<double>(results.size());
    for (const auto& [label, acc] : per_domain) {
        report.per_domain_f1[label] = 100.0 * acc.first / static_cast<double>(acc.second);
    }
    if (all_human) {
        const HeqScores scores = heq(results);
        report.heq_q = scores.heq_q;
        report.heq_d = scores.heq_d;
    }
    return report;
}

std::vector<QuestionResult> score_predictions(const std::map<std::string, std::string>& predictions,
                                              std::span<const Dialogue> gold) {
    std::vector<QuestionResult> results;
    std::size_t missing = 0;
    for (const Dialogue& dialogue : gold) {
        for (const Turn& turn : dialogue.turns) {
            const auto it = predictions.find(turn.question_id);
            const std::string prediction = it == predictions.end() ? std::string{} : it->second;
            missing += it == predictions.end() ? 1 : 0;
            std::vector<std::string> references = turn.reference_answers;
            if (references.empty()) references.push_back(turn.answer_text);
            results.push_back({turn.question_id, dialogue.id, leave_one_out_f1(prediction, references),
                               human_f1(references), dialogue.document.domain});
        }
    }
    if (missing > 0) spdlog::warn("{} gold questions have no prediction and score 0", missing);
    return results;
}

std::map<std::string, std::string> read_predictions(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ParseError(path.string() + ": cannot open predictions");
    try {
        json object;
        in >> object;
        return object.get<std::map<std::string, std::string>>();
    } catch (const json::exception& e) {
        throw ParseError(path.string() + ": predictions must be a JSON object of strings: " + e.what());
    }
}

void write_predictions(const std::filesystem::path& path, const std::map<std::string, std::string>& predictions) {
    std::ofstream out(path);
    if (!out) throw Error(path.string() + ": cannot open for writing");
    out << json(predictions).dump(2) << '\n';
}

std::string report_to_json(const EvalReport& report) {
    json object = {{"overall_f1", round1(report.overall_f1)},
                   {"question_count", report.question_count},
                   {"dialogue_count", report.dialogue_count}};
    object["heq_q"] = report.heq_q ? json(round1(*report.heq_q)) : json(nullptr);
    object["heq_d"] = report.heq_d ? json(round1(*report.heq_d)) : json(nullptr);
    json domains = json::object();
    for (const auto& [label, value] : report.per_domain_f1) domains[label] = round1(value);
    object["per_domain_f1"] = domains;
    return object.dump(2);
}

EvalReport report_from_json(std::string_view json_text) {
    try {
        const json object = json::parse(json_text);
        EvalReport report;
        report.overall_f1 = object.at("overall_f1").get<double>();
        report.question_count = object.at("question_count").get<std::size_t>();
        report.dialogue_count = object.at("dialogue_count").get<std::size_t>();
        if (!object.at("heq_q").is_null()) report.heq_q = object.at("heq_q").get<double>();
        if (!object.at("heq_d").is_null()) report.heq_d = object.at("heq_d").get<double>();
        report.per_domain_f1 = object.at("per_domain_f1").get<std::map<std::string, double>>();
        return report;
    } catch (const json::exception& e) {
        throw ParseError(std::string("invalid evaluation report: ") + e.what());
    }
}

std::string format_report_table(std::span<const std::pair<std::string, EvalReport>> rows) {
    std::size_t name_width = 5;
    for (const auto& [name, report] : rows) name_width = std::max(name_width, name.size());
    auto cell = [](std::optional<double> value) {
        if (!value) return std::string("-");
        char buffer[32];
        std::snprintf(buffer, sizeof buffer, "%.1f", *value);
        return std::string(buffer);
    };
    auto line = [&](const std::string& name, const std::string& f1, const std::string& q, const std::string& d) {
        char buffer[256];
        std::snprintf(buffer, sizeof buffer, "%-*s %7s %7s %7s\n", static_cast<int>(name_width), name.c_str(),
                      f1.c_str(), q.c_str(), d.c_str());
        return std::string(buffer);
    };
    std::string out = line("Model", "F1", "HEQ-Q", "HEQ-D");
    out += std::string(name_width + 24, '-') + "\n";
    for (const auto& [name, report] : rows) {
        out += line(name, cell(report.overall_f1), cell(report.heq_q), cell(report.heq_d));
    }
    return out;
}

std::vector<std::string> coqa_domains() {
    return {"mctest", "gutenberg", "race", "cnn", "wikipedia", "reddit", "science"};
}

}  // namespace excord
