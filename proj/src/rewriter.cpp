#include "excord/rewriter.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <numeric>
#include <random>
#include <set>
#include <sstream>

#include "excord/errors.hpp"
#include "json.hpp"

namespace excord {

using nlohmann::json;

// ---- DecodingConfig ------------------------------------------------------------

void DecodingConfig::validate() const {
    std::vector<std::string> problems;
    if (beam_size < 1) problems.push_back("beam_size must be >= 1");
    if (top_k < 1) problems.push_back("top_k must be >= 1");
    if (!(temperature > 0.0) || !std::isfinite(temperature)) problems.push_back("temperature must be > 0");
    if (max_output_tokens < 1) problems.push_back("max_output_tokens must be >= 1");
    if (!problems.empty()) {
        std::string message = "invalid decoding config:";
        for (const auto& p : problems) message += " " + p + ";";
        throw ArgumentError(message);
    }
}

std::string DecodingConfig::canonical() const {
    const json object = {{"beam_size", beam_size},
                         {"top_k", top_k},
                         {"temperature", temperature},
                         {"max_output_tokens", max_output_tokens},
                         {"seed", seed}};
    return object.dump();
}

// ---- input serialization -------------------------------------------------------

namespace {

void append_escaped(std::string& out, std::string_view content) {
    for (const char ch : content) {
        if (ch == '<' || ch == '\\') {
            out += '\\';
        }
        out += ch;
    }
}

}  // namespace

std::vector<std::string> flatten_history(const ConversationHistory& history) {
    std::vector<std::string> texts;
    texts.reserve(history.size() * 2);
    for (const HistoryEntry& entry : history.entries) {
        texts.push_back(entry.question);
        texts.push_back(entry.answer);
    }
    return texts;
}

std::string serialize_rewrite_input(std::string_view question, std::span<const std::string> history_texts) {
    std::string out;
    for (std::size_t i = 0; i < history_texts.size(); ++i) {
        if (i > 0) {
            out += ' ';
            out += kTurnSeparator;
            out += ' ';
        }
        append_escaped(out, history_texts[i]);
    }
    if (!history_texts.empty()) {
        out += ' ';
    }
    out += kQuestionSeparator;
    out += ' ';
    append_escaped(out, question);
    return out;
}

std::string serialize_rewrite_input(std::string_view question, const ConversationHistory& history) {
    const auto texts = flatten_history(history);
    return serialize_rewrite_input(question, texts);
}

RewriteInput parse_rewrite_input(std::string_view input) {
    RewriteInput parsed;
    std::string current;
    bool in_question = false;
    std::size_t i = 0;
    auto separator_at = [&](std::string_view sep) { return input.substr(i, sep.size()) == sep; };
    // An unescaped separator is always surrounded by exactly one space on each
    // side (no leading space before "<q>" when the history is empty).
    while (i < input.size()) {
        const char ch = input[i];
        if (ch == '\\') {
            if (i + 1 >= input.size()) {
                throw ParseError("rewrite input ends with a dangling escape");
            }
            current += input[i + 1];
            i += 2;
            continue;
        }
        if (ch == '<') {
            if (in_question) {
                throw ParseError("unescaped '<' inside the question of a rewrite input");
            }
            const bool is_turn = separator_at(kTurnSeparator);
            const bool is_question = separator_at(kQuestionSeparator);
            if (!is_turn && !is_question) {
                throw ParseError("unescaped '<' that is not a separator in rewrite input");
            }
            const std::size_t sep_len = is_turn ? kTurnSeparator.size() : kQuestionSeparator.size();
            const bool at_start = i == 0 && parsed.history_texts.empty();
            if (!at_start) {
                if (current.empty() || current.back() != ' ') {
                    throw ParseError("separator without a preceding space in rewrite input");
                }
                current.pop_back();
                parsed.history_texts.push_back(std::move(current));
                current.clear();
            } else if (is_turn) {
                throw ParseError("rewrite input starts with a turn separator");
            }
            i += sep_len;
            if (i >= input.size() || input[i] != ' ') {
                throw ParseError("separator without a following space in rewrite input");
            }
            ++i;
            in_question = is_question;
            continue;
        }
        current += ch;
        ++i;
    }
    if (!in_question) {
        throw ParseError("rewrite input has no question separator");
    }
    parsed.question = std::move(current);
    return parsed;
}

// ---- entities ------------------------------------------------------------------

namespace {

const std::set<std::string>& particles() {
    static const std::set<std::string> words{"da", "de", "di", "del", "della", "van", "von", "der", "den", "la", "le", "du"};
    return words;
}

const std::set<std::string>& leading_function_words() {
    static const std::set<std::string> words{
        "what", "where", "when", "who", "whom", "whose", "why",  "how",   "which", "did",  "does",
        "do",   "was",   "were", "is",  "are",  "the",   "a",    "an",    "in",    "on",   "at",
        "and",  "but",   "has",  "have", "had", "can",   "could", "will", "would", "after", "before",
        "then", "so",    "he",   "she", "they", "it",    "his",  "her",   "their", "any",  "are"};
    return words;
}

}  // namespace

std::vector<std::string> history_entities(std::span<const std::string> history_texts) {
    std::vector<std::string> entities;
    for (auto text_it = history_texts.rbegin(); text_it != history_texts.rend(); ++text_it) {
        const std::string& source = *text_it;
        const auto tokens = text::tokenize(source);
        std::vector<std::string> found;
        std::size_t i = 0;
        while (i < tokens.size()) {
            if (!text::starts_upper(tokens[i].text)) {
                ++i;
                continue;
            }
            std::size_t begin = i;
            std::size_t end = i;  // exclusive end of the last capitalized token
            std::size_t j = i;
            while (j < tokens.size()) {
                if (text::starts_upper(tokens[j].text)) {
                    end = ++j;
                } else if (particles().count(tokens[j].text) != 0U && j + 1 < tokens.size() &&
                           text::starts_upper(tokens[j + 1].text)) {
                    ++j;
                } else {
                    break;
                }
            }
            while (begin < end && leading_function_words().count(text::ascii_lower(tokens[begin].text)) != 0U) {
                ++begin;
            }
            std::size_t capitals = 0;
            for (std::size_t k = begin; k < end; ++k) {
                capitals += text::starts_upper(tokens[k].text) ? 1 : 0;
            }
            if (capitals >= 2) {
                found.push_back(source.substr(tokens[begin].begin, tokens[end - 1].end - tokens[begin].begin));
            }
            i = std::max(j, i + 1);
        }
        for (auto it = found.rbegin(); it != found.rend(); ++it) {
            if (std::find(entities.begin(), entities.end(), *it) == entities.end()) {
                entities.push_back(*it);
            }
        }
    }
    return entities;
}

// ---- backends ------------------------------------------------------------------

FitReport RewriterBackend::fine_tune(std::span<const RewriteExample>, const RewriterTrainConfig&) {
    throw CapabilityError("rewriter backend '" + identity() + "' does not support training");
}

RuleRewriter::RuleRewriter(std::vector<std::pair<std::string, std::string>> rules) {
    for (auto& [pattern, replacement] : rules) {
        Rule rule;
        for (auto& word : text::token_strings(pattern)) {
            rule.pattern.push_back(text::ascii_lower(word));
        }
        if (rule.pattern.empty()) {
            throw ArgumentError("rewrite rule with an empty pattern");
        }
        rule.replacement = std::move(replacement);
        rules_.push_back(std::move(rule));
    }
    // Longest pattern first; ties keep table order.
    std::stable_sort(rules_.begin(), rules_.end(),
                     [](const Rule& a, const Rule& b) { return a.pattern.size() > b.pattern.size(); });
}

RuleRewriter RuleRewriter::from_json_file(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) {
        throw ParseError(path.string() + ": cannot open rule table");
    }
    json object;
    try {
        in >> object;
    } catch (const json::parse_error& e) {
        throw ParseError(path.string() + ": malformed JSON: " + e.what());
    }
    if (!object.is_object()) {
        throw ParseError(path.string() + ": rule table must be a JSON object");
    }
    std::vector<std::pair<std::string, std::string>> rules;
    for (const auto& [key, value] : object.items()) {
        if (!value.is_string()) {
            throw ParseError(path.string() + ": rule '" + key + "' must map to a string");
        }
        rules.emplace_back(key, value.get<std::string>());
    }
    return RuleRewriter(std::move(rules));
}

RuleRewriter RuleRewriter::pronoun_resolver() {
    const std::string entity(kEntityPlaceholder);
    return RuleRewriter({{"he", entity}, {"she", entity}, {"him", entity}});
}

std::string RuleRewriter::identity() const {
    std::string flat = "rules";
    for (const Rule& rule : rules_) {
        for (const auto& word : rule.pattern) flat += "|" + word;
        flat += "=>" + rule.replacement;
    }
    return "rules:" + text::hex64(text::fnv1a64(flat));
}

std::string RuleRewriter::apply(std::string_view question, std::span<const std::string> history_texts) const {
    if (history_texts.empty()) {
        return std::string(question);
    }
    const auto tokens = text::tokenize(question);
    std::vector<std::string> lowered;
    lowered.reserve(tokens.size());
    for (const auto& token : tokens) lowered.push_back(text::ascii_lower(token.text));

    std::optional<std::vector<std::string>> entities;
    std::string out;
    std::size_t copied = 0;
    std::size_t i = 0;
    while (i < tokens.size()) {
        bool replaced = false;
        for (const Rule& rule : rules_) {
            if (i + rule.pattern.size() > tokens.size() ||
                !std::equal(rule.pattern.begin(), rule.pattern.end(), lowered.begin() + static_cast<long>(i))) {
                continue;
            }
            std::string replacement = rule.replacement;
            if (replacement == kEntityPlaceholder) {
                if (!entities) entities = history_entities(history_texts);
                if (entities->empty()) continue;
                replacement = entities->front();
            }
            out.append(question.substr(copied, tokens[i].begin - copied));
            out += replacement;
            copied = tokens[i + rule.pattern.size() - 1].end;
            i += rule.pattern.size();
            replaced = true;
            break;
        }
        if (!replaced) ++i;
    }
    out.append(question.substr(copied));
    return out;
}

std::string RuleRewriter::generate(std::string_view input_text, const DecodingConfig&) const {
    const RewriteInput input = parse_rewrite_input(input_text);
    return apply(input.question, input.history_texts);
}

// ---- SubstitutionRewriter ------------------------------------------------------

namespace {

std::size_t word_bucket(std::string_view word) {
    return text::fnv1a64(text::ascii_lower(word)) % SubstitutionRewriter::kWordBuckets;
}

std::vector<double> log_softmax(const std::vector<double>& logits) {
    const double max = *std::max_element(logits.begin(), logits.end());
    double sum = 0.0;
    for (const double v : logits) sum += std::exp(v - max);
    const double log_z = max + std::log(sum);
    std::vector<double> out(logits.size());
    for (std::size_t i = 0; i < logits.size(); ++i) out[i] = logits[i] - log_z;
    return out;
}

bool equal_ignore_case(std::string_view a, std::string_view b) { return text::ascii_lower(a) == text::ascii_lower(b); }

}  // namespace

SubstitutionRewriter::SubstitutionRewriter() : word_bias_(kWordBuckets, -2.0), rank_weight_(kMaxCandidates, 0.0) {}

std::string SubstitutionRewriter::identity() const {
    std::ostringstream flat;
    flat.precision(17);
    for (const double v : word_bias_) flat << v << ',';
    for (const double v : rank_weight_) flat << v << ',';
    return "substitution:" + text::hex64(text::fnv1a64(flat.str()));
}

std::vector<double> SubstitutionRewriter::choice_logits(std::string_view word, std::size_t candidates) const {
    std::vector<double> logits(candidates + 1, 0.0);
    const double bias = word_bias_[word_bucket(word)];
    for (std::size_t c = 0; c < candidates; ++c) logits[c + 1] = bias + rank_weight_[c];
    return logits;
}

std::string SubstitutionRewriter::generate(std::string_view input_text, const DecodingConfig& config) const {
    config.validate();
    const RewriteInput input = parse_rewrite_input(input_text);
    if (input.history_texts.empty()) {
        return input.question;
    }
    const auto tokens = text::tokenize(input.question);
    auto entities = history_entities(input.history_texts);
    if (entities.size() > kMaxCandidates) entities.resize(kMaxCandidates);
    const std::size_t steps = std::min(tokens.size(), static_cast<std::size_t>(config.max_output_tokens));
    const StepScorer scorer = [&](std::span<const int> prefix) {
        return choice_logits(tokens[prefix.size()].text, entities.size());
    };
    const DecodedSequence best = sampled_beam_search(steps, scorer, config, text::fnv1a64(input_text));

    std::string out;
    std::size_t copied = 0;
    for (std::size_t i = 0; i < best.choices.size(); ++i) {
        if (best.choices[i] == 0) continue;
        out.append(input.question, copied, tokens[i].begin - copied);
        out += entities[static_cast<std::size_t>(best.choices[i] - 1)];
        copied = tokens[i].end;
    }
    out.append(input.question, copied);
    return out;
}

std::optional<SubstitutionRewriter::Alignment> SubstitutionRewriter::align(const RewriteExample& example) {
    const RewriteInput input = parse_rewrite_input(example.input_text);
    auto entities = history_entities(input.history_texts);
    if (entities.size() > kMaxCandidates) entities.resize(kMaxCandidates);
    std::vector<std::vector<std::string>> candidate_words;
    for (const auto& entity : entities) candidate_words.push_back(text::token_strings(entity));

    Alignment alignment;
    alignment.words = text::token_strings(input.question);
    alignment.candidates = entities.size();
    const auto target = text::token_strings(example.target_text);
    std::size_t j = 0;
    for (const auto& word : alignment.words) {
        if (j < target.size() && equal_ignore_case(word, target[j])) {
            alignment.targets.push_back(0);
            ++j;
            continue;
        }
        bool matched = false;
        for (std::size_t c = 0; c < candidate_words.size() && !matched; ++c) {
            const auto& cand = candidate_words[c];
            if (j + cand.size() > target.size()) continue;
            matched = std::equal(cand.begin(), cand.end(), target.begin() + static_cast<long>(j),
                                 [](const std::string& a, const std::string& b) { return equal_ignore_case(a, b); });
            if (matched) {
                alignment.targets.push_back(c + 1);
                j += cand.size();
            }
        }
        if (!matched) return std::nullopt;
    }
    if (j != target.size()) return std::nullopt;
    return alignment;
}

std::optional<double> SubstitutionRewriter::loss(std::span<const RewriteExample> examples) const {
    double total = 0.0;
    std::size_t count = 0;
    for (const auto& example : examples) {
        const auto alignment = align(example);
        if (!alignment) continue;
        for (std::size_t i = 0; i < alignment->words.size(); ++i) {
            const auto logp = log_softmax(choice_logits(alignment->words[i], alignment->candidates));
            total -= logp[alignment->targets[i]];
        }
        ++count;
    }
    if (count == 0) return std::nullopt;
    return total / static_cast<double>(count);
}

FitReport SubstitutionRewriter::fine_tune(std::span<const RewriteExample> examples, const RewriterTrainConfig& config) {
    if (config.epochs < 1 || !(config.learning_rate > 0.0) || config.heldout_fraction < 0.0 ||
        config.heldout_fraction >= 1.0) {
        throw ArgumentError("invalid rewriter training config");
    }
    std::vector<std::size_t> order(examples.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::mt19937_64 rng(config.seed);
    std::shuffle(order.begin(), order.end(), rng);
    const auto heldout_count = static_cast<std::size_t>(config.heldout_fraction * static_cast<double>(examples.size()));
    std::vector<RewriteExample> heldout;
    std::vector<Alignment> train;
    FitReport report;
    for (std::size_t i = 0; i < order.size(); ++i) {
        const RewriteExample& example = examples[order[i]];
        if (i < heldout_count) {
            heldout.push_back(example);
            continue;
        }
        if (auto alignment = align(example)) {
            train.push_back(std::move(*alignment));
        } else {
            ++report.skipped_examples;
        }
    }
    report.usable_examples = train.size();
    report.heldout_loss_before = loss(heldout).value_or(0.0);

    for (int epoch = 0; epoch < config.epochs; ++epoch) {
        std::shuffle(train.begin(), train.end(), rng);
        double epoch_loss = 0.0;
        for (const Alignment& alignment : train) {
            for (std::size_t i = 0; i < alignment.words.size(); ++i) {
                const std::size_t bucket = word_bucket(alignment.words[i]);
                const auto logp = log_softmax(choice_logits(alignment.words[i], alignment.candidates));
                epoch_loss -= logp[alignment.targets[i]];
                for (std::size_t c = 0; c < alignment.candidates; ++c) {
                    const double residual = std::exp(logp[c + 1]) - (alignment.targets[i] == c + 1 ? 1.0 : 0.0);
                    word_bias_[bucket] -= config.learning_rate * residual;
                    rank_weight_[c] -= config.learning_rate * residual;
                }
            }
        }
        report.epoch_losses.push_back(train.empty() ? 0.0 : epoch_loss / static_cast<double>(train.size()));
    }
    report.heldout_loss_after = loss(heldout).value_or(0.0);
    return report;
}

void SubstitutionRewriter::save(const std::filesystem::path& path) const {
    std::ofstream out(path);
    if (!out) throw Error(path.string() + ": cannot open for writing");
    out << json{{"kind", "substitution"}, {"word_bias", word_bias_}, {"rank_weight", rank_weight_}}.dump() << '\n';
}

SubstitutionRewriter SubstitutionRewriter::load(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ParseError(path.string() + ": cannot open rewriter model");
    json object;
    try {
        in >> object;
    } catch (const json::parse_error& e) {
        throw ParseError(path.string() + ": malformed JSON: " + e.what());
    }
    SubstitutionRewriter model;
    if (object.value("kind", "") != "substitution") {
        throw ParseError(path.string() + ": not a substitution rewriter model");
    }
    auto bias = object.at("word_bias").get<std::vector<double>>();
    auto rank = object.at("rank_weight").get<std::vector<double>>();
    if (bias.size() != kWordBuckets || rank.size() != kMaxCandidates) {
        throw ParseError(path.string() + ": rewriter model has the wrong parameter shapes");
    }
    model.word_bias_ = std::move(bias);
    model.rank_weight_ = std::move(rank);
    return model;
}

// ---- operations ----------------------------------------------------------------

std::string rewrite(std::string_view question, const ConversationHistory& history, const RewriterBackend& backend,
                    const DecodingConfig& config) {
    std::string input = serialize_rewrite_input(question, history);
    std::string output;
    try {
        output = backend.generate(input, config);
    } catch (const std::exception& e) {
        throw RewriteError(std::string("rewriter backend failed: ") + e.what(), std::move(input));
    }
    if (output.empty()) {
        throw RewriteError("rewriter backend returned an empty rewrite", std::move(input));
    }
    return output;
}

std::vector<RewriteExample> rewrite_examples(std::span<const RewriteRecord> records) {
    std::vector<RewriteExample> examples;
    examples.reserve(records.size());
    for (const auto& record : records) {
        examples.push_back({serialize_rewrite_input(record.original, record.history_texts), record.rewrite});
    }
    return examples;
}

FitReport fine_tune_rewriter(RewriterBackend& backend, std::span<const RewriteRecord> records,
                             const RewriterTrainConfig& config) {
    if (!backend.trainable()) {
        throw CapabilityError("rewriter backend '" + backend.identity() + "' does not support training");
    }
    const auto examples = rewrite_examples(records);
    return backend.fine_tune(examples, config);
}

// ---- decoding ----------------------------------------------------------------

DecodedSequence sampled_beam_search(std::size_t steps, const StepScorer& scorer, const DecodingConfig& config,
                                    std::uint64_t stream) {
    config.validate();
    std::mt19937_64 rng(config.seed ^ (stream * 0x9E3779B97F4A7C15ULL));
    std::uniform_real_distribution<double> uniform(std::numeric_limits<double>::min(), 1.0);

    std::vector<DecodedSequence> beams(1);
    for (std::size_t step = 0; step < steps; ++step) {
        std::vector<DecodedSequence> expanded;
        for (const DecodedSequence& beam : beams) {
            std::vector<double> logits = scorer(beam.choices);
            if (logits.empty()) {
                throw ContractError("step scorer returned no choices");
            }
            for (double& v : logits) v /= config.temperature;
            const auto logp = log_softmax(logits);

            std::vector<std::size_t> order(logp.size());
            std::iota(order.begin(), order.end(), std::size_t{0});
            const std::size_t k = std::min(order.size(), static_cast<std::size_t>(config.top_k));
            std::partial_sort(order.begin(), order.begin() + static_cast<long>(k), order.end(),
                              [&](std::size_t a, std::size_t b) { return logp[a] > logp[b] || (logp[a] == logp[b] && a < b); });
            order.resize(k);

            double max_kept = -std::numeric_limits<double>::infinity();
            for (const std::size_t idx : order) max_kept = std::max(max_kept, logp[idx]);
            double z = 0.0;
            for (const std::size_t idx : order) z += std::exp(logp[idx] - max_kept);
            const double log_z = max_kept + std::log(z);

            std::vector<std::pair<double, std::size_t>> keyed;
            for (const std::size_t idx : order) {
                const double gumbel = -std::log(-std::log(uniform(rng)));
                keyed.emplace_back(logp[idx] - log_z + gumbel, idx);
            }
            std::sort(keyed.begin(), keyed.end(), [](const auto& a, const auto& b) { return a.first > b.first; });
            const std::size_t draws = std::min(keyed.size(), static_cast<std::size_t>(config.beam_size));
            for (std::size_t d = 0; d < draws; ++d) {
                DecodedSequence next = beam;
                next.choices.push_back(static_cast<int>(keyed[d].second));
                next.log_prob += logp[keyed[d].second] - log_z;
                expanded.push_back(std::move(next));
            }
        }
        std::stable_sort(expanded.begin(), expanded.end(),
                         [](const DecodedSequence& a, const DecodedSequence& b) { return a.log_prob > b.log_prob; });
        if (expanded.size() > static_cast<std::size_t>(config.beam_size)) {
            expanded.resize(static_cast<std::size_t>(config.beam_size));
        }
        beams = std::move(expanded);
    }
    return beams.front();
}

// ---- cache -------------------------------------------------------------------

std::string rewrite_config_hash(const RewriterBackend& backend, const DecodingConfig& config) {
    return text::hex64(text::fnv1a64(backend.identity() + "|" + config.canonical()));
}

RewriteCache::RewriteCache(std::filesystem::path path) : path_(std::move(path)) {
    std::ifstream in(path_);
    if (!in) {
        return;
    }
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        try {
            const json object = json::parse(line);
            const std::string dialogue_id = object.at("dialogue_id").get<std::string>();
            const int turn_index = object.at("turn_index").get<int>();
            const std::string rewrite = object.at("rewrite").get<std::string>();
            entries_[{dialogue_id, turn_index, object.at("config_hash").get<std::string>()}] = rewrite;
            any_.emplace(std::make_pair(dialogue_id, turn_index), rewrite);
        } catch (const json::exception& e) {
            throw ParseError(path_.string() + ":" + std::to_string(line_no) + ": " + e.what());
        }
    }
}

std::optional<std::string> RewriteCache::lookup(const std::string& dialogue_id, int turn_index,
                                                const std::string& config_hash) const {
    const auto it = entries_.find({dialogue_id, turn_index, config_hash});
    if (it == entries_.end()) return std::nullopt;
    return it->second;
}

std::optional<std::string> RewriteCache::lookup_any(const std::string& dialogue_id, int turn_index) const {
    const auto it = any_.find({dialogue_id, turn_index});
    if (it == any_.end()) return std::nullopt;
    return it->second;
}

void RewriteCache::store(const RewriteCacheEntry& entry) {
    entries_[{entry.dialogue_id, entry.turn_index, entry.config_hash}] = entry.rewrite;
    any_.emplace(std::make_pair(entry.dialogue_id, entry.turn_index), entry.rewrite);
    if (path_.empty()) return;
    std::ofstream out(path_, std::ios::app);
    if (!out) throw Error(path_.string() + ": cannot append to rewrite cache");
    out << json{{"dialogue_id", entry.dialogue_id},
                {"turn_index", entry.turn_index},
                {"original", entry.original},
                {"rewrite", entry.rewrite},
                {"config_hash", entry.config_hash}}
               .dump()
        << '\n';
}

PairingRewriter make_pairing_rewriter(const RewriterBackend& backend, DecodingConfig config, RewriteCache* cache) {
    config.validate();
    const std::string hash = rewrite_config_hash(backend, config);
    return [&backend, config, cache, hash](const RewriteRequest& request) {
        if (cache != nullptr) {
            if (auto hit = cache->lookup(request.dialogue_id, request.turn_index, hash)) {
                return *hit;
            }
        }
        std::string output = rewrite(request.question, request.history, backend, config);
        if (cache != nullptr) {
            cache->store({request.dialogue_id, request.turn_index, request.question, output, hash});
        }
        return output;
    };
}

}  // namespace excord
