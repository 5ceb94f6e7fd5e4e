#include "excord/qa_model.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <random>

#include <spdlog/spdlog.h>

#include "excord/errors.hpp"
#include "json.hpp"

namespace excord {

using autograd::Var;
using nlohmann::json;

// ---- encoding ----------------------------------------------------------------

void EncodingLimits::validate() const {
    std::vector<std::string> problems;
    if (max_query_len < 1) problems.push_back("max_query_len must be >= 1");
    if (max_sequence_len < max_query_len + 5) problems.push_back("max_sequence_len must exceed max_query_len + 4");
    if (doc_stride < 1) problems.push_back("doc_stride must be >= 1");
    if (problems.empty() && doc_stride > doc_window_len()) {
        problems.push_back("doc_stride must not exceed the document window length");
    }
    if (!problems.empty()) {
        std::string message = "invalid encoding limits:";
        for (const auto& p : problems) message += " " + p + ";";
        throw ArgumentError(message);
    }
}

int Vocabulary::id(std::string_view word) const {
    const auto buckets = static_cast<std::uint64_t>(size - kFirstWord);
    return kFirstWord + static_cast<int>(text::fnv1a64(text::ascii_lower(word)) % buckets);
}

std::size_t EncodedInput::active_length() const noexcept {
    std::size_t n = 0;
    while (n < attention_mask.size() && attention_mask[n]) ++n;
    return n;
}

std::optional<std::size_t> EncodedInput::position_of(std::size_t doc_token) const noexcept {
    if (doc_token < window_start || doc_token >= window_start + window_tokens) return std::nullopt;
    return 1 + (doc_token - window_start);
}

bool EncodedInput::same_geometry(const EncodedInput& other) const noexcept {
    return size() == other.size() && document_token_mask == other.document_token_mask &&
           window_start == other.window_start && window_tokens == other.window_tokens &&
           sentinel_position == other.sentinel_position;
}

std::vector<std::size_t> window_starts(std::size_t doc_tokens, std::size_t window_len, std::size_t stride) {
    if (window_len == 0 || stride == 0) throw ArgumentError("window length and stride must be positive");
    std::vector<std::size_t> starts;
    std::size_t start = 0;
    while (true) {
        starts.push_back(start);
        if (start + window_len >= doc_tokens) break;
        start += stride;
    }
    return starts;
}

std::vector<EncodedInput> encode_input(const Document& document, std::string_view question,
                                       const ConversationHistory& history,
                                       std::span<const TokenSpan> history_answer_spans, const EncodingLimits& limits,
                                       const Vocabulary& vocabulary) {
    limits.validate();
    std::vector<int> question_ids;
    for (const auto& word : text::token_strings(question)) question_ids.push_back(vocabulary.id(word));
    if (question_ids.size() > limits.max_query_len) {
        spdlog::warn("question of {} tokens truncated to max_query_len {}", question_ids.size(), limits.max_query_len);
        question_ids.resize(limits.max_query_len);
    }
    std::vector<int> history_ids;
    for (const HistoryEntry& entry : history.entries) {
        for (const auto& word : text::token_strings(entry.question)) history_ids.push_back(vocabulary.id(word));
        for (const auto& word : text::token_strings(entry.answer)) history_ids.push_back(vocabulary.id(word));
        history_ids.push_back(Vocabulary::kHistorySep);
    }
    const std::size_t history_budget = limits.max_query_len - question_ids.size();
    if (history_ids.size() > history_budget) {
        history_ids.erase(history_ids.begin(), history_ids.end() - static_cast<long>(history_budget));
    }

    const std::size_t content = document.content_token_count();
    const std::size_t window_len = limits.doc_window_len();
    std::vector<EncodedInput> windows;
    for (const std::size_t start : window_starts(content, window_len, limits.doc_stride)) {
        EncodedInput in;
        const std::size_t count = std::min(window_len, content - std::min(content, start));
        in.window_start = start;
        in.window_tokens = count;
        auto push = [&in](int id, SegmentRole role, long doc_index, bool answerable) {
            in.token_ids.push_back(id);
            in.segment_roles.push_back(role);
            in.document_token_mask.push_back(answerable);
            in.hae_flags.push_back(false);
            in.attention_mask.push_back(role != SegmentRole::padding);
            in.doc_token_index.push_back(doc_index);
        };
        push(Vocabulary::kCls, SegmentRole::special, -1, false);
        for (std::size_t d = start; d < start + count; ++d) {
            push(vocabulary.id(document.tokens[d].text), SegmentRole::document, static_cast<long>(d), true);
            for (const TokenSpan& span : history_answer_spans) {
                if (d >= span.start && d <= span.end) {
                    in.hae_flags.back() = true;
                    break;
                }
            }
        }
        if (document.has_sentinel) {
            in.sentinel_position = in.size();
            push(Vocabulary::kSentinel, SegmentRole::sentinel, static_cast<long>(document.sentinel_token()), true);
        }
        push(Vocabulary::kSep, SegmentRole::special, -1, false);
        for (const int id : history_ids) push(id, SegmentRole::history, -1, false);
        for (const int id : question_ids) push(id, SegmentRole::question, -1, false);
        push(Vocabulary::kSep, SegmentRole::special, -1, false);
        while (in.size() < limits.max_sequence_len) push(Vocabulary::kPad, SegmentRole::padding, -1, false);
        windows.push_back(std::move(in));
    }
    return windows;
}

std::pair<std::size_t, std::size_t> target_positions(const EncodedInput& input, const TokenSpan& gold,
                                                     const Document& document) {
    const bool gold_is_sentinel = document.has_sentinel && gold.start == document.sentinel_token();
    if (!gold_is_sentinel) {
        const auto s = input.position_of(gold.start);
        const auto e = input.position_of(gold.end);
        if (s && e) return {*s, *e};
    }
    if (!input.sentinel_position) {
        throw ContractError("gold span outside the window of document '" + document.id + "' and no sentinel");
    }
    return {*input.sentinel_position, *input.sentinel_position};
}

// ---- parameters ----------------------------------------------------------------

void ParameterSet::add(std::string name, Var value) { entries_.emplace_back(std::move(name), std::move(value)); }

std::size_t ParameterSet::scalar_count() const noexcept {
    std::size_t n = 0;
    for (const auto& [name, var] : entries_) n += var.size();
    return n;
}

const Var& ParameterSet::get(std::string_view name) const {
    for (const auto& [n, var] : entries_)
        if (n == name) return var;
    throw ArgumentError("no parameter named '" + std::string(name) + "'");
}

ParameterSet ParameterSet::snapshot() const {
    ParameterSet copy;
    for (const auto& [name, var] : entries_) copy.add(name, Var::parameter(var.rows(), var.cols(), var.value()));
    return copy;
}

void ParameterSet::zero_grad() {
    for (auto& [name, var] : entries_) var.zero_grad();
}

std::vector<double> ParameterSet::flatten() const {
    std::vector<double> flat;
    flat.reserve(scalar_count());
    for (const auto& [name, var] : entries_) flat.insert(flat.end(), var.value().begin(), var.value().end());
    return flat;
}

void ParameterSet::assign(std::span<const double> flat) {
    if (flat.size() != scalar_count()) throw ContractError("parameter vector size mismatch");
    std::size_t offset = 0;
    for (auto& [name, var] : entries_) {
        std::copy_n(flat.begin() + static_cast<long>(offset), var.size(), var.mutable_value().begin());
        offset += var.size();
    }
}

// ---- TinyBackbone ------------------------------------------------------------

namespace {

constexpr std::size_t kFeatureBlocks = 5;

Var random_parameter(std::size_t rows, std::size_t cols, double stddev, std::mt19937_64& rng) {
    std::normal_distribution<double> normal(0.0, stddev);
    std::vector<double> values(rows * cols);
    for (double& v : values) v = normal(rng);
    return Var::parameter(rows, cols, std::move(values));
}

}  // namespace

TinyBackbone::TinyBackbone(const TinyBackboneConfig& config) : config_(config) {
    if (config.vocab_size <= static_cast<std::size_t>(Vocabulary::kFirstWord) || config.embed_dim == 0 ||
        config.hidden_dim == 0) {
        throw ArgumentError("tiny backbone dimensions must be positive and vocab_size > 5");
    }
    std::mt19937_64 rng(config.seed);
    const std::size_t d = config.embed_dim;
    const std::size_t h = config.hidden_dim;
    params_.add("word_embedding", random_parameter(config.vocab_size, d, 0.5, rng));
    params_.add("role_embedding", random_parameter(kSegmentRoleCount, d, 0.5, rng));
    params_.add("hae_embedding", random_parameter(1, d, config.use_hae ? 0.5 : 0.0, rng));
    params_.add("mix_weight", random_parameter(kFeatureBlocks * d, h, 1.0 / std::sqrt(static_cast<double>(kFeatureBlocks * d)), rng));
    params_.add("mix_bias", Var::parameter(1, h, std::vector<double>(h, 0.0)));
    params_.add("start_weight", random_parameter(h, 1, 1.0 / std::sqrt(static_cast<double>(h)), rng));
    params_.add("start_bias", Var::parameter(1, 1, {0.0}));
    params_.add("end_weight", random_parameter(h, 1, 1.0 / std::sqrt(static_cast<double>(h)), rng));
    params_.add("end_bias", Var::parameter(1, 1, {0.0}));
}

BackboneCapabilities TinyBackbone::capabilities() const {
    return {"tiny", config_.use_hae, config_.vocab_size, params_.scalar_count()};
}

GraphLogits TinyBackbone::forward_graph(const EncodedInput& input, const ParameterSet& params) const {
    const std::size_t n = input.active_length();
    if (n == 0) throw ContractError("encoded input has no active positions");
    const std::vector<int> ids(input.token_ids.begin(), input.token_ids.begin() + static_cast<long>(n));
    std::vector<int> roles(n);
    std::vector<bool> query_mask(n);
    for (std::size_t i = 0; i < n; ++i) {
        roles[i] = static_cast<int>(input.segment_roles[i]);
        query_mask[i] = input.segment_roles[i] == SegmentRole::question || input.segment_roles[i] == SegmentRole::history;
    }
    Var x = autograd::add(autograd::gather_rows(params.at(0), ids), autograd::gather_rows(params.at(1), roles));
    if (config_.use_hae) {
        std::vector<double> flags(n);
        for (std::size_t i = 0; i < n; ++i) flags[i] = input.hae_flags[i] ? 1.0 : 0.0;
        x = autograd::add(x, autograd::outer_const(flags, params.at(2)));
    }
    const Var query = autograd::masked_mean_rows(x, query_mask);
    const Var context = autograd::window_mean_rows(x, config_.context_radius);
    const Var features[] = {autograd::shift_rows(x, 1), x, autograd::shift_rows(x, -1),
                            autograd::mul_row(context, query), autograd::mul_row(x, query)};
    const Var hidden = autograd::tanh(autograd::add_row(autograd::matmul(autograd::concat_cols(features), params.at(3)), params.at(4)));
    return {autograd::add_row(autograd::matmul(hidden, params.at(5)), params.at(6)),
            autograd::add_row(autograd::matmul(hidden, params.at(7)), params.at(8))};
}

SpanLogits TinyBackbone::forward_logits(const EncodedInput& input) const {
    const GraphLogits graph = forward_graph(input, params_);
    SpanLogits logits;
    logits.start.assign(input.size(), 0.0);
    logits.end.assign(input.size(), 0.0);
    std::copy(graph.start.value().begin(), graph.start.value().end(), logits.start.begin());
    std::copy(graph.end.value().begin(), graph.end.value().end(), logits.end.begin());
    return logits;
}

void TinyBackbone::save(const std::filesystem::path& path) const {
    json parameters = json::object();
    for (std::size_t i = 0; i < params_.count(); ++i) parameters[params_.name(i)] = params_.at(i).value();
    const json object = {{"capabilities",
                          {{"name", "tiny"},
                           {"supports_hae", config_.use_hae},
                           {"vocab_size", config_.vocab_size},
                           {"parameter_count", params_.scalar_count()}}},
                         {"config",
                          {{"vocab_size", config_.vocab_size},
                           {"embed_dim", config_.embed_dim},
                           {"hidden_dim", config_.hidden_dim},
                           {"context_radius", config_.context_radius},
                           {"use_hae", config_.use_hae},
                           {"seed", config_.seed}}},
                         {"parameters", parameters}};
    std::ofstream out(path);
    if (!out) throw Error(path.string() + ": cannot open for writing");
    out << object.dump() << '\n';
}

TinyBackbone TinyBackbone::load(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ParseError(path.string() + ": cannot open backbone checkpoint");
    json object;
    try {
        in >> object;
        const json& c = object.at("config");
        TinyBackboneConfig config;
        config.vocab_size = c.at("vocab_size").get<std::size_t>();
        config.embed_dim = c.at("embed_dim").get<std::size_t>();
        config.hidden_dim = c.at("hidden_dim").get<std::size_t>();
        config.context_radius = c.at("context_radius").get<std::size_t>();
        config.use_hae = c.at("use_hae").get<bool>();
        config.seed = c.at("seed").get<std::uint64_t>();
        TinyBackbone backbone(config);
        for (std::size_t i = 0; i < backbone.params_.count(); ++i) {
            auto values = object.at("parameters").at(backbone.params_.name(i)).get<std::vector<double>>();
            if (values.size() != backbone.params_.at(i).size()) {
                throw ParseError(path.string() + ": parameter '" + backbone.params_.name(i) + "' has the wrong size");
            }
            backbone.params_.at(i).mutable_value() = std::move(values);
        }
        return backbone;
    } catch (const json::exception& e) {
        throw ParseError(path.string() + ": invalid backbone checkpoint: " + e.what());
    }
}

// ---- distributions ---------------------------------------------------------------

std::vector<double> masked_softmax(std::span<const double> logits, const std::vector<bool>& mask) {
    if (logits.size() != mask.size()) throw ContractError("masked_softmax: logits and mask differ in length");
    if (std::find(mask.begin(), mask.end(), true) == mask.end()) {
        throw ContractError("masked_softmax: no unmasked position");
    }
    // A NaN logit poisons the whole distribution so callers see a non-finite loss.
    double max = -std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < logits.size(); ++i)
        if (mask[i]) max = std::isnan(logits[i]) ? logits[i] : std::max(max, logits[i]);
    std::vector<double> probs(logits.size(), 0.0);
    double z = 0.0;
    for (std::size_t i = 0; i < logits.size(); ++i) {
        if (!mask[i]) continue;
        probs[i] = std::exp(logits[i] - max);
        z += probs[i];
    }
    for (double& p : probs) p /= z;
    return probs;
}

SpanDistribution forward(const QaBackbone& backbone, const EncodedInput& input) {
    const SpanLogits logits = backbone.forward_logits(input);
    if (logits.start.size() != input.size() || logits.end.size() != input.size()) {
        throw ContractError("backbone '" + backbone.capabilities().name + "' returned " +
                            std::to_string(logits.start.size()) + "/" + std::to_string(logits.end.size()) +
                            " logits for an input of length " + std::to_string(input.size()));
    }
    return {masked_softmax(logits.start, input.document_token_mask),
            masked_softmax(logits.end, input.document_token_mask)};
}

std::vector<double> sharpen(std::span<const double> probs, double temperature) {
    if (!(temperature > 0.0) || !std::isfinite(temperature)) {
        throw ArgumentError("sharpening temperature must be positive, got " + std::to_string(temperature));
    }
    // p^1 is p; skipping the log/exp round trip keeps KL(p || sharpen(p, 1)) exactly 0.
    if (temperature == 1.0) return {probs.begin(), probs.end()};
    double max_log = -std::numeric_limits<double>::infinity();
    for (const double p : probs)
        if (p > 0.0) max_log = std::max(max_log, std::log(p) / temperature);
    std::vector<double> out(probs.size(), 0.0);
    if (!std::isfinite(max_log)) return out;
    double z = 0.0;
    for (std::size_t i = 0; i < probs.size(); ++i) {
        if (probs[i] <= 0.0) continue;
        out[i] = std::exp(std::log(probs[i]) / temperature - max_log);
        z += out[i];
    }
    for (double& v : out) v /= z;
    return out;
}

SpanDistribution sharpen(const SpanDistribution& dist, double temperature) {
    return {sharpen(dist.start_probs, temperature), sharpen(dist.end_probs, temperature)};
}

// ---- decoding ----------------------------------------------------------------

SpanChoice best_span(const SpanDistribution& dist, const EncodedInput& input, std::size_t max_answer_len) {
    const std::size_t n = input.size();
    if (dist.start_probs.size() != n || dist.end_probs.size() != n) {
        throw ContractError("span distribution does not match the encoded input length");
    }
    if (max_answer_len == 0) throw ArgumentError("max_answer_len must be positive");
    std::optional<SpanChoice> best;
    for (std::size_t s = 0; s < n; ++s) {
        if (!input.document_token_mask[s]) continue;
        if (input.segment_roles[s] == SegmentRole::sentinel) {
            const double score = dist.start_probs[s] * dist.end_probs[s];
            if (!best || score > best->score) best = SpanChoice{s, s, score};
            continue;
        }
        for (std::size_t e = s; e < n && e - s + 1 <= max_answer_len; ++e) {
            if (input.segment_roles[e] != SegmentRole::document) break;
            const double score = dist.start_probs[s] * dist.end_probs[e];
            if (!best || score > best->score) best = SpanChoice{s, e, score};
        }
    }
    if (!best) throw DecodeError("every document position is masked");
    return *best;
}

DecodedAnswer decode_answer(const SpanDistribution& dist, const EncodedInput& input, const Document& document,
                            std::size_t max_answer_len) {
    const SpanChoice choice = best_span(dist, input, max_answer_len);
    if (input.segment_roles[choice.start] == SegmentRole::sentinel) {
        return {std::string(kUnanswerable), choice.score, true};
    }
    const auto& first = document.tokens.at(static_cast<std::size_t>(input.doc_token_index[choice.start]));
    const auto& last = document.tokens.at(static_cast<std::size_t>(input.doc_token_index[choice.end]));
    return {document.text.substr(first.begin, last.end - first.begin), choice.score, false};
}

DecodedAnswer decode_windows(std::span<const SpanDistribution> dists, std::span<const EncodedInput> inputs,
                             const Document& document, std::size_t max_answer_len) {
    if (dists.size() != inputs.size() || dists.empty()) {
        throw ContractError("decode_windows needs one distribution per window");
    }
    std::optional<DecodedAnswer> best;
    for (std::size_t w = 0; w < dists.size(); ++w) {
        DecodedAnswer answer = decode_answer(dists[w], inputs[w], document, max_answer_len);
        if (!best || answer.score > best->score) best = std::move(answer);
    }
    return *best;
}

}  // namespace excord
