#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "excord/autograd.hpp"
#include "excord/data_model.hpp"

namespace excord {

// Sequence packing limits. Every EncodedInput has exactly max_sequence_len
// positions laid out as
//   [CLS] doc window [SENTINEL] [SEP] history [HSEP] ... question [SEP] [PAD]...
// The document window comes first and has a fixed length, so two encodings of
// the same document with different questions share their document geometry.
struct EncodingLimits {
    std::size_t max_sequence_len = 512;
    std::size_t max_query_len = 128;
    std::size_t doc_stride = 128;

    void validate() const;
    std::size_t doc_window_len() const { return max_sequence_len - max_query_len - 4; }
};

enum class SegmentRole : std::uint8_t { special, question, history, document, sentinel, padding };
inline constexpr std::size_t kSegmentRoleCount = 6;

// Hashed word vocabulary; ids below kFirstWord are reserved.
struct Vocabulary {
    static constexpr int kPad = 0;
    static constexpr int kCls = 1;
    static constexpr int kSep = 2;
    static constexpr int kHistorySep = 3;
    static constexpr int kSentinel = 4;
    static constexpr int kFirstWord = 5;

    std::size_t size = 256;

    int id(std::string_view word) const;
};

struct EncodedInput {
    std::vector<int> token_ids;
    std::vector<SegmentRole> segment_roles;
    // Positions an answer may occupy: document tokens and the sentinel.
    std::vector<bool> document_token_mask;
    std::vector<bool> hae_flags;
    std::vector<bool> attention_mask;
    // Document token index per position, -1 outside the document region.
    std::vector<long> doc_token_index;
    std::size_t window_start = 0;
    std::size_t window_tokens = 0;
    std::optional<std::size_t> sentinel_position;

    std::size_t size() const noexcept { return token_ids.size(); }
    // Non-padding prefix length.
    std::size_t active_length() const noexcept;
    std::optional<std::size_t> position_of(std::size_t doc_token) const noexcept;
    bool same_geometry(const EncodedInput& other) const noexcept;
};

// Window start offsets covering `doc_tokens` tokens with windows of
// `window_len` advancing by `stride`.
std::vector<std::size_t> window_starts(std::size_t doc_tokens, std::size_t window_len, std::size_t stride);

// One EncodedInput per document window. History precedes the question in the
// query region; an over-long question is truncated (with a warning) and the
// oldest history tokens are dropped first.
std::vector<EncodedInput> encode_input(const Document& document, std::string_view question,
                                       const ConversationHistory& history,
                                       std::span<const TokenSpan> history_answer_spans, const EncodingLimits& limits,
                                       const Vocabulary& vocabulary);

// Start/end positions of the gold span in a window; the sentinel when the span
// lies outside the window or the question is unanswerable.
std::pair<std::size_t, std::size_t> target_positions(const EncodedInput& input, const TokenSpan& gold,
                                                     const Document& document);

struct SpanLogits {
    std::vector<double> start;
    std::vector<double> end;
};

struct SpanDistribution {
    std::vector<double> start_probs;
    std::vector<double> end_probs;
};

struct BackboneCapabilities {
    std::string name;
    bool supports_hae = false;
    std::size_t vocab_size = 0;
    std::size_t parameter_count = 0;
};

class QaBackbone {
public:
    virtual ~QaBackbone() = default;
    virtual BackboneCapabilities capabilities() const = 0;
    virtual SpanLogits forward_logits(const EncodedInput& input) const = 0;
};

// Named leaf tensors, in a fixed order.
class ParameterSet {
public:
    void add(std::string name, autograd::Var value);
    std::size_t count() const noexcept { return entries_.size(); }
    std::size_t scalar_count() const noexcept;
    const std::string& name(std::size_t i) const { return entries_[i].first; }
    autograd::Var& at(std::size_t i) { return entries_[i].second; }
    const autograd::Var& at(std::size_t i) const { return entries_[i].second; }
    const autograd::Var& get(std::string_view name) const;

    // Fresh leaves holding a copy of the current values.
    ParameterSet snapshot() const;
    void zero_grad();
    std::vector<double> flatten() const;
    void assign(std::span<const double> flat);

private:
    std::vector<std::pair<std::string, autograd::Var>> entries_;
};

struct GraphLogits {
    autograd::Var start;  // [active_length, 1]
    autograd::Var end;
};

class TrainableBackbone : public QaBackbone {
public:
    virtual ParameterSet& parameters() = 0;
    virtual const ParameterSet& parameters() const = 0;
    // Differentiable forward over the active prefix using `params`, which may
    // be the live parameters or a snapshot of them.
    virtual GraphLogits forward_graph(const EncodedInput& input, const ParameterSet& params) const = 0;
    virtual void save(const std::filesystem::path& path) const = 0;
};

struct TinyBackboneConfig {
    std::size_t vocab_size = 256;
    std::size_t embed_dim = 12;
    std::size_t hidden_dim = 16;
    std::size_t context_radius = 3;
    bool use_hae = false;
    std::uint64_t seed = 0;
};

// Embedding + one mixing layer over neighbours, local context and a
// question summary, with linear start and end heads. A few thousand
// parameters; meant for desk-scale training and gradient tests.
class TinyBackbone final : public TrainableBackbone {
public:
    explicit TinyBackbone(const TinyBackboneConfig& config);

    const TinyBackboneConfig& config() const noexcept { return config_; }
    Vocabulary vocabulary() const { return Vocabulary{config_.vocab_size}; }

    BackboneCapabilities capabilities() const override;
    SpanLogits forward_logits(const EncodedInput& input) const override;
    ParameterSet& parameters() override { return params_; }
    const ParameterSet& parameters() const override { return params_; }
    GraphLogits forward_graph(const EncodedInput& input, const ParameterSet& params) const override;

    void save(const std::filesystem::path& path) const override;
    static TinyBackbone load(const std::filesystem::path& path);

private:
    TinyBackboneConfig config_;
    ParameterSet params_;
};

// Masked exponential normalization; masked positions are exactly 0.
std::vector<double> masked_softmax(std::span<const double> logits, const std::vector<bool>& mask);

// Backbone logits normalized over answer positions. Throws ContractError on
// a shape mismatch.
SpanDistribution forward(const QaBackbone& backbone, const EncodedInput& input);

// p^(1/T) renormalized. Throws ArgumentError for T <= 0.
std::vector<double> sharpen(std::span<const double> probs, double temperature);
SpanDistribution sharpen(const SpanDistribution& dist, double temperature);

struct SpanChoice {
    std::size_t start = 0;
    std::size_t end = 0;
    double score = 0.0;
};

// Highest start*end product over legal spans: document positions with
// start <= end and length <= max_answer_len, or the sentinel alone.
SpanChoice best_span(const SpanDistribution& dist, const EncodedInput& input, std::size_t max_answer_len = 30);

struct DecodedAnswer {
    std::string text;
    double score = 0.0;
    bool unanswerable = false;
};

DecodedAnswer decode_answer(const SpanDistribution& dist, const EncodedInput& input, const Document& document,
                            std::size_t max_answer_len = 30);

// Best answer across the windows of one document.
DecodedAnswer decode_windows(std::span<const SpanDistribution> dists, std::span<const EncodedInput> inputs,
                             const Document& document, std::size_t max_answer_len = 30);

}  // namespace excord
