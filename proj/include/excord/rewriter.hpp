#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <tuple>
#include <utility>
#include <vector>

#include "excord/data_model.hpp"

namespace excord {

// Decoding knobs for sequence-generation backends. Deterministic given `seed`.
struct DecodingConfig {
    int beam_size = 4;
    int top_k = 10;
    double temperature = 0.8;
    int max_output_tokens = 64;
    std::uint64_t seed = 0;

    void validate() const;
    // Stable textual form used for hashing and logs.
    std::string canonical() const;
};

// Separators of the flattened backend input: "h1 <sep> h2 <sep> h3 <q> question".
// A literal '<' or '\' inside any text is escaped with a backslash.
inline constexpr std::string_view kTurnSeparator = "<sep>";
inline constexpr std::string_view kQuestionSeparator = "<q>";

std::vector<std::string> flatten_history(const ConversationHistory& history);

std::string serialize_rewrite_input(std::string_view question, const ConversationHistory& history);
std::string serialize_rewrite_input(std::string_view question, std::span<const std::string> history_texts);

struct RewriteInput {
    std::vector<std::string> history_texts;
    std::string question;
    bool operator==(const RewriteInput&) const = default;
};

// Inverse of serialize_rewrite_input. Throws ParseError on malformed input.
RewriteInput parse_rewrite_input(std::string_view input);

struct RewriteExample {
    std::string input_text;
    std::string target_text;
};

struct RewriterTrainConfig {
    int epochs = 1;
    double learning_rate = 0.5;
    double heldout_fraction = 0.2;
    std::uint64_t seed = 0;
};

struct FitReport {
    double heldout_loss_before = 0.0;
    double heldout_loss_after = 0.0;
    std::vector<double> epoch_losses;
    std::size_t usable_examples = 0;
    std::size_t skipped_examples = 0;
};

class RewriterBackend {
public:
    virtual ~RewriterBackend() = default;

    // Identifies the backend and its parameters; part of the rewrite cache key.
    virtual std::string identity() const = 0;
    virtual std::string generate(std::string_view input_text, const DecodingConfig& config) const = 0;

    virtual bool trainable() const noexcept { return false; }
    virtual FitReport fine_tune(std::span<const RewriteExample> examples, const RewriterTrainConfig& config);
};

// Named-entity spans (runs of capitalized words, allowing particles such as
// "da" or "van"), most recent first. Leading question/function words are dropped.
std::vector<std::string> history_entities(std::span<const std::string> history_texts);

// Deterministic rule-table rewriter. Each rule maps a lower-cased word sequence
// to a replacement; the replacement "{entity}" resolves to the most recent
// history entity. Questions with an empty history are returned verbatim.
class RuleRewriter final : public RewriterBackend {
public:
    static constexpr std::string_view kEntityPlaceholder = "{entity}";

    RuleRewriter() = default;
    explicit RuleRewriter(std::vector<std::pair<std::string, std::string>> rules);

    // {"he": "{entity}", ...} as a JSON object.
    static RuleRewriter from_json_file(const std::filesystem::path& path);
    // Third-person pronouns resolved against history entities.
    static RuleRewriter pronoun_resolver();

    std::string identity() const override;
    std::string generate(std::string_view input_text, const DecodingConfig& config) const override;

    std::string apply(std::string_view question, std::span<const std::string> history_texts) const;

private:
    struct Rule {
        std::vector<std::string> pattern;
        std::string replacement;
    };
    std::vector<Rule> rules_;
};

// Small trainable log-linear rewriter: at every question token it chooses
// between keeping the word and substituting one of the most recent history
// entities. Decoding uses sampled beam search over those choices.
class SubstitutionRewriter final : public RewriterBackend {
public:
    static constexpr std::size_t kWordBuckets = 64;
    static constexpr std::size_t kMaxCandidates = 4;

    SubstitutionRewriter();

    std::string identity() const override;
    std::string generate(std::string_view input_text, const DecodingConfig& config) const override;
    bool trainable() const noexcept override { return true; }
    FitReport fine_tune(std::span<const RewriteExample> examples, const RewriterTrainConfig& config) override;

    // Mean negative log-likelihood per alignable example; nullopt when none aligns.
    std::optional<double> loss(std::span<const RewriteExample> examples) const;

    void save(const std::filesystem::path& path) const;
    static SubstitutionRewriter load(const std::filesystem::path& path);

private:
    struct Alignment {
        std::vector<std::string> words;
        std::vector<std::size_t> targets;  // 0 = keep, c + 1 = candidate c
        std::size_t candidates = 0;
    };
    static std::optional<Alignment> align(const RewriteExample& example);
    std::vector<double> choice_logits(std::string_view word, std::size_t candidates) const;

    std::vector<double> word_bias_;
    std::vector<double> rank_weight_;
};

// Rewrites one question. Backend failures and empty outputs become RewriteError.
std::string rewrite(std::string_view question, const ConversationHistory& history, const RewriterBackend& backend,
                    const DecodingConfig& config);

std::vector<RewriteExample> rewrite_examples(std::span<const RewriteRecord> records);

// Throws CapabilityError when the backend cannot be trained.
FitReport fine_tune_rewriter(RewriterBackend& backend, std::span<const RewriteRecord> records,
                             const RewriterTrainConfig& config);

// ---- decoding ----------------------------------------------------------------

struct DecodedSequence {
    std::vector<int> choices;
    double log_prob = 0.0;
};

// Returns unnormalized logits for the next step given the prefix chosen so far.
using StepScorer = std::function<std::vector<double>(std::span<const int> prefix)>;

// Beam search whose expansions are drawn by top-k sampling (without
// replacement, Gumbel-top-k) from the temperature-adjusted distribution.
// `stream` is mixed into the seed so distinct inputs draw distinct noise.
DecodedSequence sampled_beam_search(std::size_t steps, const StepScorer& scorer, const DecodingConfig& config,
                                    std::uint64_t stream);

// ---- cache -----------------------------------------------------------------------

std::string rewrite_config_hash(const RewriterBackend& backend, const DecodingConfig& config);

struct RewriteCacheEntry {
    std::string dialogue_id;
    int turn_index = 1;
    std::string original;
    std::string rewrite;
    std::string config_hash;
};

// JSON-lines cache keyed by (dialogue_id, turn_index, config_hash). New entries
// are appended to the file as they are stored.
class RewriteCache {
public:
    RewriteCache() = default;
    explicit RewriteCache(std::filesystem::path path);

    std::optional<std::string> lookup(const std::string& dialogue_id, int turn_index,
                                      const std::string& config_hash) const;
    // Lookup ignoring the config hash; the first entry stored wins.
    std::optional<std::string> lookup_any(const std::string& dialogue_id, int turn_index) const;
    void store(const RewriteCacheEntry& entry);
    std::size_t size() const noexcept { return entries_.size(); }

private:
    std::filesystem::path path_;
    std::map<std::tuple<std::string, int, std::string>, std::string> entries_;
    std::map<std::pair<std::string, int>, std::string> any_;
};

PairingRewriter make_pairing_rewriter(const RewriterBackend& backend, DecodingConfig config,
                                      RewriteCache* cache = nullptr);

}  // namespace excord
