#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "excord/data_model.hpp"
#include "excord/losses.hpp"
#include "excord/qa_model.hpp"
#include "excord/rewriter.hpp"

namespace excord {

enum class TrainMode { end_to_end, pipeline, excord, question_augment };

std::string_view to_string(TrainMode mode);
TrainMode parse_train_mode(std::string_view name);

enum class LrSchedule { linear_warmup_decay, constant };

// History paired with the self-contained question: none, or the rewrites of
// the previous turns in the same window.
enum class SelfHistory { empty, rewritten };

struct TrainConfig {
    TrainMode mode = TrainMode::excord;
    double learning_rate = 3e-5;
    std::size_t batch_size = 12;
    std::size_t eval_interval_steps = 4000;
    std::size_t max_steps = 0;  // 0: derive from epochs
    std::size_t epochs = 2;
    LossWeights weights;
    std::size_t history_window_k = 1;
    std::uint64_t seed = 42;
    double weight_decay = 0.0;
    double adam_beta1 = 0.9;
    double adam_beta2 = 0.999;
    double adam_epsilon = 1e-8;
    double warmup_fraction = 0.1;
    LrSchedule lr_schedule = LrSchedule::linear_warmup_decay;
    EncodingLimits limits;
    std::size_t max_answer_len = 30;
    SelfHistory self_history = SelfHistory::empty;
    bool pipeline_history = false;
    TinyBackboneConfig backbone;

    // Every problem at once; empty when valid.
    std::vector<std::string> validation_errors() const;
    void validate() const;

    // Weights actually applied in this mode: (0, 0) end-to-end, (1, 0)
    // question augmentation and pipeline, configured values for ExCorD.
    LossWeights effective_weights() const;
};

// Reads a run config (docs/run_config.schema.json); absent keys keep their
// defaults. Unknown keys, type errors and invalid values are reported together
// in one ConfigError.
TrainConfig train_config_from_json(std::string_view json_text, TrainConfig base = {});
TrainConfig load_train_config(const std::filesystem::path& path, TrainConfig base = {});
std::string train_config_to_json(const TrainConfig& config);

// Both branches of one question pair, encoded once up front.
struct EncodedPair {
    std::string dialogue_id;
    int turn_index = 1;
    std::vector<EncodedInput> original;
    std::vector<EncodedInput> self_contained;
    std::vector<std::pair<std::size_t, std::size_t>> gold_original;
    std::vector<std::pair<std::size_t, std::size_t>> gold_self;
};

std::vector<EncodedPair> encode_pairs(std::span<const Dialogue> dialogues, std::span<const QuestionPair> pairs,
                                      const TrainConfig& config, const Vocabulary& vocabulary, bool use_hae);

struct BatchLoss {
    autograd::Var total;  // differentiable mean of per-item totals
    LossBreakdown breakdown;
    std::vector<LossBreakdown> items;
};

// Builds the loss graph of one batch. `live` carries gradients; `snapshot`
// (the fixed copy) only feeds the consistency target through a detach.
BatchLoss batch_loss(std::span<const EncodedPair* const> batch, const TrainableBackbone& backbone,
                     const ParameterSet& live, const ParameterSet& snapshot, TrainMode mode,
                     const LossWeights& weights);

struct AdamWConfig {
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
    double weight_decay = 0.0;
};

// Adam with decoupled weight decay over a ParameterSet's accumulated grads.
class AdamW {
public:
    AdamW(ParameterSet& params, const AdamWConfig& config);
    void step(double learning_rate);
    std::size_t steps() const noexcept { return t_; }

private:
    ParameterSet* params_;
    AdamWConfig config_;
    std::vector<std::vector<double>> m_;
    std::vector<std::vector<double>> v_;
    std::size_t t_ = 0;
};

// One optimization step in `mode`: snapshots the parameters as the fixed
// copy, builds the batch loss, back-propagates into the live parameters only
// and applies the optimizer.
LossBreakdown train_step(std::span<const EncodedPair* const> batch, TrainableBackbone& backbone, TrainMode mode,
                         const LossWeights& weights, AdamW& optimizer, double learning_rate);

LossBreakdown step_excord(std::span<const EncodedPair* const> batch, TrainableBackbone& backbone,
                          const LossWeights& weights, AdamW& optimizer, double learning_rate);

double scheduled_learning_rate(const TrainConfig& config, std::size_t step, std::size_t total_steps);

struct Checkpoint {
    std::vector<double> parameters;
    std::size_t step = 0;
    double dev_f1 = 0.0;
};

struct StepLog {
    std::size_t step = 0;
    LossBreakdown loss;
};

struct TrainResult {
    Checkpoint best;
    std::vector<StepLog> log;
    std::vector<std::pair<std::size_t, double>> dev_history;
};

struct TrainOptions {
    // When set: loss_log.jsonl, config.json, step-N/ checkpoints and best.json
    // are written here.
    std::optional<std::filesystem::path> run_dir;
};

std::string step_log_line(const StepLog& entry);

// Trains `backbone` on the pairs of `train_dialogues`; leaves the best
// checkpoint's parameters loaded in the backbone. Throws NumericError on a
// non-finite loss after dumping the offending batch into the run directory.
TrainResult train(const TrainConfig& config, std::span<const Dialogue> train_dialogues,
                  std::span<const QuestionPair> pairs, std::span<const Dialogue> dev_dialogues,
                  TinyBackbone& backbone, const TrainOptions& options = {});

struct PredictOptions {
    TrainMode mode = TrainMode::excord;
    std::size_t history_window_k = 1;
    EncodingLimits limits;
    std::size_t max_answer_len = 30;
    bool pipeline_history = false;
    // Pipeline mode reads rewrites from the cache first, then the rewriter.
    const RewriteCache* rewrites = nullptr;
    const RewriterBackend* rewriter = nullptr;
    DecodingConfig decoding;
    // Receives (question id, question fed to the model, history fed).
    std::function<void(const std::string&, const std::string&, const ConversationHistory&)> observer;
};

struct PredictionResult {
    std::map<std::string, std::string> predictions;
    std::vector<PairingError> errors;
};

PredictionResult predict(const QaBackbone& backbone, std::span<const Dialogue> dialogues,
                         const PredictOptions& options);

PredictOptions predict_options_from(const TrainConfig& config);

}  // namespace excord
