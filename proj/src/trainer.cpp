#include "excord/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <random>
#include <sstream>

#include <spdlog/spdlog.h>

#include "excord/errors.hpp"
#include "excord/metrics.hpp"
#include "json.hpp"

namespace excord {

using autograd::Var;
using nlohmann::json;

// ---- modes & config ------------------------------------------------------------

std::string_view to_string(TrainMode mode) {
    switch (mode) {
        case TrainMode::end_to_end: return "end_to_end";
        case TrainMode::pipeline: return "pipeline";
        case TrainMode::excord: return "excord";
        case TrainMode::question_augment: return "question_augment";
    }
    return "excord";
}

TrainMode parse_train_mode(std::string_view name) {
    for (const TrainMode mode : {TrainMode::end_to_end, TrainMode::pipeline, TrainMode::excord, TrainMode::question_augment}) {
        if (to_string(mode) == name) return mode;
    }
    throw ConfigError("unknown mode '" + std::string(name) +
                      "' (expected end_to_end, pipeline, excord or question_augment)");
}

std::vector<std::string> TrainConfig::validation_errors() const {
    std::vector<std::string> errors;
    if (!(learning_rate > 0.0) || !std::isfinite(learning_rate)) errors.push_back("learning_rate must be > 0");
    if (batch_size == 0) errors.push_back("batch_size must be > 0");
    if (eval_interval_steps == 0) errors.push_back("eval_interval_steps must be > 0");
    if (max_steps == 0 && epochs == 0) errors.push_back("one of max_steps or epochs must be > 0");
    if (weight_decay < 0.0) errors.push_back("weight_decay must be >= 0");
    if (!(adam_beta1 >= 0.0 && adam_beta1 < 1.0) || !(adam_beta2 >= 0.0 && adam_beta2 < 1.0)) {
        errors.push_back("adam betas must lie in [0, 1)");
    }
    if (!(adam_epsilon > 0.0)) errors.push_back("adam_epsilon must be > 0");
    if (warmup_fraction < 0.0 || warmup_fraction >= 1.0) errors.push_back("warmup_fraction must lie in [0, 1)");
    if (max_answer_len == 0) errors.push_back("max_answer_len must be > 0");
    try {
        weights.validate();
    } catch (const ArgumentError& e) {
        errors.emplace_back(e.what());
    }
    try {
        limits.validate();
    } catch (const ArgumentError& e) {
        errors.emplace_back(e.what());
    }
    if (backbone.vocab_size <= static_cast<std::size_t>(Vocabulary::kFirstWord)) errors.push_back("backbone.vocab_size must be > 5");
    if (backbone.embed_dim == 0 || backbone.hidden_dim == 0) errors.push_back("backbone dimensions must be > 0");
    return errors;
}

void TrainConfig::validate() const {
    const auto errors = validation_errors();
    if (errors.empty()) return;
    std::string message = "invalid run config:";
    for (const auto& e : errors) message += "\n  - " + e;
    throw ConfigError(message);
}

LossWeights TrainConfig::effective_weights() const {
    LossWeights w = weights;
    switch (mode) {
        case TrainMode::end_to_end: w.lambda1 = 0.0; w.lambda2 = 0.0; break;
        case TrainMode::pipeline:
        case TrainMode::question_augment: w.lambda1 = 1.0; w.lambda2 = 0.0; break;
        case TrainMode::excord: break;
    }
    return w;
}

namespace {

// Applies JSON fields to a config, collecting errors instead of stopping at the first.
class ConfigReader {
public:
    ConfigReader(const json& object, std::vector<std::string>& errors) : object_(object), errors_(errors) {}

    template <typename T>
    void read(const char* key, T& target) {
        seen_.push_back(key);
        const auto it = object_.find(key);
        if (it == object_.end()) return;
        try {
            if constexpr (std::is_same_v<T, std::size_t> || std::is_same_v<T, std::uint64_t>) {
                if (!it->is_number_integer() || it->get<long long>() < 0) throw std::invalid_argument("non-negative integer");
            }
            target = it->get<T>();
        } catch (const std::exception&) {
            errors_.push_back(std::string(key) + ": wrong type");
        }
    }

    template <typename Fn>
    void read_string(const char* key, Fn apply) {
        seen_.push_back(key);
        const auto it = object_.find(key);
        if (it == object_.end()) return;
        if (!it->is_string()) {
            errors_.push_back(std::string(key) + ": expected a string");
            return;
        }
        try {
            apply(it->get<std::string>());
        } catch (const std::exception& e) {
            errors_.push_back(std::string(key) + ": " + e.what());
        }
    }

    void mark(const char* key) { seen_.push_back(key); }

    void report_unknown(const std::string& prefix) {
        for (const auto& [key, value] : object_.items()) {
            if (std::find(seen_.begin(), seen_.end(), key) == seen_.end()) {
                errors_.push_back("unknown key '" + prefix + key + "'");
            }
        }
    }

private:
    const json& object_;
    std::vector<std::string>& errors_;
    std::vector<std::string> seen_;
};

}  // namespace

TrainConfig train_config_from_json(std::string_view json_text, TrainConfig base) {
    json object;
    try {
        object = json::parse(json_text);
    } catch (const json::parse_error& e) {
        throw ConfigError(std::string("run config is not valid JSON: ") + e.what());
    }
    if (!object.is_object()) throw ConfigError("run config must be a JSON object");
    std::vector<std::string> errors;
    ConfigReader r(object, errors);
    r.read_string("mode", [&](const std::string& v) { base.mode = parse_train_mode(v); });
    r.read("learning_rate", base.learning_rate);
    r.read("batch_size", base.batch_size);
    r.read("eval_interval_steps", base.eval_interval_steps);
    r.read("max_steps", base.max_steps);
    r.read("epochs", base.epochs);
    r.read("lambda1", base.weights.lambda1);
    r.read("lambda2", base.weights.lambda2);
    r.read("target_temperature", base.weights.target_temperature);
    r.read("history_window_k", base.history_window_k);
    r.read("seed", base.seed);
    r.read("weight_decay", base.weight_decay);
    r.read("adam_beta1", base.adam_beta1);
    r.read("adam_beta2", base.adam_beta2);
    r.read("adam_epsilon", base.adam_epsilon);
    r.read("warmup_fraction", base.warmup_fraction);
    r.read_string("lr_schedule", [&](const std::string& v) {
        if (v == "linear_warmup_decay") base.lr_schedule = LrSchedule::linear_warmup_decay;
        else if (v == "constant") base.lr_schedule = LrSchedule::constant;
        else throw std::invalid_argument("expected linear_warmup_decay or constant");
    });
    r.read("max_sequence_len", base.limits.max_sequence_len);
    r.read("max_query_len", base.limits.max_query_len);
    r.read("doc_stride", base.limits.doc_stride);
    r.read("max_answer_len", base.max_answer_len);
    r.read_string("self_history", [&](const std::string& v) {
        if (v == "empty") base.self_history = SelfHistory::empty;
        else if (v == "rewritten") base.self_history = SelfHistory::rewritten;
        else throw std::invalid_argument("expected empty or rewritten");
    });
    r.read("pipeline_history", base.pipeline_history);
    r.mark("backbone");
    if (const auto it = object.find("backbone"); it != object.end()) {
        if (!it->is_object()) {
            errors.push_back("backbone: expected an object");
        } else {
            ConfigReader b(*it, errors);
            b.read("vocab_size", base.backbone.vocab_size);
            b.read("embed_dim", base.backbone.embed_dim);
            b.read("hidden_dim", base.backbone.hidden_dim);
            b.read("context_radius", base.backbone.context_radius);
            b.read("use_hae", base.backbone.use_hae);
            b.report_unknown("backbone.");
        }
    }
    r.report_unknown("");
    for (auto& e : base.validation_errors()) errors.push_back(std::move(e));
    if (!errors.empty()) {
        std::string message = "invalid run config:";
        for (const auto& e : errors) message += "\n  - " + e;
        throw ConfigError(message);
    }
    base.backbone.seed = base.seed;
    return base;
}

TrainConfig load_train_config(const std::filesystem::path& path, TrainConfig base) {
    std::ifstream in(path);
    if (!in) throw ConfigError(path.string() + ": cannot open run config");
    std::ostringstream buffer;
    buffer << in.rdbuf();
    return train_config_from_json(buffer.str(), std::move(base));
}

std::string train_config_to_json(const TrainConfig& c) {
    const json object = {
        {"mode", std::string(to_string(c.mode))},
        {"learning_rate", c.learning_rate},
        {"batch_size", c.batch_size},
        {"eval_interval_steps", c.eval_interval_steps},
        {"max_steps", c.max_steps},
        {"epochs", c.epochs},
        {"lambda1", c.weights.lambda1},
        {"lambda2", c.weights.lambda2},
        {"target_temperature", c.weights.target_temperature},
        {"history_window_k", c.history_window_k},
        {"seed", c.seed},
        {"weight_decay", c.weight_decay},
        {"adam_beta1", c.adam_beta1},
        {"adam_beta2", c.adam_beta2},
        {"adam_epsilon", c.adam_epsilon},
        {"warmup_fraction", c.warmup_fraction},
        {"lr_schedule", c.lr_schedule == LrSchedule::constant ? "constant" : "linear_warmup_decay"},
        {"max_sequence_len", c.limits.max_sequence_len},
        {"max_query_len", c.limits.max_query_len},
        {"doc_stride", c.limits.doc_stride},
        {"max_answer_len", c.max_answer_len},
        {"self_history", c.self_history == SelfHistory::rewritten ? "rewritten" : "empty"},
        {"pipeline_history", c.pipeline_history},
        {"backbone",
         {{"vocab_size", c.backbone.vocab_size},
          {"embed_dim", c.backbone.embed_dim},
          {"hidden_dim", c.backbone.hidden_dim},
          {"context_radius", c.backbone.context_radius},
          {"use_hae", c.backbone.use_hae}}}};
    return object.dump(2);
}

// ---- encoding ------------------------------------------------------------------

std::vector<EncodedPair> encode_pairs(std::span<const Dialogue> dialogues, std::span<const QuestionPair> pairs,
                                      const TrainConfig& config, const Vocabulary& vocabulary, bool use_hae) {
    std::map<std::string, const Dialogue*> by_id;
    for (const Dialogue& d : dialogues) by_id.emplace(d.id, &d);
    std::map<std::pair<std::string, int>, const QuestionPair*> pair_by_key;
    for (const QuestionPair& p : pairs) pair_by_key.emplace(std::make_pair(p.dialogue_id, p.turn_index), &p);

    std::vector<EncodedPair> encoded;
    encoded.reserve(pairs.size());
    for (const QuestionPair& pair : pairs) {
        const auto it = by_id.find(pair.dialogue_id);
        if (it == by_id.end()) {
            throw ValidationError("question pair refers to unknown dialogue '" + pair.dialogue_id + "'");
        }
        const Dialogue& dialogue = *it->second;
        const Turn& turn = dialogue.turn(pair.turn_index);
        const TokenSpan gold = gold_token_span(dialogue.document, turn);
        const std::size_t k = config.history_window_k;
        const ConversationHistory history = history_window(dialogue, pair.turn_index, k);
        std::vector<TokenSpan> hae;
        if (use_hae) hae = history_answer_spans(dialogue, pair.turn_index, k);

        ConversationHistory self_history;
        std::vector<TokenSpan> self_hae;
        if (config.self_history == SelfHistory::rewritten) {
            self_history = history;
            const std::size_t first = static_cast<std::size_t>(pair.turn_index) - 1 - history.size();
            for (std::size_t i = 0; i < history.size(); ++i) {
                const int t = static_cast<int>(first + i + 1);
                if (const auto p = pair_by_key.find({pair.dialogue_id, t}); p != pair_by_key.end()) {
                    self_history.entries[i].question = p->second->self_contained;
                }
            }
            self_hae = hae;
        }

        EncodedPair item;
        item.dialogue_id = pair.dialogue_id;
        item.turn_index = pair.turn_index;
        item.original = encode_input(dialogue.document, pair.original, history, hae, config.limits, vocabulary);
        item.self_contained =
            encode_input(dialogue.document, pair.self_contained, self_history, self_hae, config.limits, vocabulary);
        if (item.original.size() != item.self_contained.size()) {
            throw ContractError("branches of pair (" + pair.dialogue_id + ", " + std::to_string(pair.turn_index) +
                                ") have different window counts");
        }
        for (std::size_t w = 0; w < item.original.size(); ++w) {
            item.gold_original.push_back(target_positions(item.original[w], gold, dialogue.document));
            item.gold_self.push_back(target_positions(item.self_contained[w], gold, dialogue.document));
        }
        encoded.push_back(std::move(item));
    }
    return encoded;
}

// ---- losses over a batch ---------------------------------------------------------

BatchLoss batch_loss(std::span<const EncodedPair* const> batch, const TrainableBackbone& backbone,
                     const ParameterSet& live, const ParameterSet& snapshot, TrainMode mode,
                     const LossWeights& weights) {
    if (batch.empty()) throw ArgumentError("empty batch");
    const bool use_original = mode != TrainMode::pipeline;
    const bool use_self = mode != TrainMode::end_to_end;
    const bool use_consistency = mode == TrainMode::excord;

    BatchLoss result;
    std::vector<Var> item_totals;
    for (const EncodedPair* item : batch) {
        const std::size_t windows = item->original.size();
        std::vector<Var> orig_terms, self_terms, cons_terms;
        for (std::size_t w = 0; w < windows; ++w) {
            const EncodedInput& orig_in = item->original[w];
            const EncodedInput& self_in = item->self_contained[w];
            if (!orig_in.same_geometry(self_in)) {
                throw ContractError("branches of pair (" + item->dialogue_id + ", " +
                                    std::to_string(item->turn_index) + ") differ in document geometry");
            }
            std::optional<SpanLogProbs> orig_lp;
            if (use_original || use_consistency) {
                orig_lp = span_log_probs(backbone.forward_graph(orig_in, live), orig_in);
                orig_terms.push_back(span_nll(*orig_lp, item->gold_original[w].first, item->gold_original[w].second));
            }
            if (use_self) {
                const SpanLogProbs self_lp = span_log_probs(backbone.forward_graph(self_in, live), self_in);
                self_terms.push_back(span_nll(self_lp, item->gold_self[w].first, item->gold_self[w].second));
            }
            if (use_consistency) {
                // Target from the fixed copy: the graph is cut before it reaches the snapshot.
                const GraphLogits fixed = backbone.forward_graph(self_in, snapshot);
                const Var start = autograd::detach(fixed.start);
                const Var end = autograd::detach(fixed.end);
                std::vector<double> start_logits(self_in.size(), 0.0), end_logits(self_in.size(), 0.0);
                std::copy(start.value().begin(), start.value().end(), start_logits.begin());
                std::copy(end.value().begin(), end.value().end(), end_logits.begin());
                SpanDistribution target{masked_softmax(start_logits, self_in.document_token_mask),
                                        masked_softmax(end_logits, self_in.document_token_mask)};
                target = sharpen(target, weights.target_temperature);
                cons_terms.push_back(consistency_kl(*orig_lp, target));
            }
        }
        const double inv_windows = 1.0 / static_cast<double>(windows);
        auto mean_of = [inv_windows](const std::vector<Var>& terms) {
            return autograd::scale(autograd::sum(terms), inv_windows);
        };
        std::vector<Var> weighted;
        LossBreakdown parts;
        if (!orig_terms.empty() && use_original) {
            const Var l = mean_of(orig_terms);
            parts.l_orig = l.item();
            weighted.push_back(l);
        }
        if (!self_terms.empty()) {
            const Var l = mean_of(self_terms);
            parts.l_self = l.item();
            weighted.push_back(autograd::scale(l, weights.lambda1));
        }
        if (!cons_terms.empty()) {
            const Var l = mean_of(cons_terms);
            parts.l_cons = l.item();
            weighted.push_back(autograd::scale(l, weights.lambda2));
        }
        LossBreakdown checked = total_loss(parts.l_orig, parts.l_self, parts.l_cons, weights);
        result.items.push_back(checked);
        item_totals.push_back(autograd::sum(weighted));
    }
    const double inv_batch = 1.0 / static_cast<double>(batch.size());
    result.total = autograd::scale(autograd::sum(item_totals), inv_batch);
    double l_orig = 0.0, l_self = 0.0, l_cons = 0.0;
    for (const LossBreakdown& item : result.items) {
        l_orig += item.l_orig;
        l_self += item.l_self;
        l_cons += item.l_cons;
    }
    result.breakdown = total_loss(l_orig * inv_batch, l_self * inv_batch, l_cons * inv_batch, weights);
    return result;
}

// ---- optimizer ---------------------------------------------------------------

AdamW::AdamW(ParameterSet& params, const AdamWConfig& config) : params_(&params), config_(config) {
    for (std::size_t i = 0; i < params.count(); ++i) {
        m_.emplace_back(params.at(i).size(), 0.0);
        v_.emplace_back(params.at(i).size(), 0.0);
    }
}

void AdamW::step(double learning_rate) {
    ++t_;
    const double correction1 = 1.0 - std::pow(config_.beta1, static_cast<double>(t_));
    const double correction2 = 1.0 - std::pow(config_.beta2, static_cast<double>(t_));
    for (std::size_t i = 0; i < params_->count(); ++i) {
        Var& param = params_->at(i);
        const auto& grad = param.grad();
        auto& value = param.mutable_value();
        if (grad.size() != value.size()) continue;
        for (std::size_t j = 0; j < value.size(); ++j) {
            m_[i][j] = config_.beta1 * m_[i][j] + (1.0 - config_.beta1) * grad[j];
            v_[i][j] = config_.beta2 * v_[i][j] + (1.0 - config_.beta2) * grad[j] * grad[j];
            const double m_hat = m_[i][j] / correction1;
            const double v_hat = v_[i][j] / correction2;
            value[j] -= learning_rate * config_.weight_decay * value[j];
            value[j] -= learning_rate * m_hat / (std::sqrt(v_hat) + config_.epsilon);
        }
    }
}

LossBreakdown train_step(std::span<const EncodedPair* const> batch, TrainableBackbone& backbone, TrainMode mode,
                         const LossWeights& weights, AdamW& optimizer, double learning_rate) {
    ParameterSet& live = backbone.parameters();
    const ParameterSet fixed_copy = live.snapshot();
    BatchLoss loss = batch_loss(batch, backbone, live, fixed_copy, mode, weights);
    live.zero_grad();
    autograd::backward(loss.total);
    optimizer.step(learning_rate);
    return loss.breakdown;
}

LossBreakdown step_excord(std::span<const EncodedPair* const> batch, TrainableBackbone& backbone,
                          const LossWeights& weights, AdamW& optimizer, double learning_rate) {
    return train_step(batch, backbone, TrainMode::excord, weights, optimizer, learning_rate);
}

double scheduled_learning_rate(const TrainConfig& config, std::size_t step, std::size_t total_steps) {
    if (config.lr_schedule == LrSchedule::constant || total_steps == 0) return config.learning_rate;
    const auto warmup = static_cast<std::size_t>(config.warmup_fraction * static_cast<double>(total_steps));
    if (step <= warmup) {
        return config.learning_rate * static_cast<double>(step) / static_cast<double>(std::max<std::size_t>(warmup, 1));
    }
    const double remaining = static_cast<double>(total_steps - step + 1) / static_cast<double>(total_steps - warmup);
    return config.learning_rate * remaining;
}

// ---- training loop -------------------------------------------------------------

std::string step_log_line(const StepLog& entry) {
    const json object = {{"step", entry.step},
                         {"l_orig", entry.loss.l_orig},
                         {"l_self", entry.loss.l_self},
                         {"l_cons", entry.loss.l_cons},
                         {"total", entry.loss.total}};
    return object.dump();
}

namespace {

double dev_f1(const TinyBackbone& backbone, std::span<const Dialogue> dev, const TrainConfig& config) {
    PredictOptions options = predict_options_from(config);
    if (options.mode == TrainMode::pipeline) options.mode = TrainMode::excord;
    const PredictionResult predictions = predict(backbone, dev, options);
    const auto results = score_predictions(predictions.predictions, dev);
    return aggregate(results).overall_f1;
}

void write_text(const std::filesystem::path& path, const std::string& content) {
    std::ofstream out(path);
    if (!out) throw Error(path.string() + ": cannot open for writing");
    out << content << '\n';
}

void dump_batch(const std::filesystem::path& path, std::span<const EncodedPair* const> batch,
                std::span<const QuestionPair> pairs, const std::map<std::pair<std::string, int>, std::size_t>& index) {
    json items = json::array();
    for (const EncodedPair* item : batch) {
        json entry = {{"dialogue_id", item->dialogue_id}, {"turn_index", item->turn_index}};
        if (const auto it = index.find({item->dialogue_id, item->turn_index}); it != index.end()) {
            entry["original"] = pairs[it->second].original;
            entry["self_contained"] = pairs[it->second].self_contained;
        }
        items.push_back(entry);
    }
    write_text(path, items.dump(2));
}

}  // namespace

TrainResult train(const TrainConfig& config, std::span<const Dialogue> train_dialogues,
                  std::span<const QuestionPair> pairs, std::span<const Dialogue> dev_dialogues,
                  TinyBackbone& backbone, const TrainOptions& options) {
    config.validate();
    if (pairs.empty()) throw ValidationError("training needs at least one question pair");
    if (options.run_dir) {
        std::filesystem::create_directories(*options.run_dir);
        write_text(*options.run_dir / "config.json", train_config_to_json(config));
    }
    const LossWeights weights = config.effective_weights();
    const auto encoded = encode_pairs(train_dialogues, pairs, config, backbone.vocabulary(),
                                      backbone.capabilities().supports_hae);
    std::map<std::pair<std::string, int>, std::size_t> pair_index;
    for (std::size_t i = 0; i < pairs.size(); ++i) pair_index.emplace(std::make_pair(pairs[i].dialogue_id, pairs[i].turn_index), i);

    const std::size_t batches_per_epoch = (encoded.size() + config.batch_size - 1) / config.batch_size;
    const std::size_t total_steps = config.max_steps > 0 ? config.max_steps : config.epochs * batches_per_epoch;
    if (config.lr_schedule == LrSchedule::linear_warmup_decay) {
        spdlog::info("learning-rate schedule: linear warmup over {:.0f}% of {} steps, then linear decay",
                     100.0 * config.warmup_fraction, total_steps);
    }
    spdlog::info("training mode {} on {} pairs, lambda1={} lambda2={} T={}", to_string(config.mode), encoded.size(),
                 weights.lambda1, weights.lambda2, weights.target_temperature);

    AdamW optimizer(backbone.parameters(), {config.adam_beta1, config.adam_beta2, config.adam_epsilon, config.weight_decay});
    std::mt19937_64 rng(config.seed);
    std::vector<std::size_t> order(encoded.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::size_t cursor = order.size();

    std::optional<std::ofstream> loss_log;
    if (options.run_dir) loss_log.emplace(*options.run_dir / "loss_log.jsonl");

    TrainResult result;
    std::optional<Checkpoint> best;
    auto evaluate = [&](std::size_t step) {
        const double f1 = dev_dialogues.empty() ? 0.0 : dev_f1(backbone, dev_dialogues, config);
        result.dev_history.emplace_back(step, f1);
        spdlog::info("step {}: dev F1 {:.1f}", step, f1);
        if (options.run_dir) {
            const auto dir = *options.run_dir / ("step-" + std::to_string(step));
            std::filesystem::create_directories(dir);
            backbone.save(dir / "backbone.json");
            write_text(dir / "config.json", train_config_to_json(config));
            write_text(dir / "metrics.json", json{{"step", step}, {"dev_f1", f1}}.dump(2));
        }
        const bool better = !best || (dev_dialogues.empty() ? true : f1 > best->dev_f1);
        if (better) best = Checkpoint{backbone.parameters().flatten(), step, f1};
    };

    for (std::size_t step = 1; step <= total_steps; ++step) {
        std::vector<const EncodedPair*> batch;
        while (batch.size() < config.batch_size) {
            if (cursor == order.size()) {
                std::shuffle(order.begin(), order.end(), rng);
                cursor = 0;
                if (!batch.empty()) break;  // epoch boundary closes the partial batch
            }
            batch.push_back(&encoded[order[cursor++]]);
        }
        const double lr = scheduled_learning_rate(config, step, total_steps);
        LossBreakdown loss;
        try {
            loss = train_step(batch, backbone, config.mode, weights, optimizer, lr);
        } catch (const NumericError& e) {
            std::string where;
            for (const EncodedPair* item : batch) where += " (" + item->dialogue_id + ", " + std::to_string(item->turn_index) + ")";
            if (options.run_dir) {
                dump_batch(*options.run_dir / "nan_batch.json", batch, pairs, pair_index);
            }
            throw NumericError(std::string("non-finite loss at step ") + std::to_string(step) + ": " + e.what() +
                               "; batch:" + where);
        }
        result.log.push_back({step, loss});
        if (loss_log) *loss_log << step_log_line(result.log.back()) << '\n';
        if (step % config.eval_interval_steps == 0 || step == total_steps) evaluate(step);
    }
    if (loss_log) loss_log->flush();

    backbone.parameters().assign(best->parameters);
    result.best = *best;
    if (options.run_dir) {
        write_text(*options.run_dir / "best.json",
                   json{{"step", best->step}, {"dev_f1", best->dev_f1}, {"path", "step-" + std::to_string(best->step)}}.dump(2));
    }
    return result;
}

// ---- prediction ----------------------------------------------------------------

PredictOptions predict_options_from(const TrainConfig& config) {
    PredictOptions options;
    options.mode = config.mode;
    options.history_window_k = config.history_window_k;
    options.limits = config.limits;
    options.max_answer_len = config.max_answer_len;
    options.pipeline_history = config.pipeline_history;
    return options;
}

PredictionResult predict(const QaBackbone& backbone, std::span<const Dialogue> dialogues,
                         const PredictOptions& options) {
    const BackboneCapabilities caps = backbone.capabilities();
    const Vocabulary vocabulary{caps.vocab_size};
    PredictionResult result;
    for (const Dialogue& dialogue : dialogues) {
        for (const Turn& turn : dialogue.turns) {
            std::string question = turn.question;
            ConversationHistory history = history_window(dialogue, turn.turn_index, options.history_window_k);
            std::vector<TokenSpan> hae;
            if (caps.supports_hae) hae = history_answer_spans(dialogue, turn.turn_index, options.history_window_k);
            if (options.mode == TrainMode::pipeline) {
                std::optional<std::string> rewritten;
                if (options.rewrites != nullptr) rewritten = options.rewrites->lookup_any(dialogue.id, turn.turn_index);
                std::string failure = "no cached rewrite and no rewriter";
                if (!rewritten && options.rewriter != nullptr) {
                    try {
                        rewritten = rewrite(turn.question, history_window(dialogue, turn.turn_index, dialogue.turns.size()),
                                            *options.rewriter, options.decoding);
                    } catch (const RewriteError& e) {
                        failure = e.what();
                    }
                }
                if (rewritten) {
                    question = *rewritten;
                } else {
                    spdlog::warn("pipeline prediction for '{}' falls back to the original question: {}",
                                 turn.question_id, failure);
                    result.errors.push_back({dialogue.id, turn.turn_index, failure});
                }
                if (!options.pipeline_history) {
                    history = {};
                    hae.clear();
                }
            }
            if (options.observer) options.observer(turn.question_id, question, history);
            const auto inputs = encode_input(dialogue.document, question, history, hae, options.limits, vocabulary);
            std::vector<SpanDistribution> dists;
            dists.reserve(inputs.size());
            for (const EncodedInput& input : inputs) dists.push_back(forward(backbone, input));
            result.predictions[turn.question_id] =
                decode_windows(dists, inputs, dialogue.document, options.max_answer_len).text;
        }
    }
    return result;
}

}  // namespace excord
