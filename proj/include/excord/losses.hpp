#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "excord/autograd.hpp"
#include "excord/qa_model.hpp"

namespace excord {

// Floor applied inside every logarithm of a probability.
inline constexpr double kLogEpsilon = 1e-12;

struct LossWeights {
    double lambda1 = 0.5;             // weight of the self-contained question NLL
    double lambda2 = 0.7;             // weight of the consistency KL
    double target_temperature = 0.9;  // sharpening of the consistency target

    void validate() const;
};

struct LossBreakdown {
    double l_orig = 0.0;
    double l_self = 0.0;
    double l_cons = 0.0;
    double total = 0.0;

    bool operator==(const LossBreakdown&) const = default;
};

// -log start[gold_start] - log end[gold_end], probabilities floored at kLogEpsilon.
double span_nll(const SpanDistribution& dist, std::size_t gold_start, std::size_t gold_end);
// As above, and throws ContractError when a gold position is masked.
double span_nll(const SpanDistribution& dist, std::size_t gold_start, std::size_t gold_end,
                const std::vector<bool>& answer_mask);

// KL(p || q) in nats over entries where p > 0.
double kl_divergence(const std::vector<double>& p, const std::vector<double>& q);

// KL(start_orig || sharpen(start_self, T)) + KL(end_orig || sharpen(end_self, T)).
double consistency_kl(const SpanDistribution& orig, const SpanDistribution& self, double target_temperature);
// Also checks both encodings share the same document geometry.
double consistency_kl(const SpanDistribution& orig, const EncodedInput& orig_input, const SpanDistribution& self,
                      const EncodedInput& self_input, double target_temperature);

// l_orig + lambda1 * l_self + lambda2 * l_cons. NaN or infinite terms raise NumericError.
LossBreakdown total_loss(double l_orig, double l_self, double l_cons, const LossWeights& weights);

// ---- differentiable counterparts ---------------------------------------------

struct SpanLogProbs {
    autograd::Var start;
    autograd::Var end;
    std::vector<bool> mask;  // answer positions over the active prefix
};

SpanLogProbs span_log_probs(const GraphLogits& logits, const EncodedInput& input);

autograd::Var span_nll(const SpanLogProbs& log_probs, std::size_t gold_start, std::size_t gold_end);

// KL from the live distribution to a constant target distribution given over
// the full input length. The target carries no gradient by construction.
autograd::Var consistency_kl(const SpanLogProbs& orig, const SpanDistribution& target);

}  // namespace excord
