#include "excord/losses.hpp"

#include <algorithm>
#include <cmath>

#include "excord/errors.hpp"

namespace excord {

using autograd::Var;

void LossWeights::validate() const {
    std::vector<std::string> problems;
    if (!std::isfinite(lambda1) || lambda1 < 0.0) problems.push_back("lambda1 must be finite and >= 0");
    if (!std::isfinite(lambda2) || lambda2 < 0.0) problems.push_back("lambda2 must be finite and >= 0");
    if (!std::isfinite(target_temperature) || !(target_temperature > 0.0) || target_temperature > 1.0) {
        problems.push_back("target_temperature must lie in (0, 1]");
    }
    if (!problems.empty()) {
        std::string message = "invalid loss weights:";
        for (const auto& p : problems) message += " " + p + ";";
        throw ArgumentError(message);
    }
}

namespace {

double floored_log(double p) { return std::log(std::max(p, kLogEpsilon)); }

}  // namespace

double span_nll(const SpanDistribution& dist, std::size_t gold_start, std::size_t gold_end) {
    if (gold_start >= dist.start_probs.size() || gold_end >= dist.end_probs.size()) {
        throw ContractError("gold position outside the span distribution");
    }
    return -floored_log(dist.start_probs[gold_start]) - floored_log(dist.end_probs[gold_end]);
}

double span_nll(const SpanDistribution& dist, std::size_t gold_start, std::size_t gold_end,
                const std::vector<bool>& answer_mask) {
    if (gold_start >= answer_mask.size() || gold_end >= answer_mask.size() || !answer_mask[gold_start] ||
        !answer_mask[gold_end]) {
        throw ContractError("gold span (" + std::to_string(gold_start) + ", " + std::to_string(gold_end) +
                            ") falls on a masked position");
    }
    return span_nll(dist, gold_start, gold_end);
}

double kl_divergence(const std::vector<double>& p, const std::vector<double>& q) {
    if (p.size() != q.size()) throw ContractError("KL between distributions of different length");
    double kl = 0.0;
    for (std::size_t i = 0; i < p.size(); ++i) {
        if (p[i] > 0.0) kl += p[i] * (floored_log(p[i]) - floored_log(q[i]));
    }
    return kl;
}

double consistency_kl(const SpanDistribution& orig, const SpanDistribution& self, double target_temperature) {
    if (orig.start_probs.size() != self.start_probs.size() || orig.end_probs.size() != self.end_probs.size()) {
        throw ContractError("consistency KL between span distributions of different geometry");
    }
    const SpanDistribution target = sharpen(self, target_temperature);
    return kl_divergence(orig.start_probs, target.start_probs) + kl_divergence(orig.end_probs, target.end_probs);
}

double consistency_kl(const SpanDistribution& orig, const EncodedInput& orig_input, const SpanDistribution& self,
                      const EncodedInput& self_input, double target_temperature) {
    if (!orig_input.same_geometry(self_input)) {
        throw ContractError("consistency KL between encodings with different document geometry");
    }
    return consistency_kl(orig, self, target_temperature);
}

LossBreakdown total_loss(double l_orig, double l_self, double l_cons, const LossWeights& weights) {
    const std::pair<const char*, double> terms[] = {{"l_orig", l_orig}, {"l_self", l_self}, {"l_cons", l_cons}};
    for (const auto& [name, value] : terms) {
        if (!std::isfinite(value)) {
            throw NumericError(std::string("loss term ") + name + " is not finite (" + std::to_string(value) + ")");
        }
    }
    return {l_orig, l_self, l_cons, l_orig + weights.lambda1 * l_self + weights.lambda2 * l_cons};
}

SpanLogProbs span_log_probs(const GraphLogits& logits, const EncodedInput& input) {
    const std::size_t n = logits.start.size();
    if (logits.end.size() != n || n > input.size()) {
        throw ContractError("graph logits do not match the encoded input");
    }
    std::vector<bool> mask(input.document_token_mask.begin(), input.document_token_mask.begin() + static_cast<long>(n));
    SpanLogProbs out{autograd::masked_log_softmax(logits.start, mask), autograd::masked_log_softmax(logits.end, mask),
                     std::move(mask)};
    return out;
}

Var span_nll(const SpanLogProbs& log_probs, std::size_t gold_start, std::size_t gold_end) {
    if (gold_start >= log_probs.mask.size() || gold_end >= log_probs.mask.size() || !log_probs.mask[gold_start] ||
        !log_probs.mask[gold_end]) {
        throw ContractError("gold span falls on a masked position");
    }
    const Var terms[] = {autograd::pick(log_probs.start, gold_start), autograd::pick(log_probs.end, gold_end)};
    return autograd::scale(autograd::sum(terms), -1.0);
}

Var consistency_kl(const SpanLogProbs& orig, const SpanDistribution& target) {
    const std::size_t n = orig.mask.size();
    if (target.start_probs.size() < n || target.end_probs.size() < n) {
        throw ContractError("consistency target shorter than the live distribution");
    }
    auto log_target = [n](const std::vector<double>& probs) {
        std::vector<double> logs(n, 0.0);
        for (std::size_t i = 0; i < n; ++i) logs[i] = floored_log(probs[i]);
        return Var::constant(n, 1, std::move(logs));
    };
    for (std::size_t i = n; i < target.start_probs.size(); ++i) {
        if (target.start_probs[i] != 0.0 || target.end_probs[i] != 0.0) {
            throw ContractError("consistency target has mass outside the live geometry");
        }
    }
    const Var terms[] = {autograd::kl_divergence(orig.start, log_target(target.start_probs), orig.mask),
                         autograd::kl_divergence(orig.end, log_target(target.end_probs), orig.mask)};
    return autograd::sum(terms);
}

}  // namespace excord
