#include "dasd/losses.hpp"

#include <vector>

#include "dasd/errors.hpp"

namespace dasd {

void LossWeights::validate() const {
    std::string problems;
    if (!(temperature > 0.0)) problems += " temperature must be > 0;";
    if (lambda_adv < 0.0) problems += " lambda_adv must be >= 0;";
    if (lambda_sc < 0.0) problems += " lambda_sc must be >= 0;";
    if (!problems.empty()) throw InvalidValue("invalid loss weights:" + problems);
}

Tensor semantic_consistency(const Tensor& r_s, const Tensor& f_sr) {
    return l1_distance(r_s, f_sr);
}

Tensor discrimination_loss(const Tensor& p_pos, const Tensor& p_neg) {
    Tensor pos_term = negate(log_op(p_pos));
    Tensor neg_term = negate(log_op(sub(Tensor::full(p_neg.shape(), 1.0), p_neg)));
    return add(reduce_sum(pos_term), reduce_sum(neg_term));
}

Tensor discrimination_loss_batch(std::span<const Tensor> p_pos, std::span<const Tensor> p_neg) {
    if (p_pos.size() != p_neg.size() || p_pos.empty()) {
        throw ShapeMismatch("discrimination_loss_batch: pair count mismatch");
    }
    std::vector<Tensor> per_pair;
    per_pair.reserve(p_pos.size());
    for (std::size_t i = 0; i < p_pos.size(); ++i) {
        per_pair.push_back(discrimination_loss(p_pos[i], p_neg[i]));
    }
    return batch_mean(per_pair);
}

Tensor adversarial_loss(const Tensor& p_pos, const Tensor& p_neg) {
    return negate(discrimination_loss(p_pos, p_neg));
}

Tensor adversarial_loss_batch(std::span<const Tensor> p_pos, std::span<const Tensor> p_neg) {
    return negate(discrimination_loss_batch(p_pos, p_neg));
}

Tensor cross_lingual(const Tensor& r_s, const Tensor& r_t) { return squared_l2(r_s, r_t); }

Tensor cross_lingual_batch(std::span<const Tensor> r_s, std::span<const Tensor> r_t) {
    if (r_s.size() != r_t.size() || r_s.empty()) {
        throw ShapeMismatch("cross_lingual_batch: pair count mismatch");
    }
    std::vector<Tensor> per_pair;
    per_pair.reserve(r_s.size());
    for (std::size_t i = 0; i < r_s.size(); ++i) per_pair.push_back(cross_lingual(r_s[i], r_t[i]));
    return batch_mean(per_pair);
}

Tensor cross_modal_nce(const Tensor& r_t_batch, const Tensor& r_v_batch, double tau) {
    if (!(tau > 0.0)) throw InvalidValue("temperature must be > 0");
    if (r_t_batch.shape() != r_v_batch.shape() || r_t_batch.shape().size() != 2) {
        throw ShapeMismatch("cross_modal_nce: batches must be matching (B x d) matrices");
    }
    const std::size_t batch = r_t_batch.shape()[0];
    Tensor nt = l2_normalize_rows(r_t_batch);
    Tensor nv = l2_normalize_rows(r_v_batch);
    Tensor sims = scalar_mul(matmul(nt, transpose(nv)), 1.0 / tau);
    // text -> visual: softmax over candidates j for each text i (rows).
    Tensor log_p_tv = log_op(softmax(sims));
    // visual -> text: softmax over candidates j for each visual i.
    Tensor log_p_vt = log_op(softmax(transpose(sims)));
    Tensor diag_sum = add(reduce_sum(diag_part(log_p_tv)), reduce_sum(diag_part(log_p_vt)));
    return scalar_mul(diag_sum, -1.0 / static_cast<double>(batch));
}

Tensor total_loss(const LossParts& parts, const LossWeights& weights, TrainingStage stage) {
    weights.validate();
    auto need = [](const std::optional<Tensor>& part, const char* name) -> const Tensor& {
        if (!part.has_value()) throw MissingPart(std::string("total_loss: missing ") + name);
        return *part;
    };
    if (stage == TrainingStage::kCrossModal) {
        return need(parts.cross_modal, "cross_modal");
    }
    Tensor total = need(parts.cross_lingual, "cross_lingual");
    if (stage == TrainingStage::kJoint) {
        total = add(total, need(parts.cross_modal, "cross_modal"));
    }
    if (weights.lambda_adv != 0.0) {
        total = add(total, scalar_mul(need(parts.adversarial, "adversarial"), weights.lambda_adv));
    }
    if (weights.lambda_sc != 0.0) {
        total = add(total,
                    scalar_mul(need(parts.semantic_consistency, "semantic_consistency"),
                               weights.lambda_sc));
    }
    return total;
}

}  // namespace dasd
