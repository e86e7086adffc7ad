#pragma once

#include <optional>
#include <span>

#include "dasd/tensor.hpp"

namespace dasd {

struct LossWeights {
    double lambda_adv = 1.0;  // weight on the adversarial confusion term
    double lambda_sc = 0.1;   // weight on semantic consistency
    double temperature = 0.01;

    void validate() const;  // InvalidValue; temperature must be > 0
};

enum class TrainingStage { kCrossLingual, kCrossModal, kJoint };

// L1 distance between the frozen source representation and the
// semantic-related feature. The source branch has no trainable inputs,
// so gradients reach f_sr only.
Tensor semantic_consistency(const Tensor& r_s, const Tensor& f_sr);

// -log p_pos - log(1 - p_neg) for one pair; batch form is the mean of
// per-pair values.
Tensor discrimination_loss(const Tensor& p_pos, const Tensor& p_neg);
Tensor discrimination_loss_batch(std::span<const Tensor> p_pos, std::span<const Tensor> p_neg);

// Exact negation of the discrimination loss; the caller supplies
// probabilities computed against a detached discriminator so gradients
// route to the semantic-agnostic branch only.
Tensor adversarial_loss(const Tensor& p_pos, const Tensor& p_neg);
Tensor adversarial_loss_batch(std::span<const Tensor> p_pos, std::span<const Tensor> p_neg);

// Squared Euclidean distance; batch form is the mean over pairs.
Tensor cross_lingual(const Tensor& r_s, const Tensor& r_t);
Tensor cross_lingual_batch(std::span<const Tensor> r_s, std::span<const Tensor> r_t);

// Bidirectional InfoNCE over in-batch cosine similarities at temperature
// tau. Row i of each matrix is the representation of item i; matched
// pairs sit on the diagonal. Rejects zero rows (cosine undefined).
Tensor cross_modal_nce(const Tensor& r_t_batch, const Tensor& r_v_batch, double tau);

struct LossParts {
    std::optional<Tensor> cross_lingual;
    std::optional<Tensor> cross_modal;
    std::optional<Tensor> adversarial;
    std::optional<Tensor> semantic_consistency;
};

// Stage composition: cross-lingual -> L_CL + l1*L_adv + l2*L_sc;
// cross-modal -> L_CM; joint adds both alignment terms. MissingPart when
// a required component (weight != 0) is absent.
Tensor total_loss(const LossParts& parts, const LossWeights& weights, TrainingStage stage);

}  // namespace dasd
