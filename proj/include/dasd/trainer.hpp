#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "dasd/hypernet.hpp"
#include "dasd/losses.hpp"
#include "dasd/param_store.hpp"
#include "dasd/synthdata.hpp"

namespace dasd {

struct StageConfig {
    std::size_t steps = 0;
    double lr = 0.0;
    double warmup_fraction = 0.1;  // linear warm-up over this leading fraction
    std::size_t batch = 128;

    void validate() const;
};

struct StepRecord {
    std::size_t step = 0;
    std::string stage;
    double total = 0.0;
    double cross_lingual = 0.0;
    double semantic_consistency = 0.0;
    double adversarial = 0.0;
    double discriminator = 0.0;
    double cross_modal = 0.0;
    double lr = 0.0;
};

// Mutable training position: optimizer moments, step counters and the
// live sampling stream. Serialized whole so a mid-stage checkpoint
// resumes to bit-identical subsequent losses.
struct TrainerState {
    AdamState model_adam_cl;
    AdamState model_adam_cm;
    AdamState disc_adam;
    std::uint64_t rng_state = 0;
    std::size_t cl_step = 0;
    std::size_t cm_step = 0;
    bool rng_seeded = false;

    void seed_if_needed(std::uint64_t seed);
};

struct StageResult {
    std::vector<StepRecord> trace;
};

// Stage 1: per batch, one discriminator update on the discrimination
// loss, then one joint update of SDM / generator / adapters / embedding
// projection on L_CL + l1*L_adv + l2*L_sc. Backbone must be frozen.
StageResult run_cross_lingual_stage(ParamStore& store, const ModelConfig& cfg,
                                    const Corpus& corpus, const StageConfig& stage,
                                    const LossWeights& weights, TrainerState& state,
                                    std::uint64_t seed);

// Stage 2: contrastive alignment of the target branch against the frozen
// vision head on L_CM only.
StageResult run_cross_modal_stage(ParamStore& store, const ModelConfig& cfg, const Corpus& corpus,
                                  const StageConfig& stage, const LossWeights& weights,
                                  TrainerState& state, std::uint64_t seed);

enum class TextBranch { kSource, kTarget };

struct RetrievalMetrics {
    double r1_tv = 0, r5_tv = 0, r10_tv = 0;
    double r1_vt = 0, r5_vt = 0, r10_vt = 0;
    double mAR = 0;
    double median_rank_tv = 0, median_rank_vt = 0;
    std::size_t n_queries = 0, n_gallery = 0;
};

// Cosine ranking of captions against the split's unique visuals. Every
// caption of a concept pairs with that concept's single visual instance;
// visual->text counts the best-ranked caption of the concept. Ties break
// on the stable item index. EmptySplit on an empty span.
RetrievalMetrics evaluate_retrieval(const ParamStore& store, const ModelConfig& cfg,
                                    const std::vector<TripletExample>& split, TextBranch branch);

// Fraction of samples whose k-means cluster majority-style matches their
// own label; k equals the number of distinct styles expected.
double style_cluster_purity(const std::vector<std::vector<double>>& features,
                            const std::vector<int>& style_labels, std::size_t k,
                            std::uint64_t seed);

// Semantic-agnostic features of every caption in the split (eval mode).
std::vector<std::vector<double>> collect_agnostic_features(const ParamStore& store,
                                                           const ModelConfig& cfg,
                                                           const std::vector<TripletExample>& split);

// Held-out accuracy of the trained discriminator on matched vs mismatched
// (f_sa, r_s) pairs; chance level means the agnostic feature carries no
// semantic signal.
double discriminator_holdout_accuracy(const ParamStore& store, const ModelConfig& cfg,
                                      const std::vector<TripletExample>& split,
                                      std::uint64_t seed);

// Trains a fresh classifier probe on (feature, r_s) pairs from the train
// split and reports held-out accuracy; used to show f_sr retains semantic
// signal where f_sa does not.
double train_semantic_probe(const ParamStore& store, const ModelConfig& cfg, const Corpus& corpus,
                            std::uint64_t seed, std::size_t steps = 400);

// Evaluation fan-out width; reads DASD_THREADS (default 1).
std::size_t eval_threads();

}  // namespace dasd
