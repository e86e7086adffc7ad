#include "dasd/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <thread>

#include "dasd/errors.hpp"
#include "dasd/kmeans.hpp"
#include "dasd/rng.hpp"

namespace dasd {

void StageConfig::validate() const {
    std::vector<std::string> problems;
    if (!(lr > 0.0)) problems.push_back("lr must be > 0");
    if (batch == 0) problems.push_back("batch must be >= 1");
    if (warmup_fraction < 0.0 || warmup_fraction >= 1.0)
        problems.push_back("warmup_fraction must lie in [0, 1)");
    if (!problems.empty()) {
        std::string msg = "invalid stage config:";
        for (const auto& p : problems) msg += " " + p + ";";
        throw InvalidConfig(msg);
    }
}

void TrainerState::seed_if_needed(std::uint64_t seed) {
    if (rng_seeded) return;
    rng_state = substream(seed, "trainer.sampling").state();
    rng_seeded = true;
}

std::size_t eval_threads() {
    const char* env = std::getenv("DASD_THREADS");
    if (!env) return 1;
    long n = std::strtol(env, nullptr, 10);
    if (n < 1) return 1;
    return static_cast<std::size_t>(std::min<long>(n, 64));
}

namespace {

void parallel_for(std::size_t n, std::size_t threads, const std::function<void(std::size_t)>& fn) {
    threads = std::min(threads, n == 0 ? std::size_t{1} : n);
    if (threads <= 1) {
        for (std::size_t i = 0; i < n; ++i) fn(i);
        return;
    }
    std::vector<std::thread> pool;
    pool.reserve(threads);
    for (std::size_t t = 0; t < threads; ++t) {
        pool.emplace_back([&, t] {
            for (std::size_t i = t; i < n; i += threads) fn(i);
        });
    }
    for (auto& th : pool) th.join();
}

// Concept-distinct batch: duplicate concepts would make in-batch
// negatives (and NCE denominators) ambiguous.
std::vector<std::size_t> sample_batch(const std::vector<TripletExample>& items, std::size_t batch,
                                      SplitMix64& rng) {
    std::vector<std::size_t> picked;
    std::vector<int> concepts;
    picked.reserve(batch);
    std::size_t guard = 0;
    while (picked.size() < batch && guard < batch * 200) {
        ++guard;
        std::size_t idx = static_cast<std::size_t>(rng.below(items.size()));
        int cid = items[idx].concept_id;
        bool clash = false;
        for (int c : concepts) clash = clash || c == cid;
        if (clash) continue;
        picked.push_back(idx);
        concepts.push_back(cid);
    }
    while (picked.size() < batch) {
        picked.push_back(static_cast<std::size_t>(rng.below(items.size())));
    }
    return picked;
}

// Mismatched-source index per batch position: in-batch shuffle, resampled
// on concept collision.
std::vector<std::size_t> sample_negatives(const std::vector<TripletExample>& items,
                                          const std::vector<std::size_t>& batch, SplitMix64& rng) {
    std::vector<std::size_t> negatives(batch.size());
    for (std::size_t i = 0; i < batch.size(); ++i) {
        std::size_t j = i;
        for (int attempt = 0; attempt < 64; ++attempt) {
            j = static_cast<std::size_t>(rng.below(batch.size()));
            if (j != i && items[batch[j]].concept_id != items[batch[i]].concept_id) break;
        }
        if (j == i) j = (i + 1) % batch.size();
        negatives[i] = j;
    }
    return negatives;
}

void assert_keys_with_prefix(const GradMap& grads, const std::string& prefix, bool expect_only) {
    for (const auto& [name, _] : grads) {
        bool has = name.rfind(prefix, 0) == 0;
        if (expect_only && !has) {
            throw InvalidValue("gradient routing violation: unexpected key " + name);
        }
        if (!expect_only && has) {
            throw InvalidValue("gradient routing violation: forbidden key " + name);
        }
    }
}

std::vector<Tensor> cache_source_representations(const ParamStore& store, const ModelConfig& cfg,
                                                 const std::vector<TripletExample>& items) {
    std::vector<Tensor> cache(items.size());
    parallel_for(items.size(), eval_threads(), [&](std::size_t i) {
        cache[i] = encode_source(store, cfg.backbone, items[i].source_tokens);
    });
    return cache;
}

std::vector<Tensor> cache_visual_representations(const ParamStore& store, const ModelConfig& cfg,
                                                 const std::vector<TripletExample>& items) {
    std::vector<Tensor> cache(items.size());
    parallel_for(items.size(), eval_threads(), [&](std::size_t i) {
        cache[i] = encode_vision(store, cfg.backbone, items[i].visual);
    });
    return cache;
}

}  // namespace

StageResult run_cross_lingual_stage(ParamStore& store, const ModelConfig& cfg,
                                    const Corpus& corpus, const StageConfig& stage,
                                    const LossWeights& weights, TrainerState& state,
                                    std::uint64_t seed) {
    cfg.validate();
    stage.validate();
    weights.validate();
    if (corpus.train.empty()) throw EmptySplit("cross-lingual stage: empty train split");
    if (!store.all_frozen_with_prefix("backbone.")) {
        throw NotFrozen("cross-lingual stage requires a frozen backbone");
    }
    state.seed_if_needed(seed);

    StageResult result;
    if (state.cl_step >= stage.steps) return result;

    auto r_s_cache = cache_source_representations(store, cfg, corpus.train);

    for (std::size_t step = state.cl_step; step < stage.steps; ++step) {
        SplitMix64 rng(state.rng_state);
        auto batch = sample_batch(corpus.train, stage.batch, rng);
        auto negatives = sample_negatives(corpus.train, batch, rng);
        state.rng_state = rng.state();

        const double lr = warmup_lr(stage.lr, step, stage.steps, stage.warmup_fraction);
        StepRecord record;
        record.step = step;
        record.stage = "cross_lingual";
        record.lr = lr;

        try {
            GradTape model_tape;
            TapeScope model_scope(model_tape);

            std::vector<Tensor> f_sr, f_sa, r_t, r_s;
            f_sr.reserve(batch.size());
            for (std::size_t idx : batch) {
                const auto& ex = corpus.train[idx];
                DisentangledPair pair = extract_features(store, cfg.backbone, cfg.sdm,
                                                         ex.target_tokens);
                f_sr.push_back(pair.f_sr);
                f_sa.push_back(pair.f_sa);
                r_t.push_back(encode_target_with_features(store, cfg, ex.target_tokens, pair));
                r_s.push_back(r_s_cache[idx]);
            }

            if (weights.lambda_adv != 0.0) {
                // Discriminator step on detached agnostic features; the
                // model tape stays suspended while this tape is active.
                GradTape disc_tape;
                TapeScope disc_scope(disc_tape);
                std::vector<Tensor> p_pos, p_neg;
                p_pos.reserve(batch.size());
                for (std::size_t i = 0; i < batch.size(); ++i) {
                    Tensor frozen_feature = f_sa[i].detach();
                    p_pos.push_back(discriminate(store, cfg.disc, frozen_feature, r_s[i],
                                                 DiscriminatorMode::kTrainable));
                    p_neg.push_back(discriminate(store, cfg.disc, frozen_feature,
                                                 r_s_cache[batch[negatives[i]]],
                                                 DiscriminatorMode::kTrainable));
                }
                Tensor l_d = discrimination_loss_batch(p_pos, p_neg);
                record.discriminator = l_d.value();
                GradMap disc_grads = backward(l_d, disc_tape);
                assert_keys_with_prefix(disc_grads, "disc.", /*expect_only=*/true);
                adam_update(store, disc_grads, state.disc_adam, lr);
            }

            LossParts parts;
            parts.cross_lingual = cross_lingual_batch(r_s, r_t);
            record.cross_lingual = parts.cross_lingual->value();
            if (weights.lambda_adv != 0.0) {
                // Confusion step against the just-updated, detached
                // discriminator; gradients reach the sa-branch only.
                std::vector<Tensor> p_pos, p_neg;
                p_pos.reserve(batch.size());
                for (std::size_t i = 0; i < batch.size(); ++i) {
                    p_pos.push_back(discriminate(store, cfg.disc, f_sa[i], r_s[i],
                                                 DiscriminatorMode::kDetached));
                    p_neg.push_back(discriminate(store, cfg.disc, f_sa[i],
                                                 r_s_cache[batch[negatives[i]]],
                                                 DiscriminatorMode::kDetached));
                }
                parts.adversarial = adversarial_loss_batch(p_pos, p_neg);
                record.adversarial = parts.adversarial->value();
            }
            if (weights.lambda_sc != 0.0) {
                std::vector<Tensor> per_pair;
                per_pair.reserve(batch.size());
                for (std::size_t i = 0; i < batch.size(); ++i) {
                    per_pair.push_back(semantic_consistency(r_s[i], f_sr[i]));
                }
                parts.semantic_consistency = batch_mean(per_pair);
                record.semantic_consistency = parts.semantic_consistency->value();
            }

            Tensor total = total_loss(parts, weights, TrainingStage::kCrossLingual);
            record.total = total.value();
            GradMap grads = backward(total, model_tape);
            assert_keys_with_prefix(grads, "disc.", /*expect_only=*/false);
            assert_keys_with_prefix(grads, "backbone.", /*expect_only=*/false);
            adam_update(store, grads, state.model_adam_cl, lr);
        } catch (const NonFinite& e) {
            throw DivergedTraining(std::string("cross-lingual stage diverged at step ") +
                                   std::to_string(step) + ": " + e.what());
        }
        if (!std::isfinite(record.total)) {
            throw DivergedTraining("cross-lingual loss is not finite");
        }
        result.trace.push_back(record);
        state.cl_step = step + 1;
    }
    return result;
}

StageResult run_cross_modal_stage(ParamStore& store, const ModelConfig& cfg, const Corpus& corpus,
                                  const StageConfig& stage, const LossWeights& weights,
                                  TrainerState& state, std::uint64_t seed) {
    cfg.validate();
    stage.validate();
    weights.validate();
    if (corpus.train.empty()) throw EmptySplit("cross-modal stage: empty train split");
    if (!store.all_frozen_with_prefix("backbone.")) {
        throw NotFrozen("cross-modal stage requires a frozen backbone");
    }
    state.seed_if_needed(seed);

    StageResult result;
    if (state.cm_step >= stage.steps) return result;

    auto r_v_cache = cache_visual_representations(store, cfg, corpus.train);

    for (std::size_t step = state.cm_step; step < stage.steps; ++step) {
        SplitMix64 rng(state.rng_state);
        auto batch = sample_batch(corpus.train, stage.batch, rng);
        state.rng_state = rng.state();

        const double lr = warmup_lr(stage.lr, step, stage.steps, stage.warmup_fraction);
        StepRecord record;
        record.step = step;
        record.stage = "cross_modal";
        record.lr = lr;

        try {
            GradTape tape;
            TapeScope scope(tape);
            std::vector<Tensor> r_t, r_v;
            r_t.reserve(batch.size());
            for (std::size_t idx : batch) {
                r_t.push_back(encode_target(store, cfg, corpus.train[idx].target_tokens));
                r_v.push_back(r_v_cache[idx]);
            }
            LossParts parts;
            parts.cross_modal =
                cross_modal_nce(stack_rows(r_t), stack_rows(r_v), weights.temperature);
            Tensor total = total_loss(parts, weights, TrainingStage::kCrossModal);
            record.cross_modal = record.total = total.value();
            GradMap grads = backward(total, tape);
            assert_keys_with_prefix(grads, "disc.", /*expect_only=*/false);
            assert_keys_with_prefix(grads, "backbone.", /*expect_only=*/false);
            adam_update(store, grads, state.model_adam_cm, lr);
        } catch (const NonFinite& e) {
            throw DivergedTraining(std::string("cross-modal stage diverged at step ") +
                                   std::to_string(step) + ": " + e.what());
        }
        if (!std::isfinite(record.total)) {
            throw DivergedTraining("cross-modal loss is not finite");
        }
        result.trace.push_back(record);
        state.cm_step = step + 1;
    }
    return result;
}

namespace {

struct GalleryItem {
    int concept_id;
    std::size_t first_index;          // stable index of first appearance
    VisualFeature visual;
    std::vector<std::size_t> captions;  // indices of this concept's captions
};

std::vector<GalleryItem> build_gallery(const std::vector<TripletExample>& split) {
    std::vector<GalleryItem> gallery;
    for (std::size_t i = 0; i < split.size(); ++i) {
        auto it = std::find_if(gallery.begin(), gallery.end(), [&](const GalleryItem& g) {
            return g.concept_id == split[i].concept_id;
        });
        if (it == gallery.end()) {
            gallery.push_back({split[i].concept_id, i, split[i].visual, {i}});
        } else {
            it->captions.push_back(i);
        }
    }
    return gallery;
}

std::vector<double> normalized(const std::vector<double>& v) {
    double sq = 0;
    for (double x : v) sq += x * x;
    if (sq == 0.0) throw ZeroVector("retrieval: zero representation");
    double inv = 1.0 / std::sqrt(sq);
    std::vector<double> out(v.size());
    for (std::size_t i = 0; i < v.size(); ++i) out[i] = v[i] * inv;
    return out;
}

double cosine(const std::vector<double>& a, const std::vector<double>& b) {
    double s = 0;
    for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
    return s;
}

// 1-based rank of candidate `target` under descending similarity with
// stable index tie-breaking.
std::size_t rank_of(const std::vector<double>& sims, std::size_t target) {
    std::size_t rank = 1;
    for (std::size_t j = 0; j < sims.size(); ++j) {
        if (j == target) continue;
        if (sims[j] > sims[target] || (sims[j] == sims[target] && j < target)) ++rank;
    }
    return rank;
}

double median(std::vector<double> values) {
    if (values.empty()) return 0;
    std::sort(values.begin(), values.end());
    std::size_t n = values.size();
    if (n % 2 == 1) return values[n / 2];
    return 0.5 * (values[n / 2 - 1] + values[n / 2]);
}

}  // namespace

RetrievalMetrics evaluate_retrieval(const ParamStore& store, const ModelConfig& cfg,
                                    const std::vector<TripletExample>& split, TextBranch branch) {
    if (split.empty()) throw EmptySplit("evaluate_retrieval: empty split");
    auto gallery = build_gallery(split);

    std::vector<std::vector<double>> text(split.size());
    parallel_for(split.size(), eval_threads(), [&](std::size_t i) {
        Tensor r = branch == TextBranch::kSource
                       ? encode_source(store, cfg.backbone, split[i].source_tokens)
                       : encode_target(store, cfg, split[i].target_tokens);
        text[i] = normalized(r.data());
    });
    std::vector<std::vector<double>> vis(gallery.size());
    parallel_for(gallery.size(), eval_threads(), [&](std::size_t g) {
        vis[g] = normalized(encode_vision(store, cfg.backbone, gallery[g].visual).data());
    });

    std::vector<std::size_t> concept_to_gallery(split.size());
    for (std::size_t g = 0; g < gallery.size(); ++g) {
        for (std::size_t idx : gallery[g].captions) concept_to_gallery[idx] = g;
    }

    RetrievalMetrics m;
    m.n_queries = split.size();
    m.n_gallery = gallery.size();

    // text -> visual: rank the paired concept visual among all visuals.
    std::vector<double> ranks_tv(split.size());
    for (std::size_t i = 0; i < split.size(); ++i) {
        std::vector<double> sims(gallery.size());
        for (std::size_t g = 0; g < gallery.size(); ++g) sims[g] = cosine(text[i], vis[g]);
        ranks_tv[i] = static_cast<double>(rank_of(sims, concept_to_gallery[i]));
    }
    // visual -> text: best rank over the concept's captions.
    std::vector<double> ranks_vt(gallery.size());
    for (std::size_t g = 0; g < gallery.size(); ++g) {
        std::vector<double> sims(split.size());
        for (std::size_t i = 0; i < split.size(); ++i) sims[i] = cosine(vis[g], text[i]);
        std::size_t best = split.size();
        for (std::size_t idx : gallery[g].captions) best = std::min(best, rank_of(sims, idx));
        ranks_vt[g] = static_cast<double>(best);
    }

    auto recall_at = [](const std::vector<double>& ranks, double k) {
        std::size_t hits = 0;
        for (double r : ranks) hits += r <= k ? 1 : 0;
        return static_cast<double>(hits) / static_cast<double>(ranks.size());
    };
    m.r1_tv = recall_at(ranks_tv, 1);
    m.r5_tv = recall_at(ranks_tv, 5);
    m.r10_tv = recall_at(ranks_tv, 10);
    m.r1_vt = recall_at(ranks_vt, 1);
    m.r5_vt = recall_at(ranks_vt, 5);
    m.r10_vt = recall_at(ranks_vt, 10);
    m.mAR = (m.r1_tv + m.r5_tv + m.r10_tv + m.r1_vt + m.r5_vt + m.r10_vt) / 6.0;
    m.median_rank_tv = median(ranks_tv);
    m.median_rank_vt = median(ranks_vt);
    return m;
}

double style_cluster_purity(const std::vector<std::vector<double>>& features,
                            const std::vector<int>& style_labels, std::size_t k,
                            std::uint64_t seed) {
    if (k == 0) throw InvalidValue("style_cluster_purity: k must be >= 1");
    if (features.size() != style_labels.size()) {
        throw ShapeMismatch("style_cluster_purity: feature/label count mismatch");
    }
    if (features.size() < k * 10) {
        throw InvalidValue("style_cluster_purity: need at least k*10 samples");
    }
    bool all_identical = true;
    for (std::size_t i = 1; i < features.size() && all_identical; ++i) {
        all_identical = features[i] == features[0];
    }
    if (all_identical) throw DegenerateFeatures("style_cluster_purity: identical features");

    KMeansResult clusters = kmeans(features, k, /*restarts=*/20, /*max_iters=*/100, seed);

    int max_label = 0;
    for (int l : style_labels) max_label = std::max(max_label, l);
    std::vector<std::vector<std::size_t>> counts(k, std::vector<std::size_t>(max_label + 1, 0));
    for (std::size_t i = 0; i < features.size(); ++i) {
        counts[clusters.assignment[i]][style_labels[i]] += 1;
    }
    std::size_t agreeing = 0;
    for (std::size_t c = 0; c < k; ++c) {
        agreeing += *std::max_element(counts[c].begin(), counts[c].end());
    }
    return static_cast<double>(agreeing) / static_cast<double>(features.size());
}

std::vector<std::vector<double>> collect_agnostic_features(
    const ParamStore& store, const ModelConfig& cfg, const std::vector<TripletExample>& split) {
    std::vector<std::vector<double>> features(split.size());
    parallel_for(split.size(), eval_threads(), [&](std::size_t i) {
        features[i] =
            extract_semantic_agnostic(store, cfg.backbone, cfg.sdm, split[i].target_tokens).data();
    });
    return features;
}

double discriminator_holdout_accuracy(const ParamStore& store, const ModelConfig& cfg,
                                      const std::vector<TripletExample>& split,
                                      std::uint64_t seed) {
    if (split.size() < 2) throw EmptySplit("discriminator accuracy needs >= 2 items");
    auto r_s = cache_source_representations(store, cfg, split);
    SplitMix64 rng = substream(seed, "disc.holdout");
    std::size_t correct = 0, total = 0;
    for (std::size_t i = 0; i < split.size(); ++i) {
        Tensor f_sa =
            extract_semantic_agnostic(store, cfg.backbone, cfg.sdm, split[i].target_tokens);
        std::size_t j = i;
        for (int attempt = 0; attempt < 64 && (j == i || split[j].concept_id == split[i].concept_id);
             ++attempt) {
            j = static_cast<std::size_t>(rng.below(split.size()));
        }
        double p_pos =
            discriminate(store, cfg.disc, f_sa, r_s[i], DiscriminatorMode::kDetached).value();
        double p_neg =
            discriminate(store, cfg.disc, f_sa, r_s[j], DiscriminatorMode::kDetached).value();
        correct += p_pos > 0.5 ? 1 : 0;
        correct += p_neg <= 0.5 ? 1 : 0;
        total += 2;
    }
    return static_cast<double>(correct) / static_cast<double>(total);
}

namespace {

// Pair representation for the semantic probe: the raw pair plus the
// interaction terms that make agreement linearly readable.
Tensor probe_pair_features(const Tensor& feature, const Tensor& r) {
    Tensor product = mul(feature, r);
    Tensor gap = sub(feature, r);
    const Tensor parts[] = {feature, r, product, mul(gap, gap)};
    return concat(parts, 0);
}

Tensor probe_classify(const ParamStore& probe, const Tensor& feature, const Tensor& r,
                      double logit_clamp) {
    Tensor x = probe_pair_features(feature, r);
    Tensor h1 = relu(add(matmul(x, probe.param("probe.w1")), probe.param("probe.b1")));
    Tensor h2 = relu(add(matmul(h1, probe.param("probe.w2")), probe.param("probe.b2")));
    Tensor logit = add(matmul(h2, probe.param("probe.w3")), probe.param("probe.b3"));
    return sigmoid(clamp(logit, -logit_clamp, logit_clamp));
}

}  // namespace

double train_semantic_probe(const ParamStore& store, const ModelConfig& cfg, const Corpus& corpus,
                            std::uint64_t seed, std::size_t steps) {
    if (corpus.train.empty() || corpus.test.size() < 2) {
        throw EmptySplit("probe training needs train and test items");
    }
    // Frozen feature sets: probe only ever sees detached values.
    auto collect = [&](const std::vector<TripletExample>& items) {
        std::vector<Tensor> f(items.size()), r(items.size());
        parallel_for(items.size(), eval_threads(), [&](std::size_t i) {
            f[i] = extract_semantic_related(store, cfg.backbone, cfg.sdm, items[i].target_tokens)
                       .detach();
            r[i] = encode_source(store, cfg.backbone, items[i].source_tokens);
        });
        return std::pair(std::move(f), std::move(r));
    };
    auto [train_f, train_r] = collect(corpus.train);
    auto [test_f, test_r] = collect(corpus.test);

    ParamStore probe;
    SplitMix64 init_rng = substream(seed, "probe.init");
    std::map<std::string, Shape> shapes;
    shapes["probe.w1"] = {4 * cfg.backbone.proj_dim, cfg.disc.hidden1};
    shapes["probe.b1"] = {cfg.disc.hidden1};
    shapes["probe.w2"] = {cfg.disc.hidden1, cfg.disc.hidden2};
    shapes["probe.b2"] = {cfg.disc.hidden2};
    shapes["probe.w3"] = {cfg.disc.hidden2, 1};
    shapes["probe.b3"] = {1};
    for (const auto& [name, shape] : shapes) {
        std::vector<double> data(numel(shape), 0.0);
        if (shape.size() == 2) {
            double sigma = std::sqrt(2.0 / static_cast<double>(shape[0] + shape[1]));
            for (auto& x : data) x = init_rng.normal(0.0, sigma);
        }
        probe.insert(name, Tensor::from_data(shape, std::move(data)));
    }

    AdamState adam;
    SplitMix64 rng = substream(seed, "probe.train");
    const std::size_t batch = std::min<std::size_t>(32, corpus.train.size());
    for (std::size_t step = 0; step < steps; ++step) {
        GradTape tape;
        TapeScope scope(tape);
        std::vector<Tensor> p_pos, p_neg;
        for (std::size_t b = 0; b < batch; ++b) {
            std::size_t i = static_cast<std::size_t>(rng.below(corpus.train.size()));
            std::size_t j = i;
            for (int attempt = 0;
                 attempt < 64 &&
                 (j == i || corpus.train[j].concept_id == corpus.train[i].concept_id);
                 ++attempt) {
                j = static_cast<std::size_t>(rng.below(corpus.train.size()));
            }
            p_pos.push_back(probe_classify(probe, train_f[i], train_r[i], cfg.disc.logit_clamp));
            p_neg.push_back(probe_classify(probe, train_f[i], train_r[j], cfg.disc.logit_clamp));
        }
        Tensor loss = discrimination_loss_batch(p_pos, p_neg);
        GradMap grads = backward(loss, tape);
        adam_update(probe, grads, adam, 1e-3);
    }

    SplitMix64 eval_rng = substream(seed, "probe.eval");
    std::size_t correct = 0, total = 0;
    for (std::size_t i = 0; i < corpus.test.size(); ++i) {
        std::size_t j = i;
        for (int attempt = 0;
             attempt < 64 && (j == i || corpus.test[j].concept_id == corpus.test[i].concept_id);
             ++attempt) {
            j = static_cast<std::size_t>(eval_rng.below(corpus.test.size()));
        }
        double p_pos = probe_classify(probe, test_f[i], test_r[i], cfg.disc.logit_clamp).value();
        double p_neg = probe_classify(probe, test_f[i], test_r[j], cfg.disc.logit_clamp).value();
        correct += p_pos > 0.5 ? 1 : 0;
        correct += p_neg <= 0.5 ? 1 : 0;
        total += 2;
    }
    return static_cast<double>(correct) / static_cast<double>(total);
}

}  // namespace dasd
