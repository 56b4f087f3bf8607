#pragma once

// Shared helpers for the unit and acceptance suites: small corpus builders,
// a batch loss evaluator driving the reverse-mode path, and the central
// finite-difference gradient checker used as the numerical oracle.

#include <cmath>
#include <string>
#include <vector>

#include "capbias/dataset.hpp"
#include "capbias/losses.hpp"
#include "capbias/model.hpp"

namespace capbias::testutil {

// Corpus in which every record has visible evidence and fully gendered
// mentions, so the first caption of any record carries a gendered word.
inline Corpus gendered_corpus(int n, uint64_t seed) {
    BiasConfig config;
    config.seed = seed;
    config.evidence_occlusion_prob = 0.0;
    config.annotator_mention_prob = 1.0;
    return generate_corpus(config, n);
}

struct BatchLossSpec {
    std::vector<TermSpec> unmasked_terms;
    std::vector<TermSpec> masked_terms;
    LossWeights weights;
};

inline BatchLossSpec ce_only() { return {{{LossTerm::CrossEntropy, 1.0}}, {}, {}}; }
inline BatchLossSpec acl_only() { return {{}, {{LossTerm::AppearanceConfusion, 1.0}}, {}}; }
inline BatchLossSpec conf_only() { return {{{LossTerm::Confident, 1.0}}, {}, {}}; }
inline BatchLossSpec combined_objective() {
    LossWeights w;  // alpha=1, beta=10, mu=1
    return {{{LossTerm::CrossEntropy, w.alpha}, {LossTerm::Confident, w.mu}},
            {{LossTerm::MaskedNonGenderCe, w.alpha}, {LossTerm::AppearanceConfusion, w.beta}},
            w};
}

// Batch-mean loss; accumulates exact gradients when grads is non-null.
inline double batch_loss(const std::vector<const SceneRecord*>& batch, const Vocabulary& vocab,
                         const ModelParams& params, const BatchLossSpec& spec,
                         Gradients* grads = nullptr) {
    if (batch.empty()) throw InvalidInput("batch_loss: empty batch");
    const double inv_n = 1.0 / batch.size();
    double total = 0.0;
    std::vector<std::vector<double>> dlogits;
    for (const SceneRecord* rec : batch) {
        const std::vector<int>& caption = rec->captions[0];
        ImageF img = rec->image.to_float();
        for (int pass = 0; pass < 2; ++pass) {
            const auto& terms = pass == 0 ? spec.unmasked_terms : spec.masked_terms;
            if (terms.empty()) continue;
            ImageF stream = pass == 0 ? img : mask_person(img, rec->mask);
            ForwardCache fc = forward_teacher_forced_cached(stream, caption, params);
            WordDists probs;
            probs.reserve(fc.steps.size());
            for (const auto& sc : fc.steps) probs.push_back(sc.probs);
            std::vector<TermSpec> scaled = terms;
            for (auto& ts : scaled) ts.weight *= inv_n;
            if (grads) {
                dlogits.clear();
                total += eval_terms_with_dlogits(probs, caption, vocab, spec.weights, scaled, &dlogits);
                backward(fc, dlogits, params, *grads);
            } else {
                total += eval_terms_with_dlogits(probs, caption, vocab, spec.weights, scaled, nullptr);
            }
        }
    }
    return total;
}

struct FdBlockResult {
    std::string block;
    double max_rel = 0.0;
    int coords = 0;
};

// Central finite differences (step 1e-5) on sampled coordinates of each
// parameter block against the reverse-mode gradient.
inline std::vector<FdBlockResult> finite_difference_check(const std::vector<const SceneRecord*>& batch,
                                                          const Vocabulary& vocab, ModelParams params,
                                                          const BatchLossSpec& spec,
                                                          int coords_per_block = 20,
                                                          uint64_t sample_seed = 42) {
    Gradients grads = Gradients::zeros_like(params);
    batch_loss(batch, vocab, params, spec, &grads);

    const double h = 1e-5;
    std::vector<FdBlockResult> results;
    Rng rng(sample_seed);
    for (int bi = 0; bi < kBlockCount; ++bi) {
        auto& block = params.blocks[bi].v;
        std::vector<size_t> idx{0, block.size() - 1};
        for (int k = 0; k < coords_per_block; ++k)
            idx.push_back(static_cast<size_t>(rng.uniform_int(static_cast<int>(block.size()))));
        std::sort(idx.begin(), idx.end());
        idx.erase(std::unique(idx.begin(), idx.end()), idx.end());

        FdBlockResult res;
        res.block = params.blocks[bi].name;
        for (size_t i : idx) {
            double saved = block[i];
            block[i] = saved + h;
            double up = batch_loss(batch, vocab, params, spec, nullptr);
            block[i] = saved - h;
            double down = batch_loss(batch, vocab, params, spec, nullptr);
            block[i] = saved;
            double fd = (up - down) / (2.0 * h);
            double ad = grads.g[bi][i];
            // Floor the denominator at 1e-5: central differences at step 1e-5
            // carry ~1e-10 cancellation noise for O(10) losses, so gradients
            // below the floor are held to an absolute 1e-9 instead of 1e-4
            // relative.
            double rel = std::abs(ad - fd) / std::max(std::max(std::abs(ad), std::abs(fd)), 1e-5);
            res.max_rel = std::max(res.max_rel, rel);
            ++res.coords;
        }
        results.push_back(res);
    }
    return results;
}

inline double worst_rel(const std::vector<FdBlockResult>& results) {
    double w = 0.0;
    for (const auto& r : results) w = std::max(w, r.max_rel);
    return w;
}

}  // namespace capbias::testutil
