#pragma once

#include <set>
#include <utility>
#include <vector>

#include "capbias/common.hpp"
#include "capbias/model.hpp"
#include "capbias/vocab.hpp"

namespace capbias {

using WordDists = std::vector<std::vector<double>>;

struct LossWeights {
    double alpha = 1.0;
    double beta = 10.0;
    double mu = 1.0;
    double epsilon = 1e-6;
    double upweight_factor = 10.0;

    void validate() const;
};

// Named scalar components of one training objective evaluation. `ce` is the
// caption correctness loss over both image streams (unmasked CE plus the
// non-gendered CE on the masked stream), so total = alpha*ce + beta*acl +
// mu*conf holds exactly.
struct LossBundle {
    double ce = 0.0;
    double ce_unmasked = 0.0;
    double ce_masked = 0.0;
    double acl = 0.0;
    double conf = 0.0;
    double total = 0.0;
    int clamp_events = 0;
    int gendered_timesteps = 0;
};

// All per-record losses below sum over target positions (caption[1..]); the
// batch 1/N mean is applied by the batch_* helpers and the trainer.

// -sum_t log p_t(w_t). Probabilities below 1e-12 are clamped, counted in
// *clamp_events, and contribute zero gradient.
double cross_entropy(const WordDists& dists, const std::vector<int>& caption, int* clamp_events = nullptr);

// |sum_{G_w} p - sum_{G_m} p|
double confusion(const std::vector<double>& dist, const std::set<int>& woman_set, const std::set<int>& man_set);
double confusion(const std::vector<double>& dist, const Vocabulary& vocab);

// sum over gendered target positions of the confusion of the masked-image
// distribution; positions with no gendered target contribute zero.
double appearance_confusion_loss(const WordDists& masked_dists, const std::vector<int>& caption,
                                 const Vocabulary& vocab);

// cross entropy restricted to positions whose target is not gendered
double masked_nongender_ce(const WordDists& masked_dists, const std::vector<int>& caption,
                           const Vocabulary& vocab, int* clamp_events = nullptr);

// F_W = sum p(G_m) / (sum p(G_w) + eps); F_M symmetric
std::pair<double, double> confidence_quotients(const std::vector<double>& dist, const Vocabulary& vocab,
                                               double epsilon);

// sum over positions: woman target -> F_W, man target -> F_M
double confident_loss(const WordDists& dists, const std::vector<int>& caption, const Vocabulary& vocab,
                      double epsilon);

// cross entropy with gendered-target positions multiplied by factor
double upweight_loss(const WordDists& dists, const std::vector<int>& caption, const Vocabulary& vocab,
                     double factor, int* clamp_events = nullptr);

// Combines per-component values into the weighted objective; throws
// NumericFailure naming the first non-finite component.
LossBundle total_loss(double ce_unmasked, double acl, double masked_ce, double conf, const LossWeights& w);

// Batch means of the per-record sums (the 1/N in the loss definitions).
double batch_mean_cross_entropy(const std::vector<WordDists>& dists,
                                const std::vector<std::vector<int>>& captions, int* clamp_events = nullptr);

// ---------------------------------------------------------------------------
// Gradient-side composition. A stream is one teacher-forced forward pass (on
// the original or the masked image); the terms below are evaluated on its
// per-step distributions, each scaled by its weight (the caller folds in any
// 1/N batch factor).
enum class LossTerm { CrossEntropy, AppearanceConfusion, MaskedNonGenderCe, Confident, Upweight };

struct TermSpec {
    LossTerm term;
    double weight;
};

// Returns the weighted sum of the requested terms for one record and, when
// dlogits is non-null, accumulates d(value)/d(logits) rows suitable for
// model backward(). Rows are sized to the vocabulary and added to any
// existing content.
double eval_terms_with_dlogits(const WordDists& probs, const std::vector<int>& caption,
                               const Vocabulary& vocab, const LossWeights& weights,
                               const std::vector<TermSpec>& terms,
                               std::vector<std::vector<double>>* dlogits, int* clamp_events = nullptr);

}  // namespace capbias
