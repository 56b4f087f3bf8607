#include "capbias/losses.hpp"

#include <cmath>
#include <string>

namespace capbias {

namespace {

constexpr double kLogClamp = 1e-12;

void check_dists(const WordDists& dists, const std::vector<int>& caption, const char* who) {
    if (caption.size() < 2) throw InvalidInput(std::string(who) + ": caption too short");
    if (dists.size() != caption.size() - 1)
        throw InvalidInput(std::string(who) + ": need one distribution per target token (got " +
                           std::to_string(dists.size()) + " for " + std::to_string(caption.size() - 1) +
                           " targets)");
}

double set_mass(const std::vector<double>& dist, const std::set<int>& ids) {
    double s = 0.0;
    for (int id : ids) {
        if (id < 0 || id >= static_cast<int>(dist.size()))
            throw InvalidInput("gender set id out of distribution range");
        s += dist[id];
    }
    return s;
}

}  // namespace

void LossWeights::validate() const {
    if (alpha < 0.0 || beta < 0.0 || mu < 0.0) throw InvalidInput("LossWeights: weights must be >= 0");
    if (!(epsilon > 0.0)) throw InvalidInput("LossWeights: epsilon must be positive");
    if (upweight_factor < 1.0) throw InvalidInput("LossWeights: upweight_factor must be >= 1");
}

double cross_entropy(const WordDists& dists, const std::vector<int>& caption, int* clamp_events) {
    check_dists(dists, caption, "cross_entropy");
    double loss = 0.0;
    for (size_t t = 0; t < dists.size(); ++t) {
        int target = caption[t + 1];
        if (target < 0 || target >= static_cast<int>(dists[t].size()))
            throw InvalidInput("cross_entropy: target token out of range");
        double p = dists[t][target];
        if (p < kLogClamp) {
            p = kLogClamp;
            if (clamp_events) ++*clamp_events;
        }
        loss -= std::log(p);
    }
    return loss;
}

double confusion(const std::vector<double>& dist, const std::set<int>& woman_set,
                 const std::set<int>& man_set) {
    return std::abs(set_mass(dist, woman_set) - set_mass(dist, man_set));
}

double confusion(const std::vector<double>& dist, const Vocabulary& vocab) {
    return confusion(dist, vocab.woman_set(), vocab.man_set());
}

double appearance_confusion_loss(const WordDists& masked_dists, const std::vector<int>& caption,
                                 const Vocabulary& vocab) {
    check_dists(masked_dists, caption, "appearance_confusion_loss");
    double loss = 0.0;
    for (size_t t = 0; t < masked_dists.size(); ++t)
        if (vocab.is_gendered(caption[t + 1])) loss += confusion(masked_dists[t], vocab);
    return loss;
}

double masked_nongender_ce(const WordDists& masked_dists, const std::vector<int>& caption,
                           const Vocabulary& vocab, int* clamp_events) {
    check_dists(masked_dists, caption, "masked_nongender_ce");
    double loss = 0.0;
    for (size_t t = 0; t < masked_dists.size(); ++t) {
        int target = caption[t + 1];
        if (vocab.is_gendered(target)) continue;
        double p = masked_dists[t][target];
        if (p < kLogClamp) {
            p = kLogClamp;
            if (clamp_events) ++*clamp_events;
        }
        loss -= std::log(p);
    }
    return loss;
}

std::pair<double, double> confidence_quotients(const std::vector<double>& dist, const Vocabulary& vocab,
                                               double epsilon) {
    double sw = set_mass(dist, vocab.woman_set());
    double sm = set_mass(dist, vocab.man_set());
    return {sm / (sw + epsilon), sw / (sm + epsilon)};
}

double confident_loss(const WordDists& dists, const std::vector<int>& caption, const Vocabulary& vocab,
                      double epsilon) {
    check_dists(dists, caption, "confident_loss");
    double loss = 0.0;
    for (size_t t = 0; t < dists.size(); ++t) {
        int target = caption[t + 1];
        if (!vocab.is_gendered(target)) continue;
        auto [fw, fm] = confidence_quotients(dists[t], vocab, epsilon);
        loss += vocab.is_woman_word(target) ? fw : fm;
    }
    return loss;
}

double upweight_loss(const WordDists& dists, const std::vector<int>& caption, const Vocabulary& vocab,
                     double factor, int* clamp_events) {
    check_dists(dists, caption, "upweight_loss");
    double loss = 0.0;
    for (size_t t = 0; t < dists.size(); ++t) {
        int target = caption[t + 1];
        double p = dists[t][target];
        if (p < kLogClamp) {
            p = kLogClamp;
            if (clamp_events) ++*clamp_events;
        }
        double term = -std::log(p);
        loss += vocab.is_gendered(target) ? factor * term : term;
    }
    return loss;
}

LossBundle total_loss(double ce_unmasked, double acl, double masked_ce, double conf,
                      const LossWeights& w) {
    w.validate();
    auto require_finite = [](double v, const char* name) {
        if (!std::isfinite(v)) throw NumericFailure(std::string("total_loss: non-finite ") + name);
    };
    require_finite(ce_unmasked, "ce");
    require_finite(acl, "acl");
    require_finite(masked_ce, "masked_ce");
    require_finite(conf, "conf");
    LossBundle b;
    b.ce_unmasked = ce_unmasked;
    b.ce_masked = masked_ce;
    b.ce = ce_unmasked + masked_ce;
    b.acl = acl;
    b.conf = conf;
    b.total = w.alpha * b.ce + w.beta * b.acl + w.mu * b.conf;
    return b;
}

double batch_mean_cross_entropy(const std::vector<WordDists>& dists,
                                const std::vector<std::vector<int>>& captions, int* clamp_events) {
    if (dists.empty() || dists.size() != captions.size())
        throw InvalidInput("batch_mean_cross_entropy: empty batch or size mismatch");
    double s = 0.0;
    for (size_t i = 0; i < dists.size(); ++i) s += cross_entropy(dists[i], captions[i], clamp_events);
    return s / static_cast<double>(dists.size());
}

namespace {

// dprobs -> dlogits through softmax: dl = p (.) (dp - p . dp)
void add_softmax_backward(const std::vector<double>& probs, const std::vector<double>& dprobs,
                          std::vector<double>& dlogits) {
    double dot = 0.0;
    for (size_t i = 0; i < probs.size(); ++i) dot += probs[i] * dprobs[i];
    for (size_t i = 0; i < probs.size(); ++i) dlogits[i] += probs[i] * (dprobs[i] - dot);
}

}  // namespace

double eval_terms_with_dlogits(const WordDists& probs, const std::vector<int>& caption,
                               const Vocabulary& vocab, const LossWeights& weights,
                               const std::vector<TermSpec>& terms,
                               std::vector<std::vector<double>>* dlogits, int* clamp_events) {
    check_dists(probs, caption, "eval_terms_with_dlogits");
    weights.validate();
    const size_t steps = probs.size();
    const size_t V = probs.empty() ? 0 : probs[0].size();
    if (dlogits) {
        dlogits->resize(steps);
        for (auto& row : *dlogits) row.resize(V, 0.0);
    }

    double value = 0.0;
    std::vector<double> dprobs(V);
    for (size_t t = 0; t < steps; ++t) {
        const std::vector<double>& p = probs[t];
        int target = caption[t + 1];
        if (target < 0 || target >= static_cast<int>(V))
            throw InvalidInput("eval_terms_with_dlogits: target token out of range");
        bool gendered = vocab.is_gendered(target);
        std::fill(dprobs.begin(), dprobs.end(), 0.0);
        bool any_grad = false;

        for (const TermSpec& ts : terms) {
            if (ts.weight == 0.0) continue;
            switch (ts.term) {
                case LossTerm::CrossEntropy:
                case LossTerm::Upweight:
                case LossTerm::MaskedNonGenderCe: {
                    double f = ts.weight;
                    if (ts.term == LossTerm::Upweight && gendered) f *= weights.upweight_factor;
                    if (ts.term == LossTerm::MaskedNonGenderCe && gendered) break;
                    double pv = p[target];
                    if (pv < kLogClamp) {
                        value += f * -std::log(kLogClamp);
                        if (clamp_events) ++*clamp_events;
                    } else {
                        value += f * -std::log(pv);
                        dprobs[target] += -f / pv;
                        any_grad = true;
                    }
                    break;
                }
                case LossTerm::AppearanceConfusion: {
                    if (!gendered) break;
                    double sw = set_mass(p, vocab.woman_set());
                    double sm = set_mass(p, vocab.man_set());
                    value += ts.weight * std::abs(sw - sm);
                    double sg = sw > sm ? 1.0 : (sw < sm ? -1.0 : 0.0);
                    if (sg != 0.0) {
                        for (int id : vocab.woman_set()) dprobs[id] += ts.weight * sg;
                        for (int id : vocab.man_set()) dprobs[id] -= ts.weight * sg;
                        any_grad = true;
                    }
                    break;
                }
                case LossTerm::Confident: {
                    if (!gendered) break;
                    double sw = set_mass(p, vocab.woman_set());
                    double sm = set_mass(p, vocab.man_set());
                    double eps = weights.epsilon;
                    if (vocab.is_woman_word(target)) {
                        value += ts.weight * sm / (sw + eps);
                        for (int id : vocab.man_set()) dprobs[id] += ts.weight / (sw + eps);
                        for (int id : vocab.woman_set())
                            dprobs[id] += -ts.weight * sm / ((sw + eps) * (sw + eps));
                    } else {
                        value += ts.weight * sw / (sm + eps);
                        for (int id : vocab.woman_set()) dprobs[id] += ts.weight / (sm + eps);
                        for (int id : vocab.man_set())
                            dprobs[id] += -ts.weight * sw / ((sm + eps) * (sm + eps));
                    }
                    any_grad = true;
                    break;
                }
            }
        }
        if (dlogits && any_grad) add_softmax_backward(p, dprobs, (*dlogits)[t]);
    }
    return value;
}

}  // namespace capbias
