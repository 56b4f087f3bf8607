#pragma once

#include <map>
#include <string>
#include <utility>
#include <vector>

#include "capbias/dataset.hpp"
#include "capbias/model.hpp"
#include "capbias/vocab.hpp"

namespace capbias {

enum class SentenceGenderClass { WomanSet, ManSet, Neutral, Mixed };
std::string to_string(SentenceGenderClass c);

// Sentence falls in the woman set when it uses at least one woman-set word
// and no man-set word; symmetric for man; Mixed when both appear.
SentenceGenderClass classify_sentence(const std::vector<int>& tokens, const Vocabulary& vocab);

// Wrong-gender rate in percent. A prediction errs when it names the opposite
// gender; Mixed sentences contain the opposite-gender word by construction
// and count as errors. Neutral predictions never err.
double error_rate(const std::vector<SentenceGenderClass>& predictions,
                  const std::vector<GenderLabel>& labels);

struct RatioResult {
    bool defined = false;
    double value = 0.0;  // (pred woman:man) - (ref woman:man)
    double pred_ratio = 0.0;
    double ref_ratio = 0.0;
    long pred_woman = 0, pred_man = 0, ref_woman = 0, ref_man = 0;
};

// Woman:man sentence-set ratio of predictions minus the same ratio over the
// reference sentences. Mixed sentences join neither set. Undefined (with
// counts attached) when either man count is zero.
RatioResult ratio_delta(const std::vector<SentenceGenderClass>& predictions,
                        const std::vector<SentenceGenderClass>& reference_sentences);

struct OutcomeRow {
    double correct = 0.0, incorrect = 0.0, other = 0.0;  // percents, sum 100
    long n = 0;
};

struct OutcomeTable {
    OutcomeRow woman, man;
};

OutcomeTable outcome_table(const std::vector<SentenceGenderClass>& predictions,
                           const std::vector<GenderLabel>& labels);

// Jensen-Shannon divergence (base-2 logs, in [0,1]) between the Woman and Man
// Correct/Incorrect/Other outcome distributions.
double outcome_divergence(const OutcomeTable& table);

// For each threshold T an image keeps its gender label when at least T of its
// captions mention that gender, otherwise it counts as Neutral; returns
// (T, three-class accuracy in percent).
std::vector<std::pair<int, double>> confidence_curve(const std::vector<SentenceGenderClass>& predictions,
                                                     const std::vector<GenderLabel>& labels,
                                                     const std::vector<int>& caption_mentions,
                                                     const std::vector<int>& thresholds);

struct BiasAmpSide {
    bool defined = false;
    double pred_ratio = 0.0;
    double ref_ratio = 0.0;
    double delta = 0.0;  // pred - ref
};

struct BiasAmplification {
    // object -> {male-word side, female-word side}
    std::map<std::string, std::pair<BiasAmpSide, BiasAmpSide>> per_object;
    double mean_abs_delta_male = 0.0;
    double mean_abs_delta_female = 0.0;
    std::vector<std::string> excluded;  // objects with no person co-occurrence
};

// count(gender & object) / count(person & object) per object for predictions
// and references, plus mean |pred - ref| across objects per gender side.
BiasAmplification bias_amplification(const std::vector<std::vector<int>>& predicted_captions,
                                     const std::vector<std::vector<int>>& reference_sentences,
                                     const std::vector<std::string>& objects, const Vocabulary& vocab);

struct MaskedRatioResult {
    bool defined = false;
    double value = 0.0;  // man:woman
    long man_count = 0, woman_count = 0, neutral_count = 0;
};

// Decodes captions for mask_person-transformed images and reports the
// man:woman sentence-set ratio.
MaskedRatioResult masked_ratio(const ModelParams& params, const std::vector<const SceneRecord*>& records,
                               const Vocabulary& vocab, int max_len = 8);

struct MetricsReport {
    std::string variant;
    std::string split;
    std::string dataset_checksum;
    std::string checkpoint_id;
    std::string config_hash;
    double error = 0.0;
    RatioResult ratio;
    OutcomeTable outcome;
    double divergence = 0.0;
    std::vector<std::pair<int, double>> confidence;
    BiasAmplification bias_amp;
    MaskedRatioResult masked;
    // method -> {"woman","man","all","hits","misses"}
    std::map<std::string, std::map<std::string, double>> pointing;

    std::string serialize() const;
};

// Greedy-decodes the split and assembles the full report (pointing entries
// are filled separately by the saliency suite).
MetricsReport evaluate_model(const ModelParams& params, const Corpus& corpus, Split split,
                             const std::vector<int>& thresholds = {0, 1, 2, 3, 4, 5, 6});

}  // namespace capbias
