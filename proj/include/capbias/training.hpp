#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "capbias/dataset.hpp"
#include "capbias/losses.hpp"
#include "capbias/model.hpp"

namespace capbias {

enum class Variant { BaselineFT, Balanced, UpWeight, EqualizerWoACL, EqualizerWoConf, Equalizer };

std::string to_string(Variant v);
Variant variant_from_string(const std::string& s);
const std::vector<Variant>& all_variants();

struct OptimizerConfig {
    double learning_rate = 0.08;
    int iterations = 3000;
    int batch_size = 8;
    // Every variant fine-tunes from the same captioner: the first
    // warmup_iterations use the plain correctness loss only (shared across
    // variants under a fixed seed), standing in for pretrained initialization.
    int warmup_iterations = 500;
    // Global gradient-norm cap. The confidence quotient is unbounded as the
    // target-gender mass approaches zero, so raw SGD steps can destroy the
    // model; clipping bounds the step while keeping the loss exact. 0 = off.
    double clip_norm = 25.0;
};

struct ExperimentConfig {
    Variant variant = Variant::BaselineFT;
    LossWeights weights;
    OptimizerConfig opt;
    uint64_t seed = 0;
    // unset: resolved from the variant (masked stream exists only for the
    // appearance-confusion variants)
    std::optional<bool> masked_pass;
    ModelConfig model;
    std::string dataset_path;
    std::string expected_dataset_checksum;  // hex; empty disables the check
    std::string checkpoint_path;
    std::string log_path;
    int log_every = 50;

    // Applies the variant constraints: Baseline-FT/Balanced force beta=mu=0
    // and no masked pass, UpWeight additionally selects the upweighted CE,
    // w/o ACL forces beta=0, w/o Conf forces mu=0.
    void normalize();
    bool use_masked_pass() const;

    std::string serialize() const;
    static ExperimentConfig deserialize(const std::string& text);
    uint64_t config_hash() const;
};

struct TrainingLogRecord {
    int iteration = 0;
    LossBundle bundle;
    double grad_norm = 0.0;
    double ce_per_token = 0.0;
    double wall_ms = 0.0;
};

struct TrainResult {
    ModelParams params;
    std::vector<TrainingLogRecord> log;
    std::vector<double> loss_trace;  // batch total per iteration
    bool diverged = false;
    bool nonmonotone_flag = false;
    long woman_visits = 0;
    long man_visits = 0;
};

// Upsamples the minority label (with replacement) until label counts match;
// the majority label's records are untouched. Returns indices into `labels`.
std::vector<int> resample_balanced(const std::vector<GenderLabel>& labels, Rng& rng);

// SGD over the variant's objective. Writes checkpoint/log files when the
// config names them. On divergence the last finite-loss parameters are kept
// and `diverged` is set.
TrainResult train(const Corpus& corpus, const ExperimentConfig& cfg);

struct SuiteResult {
    std::map<Variant, TrainResult> results;
    std::map<Variant, std::string> failures;     // variant -> error message
    std::map<Variant, std::string> checkpoints;  // variant -> checkpoint path (when written)
};

// Trains all six variants on identical data and seed; per-variant failures
// are recorded and the suite continues. Non-empty dirs receive one
// checkpoint / JSONL log per variant.
SuiteResult run_suite(const Corpus& corpus, const ExperimentConfig& base,
                      const std::string& checkpoint_dir = "", const std::string& log_dir = "");

}  // namespace capbias
