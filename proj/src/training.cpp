#include "capbias/training.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>

#include <json.hpp>

using nlohmann::json;

namespace capbias {

std::string to_string(Variant v) {
    switch (v) {
        case Variant::BaselineFT: return "baseline_ft";
        case Variant::Balanced: return "balanced";
        case Variant::UpWeight: return "upweight";
        case Variant::EqualizerWoACL: return "equalizer_wo_acl";
        case Variant::EqualizerWoConf: return "equalizer_wo_conf";
        default: return "equalizer";
    }
}

Variant variant_from_string(const std::string& s) {
    for (Variant v : all_variants())
        if (to_string(v) == s) return v;
    throw InvalidInput("unknown variant '" + s + "'");
}

const std::vector<Variant>& all_variants() {
    static const std::vector<Variant> v = {Variant::BaselineFT,      Variant::Balanced,
                                           Variant::UpWeight,        Variant::EqualizerWoACL,
                                           Variant::EqualizerWoConf, Variant::Equalizer};
    return v;
}

void ExperimentConfig::normalize() {
    weights.validate();
    switch (variant) {
        case Variant::BaselineFT:
        case Variant::Balanced:
        case Variant::UpWeight:
            weights.beta = 0.0;
            weights.mu = 0.0;
            masked_pass = false;
            break;
        case Variant::EqualizerWoACL:
            weights.beta = 0.0;
            if (!masked_pass.has_value()) masked_pass = false;
            break;
        case Variant::EqualizerWoConf:
            weights.mu = 0.0;
            if (!masked_pass.has_value()) masked_pass = true;
            break;
        case Variant::Equalizer:
            if (!masked_pass.has_value()) masked_pass = true;
            break;
    }
    if (opt.iterations <= 0 || opt.batch_size <= 0 || opt.learning_rate <= 0.0)
        throw InvalidInput("ExperimentConfig: optimizer settings must be positive");
    if (opt.warmup_iterations < 0 || opt.warmup_iterations >= opt.iterations)
        throw InvalidInput("ExperimentConfig: warmup_iterations must be in [0, iterations)");
    if (opt.clip_norm < 0.0) throw InvalidInput("ExperimentConfig: clip_norm must be >= 0");
}

bool ExperimentConfig::use_masked_pass() const { return masked_pass.value_or(false); }

std::string ExperimentConfig::serialize() const {
    json j{{"variant", to_string(variant)},
           {"weights",
            {{"alpha", weights.alpha},
             {"beta", weights.beta},
             {"mu", weights.mu},
             {"epsilon", weights.epsilon},
             {"upweight_factor", weights.upweight_factor}}},
           {"optimizer",
            {{"learning_rate", opt.learning_rate},
             {"iterations", opt.iterations},
             {"batch_size", opt.batch_size},
             {"warmup_iterations", opt.warmup_iterations},
             {"clip_norm", opt.clip_norm}}},
           {"seed", seed},
           {"model",
            {{"hidden", model.hidden},
             {"embed", model.embed},
             {"conv1_ch", model.conv1_ch},
             {"conv2_ch", model.conv2_ch}}},
           {"dataset_path", dataset_path},
           {"expected_dataset_checksum", expected_dataset_checksum},
           {"checkpoint_path", checkpoint_path},
           {"log_path", log_path},
           {"log_every", log_every}};
    if (masked_pass.has_value())
        j["masked_pass"] = *masked_pass;
    else
        j["masked_pass"] = nullptr;
    return j.dump();
}

ExperimentConfig ExperimentConfig::deserialize(const std::string& text) {
    try {
        auto j = json::parse(text);
        ExperimentConfig c;
        if (j.contains("variant")) c.variant = variant_from_string(j.at("variant"));
        if (j.contains("weights")) {
            const auto& w = j.at("weights");
            if (w.contains("alpha")) c.weights.alpha = w.at("alpha");
            if (w.contains("beta")) c.weights.beta = w.at("beta");
            if (w.contains("mu")) c.weights.mu = w.at("mu");
            if (w.contains("epsilon")) c.weights.epsilon = w.at("epsilon");
            if (w.contains("upweight_factor")) c.weights.upweight_factor = w.at("upweight_factor");
        }
        if (j.contains("optimizer")) {
            const auto& o = j.at("optimizer");
            if (o.contains("learning_rate")) c.opt.learning_rate = o.at("learning_rate");
            if (o.contains("iterations")) c.opt.iterations = o.at("iterations");
            if (o.contains("batch_size")) c.opt.batch_size = o.at("batch_size");
            if (o.contains("warmup_iterations")) c.opt.warmup_iterations = o.at("warmup_iterations");
            if (o.contains("clip_norm")) c.opt.clip_norm = o.at("clip_norm");
        }
        if (j.contains("seed")) c.seed = j.at("seed");
        if (j.contains("masked_pass") && !j.at("masked_pass").is_null())
            c.masked_pass = j.at("masked_pass").get<bool>();
        if (j.contains("model")) {
            const auto& m = j.at("model");
            if (m.contains("hidden")) c.model.hidden = m.at("hidden");
            if (m.contains("embed")) c.model.embed = m.at("embed");
            if (m.contains("conv1_ch")) c.model.conv1_ch = m.at("conv1_ch");
            if (m.contains("conv2_ch")) c.model.conv2_ch = m.at("conv2_ch");
        }
        if (j.contains("dataset_path")) c.dataset_path = j.at("dataset_path");
        if (j.contains("expected_dataset_checksum"))
            c.expected_dataset_checksum = j.at("expected_dataset_checksum");
        if (j.contains("checkpoint_path")) c.checkpoint_path = j.at("checkpoint_path");
        if (j.contains("log_path")) c.log_path = j.at("log_path");
        if (j.contains("log_every")) c.log_every = j.at("log_every");
        return c;
    } catch (const json::exception& e) {
        throw IoError(std::string("ExperimentConfig::deserialize: ") + e.what());
    }
}

uint64_t ExperimentConfig::config_hash() const { return fnv1a64(serialize()); }

std::vector<int> resample_balanced(const std::vector<GenderLabel>& labels, Rng& rng) {
    std::vector<int> woman, man;
    for (size_t i = 0; i < labels.size(); ++i) {
        if (labels[i] == GenderLabel::Woman) woman.push_back(static_cast<int>(i));
        if (labels[i] == GenderLabel::Man) man.push_back(static_cast<int>(i));
    }
    if (woman.empty() || man.empty())
        throw InvalidInput("resample_balanced: both gender labels must be present");
    std::vector<int> out;
    for (size_t i = 0; i < labels.size(); ++i)
        if (labels[i] != GenderLabel::Discard) out.push_back(static_cast<int>(i));
    const auto& minority = woman.size() < man.size() ? woman : man;
    size_t deficit = woman.size() < man.size() ? man.size() - woman.size() : woman.size() - man.size();
    for (size_t k = 0; k < deficit; ++k)
        out.push_back(minority[rng.uniform_int(static_cast<int>(minority.size()))]);
    return out;
}

namespace {

struct StreamPlan {
    bool masked;
    std::vector<TermSpec> terms;
};

std::vector<StreamPlan> variant_streams(const ExperimentConfig& cfg) {
    const LossWeights& w = cfg.weights;
    std::vector<StreamPlan> streams;
    std::vector<TermSpec> primary;
    if (cfg.variant == Variant::UpWeight)
        primary.push_back({LossTerm::Upweight, w.alpha});
    else
        primary.push_back({LossTerm::CrossEntropy, w.alpha});
    if (w.mu > 0.0) primary.push_back({LossTerm::Confident, w.mu});
    streams.push_back({false, std::move(primary)});
    if (cfg.use_masked_pass())
        streams.push_back({true,
                           {{LossTerm::MaskedNonGenderCe, w.alpha}, {LossTerm::AppearanceConfusion, w.beta}}});
    return streams;
}

}  // namespace

TrainResult train(const Corpus& corpus, const ExperimentConfig& cfg_in) {
    ExperimentConfig cfg = cfg_in;
    cfg.normalize();

    std::vector<int> train_ids;
    for (const auto& rec : corpus.records)
        if (rec.split == Split::Train) train_ids.push_back(rec.id);
    if (train_ids.empty()) throw InvalidInput("train: dataset has no train split records");

    // record ids are not necessarily dense; map id -> position
    std::map<int, size_t> pos;
    for (size_t i = 0; i < corpus.records.size(); ++i) pos[corpus.records[i].id] = i;

    Rng rng(cfg.seed ^ 0xc0ffee1234abcdefull);
    if (cfg.variant == Variant::Balanced) {
        std::vector<GenderLabel> labels;
        labels.reserve(train_ids.size());
        for (int id : train_ids) labels.push_back(corpus.records[pos[id]].label);
        std::vector<int> resampled = resample_balanced(labels, rng);
        std::vector<int> expanded;
        expanded.reserve(resampled.size());
        for (int idx : resampled) expanded.push_back(train_ids[idx]);
        train_ids = std::move(expanded);
    }

    ModelConfig mc = cfg.model;
    mc.vocab_size = corpus.vocab.size();
    mc.bos_id = corpus.vocab.bos();
    mc.eos_id = corpus.vocab.eos();
    ModelParams params = ModelParams::init(mc, corpus.vocab.hash(), cfg.seed);
    Gradients grads = Gradients::zeros_like(params);

    const auto streams = variant_streams(cfg);
    // CE-only phase shared by every variant under a fixed seed
    const std::vector<StreamPlan> warmup_streams{{false, {{LossTerm::CrossEntropy, cfg.weights.alpha}}}};
    TrainResult result;
    result.loss_trace.reserve(cfg.opt.iterations);
    std::ofstream log_file;
    if (!cfg.log_path.empty()) {
        log_file.open(cfg.log_path);
        if (!log_file) throw IoError("cannot write training log: " + cfg.log_path);
    }

    const auto t0 = std::chrono::steady_clock::now();
    const double inv_n = 1.0 / cfg.opt.batch_size;
    std::vector<std::vector<double>> dlogits;
    // pre-update snapshot for rollback when an update or the next forward
    // pass goes non-finite
    std::vector<std::vector<double>> last_good(kBlockCount);

    for (int iter = 1; iter <= cfg.opt.iterations; ++iter) {
        grads.zero();
        LossBundle batch;
        int clamp_events = 0;
        long tokens = 0;

        bool numeric_failure = false;
        for (int b = 0; b < cfg.opt.batch_size && !numeric_failure; ++b) {
            const SceneRecord& rec =
                corpus.records[pos[train_ids[rng.uniform_int(static_cast<int>(train_ids.size()))]]];
            if (rec.label == GenderLabel::Woman) ++result.woman_visits;
            if (rec.label == GenderLabel::Man) ++result.man_visits;
            const std::vector<int>& caption = rec.captions[rng.uniform_int(5)];
            tokens += static_cast<long>(caption.size()) - 1;
            ImageF img = rec.image.to_float();

            const bool warming_up = iter <= cfg.opt.warmup_iterations;
            try {
                for (const StreamPlan& plan : warming_up ? warmup_streams : streams) {
                    ImageF stream_img = plan.masked ? mask_person(img, rec.mask) : img;
                    ForwardCache fc = forward_teacher_forced_cached(stream_img, caption, params);
                    WordDists probs;
                    probs.reserve(fc.steps.size());
                    for (const auto& sc : fc.steps) probs.push_back(sc.probs);

                    std::vector<TermSpec> scaled = plan.terms;
                    for (auto& ts : scaled) ts.weight *= inv_n;
                    for (auto& row : dlogits) row.clear();
                    eval_terms_with_dlogits(probs, caption, corpus.vocab, cfg.weights, scaled, &dlogits,
                                            &clamp_events);
                    backward(fc, dlogits, params, grads);

                    // component bookkeeping (unweighted Eq-style values)
                    int rec_clamp = 0;
                    if (!plan.masked) {
                        if (cfg.variant == Variant::UpWeight && !warming_up)
                            batch.ce_unmasked +=
                                inv_n * upweight_loss(probs, caption, corpus.vocab, cfg.weights.upweight_factor, &rec_clamp);
                        else
                            batch.ce_unmasked += inv_n * cross_entropy(probs, caption, &rec_clamp);
                        if (cfg.weights.mu > 0.0 && !warming_up)
                            batch.conf += inv_n * confident_loss(probs, caption, corpus.vocab, cfg.weights.epsilon);
                    } else {
                        batch.ce_masked += inv_n * masked_nongender_ce(probs, caption, corpus.vocab, &rec_clamp);
                        batch.acl += inv_n * appearance_confusion_loss(probs, caption, corpus.vocab);
                    }
                    for (int tok : caption)
                        if (corpus.vocab.is_gendered(tok)) ++batch.gendered_timesteps;
                }
            } catch (const NumericFailure&) {
                numeric_failure = true;
            }
        }

        if (numeric_failure) {
            // parameters after the previous update blew up the forward pass
            if (!last_good[0].empty())
                for (int bi = 0; bi < kBlockCount; ++bi) params.blocks[bi].v = last_good[bi];
            result.diverged = true;
            break;
        }

        LossBundle bundle = total_loss(batch.ce_unmasked, batch.acl, batch.ce_masked, batch.conf, cfg.weights);
        bundle.clamp_events = clamp_events;
        bundle.gendered_timesteps = batch.gendered_timesteps;

        double gnorm = grads.norm();
        if (!std::isfinite(bundle.total) || !std::isfinite(gnorm)) {
            result.diverged = true;
            break;  // parameters still hold the last finite-loss state
        }
        double step_scale = 1.0;
        if (cfg.opt.clip_norm > 0.0 && gnorm > cfg.opt.clip_norm) step_scale = cfg.opt.clip_norm / gnorm;

        for (int bi = 0; bi < kBlockCount; ++bi) last_good[bi] = params.blocks[bi].v;
        bool update_finite = true;
        for (int bi = 0; bi < kBlockCount; ++bi) {
            auto& pv = params.blocks[bi].v;
            const auto& gv = grads.g[bi];
            for (size_t i = 0; i < pv.size(); ++i) {
                pv[i] -= cfg.opt.learning_rate * step_scale * gv[i];
                update_finite &= std::isfinite(pv[i]);
            }
        }
        if (!update_finite) {
            for (int bi = 0; bi < kBlockCount; ++bi) params.blocks[bi].v = last_good[bi];
            result.diverged = true;
            break;
        }

        result.loss_trace.push_back(bundle.total);
        if (iter % cfg.log_every == 0 || iter == cfg.opt.iterations) {
            TrainingLogRecord lr;
            lr.iteration = iter;
            lr.bundle = bundle;
            lr.grad_norm = gnorm;
            lr.ce_per_token = tokens > 0 ? batch.ce_unmasked * cfg.opt.batch_size / tokens : 0.0;
            lr.wall_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
            result.log.push_back(lr);
            if (log_file) {
                json j{{"iteration", lr.iteration},
                       {"ce", lr.bundle.ce},
                       {"ce_unmasked", lr.bundle.ce_unmasked},
                       {"ce_masked", lr.bundle.ce_masked},
                       {"acl", lr.bundle.acl},
                       {"conf", lr.bundle.conf},
                       {"total", lr.bundle.total},
                       {"grad_norm", lr.grad_norm},
                       {"ce_per_token", lr.ce_per_token},
                       {"clamp_events", lr.bundle.clamp_events},
                       {"wall_ms", lr.wall_ms}};
                log_file << j.dump() << "\n";
            }
        }
    }

    // smoothed non-increase check over a trailing 200-iteration window
    const size_t w = 200;
    if (result.loss_trace.size() >= 2 * w) {
        double recent = 0.0, before = 0.0;
        for (size_t i = result.loss_trace.size() - w; i < result.loss_trace.size(); ++i)
            recent += result.loss_trace[i];
        for (size_t i = result.loss_trace.size() - 2 * w; i < result.loss_trace.size() - w; ++i)
            before += result.loss_trace[i];
        result.nonmonotone_flag = recent > before * 1.05;
    }

    result.params = std::move(params);
    if (!cfg.checkpoint_path.empty()) save_checkpoint(cfg.checkpoint_path, result.params);
    return result;
}

SuiteResult run_suite(const Corpus& corpus, const ExperimentConfig& base,
                      const std::string& checkpoint_dir, const std::string& log_dir) {
    SuiteResult suite;
    for (Variant v : all_variants()) {
        ExperimentConfig cfg = base;
        cfg.variant = v;
        cfg.masked_pass.reset();
        cfg.checkpoint_path = checkpoint_dir.empty() ? "" : checkpoint_dir + "/" + to_string(v) + ".ckpt";
        cfg.log_path = log_dir.empty() ? "" : log_dir + "/" + to_string(v) + ".jsonl";
        try {
            suite.results.emplace(v, train(corpus, cfg));
            if (!cfg.checkpoint_path.empty()) suite.checkpoints[v] = cfg.checkpoint_path;
        } catch (const std::exception& e) {
            suite.failures[v] = e.what();
        }
    }
    return suite;
}

}  // namespace capbias
