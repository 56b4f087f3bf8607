#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "capbias/training.hpp"
#include "support/test_util.hpp"

using namespace capbias;
using namespace capbias::testutil;
namespace fs = std::filesystem;

namespace {

Corpus small_train_corpus(int n, uint64_t seed) {
    BiasConfig config;
    config.seed = seed;
    config.evidence_occlusion_prob = 0.0;
    config.annotator_mention_prob = 1.0;
    Corpus corpus = generate_corpus(config, n);
    for (auto& rec : corpus.records) rec.split = Split::Train;
    return corpus;
}

std::string file_bytes(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    std::stringstream ss;
    ss << f.rdbuf();
    return ss.str();
}

ExperimentConfig quick_config(Variant v, uint64_t seed, int iters = 40) {
    ExperimentConfig cfg;
    cfg.variant = v;
    cfg.seed = seed;
    cfg.opt.iterations = iters;
    cfg.opt.warmup_iterations = iters / 4;
    cfg.opt.batch_size = 4;
    cfg.opt.learning_rate = 0.05;
    cfg.log_every = 10;
    return cfg;
}

}  // namespace

TEST_CASE("resample_balanced") {
    Rng rng(5);

    SUBCASE("100 woman / 300 man becomes 300 + 300") {
        std::vector<GenderLabel> labels;
        for (int i = 0; i < 100; ++i) labels.push_back(GenderLabel::Woman);
        for (int i = 0; i < 300; ++i) labels.push_back(GenderLabel::Man);
        std::vector<int> out = resample_balanced(labels, rng);
        long w = 0, m = 0;
        for (int idx : out) (labels[idx] == GenderLabel::Woman ? w : m)++;
        CHECK(w == 300);
        CHECK(m == 300);
        CHECK(static_cast<double>(w) / m == 1.0);
    }

    SUBCASE("already balanced input comes back as a permutation") {
        std::vector<GenderLabel> labels;
        for (int i = 0; i < 50; ++i) labels.push_back(i % 2 ? GenderLabel::Woman : GenderLabel::Man);
        std::vector<int> out = resample_balanced(labels, rng);
        std::vector<int> expected(50);
        for (int i = 0; i < 50; ++i) expected[i] = i;
        std::sort(out.begin(), out.end());
        CHECK(out == expected);
    }

    SUBCASE("absent label raises") {
        std::vector<GenderLabel> labels(10, GenderLabel::Man);
        CHECK_THROWS_AS(resample_balanced(labels, rng), InvalidInput);
    }
}

TEST_CASE("degenerate equalizer reproduces baseline training bitwise") {
    Corpus corpus = small_train_corpus(50, 71);

    ExperimentConfig base = quick_config(Variant::BaselineFT, 9);
    TrainResult baseline = train(corpus, base);

    ExperimentConfig degen = quick_config(Variant::Equalizer, 9);
    degen.weights.beta = 0.0;
    degen.weights.mu = 0.0;
    degen.masked_pass = false;
    TrainResult equalizer = train(corpus, degen);

    REQUIRE(baseline.loss_trace.size() == equalizer.loss_trace.size());
    for (size_t i = 0; i < baseline.loss_trace.size(); ++i)
        CHECK(baseline.loss_trace[i] == equalizer.loss_trace[i]);
    for (int bi = 0; bi < kBlockCount; ++bi)
        CHECK(baseline.params.blocks[bi].v == equalizer.params.blocks[bi].v);
}

TEST_CASE("upweight with factor 1 reproduces baseline bitwise") {
    Corpus corpus = small_train_corpus(50, 72);

    TrainResult baseline = train(corpus, quick_config(Variant::BaselineFT, 4));
    ExperimentConfig up = quick_config(Variant::UpWeight, 4);
    up.weights.upweight_factor = 1.0;
    TrainResult upweight = train(corpus, up);

    REQUIRE(baseline.loss_trace.size() == upweight.loss_trace.size());
    for (size_t i = 0; i < baseline.loss_trace.size(); ++i)
        CHECK(baseline.loss_trace[i] == upweight.loss_trace[i]);
}

TEST_CASE("training is deterministic given (config, seed)") {
    Corpus corpus = small_train_corpus(40, 73);
    ExperimentConfig cfg = quick_config(Variant::Equalizer, 21);
    fs::path dir = fs::temp_directory_path() / "capbias_train_det";
    fs::create_directories(dir);
    cfg.checkpoint_path = (dir / "a.ckpt").string();
    TrainResult a = train(corpus, cfg);
    cfg.checkpoint_path = (dir / "b.ckpt").string();
    TrainResult b = train(corpus, cfg);
    CHECK(file_bytes((dir / "a.ckpt").string()) == file_bytes((dir / "b.ckpt").string()));
    fs::remove_all(dir);
}

TEST_CASE("divergence aborts while keeping the last finite parameters") {
    Corpus corpus = small_train_corpus(30, 74);
    ExperimentConfig cfg = quick_config(Variant::BaselineFT, 2, 200);
    cfg.opt.learning_rate = std::numeric_limits<double>::infinity();
    TrainResult result = train(corpus, cfg);
    CHECK(result.diverged);
    for (const auto& block : result.params.blocks)
        for (double x : block.v) CHECK(std::isfinite(x));
}

TEST_CASE("training log invariants") {
    Corpus corpus = small_train_corpus(40, 75);
    ExperimentConfig cfg = quick_config(Variant::Equalizer, 6, 30);
    TrainResult result = train(corpus, cfg);

    int prev_iter = 0;
    LossWeights w = cfg.weights;
    for (const auto& rec : result.log) {
        CHECK(rec.iteration > prev_iter);
        prev_iter = rec.iteration;
        CHECK(std::abs(rec.bundle.total -
                       (w.alpha * rec.bundle.ce + w.beta * rec.bundle.acl + w.mu * rec.bundle.conf)) <
              1e-9);
    }
}

TEST_CASE("balanced variant visits woman records more often than baseline") {
    BiasConfig config;
    config.seed = 99;
    config.woman_fraction = 0.2;
    config.evidence_occlusion_prob = 0.0;
    config.annotator_mention_prob = 1.0;
    Corpus corpus = generate_corpus(config, 120);
    for (auto& rec : corpus.records) rec.split = Split::Train;

    TrainResult baseline = train(corpus, quick_config(Variant::BaselineFT, 11, 60));
    TrainResult balanced = train(corpus, quick_config(Variant::Balanced, 11, 60));
    CHECK(balanced.woman_visits > baseline.woman_visits);
}

TEST_CASE("run_suite trains all six variants") {
    Corpus corpus = small_train_corpus(36, 76);
    ExperimentConfig base = quick_config(Variant::BaselineFT, 3, 12);
    fs::path dir = fs::temp_directory_path() / "capbias_suite_test";
    fs::remove_all(dir);
    fs::create_directories(dir);
    SuiteResult suite = run_suite(corpus, base, dir.string(), dir.string());
    CHECK(suite.results.size() == 6);
    CHECK(suite.failures.empty());
    CHECK(suite.checkpoints.size() == 6);
    for (Variant v : all_variants()) CHECK(fs::exists(dir / (to_string(v) + ".ckpt")));
    fs::remove_all(dir);
}

TEST_CASE("experiment config round trip and variant constraints") {
    ExperimentConfig cfg;
    cfg.variant = Variant::EqualizerWoConf;
    cfg.weights.mu = 5.0;
    cfg.seed = 77;
    cfg.opt.iterations = 123;
    cfg.opt.warmup_iterations = 20;
    ExperimentConfig back = ExperimentConfig::deserialize(cfg.serialize());
    CHECK(back.variant == Variant::EqualizerWoConf);
    CHECK(back.seed == 77);
    CHECK(back.opt.iterations == 123);

    back.normalize();
    CHECK(back.weights.mu == 0.0);           // w/o Conf forces mu = 0
    CHECK(back.use_masked_pass());           // ACL needs the masked stream

    ExperimentConfig fresh;
    fresh.variant = Variant::BaselineFT;
    fresh.normalize();
    CHECK(fresh.weights.beta == 0.0);
    CHECK(fresh.weights.mu == 0.0);
    CHECK_FALSE(fresh.use_masked_pass());

    ExperimentConfig wo_acl;
    wo_acl.variant = Variant::EqualizerWoACL;
    wo_acl.normalize();
    CHECK(wo_acl.weights.beta == 0.0);
    CHECK(wo_acl.weights.mu == 1.0);
    CHECK_FALSE(wo_acl.use_masked_pass());
}
