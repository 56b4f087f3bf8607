#include <doctest.h>

#include <cmath>

#include "capbias/saliency.hpp"
#include "support/test_util.hpp"

using namespace capbias;
using namespace capbias::testutil;

namespace {

ModelParams image_blind_params(const Vocabulary& vocab, uint64_t seed) {
    ModelConfig mc;
    mc.vocab_size = vocab.size();
    mc.bos_id = vocab.bos();
    mc.eos_id = vocab.eos();
    ModelParams params = ModelParams::init(mc, vocab.hash(), seed);
    for (Block b : {Block::Conv1W, Block::Conv1B, Block::Conv2W, Block::Conv2B, Block::ProjW, Block::ProjB})
        std::fill(params[b].v.begin(), params[b].v.end(), 0.0);
    return params;
}

struct GenderedTarget {
    const std::vector<int>* caption;
    int position;
};

GenderedTarget first_gendered(const SceneRecord& rec, const Vocabulary& vocab) {
    for (const auto& cap : rec.captions)
        for (size_t i = 1; i < cap.size(); ++i)
            if (vocab.is_gendered(cap[i])) return {&cap, static_cast<int>(i)};
    throw std::runtime_error("fixture record has no gendered caption");
}

}  // namespace

TEST_CASE("occlusion saliency of an image-ignoring model is constant") {
    Corpus corpus = gendered_corpus(2, 9);
    ModelParams params = image_blind_params(corpus.vocab, 4);
    const SceneRecord& rec = corpus.records[0];
    auto [caption, position] = first_gendered(rec, corpus.vocab);
    SaliencyMap map = occlusion_saliency(params, rec.image.to_float(), *caption, position, corpus.vocab);
    for (double v : map.grid) {
        CHECK(std::isfinite(v));
        CHECK(v == doctest::Approx(map.grid[0]).epsilon(1e-12));
    }
    CHECK(map.g == 8);
}

TEST_CASE("occlusion saliency rejects non-gendered targets") {
    Corpus corpus = gendered_corpus(1, 10);
    ModelConfig mc;
    mc.vocab_size = corpus.vocab.size();
    ModelParams params = ModelParams::init(mc, corpus.vocab.hash(), 2);
    const SceneRecord& rec = corpus.records[0];
    auto [caption, position] = first_gendered(rec, corpus.vocab);
    CHECK_THROWS_AS(
        occlusion_saliency(params, rec.image.to_float(), *caption, 1 /* "a" */, corpus.vocab),
        InvalidInput);
    CHECK_THROWS_AS(occlusion_saliency(params, rec.image.to_float(), *caption, position, corpus.vocab, 7),
                    InvalidInput);
}

TEST_CASE("grad-cam shape, rectification, and zero-activation behavior") {
    Corpus corpus = gendered_corpus(2, 11);
    const SceneRecord& rec = corpus.records[0];
    auto [caption, position] = first_gendered(rec, corpus.vocab);

    ModelConfig mc;
    mc.vocab_size = corpus.vocab.size();
    ModelParams params = ModelParams::init(mc, corpus.vocab.hash(), 12);
    SaliencyMap map = grad_cam(params, rec.image.to_float(), *caption, position, corpus.vocab);
    CHECK(map.g == 8);
    CHECK(map.grid.size() == 64);
    for (double v : map.grid) CHECK(v >= 0.0);

    // zeroed conv activations collapse the map to zero
    ModelParams blind = image_blind_params(corpus.vocab, 12);
    SaliencyMap zero_map = grad_cam(blind, rec.image.to_float(), *caption, position, corpus.vocab);
    for (double v : zero_map.grid) CHECK(v == 0.0);
}

TEST_CASE("pointing depends only on the argmax pixel") {
    PersonMask mask;
    for (int y = 30; y < 50; ++y)
        for (int x = 20; x < 36; ++x) mask.at(y, x) = 0;

    SaliencyMap inside;
    inside.g = 8;
    inside.grid.assign(64, 0.1);
    inside.grid[4 * 8 + 3] = 2.0;  // cell covering (32..39, 24..31): person region
    CHECK(pointing(inside, mask));

    SaliencyMap constant;
    constant.g = 8;
    constant.grid.assign(64, 0.5);
    // ties break to the lowest flat index -> pixel (0,0), not a person pixel
    CHECK_FALSE(pointing(constant, mask));

    SUBCASE("strictly monotone rescaling never changes the outcome") {
        Rng rng(21);
        for (int trial = 0; trial < 100; ++trial) {
            SaliencyMap m;
            m.g = 8;
            m.grid.resize(64);
            for (double& v : m.grid) v = rng.uniform();
            bool base = pointing(m, mask);
            SaliencyMap scaled = m;
            for (double& v : scaled.grid) v = 3.0 * v + 7.0;
            CHECK(pointing(scaled, mask) == base);
        }
    }
}

TEST_CASE("nearest-neighbor upscaling replicates cells") {
    SaliencyMap m;
    m.g = 2;
    m.grid = {1.0, 2.0, 3.0, 4.0};
    std::vector<double> up = m.upscaled(64, 64);
    CHECK(up[0] == 1.0);
    CHECK(up[31] == 1.0);
    CHECK(up[32] == 2.0);
    CHECK(up[32 * 64] == 3.0);
    CHECK(up[32 * 64 + 63] == 4.0);
}

TEST_CASE("random pointing accuracy converges to the person-area fraction") {
    Corpus corpus = gendered_corpus(1, 30);
    const PersonMask& mask = corpus.records[0].mask;
    double frac = person_area_fraction(mask);

    Rng rng(1234);
    long hits = 0;
    const int trials = 10000;
    for (int t = 0; t < trials; ++t) {
        int y = rng.uniform_int(kImageSize);
        int x = rng.uniform_int(kImageSize);
        hits += mask.at(y, x) == 0;
    }
    double acc = static_cast<double>(hits) / trials;
    CHECK(std::abs(acc - frac) < 0.02);
}

TEST_CASE("pointing_suite accounting") {
    Corpus corpus = gendered_corpus(6, 44);
    ModelConfig mc;
    mc.vocab_size = corpus.vocab.size();
    ModelParams params = ModelParams::init(mc, corpus.vocab.hash(), 3);
    std::vector<const SceneRecord*> records;
    for (const auto& rec : corpus.records) records.push_back(&rec);

    PointingSuiteResult pr = pointing_suite(params, records, corpus.vocab, SaliencyMethod::GradCam);
    CHECK(pr.all.hits + pr.all.misses == static_cast<long>(records.size()));
    CHECK(pr.all.hits == pr.woman.hits + pr.man.hits);
    CHECK(pr.all.misses == pr.woman.misses + pr.man.misses);

    CHECK_THROWS_AS(pointing_suite(params, {}, corpus.vocab, SaliencyMethod::GradCam), InvalidInput);
}

TEST_CASE("object_pointing excludes objects that one gender never co-occurs with") {
    Corpus corpus = gendered_corpus(40, 55);
    ModelConfig mc;
    mc.vocab_size = corpus.vocab.size();
    ModelParams params = ModelParams::init(mc, corpus.vocab.hash(), 7);
    std::vector<const SceneRecord*> records;
    for (const auto& rec : corpus.records) records.push_back(&rec);

    ObjectPointingResult result = object_pointing(params, records, corpus.vocab, SaliencyMethod::GradCam);
    for (const auto& [name, entry] : result.per_object) {
        CHECK(entry.woman_n > 0);
        CHECK(entry.man_n > 0);
        CHECK(entry.delta == doctest::Approx(std::abs(entry.woman_rate - entry.man_rate)).epsilon(1e-12));
    }
    // every object is either scored or excluded
    for (const auto& [name, pw] : corpus.config.cooccurrence)
        CHECK((result.per_object.count(name) || std::find(result.excluded.begin(), result.excluded.end(),
                                                          name) != result.excluded.end()));
}
