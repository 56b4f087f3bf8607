#include <doctest.h>

#include <cmath>

#include "capbias/losses.hpp"
#include "support/test_util.hpp"

using namespace capbias;
using namespace capbias::testutil;

namespace {

std::vector<double> uniform_dist(int v) { return std::vector<double>(v, 1.0 / v); }

std::vector<double> dist_with(const Vocabulary& vocab, std::map<std::string, double> masses) {
    std::vector<double> d(vocab.size(), 0.0);
    double used = 0.0;
    for (const auto& [tok, mass] : masses) {
        d[vocab.id(tok)] = mass;
        used += mass;
    }
    // spread the remainder over the filler tokens to keep it a distribution
    double rest = (1.0 - used) / 4.0;
    for (const char* filler : {"the", "near", "snow", "street"}) d[vocab.id(filler)] += rest;
    return d;
}

}  // namespace

TEST_CASE("cross entropy closed forms") {
    Vocabulary vocab = Vocabulary::caption_vocab();
    std::vector<int> caption{vocab.bos(), vocab.id("a"), vocab.id("woman"), vocab.id("standing"),
                             vocab.eos()};

    SUBCASE("one-hot correct distributions give zero loss") {
        WordDists dists;
        for (size_t t = 1; t < caption.size(); ++t) {
            std::vector<double> d(vocab.size(), 0.0);
            d[caption[t]] = 1.0;
            dists.push_back(d);
        }
        CHECK(cross_entropy(dists, caption) == doctest::Approx(0.0).epsilon(1e-12));
    }

    SUBCASE("uniform distributions over 40 tokens, 5 targets -> 5 ln 40") {
        std::vector<int> six{vocab.bos(), vocab.id("a"), vocab.id("woman"), vocab.id("riding"),
                             vocab.id("a"), vocab.id("snowboard")};
        WordDists dists(5, uniform_dist(40));
        CHECK(cross_entropy(dists, six) == doctest::Approx(5.0 * std::log(40.0)).epsilon(1e-12));
    }

    SUBCASE("batch mean equals mean of per-record losses") {
        WordDists a(4, uniform_dist(40));
        std::vector<double> skew = uniform_dist(40);
        skew[caption[1]] = 0.5;
        double z = 0.0;
        for (double x : skew) z += x;
        for (double& x : skew) x /= z;
        WordDists b(4, skew);
        double mean = batch_mean_cross_entropy({a, b}, {caption, caption});
        CHECK(mean ==
              doctest::Approx((cross_entropy(a, caption) + cross_entropy(b, caption)) / 2.0).epsilon(1e-12));
    }

    SUBCASE("size mismatch raises") {
        WordDists bad(2, uniform_dist(40));
        CHECK_THROWS_AS(cross_entropy(bad, caption), InvalidInput);
    }
}

TEST_CASE("confusion function") {
    Vocabulary vocab = Vocabulary::caption_vocab();

    CHECK(confusion(dist_with(vocab, {{"woman", 0.3}, {"man", 0.3}}), vocab) ==
          doctest::Approx(0.0).epsilon(1e-12));
    CHECK(confusion(dist_with(vocab, {{"woman", 0.5}, {"man", 0.2}}), vocab) ==
          doctest::Approx(0.3).epsilon(1e-12));

    SUBCASE("multi-word sets match merged mass") {
        Vocabulary multi = Vocabulary::caption_vocab(true);
        auto split = dist_with(multi, {{"woman", 0.2}, {"girl", 0.2}, {"lady", 0.1}, {"man", 0.15}});
        auto merged = dist_with(multi, {{"woman", 0.5}, {"man", 0.15}});
        CHECK(confusion(split, multi) == doctest::Approx(confusion(merged, multi)).epsilon(1e-12));
    }

    SUBCASE("bounded in [0,1], symmetric under set swap") {
        Rng rng(33);
        for (int trial = 0; trial < 200; ++trial) {
            std::vector<double> d(vocab.size());
            double z = 0.0;
            for (double& x : d) z += (x = rng.uniform());
            for (double& x : d) x /= z;
            double c = confusion(d, vocab.woman_set(), vocab.man_set());
            CHECK(c >= 0.0);
            CHECK(c <= 1.0);
            CHECK(c == doctest::Approx(confusion(d, vocab.man_set(), vocab.woman_set())).epsilon(1e-12));
        }
    }
}

TEST_CASE("appearance confusion loss") {
    Vocabulary vocab = Vocabulary::caption_vocab();
    std::vector<int> neutral{vocab.bos(), vocab.id("a"), vocab.id("person"), vocab.id("standing"),
                             vocab.eos()};
    std::vector<int> gendered{vocab.bos(), vocab.id("a"), vocab.id("woman"), vocab.id("standing"),
                              vocab.eos()};

    WordDists flat(4, uniform_dist(40));
    CHECK(appearance_confusion_loss(flat, neutral, vocab) == doctest::Approx(0.0));

    WordDists equal(4, dist_with(vocab, {{"woman", 0.25}, {"man", 0.25}}));
    CHECK(appearance_confusion_loss(equal, gendered, vocab) == doctest::Approx(0.0).epsilon(1e-12));

    WordDists skew(4, dist_with(vocab, {{"woman", 0.7}, {"man", 0.1}}));
    CHECK(appearance_confusion_loss(skew, gendered, vocab) == doctest::Approx(0.6).epsilon(1e-12));
}

TEST_CASE("masked non-gendered cross entropy decomposes") {
    Vocabulary vocab = Vocabulary::caption_vocab();
    std::vector<int> mixed{vocab.bos(), vocab.id("a"), vocab.id("woman"), vocab.id("riding"),
                           vocab.id("a"), vocab.id("snowboard"), vocab.eos()};
    Rng rng(4);
    WordDists dists;
    for (int t = 0; t < 6; ++t) {
        std::vector<double> d(vocab.size());
        double z = 0.0;
        for (double& x : d) z += (x = rng.uniform(0.01, 1.0));
        for (double& x : d) x /= z;
        dists.push_back(d);
    }

    double full = cross_entropy(dists, mixed);
    double nongender = masked_nongender_ce(dists, mixed, vocab);
    // subtract the single gendered target term (position 2 -> "woman")
    double gender_term = -std::log(dists[1][vocab.id("woman")]);
    CHECK(nongender == doctest::Approx(full - gender_term).epsilon(1e-12));

    std::vector<int> all_neutral{vocab.bos(), vocab.id("a"), vocab.id("person"), vocab.id("standing"),
                                 vocab.eos()};
    WordDists four(dists.begin(), dists.begin() + 4);
    CHECK(masked_nongender_ce(four, all_neutral, vocab) ==
          doctest::Approx(cross_entropy(four, all_neutral)).epsilon(1e-12));
}

TEST_CASE("confidence quotients") {
    Vocabulary vocab = Vocabulary::caption_vocab();
    double eps = 1e-6;

    SUBCASE("the worked three-way distribution") {
        auto d = dist_with(vocab, {{"man", 0.2}, {"woman", 0.5}, {"person", 0.3}});
        auto [fw, fm] = confidence_quotients(d, vocab, eps);
        CHECK(fw == doctest::Approx(0.2 / (0.5 + eps)).epsilon(1e-12));
        CHECK(fw == doctest::Approx(0.4).epsilon(1e-4));
        CHECK(fm == doctest::Approx(0.5 / (0.2 + eps)).epsilon(1e-12));
    }

    SUBCASE("equal masses give quotients near one") {
        auto d = dist_with(vocab, {{"man", 0.3}, {"woman", 0.3}});
        auto [fw, fm] = confidence_quotients(d, vocab, eps);
        CHECK(fw == doctest::Approx(1.0).epsilon(1e-4));
        CHECK(fm == doctest::Approx(1.0).epsilon(1e-4));
    }

    SUBCASE("zero numerator stays zero regardless of the denominator") {
        auto d = dist_with(vocab, {{"woman", 0.6}});
        auto [fw, fm] = confidence_quotients(d, vocab, eps);
        CHECK(fw == doctest::Approx(0.0).epsilon(1e-12));
    }
}

TEST_CASE("confident loss") {
    Vocabulary vocab = Vocabulary::caption_vocab();
    double eps = 1e-6;
    std::vector<int> woman_cap{vocab.bos(), vocab.id("a"), vocab.id("woman"), vocab.id("standing"),
                               vocab.eos()};
    std::vector<int> neutral{vocab.bos(), vocab.id("a"), vocab.id("person"), vocab.id("standing"),
                             vocab.eos()};

    WordDists flat(4, uniform_dist(40));
    CHECK(confident_loss(flat, neutral, vocab, eps) == doctest::Approx(0.0));

    WordDists perfect(4, dist_with(vocab, {{"woman", 1.0}}));
    CHECK(confident_loss(perfect, woman_cap, vocab, eps) == doctest::Approx(0.0).epsilon(1e-9));

    WordDists paper(4, dist_with(vocab, {{"man", 0.2}, {"woman", 0.5}, {"person", 0.3}}));
    CHECK(confident_loss(paper, woman_cap, vocab, eps) == doctest::Approx(0.4).epsilon(1e-4));
}

TEST_CASE("upweight loss") {
    Vocabulary vocab = Vocabulary::caption_vocab();
    std::vector<int> woman_cap{vocab.bos(), vocab.id("a"), vocab.id("woman"), vocab.id("standing"),
                               vocab.eos()};
    std::vector<int> neutral{vocab.bos(), vocab.id("a"), vocab.id("person"), vocab.id("standing"),
                             vocab.eos()};
    Rng rng(6);
    WordDists dists;
    for (int t = 0; t < 4; ++t) {
        std::vector<double> d(vocab.size());
        double z = 0.0;
        for (double& x : d) z += (x = rng.uniform(0.01, 1.0));
        for (double& x : d) x /= z;
        dists.push_back(d);
    }

    CHECK(upweight_loss(dists, woman_cap, vocab, 1.0) == cross_entropy(dists, woman_cap));
    CHECK(upweight_loss(dists, neutral, vocab, 10.0) == cross_entropy(dists, neutral));
    double term = -std::log(dists[1][vocab.id("woman")]);
    CHECK(upweight_loss(dists, woman_cap, vocab, 10.0) ==
          doctest::Approx(cross_entropy(dists, woman_cap) + 9.0 * term).epsilon(1e-12));
}

TEST_CASE("total loss composition") {
    LossWeights defaults;
    CHECK(defaults.alpha == 1.0);
    CHECK(defaults.beta == 10.0);
    CHECK(defaults.mu == 1.0);
    CHECK(defaults.epsilon == 1e-6);
    CHECK(defaults.upweight_factor == 10.0);

    LossBundle b = total_loss(2.5, 0.3, 1.5, 0.7, defaults);
    CHECK(b.ce == doctest::Approx(4.0).epsilon(1e-12));
    CHECK(std::abs(b.total - (defaults.alpha * b.ce + defaults.beta * b.acl + defaults.mu * b.conf)) <
          1e-9);

    LossWeights off;
    off.beta = 0.0;
    off.mu = 0.0;
    CHECK(total_loss(2.5, 0.3, 1.5, 0.7, off).total == doctest::Approx(4.0).epsilon(1e-12));

    LossWeights doubled = defaults;
    doubled.beta = 20.0;
    double delta = total_loss(2.5, 0.3, 1.5, 0.7, doubled).total - b.total;
    CHECK(delta == doctest::Approx(10.0 * 0.3).epsilon(1e-12));

    CHECK_THROWS_AS(total_loss(std::nan(""), 0.0, 0.0, 0.0, defaults), NumericFailure);
    try {
        total_loss(0.0, std::numeric_limits<double>::infinity(), 0.0, 0.0, defaults);
        FAIL("expected NumericFailure");
    } catch (const NumericFailure& e) {
        CHECK(std::string(e.what()).find("acl") != std::string::npos);
    }
}

TEST_CASE("gradients of ACL, Conf, and the combined objective match finite differences") {
    Corpus corpus = gendered_corpus(2, 31);
    std::vector<const SceneRecord*> batch{&corpus.records[0], &corpus.records[1]};
    ModelConfig mc;
    mc.vocab_size = corpus.vocab.size();
    ModelParams params = ModelParams::init(mc, corpus.vocab.hash(), 17);

    for (const auto& [name, spec] :
         std::vector<std::pair<std::string, BatchLossSpec>>{{"acl", acl_only()},
                                                            {"conf", conf_only()},
                                                            {"combined", combined_objective()}}) {
        auto results = finite_difference_check(batch, corpus.vocab, params, spec, 10);
        for (const auto& r : results) {
            INFO(name, " block ", r.block, " rel ", r.max_rel);
            CHECK(r.max_rel < 1e-4);
        }
    }
}

TEST_CASE("gender-neutral targets contribute zero ACL/Conf gradient") {
    Corpus corpus = gendered_corpus(2, 41);
    // neutral caption: no gendered targets anywhere
    Vocabulary vocab = corpus.vocab;
    std::vector<int> neutral{vocab.bos(), vocab.id("a"), vocab.id("person"), vocab.id("standing"),
                             vocab.eos()};
    for (auto& rec : corpus.records)
        for (auto& cap : rec.captions) cap = neutral;

    std::vector<const SceneRecord*> batch{&corpus.records[0], &corpus.records[1]};
    ModelConfig mc;
    mc.vocab_size = vocab.size();
    ModelParams params = ModelParams::init(mc, vocab.hash(), 19);
    Gradients grads = Gradients::zeros_like(params);
    BatchLossSpec spec{{{LossTerm::Confident, 1.0}}, {{LossTerm::AppearanceConfusion, 1.0}}, {}};
    double value = batch_loss(batch, vocab, params, spec, &grads);
    CHECK(value == 0.0);
    for (const auto& block : grads.g)
        for (double g : block) CHECK(g == 0.0);
}
