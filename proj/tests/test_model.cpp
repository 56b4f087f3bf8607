#include <doctest.h>

#include <cmath>

#include "capbias/model.hpp"
#include "support/test_util.hpp"

using namespace capbias;
using namespace capbias::testutil;

namespace {

ModelParams fresh_params(const Vocabulary& vocab, uint64_t seed = 1) {
    ModelConfig cfg;
    cfg.vocab_size = vocab.size();
    cfg.bos_id = vocab.bos();
    cfg.eos_id = vocab.eos();
    return ModelParams::init(cfg, vocab.hash(), seed);
}

}  // namespace

TEST_CASE("step emits normalized distributions and is pure") {
    Vocabulary vocab = Vocabulary::caption_vocab();
    ModelParams params = fresh_params(vocab);
    Rng rng(3);
    DecoderState state;
    state.h.resize(params.cfg.hidden);
    for (double& x : state.h) x = rng.uniform(-1.0, 1.0);

    for (int trial = 0; trial < 20; ++trial) {
        int tok = rng.uniform_int(vocab.size());
        auto [probs, next] = step(tok, state, params);
        double sum = 0.0;
        for (double p : probs) {
            CHECK(p >= 0.0);
            sum += p;
        }
        CHECK(sum == doctest::Approx(1.0).epsilon(1e-6));

        auto [probs2, next2] = step(tok, state, params);
        CHECK(probs == probs2);
        CHECK(next.h == next2.h);
        state = next;
    }

    CHECK_THROWS_AS(step(-1, state, params), InvalidInput);
    CHECK_THROWS_AS(step(vocab.size(), state, params), InvalidInput);
}

TEST_CASE("zeroed output projection gives the uniform distribution") {
    Vocabulary vocab = Vocabulary::caption_vocab();
    ModelParams params = fresh_params(vocab);
    std::fill(params[Block::OutW].v.begin(), params[Block::OutW].v.end(), 0.0);
    std::fill(params[Block::OutB].v.begin(), params[Block::OutB].v.end(), 0.0);
    DecoderState state;
    state.h.assign(params.cfg.hidden, 0.3);
    auto [probs, next] = step(vocab.id("a"), state, params);
    for (double p : probs) CHECK(p == doctest::Approx(1.0 / vocab.size()).epsilon(1e-12));
}

TEST_CASE("encode is deterministic, finite, and Lipschitz-bounded") {
    Vocabulary vocab = Vocabulary::caption_vocab();
    ModelParams params = fresh_params(vocab, 9);

    ImageF zero(kImageSize, kImageSize, 3);
    EncodeOut a = encode(zero, params);
    EncodeOut b = encode(zero, params);
    CHECK(a.grid == b.grid);
    CHECK(a.state.h == b.state.h);
    for (double x : a.grid) CHECK(std::isfinite(x));

    // one-pixel perturbation against a norm bound from the weights
    ImageF img(kImageSize, kImageSize, 3);
    Rng rng(5);
    for (double& x : img.v) x = rng.uniform();
    EncodeOut base = encode(img, params);
    ImageF bumped = img;
    bumped.at(2, 3, 1) += 1.0 / 255.0;
    EncodeOut moved = encode(bumped, params);

    double w1_max = 0.0;
    for (double w : params[Block::Conv1W].v) w1_max = std::max(w1_max, std::abs(w));
    double w2_rowsum = 0.0;
    const auto& w2 = params[Block::Conv2W].v;
    size_t per_filter = w2.size() / params.cfg.conv2_ch;
    for (int oc = 0; oc < params.cfg.conv2_ch; ++oc) {
        double s = 0.0;
        for (size_t i = 0; i < per_filter; ++i) s += std::abs(w2[oc * per_filter + i]);
        w2_rowsum = std::max(w2_rowsum, s);
    }
    double bound = w1_max * w2_rowsum * (1.0 / 255.0);
    double measured = 0.0;
    for (size_t i = 0; i < base.grid.size(); ++i)
        measured = std::max(measured, std::abs(base.grid[i] - moved.grid[i]));
    CHECK(measured <= bound + 1e-12);
}

TEST_CASE("teacher forcing: counts, causality, batch-of-one") {
    Vocabulary vocab = Vocabulary::caption_vocab();
    ModelParams params = fresh_params(vocab, 2);
    Corpus corpus = gendered_corpus(4, 77);
    const SceneRecord& rec = corpus.records[0];
    const std::vector<int>& caption = rec.captions[0];
    ImageF img = rec.image.to_float();

    WordDists dists = forward_teacher_forced(img, caption, params);
    CHECK(dists.size() == caption.size() - 1);

    // distributions through position j-1 ignore a mutation at position j
    std::vector<int> mutated = caption;
    size_t j = caption.size() - 2;
    mutated[j] = vocab.id("dog");
    WordDists dists2 = forward_teacher_forced(img, mutated, params);
    for (size_t t = 0; t < j; ++t) CHECK(dists[t] == dists2[t]);

    CHECK(batch_mean_cross_entropy({dists}, {caption}) ==
          doctest::Approx(cross_entropy(dists, caption)).epsilon(1e-15));

    CHECK_THROWS_AS(forward_teacher_forced(img, {vocab.id("a"), vocab.eos()}, params), InvalidInput);
}

TEST_CASE("greedy decode contract") {
    Vocabulary vocab = Vocabulary::caption_vocab();
    ModelParams params = fresh_params(vocab, 8);
    Corpus corpus = gendered_corpus(2, 5);
    ImageF img = corpus.records[0].image.to_float();

    std::vector<int> a = greedy_decode(img, params, 8);
    std::vector<int> b = greedy_decode(img, params, 8);
    CHECK(a == b);
    CHECK(a.front() == vocab.bos());
    CHECK(a.size() <= 8);
    bool ended = a.back() == vocab.eos() || a.size() == 8;
    CHECK(ended);
    CHECK_THROWS_AS(greedy_decode(img, params, 1), InvalidInput);
}

TEST_CASE("reverse-mode gradients match central finite differences (CE)") {
    Corpus corpus = gendered_corpus(2, 13);
    std::vector<const SceneRecord*> batch{&corpus.records[0], &corpus.records[1]};
    ModelParams params = fresh_params(corpus.vocab, 21);
    auto results = finite_difference_check(batch, corpus.vocab, params, ce_only(), 12);
    for (const auto& r : results) {
        INFO("block ", r.block, " rel ", r.max_rel);
        CHECK(r.max_rel < 1e-4);
    }
}

TEST_CASE("zero-weighted loss yields exactly zero gradients") {
    Corpus corpus = gendered_corpus(2, 14);
    std::vector<const SceneRecord*> batch{&corpus.records[0], &corpus.records[1]};
    ModelParams params = fresh_params(corpus.vocab, 3);
    Gradients grads = Gradients::zeros_like(params);
    BatchLossSpec spec{{{LossTerm::CrossEntropy, 0.0}}, {{LossTerm::AppearanceConfusion, 0.0}}, {}};
    double value = batch_loss(batch, corpus.vocab, params, spec, &grads);
    CHECK(value == 0.0);
    for (const auto& block : grads.g)
        for (double g : block) CHECK(g == 0.0);
}

TEST_CASE("cross entropy gradient vanishes on a memorized record") {
    Corpus corpus = gendered_corpus(1, 99);
    const SceneRecord& rec = corpus.records[0];
    ModelParams params = fresh_params(corpus.vocab, 4);
    std::vector<const SceneRecord*> batch{&rec};

    Gradients grads = Gradients::zeros_like(params);
    for (int iter = 0; iter < 2500; ++iter) {
        grads.zero();
        batch_loss(batch, corpus.vocab, params, ce_only(), &grads);
        for (int bi = 0; bi < kBlockCount; ++bi)
            for (size_t i = 0; i < params.blocks[bi].v.size(); ++i)
                params.blocks[bi].v[i] -= 0.5 * grads.g[bi][i];
    }
    grads.zero();
    double ce = batch_loss(batch, corpus.vocab, params, ce_only(), &grads);
    INFO("final ce ", ce, " grad norm ", grads.norm());
    CHECK(grads.norm() < 1e-3);
}

TEST_CASE("checkpoint round trip preserves parameters and rejects vocab mismatch") {
    Vocabulary vocab = Vocabulary::caption_vocab();
    ModelParams params = fresh_params(vocab, 6);
    std::string path = "/tmp/capbias_ckpt_test.bin";
    save_checkpoint(path, params);
    ModelParams loaded = load_checkpoint(path, vocab.hash());
    for (int bi = 0; bi < kBlockCount; ++bi) CHECK(loaded.blocks[bi].v == params.blocks[bi].v);
    CHECK_THROWS_AS(load_checkpoint(path, vocab.hash() + 1), IoError);
}
