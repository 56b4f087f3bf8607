#include <doctest.h>

#include <unistd.h>

#include <filesystem>
#include <fstream>

#include "capbias/dataset.hpp"

using namespace capbias;
namespace fs = std::filesystem;

namespace {

fs::path fresh_dir(const std::string& tag) {
    fs::path p = fs::temp_directory_path() / ("capbias_test_" + tag + "_" + std::to_string(::getpid()));
    fs::remove_all(p);
    fs::create_directories(p);
    return p;
}

std::vector<int> tokens(const Vocabulary& v, const std::vector<std::string>& words) {
    std::vector<int> out{v.bos()};
    for (const auto& w : words) out.push_back(v.id(w));
    out.push_back(v.eos());
    return out;
}

}  // namespace

TEST_CASE("derive_gender_label follows the caption rule") {
    Vocabulary v = Vocabulary::caption_vocab();
    auto neutral = tokens(v, {"a", "person", "standing"});
    auto man_cap = tokens(v, {"a", "man", "standing"});
    auto woman_cap = tokens(v, {"a", "woman", "standing"});

    CHECK(derive_gender_label({man_cap, neutral, neutral, neutral, neutral}, v) == GenderLabel::Man);
    CHECK(derive_gender_label({woman_cap, neutral, neutral, neutral, neutral}, v) == GenderLabel::Woman);
    CHECK(derive_gender_label({man_cap, woman_cap, neutral, neutral, neutral}, v) == GenderLabel::Discard);
    CHECK(derive_gender_label({neutral, neutral, neutral, neutral, neutral}, v) == GenderLabel::Discard);
}

TEST_CASE("mask_person identity and constant-image fixed points") {
    ImageF img(kImageSize, kImageSize, 3);
    Rng rng(11);
    for (double& x : img.v) x = rng.uniform();

    PersonMask all_ones;  // default mask is all background
    ImageF out = mask_person(img, all_ones);
    CHECK(out.v == img.v);

    ImageF constant(kImageSize, kImageSize, 3);
    for (double& x : constant.v) x = 0.42;
    PersonMask with_person;
    for (int y = 20; y < 40; ++y)
        for (int x = 25; x < 35; ++x) with_person.at(y, x) = 0;
    ImageF out2 = mask_person(constant, with_person);
    for (double x : out2.v) CHECK(x == doctest::Approx(0.42).epsilon(1e-12));
}

TEST_CASE("mask_person fills the person region with per-channel means") {
    ImageF img(kImageSize, kImageSize, 3);
    Rng rng(7);
    for (double& x : img.v) x = rng.uniform();
    PersonMask mask;
    for (int y = 10; y < 30; ++y)
        for (int x = 12; x < 22; ++x) mask.at(y, x) = 0;

    // independent recomputation of the channel means
    double mu[3] = {0, 0, 0};
    for (int y = 0; y < kImageSize; ++y)
        for (int x = 0; x < kImageSize; ++x)
            for (int c = 0; c < 3; ++c) mu[c] += img.at(y, x, c);
    for (double& m : mu) m /= kImageSize * kImageSize;

    ImageF out = mask_person(img, mask);
    for (int y = 0; y < kImageSize; ++y)
        for (int x = 0; x < kImageSize; ++x)
            for (int c = 0; c < 3; ++c) {
                if (mask.at(y, x) == 0)
                    CHECK(out.at(y, x, c) == doctest::Approx(mu[c]).epsilon(1e-12));
                else
                    CHECK(out.at(y, x, c) == img.at(y, x, c));
            }

    PersonMask bad;
    bad.h = 32;
    bad.w = 32;
    bad.m.assign(32 * 32, 1);
    CHECK_THROWS_AS(mask_person(img, bad), InvalidInput);
}

TEST_CASE("generate_scene basic contracts") {
    BiasConfig config;
    config.seed = 3;
    Vocabulary v = Vocabulary::caption_vocab();

    SUBCASE("occluded evidence forces neutral mentions") {
        config.evidence_occlusion_prob = 1.0;
        for (int id = 0; id < 50; ++id) {
            Rng rng(id + 100);
            SceneRecord rec = generate_scene(config, rng, v, id);
            CHECK(rec.true_evidence == Evidence::Occluded);
            for (const auto& cap : rec.captions)
                for (int tok : cap) CHECK_FALSE(v.is_gendered(tok));
            CHECK(rec.label == GenderLabel::Discard);
        }
    }

    SUBCASE("full mention probability makes labels match visible evidence") {
        config.evidence_occlusion_prob = 0.0;
        config.annotator_mention_prob = 1.0;
        for (int id = 0; id < 80; ++id) {
            Rng rng(id + 7);
            SceneRecord rec = generate_scene(config, rng, v, id);
            GenderLabel expected =
                rec.true_evidence == Evidence::Woman ? GenderLabel::Woman : GenderLabel::Man;
            CHECK(rec.label == expected);
        }
    }

    SUBCASE("captions are well formed and objects leave footprints") {
        for (int id = 0; id < 60; ++id) {
            Rng rng(id);
            SceneRecord rec = generate_scene(config, rng, v, id);
            CHECK(rec.captions.size() == 5);
            for (const auto& cap : rec.captions) {
                CHECK(cap.front() == v.bos());
                CHECK(cap.back() == v.eos());
                CHECK(cap.size() <= 8);
            }
            CHECK(rec.mask.person_pixel_count() > 0);
            CHECK(rec.mask.person_region_connected());
            for (const auto& obj : rec.context_objects) CHECK(rec.object_pixels.count(obj) == 1);
        }
    }
}

TEST_CASE("corpus evidence ratio tracks woman_fraction") {
    BiasConfig config;
    config.seed = 20240;
    config.evidence_occlusion_prob = 0.0;
    Corpus corpus = generate_corpus(config, 4000);
    long woman = 0, man = 0;
    for (const auto& rec : corpus.records) {
        woman += rec.true_evidence == Evidence::Woman;
        man += rec.true_evidence == Evidence::Man;
    }
    double ratio = static_cast<double>(woman) / man;
    // Monte-Carlo oracle: 1:3 target within +-3%
    CHECK(ratio > (1.0 / 3.0) * 0.97);
    CHECK(ratio < (1.0 / 3.0) * 1.03);
}

TEST_CASE("corpus generation is a pure function of (config, seed)") {
    BiasConfig config;
    config.seed = 91;
    Corpus a = generate_corpus(config, 12);
    Corpus b = generate_corpus(config, 12);
    fs::path da = fresh_dir("det_a"), db = fresh_dir("det_b");
    save_dataset(a, da.string());
    save_dataset(b, db.string());
    CHECK(dataset_checksum(da.string()) == dataset_checksum(db.string()));
    fs::remove_all(da);
    fs::remove_all(db);
}

TEST_CASE("make_splits balances, preserves ratio, and partitions") {
    BiasConfig config;
    config.seed = 5;
    config.evidence_occlusion_prob = 0.05;
    Corpus corpus = generate_corpus(config, 1600);
    SplitSpec spec;
    spec.balanced_per_gender = 80;
    spec.test_bias_size = 200;
    Rng rng(17);
    make_splits(corpus, spec, rng);

    long counts[2][3] = {{0, 0, 0}, {0, 0, 0}};  // [woman/man][train,bias,balanced]
    for (const auto& rec : corpus.records) {
        if (rec.label == GenderLabel::Discard) {
            CHECK(rec.split == Split::Discard);
            continue;
        }
        int g = rec.label == GenderLabel::Woman ? 0 : 1;
        if (rec.split == Split::Train) ++counts[g][0];
        if (rec.split == Split::TestBias) ++counts[g][1];
        if (rec.split == Split::TestBalanced) ++counts[g][2];
    }
    CHECK(counts[0][2] == 80);
    CHECK(counts[1][2] == 80);
    double train_ratio = static_cast<double>(counts[0][0]) / counts[1][0];
    double bias_ratio = static_cast<double>(counts[0][1]) / counts[1][1];
    CHECK(std::abs(bias_ratio - train_ratio) / train_ratio < 0.05);

    SUBCASE("insufficient records raise") {
        SplitSpec big;
        big.balanced_per_gender = 5000;
        Rng rng2(1);
        CHECK_THROWS_AS(make_splits(corpus, big, rng2), InvalidInput);
    }
}

TEST_CASE("balanced split is exact for a constructed pool") {
    // 300 woman / 900 man labeled records
    BiasConfig config;
    config.seed = 55;
    config.woman_fraction = 0.25;
    config.evidence_occlusion_prob = 0.0;
    config.annotator_mention_prob = 1.0;
    Corpus corpus = generate_corpus(config, 1200);
    SplitSpec spec;
    spec.balanced_per_gender = 100;
    spec.test_bias_size = 100;
    Rng rng(2);
    make_splits(corpus, spec, rng);
    long w = 0, m = 0;
    for (const auto& rec : corpus.records)
        if (rec.split == Split::TestBalanced) (rec.label == GenderLabel::Woman ? w : m)++;
    CHECK(w == m);
}

TEST_CASE("dataset save/load round trip") {
    BiasConfig config;
    config.seed = 123;
    Corpus corpus = generate_corpus(config, 10);
    fs::path dir = fresh_dir("roundtrip");
    save_dataset(corpus, dir.string());
    Corpus loaded = load_dataset(dir.string());

    REQUIRE(loaded.records.size() == corpus.records.size());
    CHECK(loaded.vocab.hash() == corpus.vocab.hash());
    for (size_t i = 0; i < corpus.records.size(); ++i) {
        const auto& a = corpus.records[i];
        const auto& b = loaded.records[i];
        CHECK(a.id == b.id);
        CHECK(a.captions == b.captions);
        CHECK(a.label == b.label);
        CHECK(a.true_evidence == b.true_evidence);
        CHECK(a.context_objects == b.context_objects);
        CHECK(a.split == b.split);
        CHECK(a.image.bytes == b.image.bytes);
        CHECK(a.mask.m == b.mask.m);
        CHECK(a.object_pixels == b.object_pixels);
    }

    SUBCASE("missing image file is named in the error") {
        fs::remove(dir / "images" / "00003.png");
        try {
            load_dataset(dir.string());
            FAIL("expected IoError");
        } catch (const IoError& e) {
            CHECK(std::string(e.what()).find("00003.png") != std::string::npos);
        }
    }

    SUBCASE("corrupt manifest line names the record") {
        std::ofstream f(dir / "manifest.jsonl", std::ios::app);
        f << "{broken\n";
        f.close();
        CHECK_THROWS_AS(load_dataset(dir.string()), IoError);
    }

    fs::remove_all(dir);
}
