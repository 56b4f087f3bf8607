#include "capbias/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <json.hpp>

namespace fs = std::filesystem;
using nlohmann::json;

namespace capbias {

std::string to_string(GenderLabel v) {
    switch (v) {
        case GenderLabel::Man: return "man";
        case GenderLabel::Woman: return "woman";
        default: return "discard";
    }
}

std::string to_string(Evidence v) {
    switch (v) {
        case Evidence::Woman: return "woman";
        case Evidence::Man: return "man";
        default: return "occluded";
    }
}

std::string to_string(Split v) {
    switch (v) {
        case Split::Train: return "train";
        case Split::TestBias: return "test-bias";
        case Split::TestBalanced: return "test-balanced";
        case Split::Discard: return "discard";
        default: return "unused";
    }
}

GenderLabel gender_label_from_string(const std::string& s) {
    if (s == "man") return GenderLabel::Man;
    if (s == "woman") return GenderLabel::Woman;
    if (s == "discard") return GenderLabel::Discard;
    throw IoError("unknown gender label '" + s + "'");
}

Evidence evidence_from_string(const std::string& s) {
    if (s == "woman") return Evidence::Woman;
    if (s == "man") return Evidence::Man;
    if (s == "occluded") return Evidence::Occluded;
    throw IoError("unknown evidence value '" + s + "'");
}

Split split_from_string(const std::string& s) {
    if (s == "train") return Split::Train;
    if (s == "test-bias") return Split::TestBias;
    if (s == "test-balanced") return Split::TestBalanced;
    if (s == "discard") return Split::Discard;
    if (s == "unused") return Split::Unused;
    throw IoError("unknown split '" + s + "'");
}

std::map<std::string, std::pair<double, double>> BiasConfig::default_cooccurrence() {
    // {P(object | woman), P(object | man)}
    return {
        {"snowboard", {0.05, 0.35}},
        {"motorcycle", {0.05, 0.35}},
        {"umbrella", {0.35, 0.05}},
        {"kitchen", {0.35, 0.05}},
        {"dog", {0.10, 0.10}},
        {"laptop", {0.10, 0.10}},
    };
}

void BiasConfig::validate() const {
    auto in01 = [](double x) { return x >= 0.0 && x <= 1.0; };
    if (!(woman_fraction > 0.0 && woman_fraction < 1.0))
        throw InvalidInput("BiasConfig: woman_fraction must be in (0,1)");
    if (!in01(evidence_occlusion_prob)) throw InvalidInput("BiasConfig: evidence_occlusion_prob must be in [0,1]");
    if (!in01(annotator_mention_prob)) throw InvalidInput("BiasConfig: annotator_mention_prob must be in [0,1]");
    if (!in01(object1_prob) || !in01(object2_prob)) throw InvalidInput("BiasConfig: object probabilities must be in [0,1]");
    if (cooccurrence.empty()) throw InvalidInput("BiasConfig: co-occurrence table is empty");
    for (const auto& [name, pw] : cooccurrence)
        if (!in01(pw.first) || !in01(pw.second))
            throw InvalidInput("BiasConfig: co-occurrence row for '" + name + "' out of range");
    if (!(glyph_contrast >= 0.0 && glyph_contrast <= 1.0)) throw InvalidInput("BiasConfig: glyph_contrast must be in [0,1]");
    if (!(pixel_noise >= 0.0 && pixel_noise <= 0.25)) throw InvalidInput("BiasConfig: pixel_noise out of range");
}

std::string BiasConfig::serialize() const {
    json co = json::object();
    for (const auto& [name, pw] : cooccurrence) co[name] = {pw.first, pw.second};
    json j{{"woman_fraction", woman_fraction},
           {"cooccurrence", co},
           {"evidence_occlusion_prob", evidence_occlusion_prob},
           {"annotator_mention_prob", annotator_mention_prob},
           {"seed", seed},
           {"multiword_gender_sets", multiword_gender_sets},
           {"glyph_contrast", glyph_contrast},
           {"pixel_noise", pixel_noise},
           {"object1_prob", object1_prob},
           {"object2_prob", object2_prob}};
    return j.dump();
}

BiasConfig BiasConfig::deserialize(const std::string& text) {
    try {
        auto j = json::parse(text);
        BiasConfig c;
        c.woman_fraction = j.at("woman_fraction");
        c.cooccurrence.clear();
        for (auto& [name, pw] : j.at("cooccurrence").items())
            c.cooccurrence[name] = {pw.at(0).get<double>(), pw.at(1).get<double>()};
        c.evidence_occlusion_prob = j.at("evidence_occlusion_prob");
        c.annotator_mention_prob = j.at("annotator_mention_prob");
        c.seed = j.at("seed");
        c.multiword_gender_sets = j.at("multiword_gender_sets");
        c.glyph_contrast = j.at("glyph_contrast");
        c.pixel_noise = j.at("pixel_noise");
        c.object1_prob = j.at("object1_prob");
        c.object2_prob = j.at("object2_prob");
        c.validate();
        return c;
    } catch (const json::exception& e) {
        throw IoError(std::string("BiasConfig::deserialize: ") + e.what());
    }
}

std::vector<const SceneRecord*> Corpus::split_records(Split s) const {
    std::vector<const SceneRecord*> out;
    for (const auto& r : records)
        if (r.split == s) out.push_back(&r);
    return out;
}

GenderLabel derive_gender_label(const std::vector<std::vector<int>>& captions, const Vocabulary& vocab) {
    bool any_woman = false, any_man = false;
    for (const auto& cap : captions)
        for (int tok : cap) {
            any_woman |= vocab.is_woman_word(tok);
            any_man |= vocab.is_man_word(tok);
        }
    if (any_woman && !any_man) return GenderLabel::Woman;
    if (any_man && !any_woman) return GenderLabel::Man;
    return GenderLabel::Discard;
}

ImageF mask_person(const ImageF& image, const PersonMask& mask) {
    if (image.h != mask.h || image.w != mask.w)
        throw InvalidInput("mask_person: image and mask shapes differ");
    std::vector<double> mu(image.c, 0.0);
    for (int y = 0; y < image.h; ++y)
        for (int x = 0; x < image.w; ++x)
            for (int ch = 0; ch < image.c; ++ch) mu[ch] += image.at(y, x, ch);
    for (int ch = 0; ch < image.c; ++ch) mu[ch] /= static_cast<double>(image.h) * image.w;
    ImageF out = image;
    for (int y = 0; y < image.h; ++y)
        for (int x = 0; x < image.w; ++x)
            if (mask.at(y, x) == 0)
                for (int ch = 0; ch < image.c; ++ch) out.at(y, x, ch) = mu[ch];
    return out;
}

namespace {

struct Color {
    double r, g, b;
};

struct Painter {
    ImageF& img;
    std::vector<int>* footprint = nullptr;

    void set(int y, int x, const Color& c) {
        if (y < 0 || y >= img.h || x < 0 || x >= img.w) return;
        img.at(y, x, 0) = c.r;
        img.at(y, x, 1) = c.g;
        img.at(y, x, 2) = c.b;
        if (footprint) footprint->push_back(y * img.w + x);
    }

    void fill_rect(int y0, int x0, int h, int w, const Color& c) {
        for (int y = y0; y < y0 + h; ++y)
            for (int x = x0; x < x0 + w; ++x) set(y, x, c);
    }

    void fill_ellipse(double cy, double cx, double ry, double rx, const Color& c) {
        for (int y = static_cast<int>(cy - ry) - 1; y <= static_cast<int>(cy + ry) + 1; ++y)
            for (int x = static_cast<int>(cx - rx) - 1; x <= static_cast<int>(cx + rx) + 1; ++x) {
                double dy = (y - cy) / ry, dx = (x - cx) / rx;
                if (dy * dy + dx * dx <= 1.0) set(y, x, c);
            }
    }

    void fill_rot_ellipse(double cy, double cx, double ry, double rx, double angle, const Color& c) {
        double ca = std::cos(angle), sa = std::sin(angle);
        double rmax = std::max(rx, ry);
        for (int y = static_cast<int>(cy - rmax) - 1; y <= static_cast<int>(cy + rmax) + 1; ++y)
            for (int x = static_cast<int>(cx - rmax) - 1; x <= static_cast<int>(cx + rmax) + 1; ++x) {
                double ux = (x - cx) * ca + (y - cy) * sa;
                double uy = -(x - cx) * sa + (y - cy) * ca;
                if ((ux / rx) * (ux / rx) + (uy / ry) * (uy / ry) <= 1.0) set(y, x, c);
            }
    }

    void fill_disc(double cy, double cx, double r, const Color& c) { fill_ellipse(cy, cx, r, r, c); }

    // upward-pointing triangle with apex at (cy - h/2, cx)
    void fill_triangle(double cy, double cx, double half_w, double height, const Color& c) {
        double top = cy - height / 2.0, bottom = cy + height / 2.0;
        for (int y = static_cast<int>(top); y <= static_cast<int>(bottom) + 1; ++y) {
            if (y < top || y > bottom) continue;
            double frac = (y - top) / std::max(1e-9, bottom - top);
            double hw = half_w * frac;
            for (int x = static_cast<int>(cx - hw); x <= static_cast<int>(cx + hw) + 1; ++x)
                if (std::abs(x - cx) <= hw) set(y, x, c);
        }
    }

    void fill_half_disc_up(double cy, double cx, double r, const Color& c) {
        for (int y = static_cast<int>(cy - r) - 1; y <= static_cast<int>(cy); ++y)
            for (int x = static_cast<int>(cx - r) - 1; x <= static_cast<int>(cx + r) + 1; ++x) {
                double dy = y - cy, dx = x - cx;
                if (dy <= 0 && dy * dy + dx * dx <= r * r) set(y, x, c);
            }
    }
};

Color jitter(const Color& c, Rng& rng, double amt) {
    auto clamp01 = [](double x) { return std::min(1.0, std::max(0.0, x)); };
    return {clamp01(c.r + rng.uniform(-amt, amt)), clamp01(c.g + rng.uniform(-amt, amt)),
            clamp01(c.b + rng.uniform(-amt, amt))};
}

void draw_object(Painter& p, const std::string& name, double cy, double cx, Rng& rng) {
    if (name == "snowboard") {
        double angle = rng.uniform(-0.5, 0.5);
        p.fill_rot_ellipse(cy, cx, 2.2, 9.5, angle, jitter({0.30, 0.75, 0.85}, rng, 0.05));
    } else if (name == "motorcycle") {
        Color body = jitter({0.65, 0.15, 0.12}, rng, 0.05);
        p.fill_rot_ellipse(cy, cx, 2.8, 6.5, 0.0, body);
        p.fill_disc(cy + 3.5, cx - 4.5, 2.4, {0.10, 0.10, 0.12});
        p.fill_disc(cy + 3.5, cx + 4.5, 2.4, {0.10, 0.10, 0.12});
    } else if (name == "umbrella") {
        Color canopy = jitter({0.80, 0.20, 0.60}, rng, 0.05);
        p.fill_half_disc_up(cy, cx, 6.5, canopy);
        p.fill_rect(static_cast<int>(cy), static_cast<int>(cx), 7, 1, {0.25, 0.20, 0.15});
    } else if (name == "kitchen") {
        Color counter = jitter({0.55, 0.38, 0.20}, rng, 0.04);
        p.fill_rect(static_cast<int>(cy) - 5, static_cast<int>(cx) - 7, 11, 15, counter);
        p.fill_rect(static_cast<int>(cy) - 6, static_cast<int>(cx) - 7, 2, 15, jitter({0.75, 0.68, 0.58}, rng, 0.03));
    } else if (name == "dog") {
        Color fur = jitter({0.52, 0.36, 0.18}, rng, 0.05);
        p.fill_ellipse(cy, cx, 3.4, 5.8, fur);
        p.fill_disc(cy - 2.0, cx + 5.2, 2.3, fur);
    } else if (name == "laptop") {
        p.fill_rect(static_cast<int>(cy), static_cast<int>(cx) - 5, 2, 10, {0.22, 0.22, 0.25});
        p.fill_rect(static_cast<int>(cy) - 6, static_cast<int>(cx) - 4, 6, 8, {0.15, 0.15, 0.18});
        p.fill_rect(static_cast<int>(cy) - 5, static_cast<int>(cx) - 3, 4, 6, jitter({0.35, 0.55, 0.75}, rng, 0.05));
    } else {
        throw InvalidInput("draw_object: unknown object '" + name + "'");
    }
}

const std::map<std::string, std::string>& object_verb() {
    static const std::map<std::string, std::string> v = {
        {"snowboard", "riding"}, {"motorcycle", "riding"}, {"umbrella", "holding"},
        {"kitchen", "in"},       {"dog", "with"},          {"laptop", "using"},
    };
    return v;
}

int sample_person_word(const Vocabulary& vocab, bool gendered, bool woman, bool multiword, Rng& rng) {
    if (!gendered) return rng.bernoulli(0.8) ? vocab.id("person") : vocab.id("human");
    if (!multiword) return woman ? vocab.id("woman") : vocab.id("man");
    const std::vector<std::string> w = {"woman", "girl", "lady", "female"};
    const std::vector<std::string> m = {"man", "boy", "guy", "male"};
    const auto& pool = woman ? w : m;
    // primary word dominates, synonyms split the rest
    int pick = rng.discrete({0.55, 0.15, 0.15, 0.15});
    return vocab.id(pool[pick]);
}

}  // namespace

SceneRecord generate_scene(const BiasConfig& config, Rng& rng, const Vocabulary& vocab, int id) {
    config.validate();
    SceneRecord rec;
    rec.id = id;

    bool is_woman = rng.bernoulli(config.woman_fraction);
    bool occluded = rng.bernoulli(config.evidence_occlusion_prob);
    rec.true_evidence = occluded ? Evidence::Occluded : (is_woman ? Evidence::Woman : Evidence::Man);

    // context objects conditioned on the underlying gender
    std::vector<std::string> names;
    std::vector<double> weights;
    for (const auto& [name, pw] : config.cooccurrence) {
        names.push_back(name);
        weights.push_back(is_woman ? pw.first : pw.second);
    }
    if (rng.bernoulli(config.object1_prob)) {
        int first = rng.discrete(weights);
        rec.context_objects.push_back(names[first]);
        if (rng.bernoulli(config.object2_prob)) {
            auto w2 = weights;
            w2[first] = 0.0;
            double rem = 0.0;
            for (double w : w2) rem += w;
            if (rem > 0.0) rec.context_objects.push_back(names[rng.discrete(w2)]);
        }
    }

    // render
    ImageF img(kImageSize, kImageSize, 3);
    Painter bg{img};
    bg.fill_rect(0, 0, kImageSize, kImageSize, jitter({0.80, 0.80, 0.82}, rng, 0.05));

    bool object_left_first = rng.bernoulli(0.5);
    for (size_t i = 0; i < rec.context_objects.size(); ++i) {
        bool left = (i == 0) ? object_left_first : !object_left_first;
        double cx = left ? rng.uniform(9.0, 18.0) : rng.uniform(46.0, 55.0);
        double cy = rng.uniform(16.0, 48.0);
        std::vector<int> footprint;
        Painter p{img, &footprint};
        draw_object(p, rec.context_objects[i], cy, cx, rng);
        std::sort(footprint.begin(), footprint.end());
        footprint.erase(std::unique(footprint.begin(), footprint.end()), footprint.end());
        rec.object_pixels[rec.context_objects[i]] = std::move(footprint);
    }

    // person: torso + neck + head; glyph sits inside the torso
    double tcx = rng.uniform(28.0, 36.0);
    double tcy = rng.uniform(34.0, 42.0);
    double trx = rng.uniform(5.0, 7.0);
    double try_ = rng.uniform(10.0, 13.0);
    double head_r = rng.uniform(3.0, 4.0);
    Color person_color = jitter({0.46, 0.50, 0.63}, rng, 0.04);

    std::vector<int> person_px;
    Painter pp{img, &person_px};
    pp.fill_ellipse(tcy, tcx, try_, trx, person_color);
    pp.fill_rect(static_cast<int>(tcy - try_ - 2), static_cast<int>(tcx) - 1, 4, 3, person_color);
    pp.fill_disc(tcy - try_ - head_r, tcx, head_r, person_color);

    if (!occluded) {
        auto clamp01 = [](double x) { return std::min(1.0, std::max(0.0, x)); };
        Color glyph{clamp01(person_color.r + config.glyph_contrast * 0.9),
                    clamp01(person_color.g - config.glyph_contrast * 0.35),
                    clamp01(person_color.b - config.glyph_contrast * 0.35)};
        double gx = tcx + rng.uniform(-2.0, 2.0);
        double gy = tcy + rng.uniform(-3.0, 3.0);
        Painter gp{img, &person_px};
        if (is_woman)
            gp.fill_triangle(gy, gx, rng.uniform(2.4, 3.2), rng.uniform(5.0, 6.5), glyph);
        else
            gp.fill_disc(gy, gx, rng.uniform(2.2, 3.0), glyph);
    }

    std::sort(person_px.begin(), person_px.end());
    person_px.erase(std::unique(person_px.begin(), person_px.end()), person_px.end());
    for (int idx : person_px) rec.mask.m[idx] = 0;

    // person occludes objects: keep only still-visible object pixels
    for (auto& [name, footprint] : rec.object_pixels) {
        std::vector<int> visible;
        for (int idx : footprint)
            if (rec.mask.m[idx] != 0) visible.push_back(idx);
        footprint = std::move(visible);
    }

    if (config.pixel_noise > 0.0)
        for (double& x : img.v) {
            x += rng.normal(0.0, config.pixel_noise);
            x = std::min(1.0, std::max(0.0, x));
        }
    rec.image = ImageU8::quantize(img);

    // five simulated annotators
    bool visible = !occluded;
    for (int a = 0; a < 5; ++a) {
        bool mention = visible && rng.bernoulli(config.annotator_mention_prob);
        int person_word = sample_person_word(vocab, mention, is_woman, config.multiword_gender_sets, rng);
        std::vector<int> cap{vocab.bos(), vocab.id("a"), person_word};
        if (!rec.context_objects.empty()) {
            const auto& obj = rec.context_objects[rng.uniform_int(static_cast<int>(rec.context_objects.size()))];
            cap.push_back(vocab.id(object_verb().at(obj)));
            cap.push_back(vocab.id("a"));
            cap.push_back(vocab.id(obj));
        } else {
            cap.push_back(rng.bernoulli(0.5) ? vocab.id("standing") : vocab.id("posing"));
        }
        cap.push_back(vocab.eos());
        rec.captions.push_back(std::move(cap));
    }

    rec.label = derive_gender_label(rec.captions, vocab);
    rec.split = rec.label == GenderLabel::Discard ? Split::Discard : Split::Train;
    return rec;
}

Corpus generate_corpus(const BiasConfig& config, int n) {
    config.validate();
    if (n <= 0) throw InvalidInput("generate_corpus: n must be positive");
    Corpus corpus;
    corpus.vocab = Vocabulary::caption_vocab(config.multiword_gender_sets);
    corpus.config = config;
    corpus.records.reserve(n);
    for (int id = 0; id < n; ++id) {
        // per-record stream keyed on (seed, id) so generation order is free
        uint64_t mix = fnv1a64(&id, sizeof(id), config.seed ^ 0x9e3779b97f4a7c15ull);
        Rng rng(mix);
        corpus.records.push_back(generate_scene(config, rng, corpus.vocab, id));
    }
    return corpus;
}

void make_splits(Corpus& corpus, const SplitSpec& spec, Rng& rng) {
    std::vector<int> woman_pool, man_pool;
    for (auto& rec : corpus.records) {
        if (rec.label == GenderLabel::Discard) {
            rec.split = Split::Discard;
            continue;
        }
        rec.split = Split::Unused;
        (rec.label == GenderLabel::Woman ? woman_pool : man_pool).push_back(rec.id);
    }
    rng.shuffle(woman_pool);
    rng.shuffle(man_pool);

    size_t need_w = spec.balanced_per_gender, need_m = spec.balanced_per_gender;
    if (woman_pool.size() < need_w)
        throw InvalidInput("make_splits: only " + std::to_string(woman_pool.size()) +
                           " woman-labeled records, need " + std::to_string(need_w) + " for the balanced split");
    if (man_pool.size() < need_m)
        throw InvalidInput("make_splits: only " + std::to_string(man_pool.size()) +
                           " man-labeled records, need " + std::to_string(need_m) + " for the balanced split");

    auto take = [&corpus](std::vector<int>& pool, size_t k, Split s) {
        for (size_t i = 0; i < k; ++i) {
            corpus.records[pool.back()].split = s;
            pool.pop_back();
        }
    };
    take(woman_pool, need_w, Split::TestBalanced);
    take(man_pool, need_m, Split::TestBalanced);

    // test-bias preserves the corpus label ratio via proportional allocation
    size_t rem = woman_pool.size() + man_pool.size();
    if (rem < static_cast<size_t>(spec.test_bias_size))
        throw InvalidInput("make_splits: not enough labeled records left for the test-bias split");
    size_t bias_w = static_cast<size_t>(std::lround(
        static_cast<double>(spec.test_bias_size) * woman_pool.size() / std::max<size_t>(1, rem)));
    bias_w = std::min(bias_w, woman_pool.size());
    size_t bias_m = spec.test_bias_size - bias_w;
    if (bias_m > man_pool.size())
        throw InvalidInput("make_splits: not enough man-labeled records for the test-bias split");
    take(woman_pool, bias_w, Split::TestBias);
    take(man_pool, bias_m, Split::TestBias);

    if (spec.train_size < 0) {
        take(woman_pool, woman_pool.size(), Split::Train);
        take(man_pool, man_pool.size(), Split::Train);
    } else {
        size_t rem2 = woman_pool.size() + man_pool.size();
        if (rem2 < static_cast<size_t>(spec.train_size))
            throw InvalidInput("make_splits: not enough labeled records for train_size=" +
                               std::to_string(spec.train_size));
        size_t train_w = static_cast<size_t>(std::lround(
            static_cast<double>(spec.train_size) * woman_pool.size() / std::max<size_t>(1, rem2)));
        train_w = std::min(train_w, woman_pool.size());
        size_t train_m = spec.train_size - train_w;
        if (train_m > man_pool.size())
            throw InvalidInput("make_splits: not enough man-labeled records for the train split");
        take(woman_pool, train_w, Split::Train);
        take(man_pool, train_m, Split::Train);
    }
}

namespace {

std::string record_image_path(int id) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "images/%05d.png", id);
    return buf;
}

std::string record_mask_path(int id) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "masks/%05d.png", id);
    return buf;
}

json runs_encode(const std::vector<int>& sorted_px) {
    json runs = json::array();
    size_t i = 0;
    while (i < sorted_px.size()) {
        int start = sorted_px[i];
        int len = 1;
        while (i + len < sorted_px.size() && sorted_px[i + len] == start + len) ++len;
        runs.push_back({start, len});
        i += len;
    }
    return runs;
}

std::vector<int> runs_decode(const json& runs) {
    std::vector<int> px;
    for (const auto& r : runs) {
        int start = r.at(0), len = r.at(1);
        for (int k = 0; k < len; ++k) px.push_back(start + k);
    }
    return px;
}

}  // namespace

void save_dataset(const Corpus& corpus, const std::string& dir) {
    fs::create_directories(fs::path(dir) / "images");
    fs::create_directories(fs::path(dir) / "masks");

    {
        std::ofstream f(fs::path(dir) / "vocab.json");
        if (!f) throw IoError("cannot write " + dir + "/vocab.json");
        f << corpus.vocab.serialize() << "\n";
    }
    {
        std::ofstream f(fs::path(dir) / "meta.json");
        if (!f) throw IoError("cannot write " + dir + "/meta.json");
        json meta{{"config", json::parse(corpus.config.serialize())}, {"n_records", corpus.records.size()}};
        f << meta.dump() << "\n";
    }

    std::ofstream manifest(fs::path(dir) / "manifest.jsonl");
    if (!manifest) throw IoError("cannot write " + dir + "/manifest.jsonl");
    for (const auto& rec : corpus.records) {
        json caps = json::array();
        for (const auto& cap : rec.captions) {
            json toks = json::array();
            for (int t : cap) toks.push_back(corpus.vocab.token(t));
            caps.push_back(toks);
        }
        json objs = json::object();
        for (const auto& [name, px] : rec.object_pixels) objs[name] = runs_encode(px);
        json line{{"id", rec.id},
                  {"captions", caps},
                  {"label", to_string(rec.label)},
                  {"true_evidence", to_string(rec.true_evidence)},
                  {"context_objects", rec.context_objects},
                  {"split", to_string(rec.split)},
                  {"image", record_image_path(rec.id)},
                  {"mask", record_mask_path(rec.id)},
                  {"object_pixels", objs}};
        manifest << line.dump() << "\n";
        write_png_rgb((fs::path(dir) / record_image_path(rec.id)).string(), rec.image);
        write_png_gray((fs::path(dir) / record_mask_path(rec.id)).string(), rec.mask);
    }
}

Corpus load_dataset(const std::string& dir) {
    Corpus corpus;
    {
        std::ifstream f(fs::path(dir) / "vocab.json");
        if (!f) throw IoError("missing " + dir + "/vocab.json");
        std::stringstream ss;
        ss << f.rdbuf();
        corpus.vocab = Vocabulary::deserialize(ss.str());
    }
    {
        std::ifstream f(fs::path(dir) / "meta.json");
        if (!f) throw IoError("missing " + dir + "/meta.json");
        std::stringstream ss;
        ss << f.rdbuf();
        try {
            corpus.config = BiasConfig::deserialize(json::parse(ss.str()).at("config").dump());
        } catch (const json::exception& e) {
            throw IoError("malformed meta.json: " + std::string(e.what()));
        }
    }
    std::ifstream manifest(fs::path(dir) / "manifest.jsonl");
    if (!manifest) throw IoError("missing " + dir + "/manifest.jsonl");
    std::string line;
    int line_no = 0;
    while (std::getline(manifest, line)) {
        ++line_no;
        if (line.empty()) continue;
        json j;
        try {
            j = json::parse(line);
        } catch (const json::exception& e) {
            throw IoError("manifest.jsonl line " + std::to_string(line_no) + ": " + e.what());
        }
        SceneRecord rec;
        std::string record_tag = "record at manifest line " + std::to_string(line_no);
        try {
            rec.id = j.at("id");
            record_tag = "record " + std::to_string(rec.id);
            for (const auto& cap : j.at("captions")) {
                std::vector<int> toks;
                for (const auto& t : cap) {
                    const std::string s = t.get<std::string>();
                    if (!corpus.vocab.contains(s))
                        throw IoError(record_tag + ": unknown token '" + s + "'");
                    toks.push_back(corpus.vocab.id(s));
                }
                rec.captions.push_back(std::move(toks));
            }
            rec.label = gender_label_from_string(j.at("label"));
            rec.true_evidence = evidence_from_string(j.at("true_evidence"));
            rec.context_objects = j.at("context_objects").get<std::vector<std::string>>();
            rec.split = split_from_string(j.at("split"));
            for (auto& [name, runs] : j.at("object_pixels").items())
                rec.object_pixels[name] = runs_decode(runs);
            auto image_path = fs::path(dir) / j.at("image").get<std::string>();
            auto mask_path = fs::path(dir) / j.at("mask").get<std::string>();
            if (!fs::exists(image_path)) throw IoError(record_tag + ": missing image file " + image_path.string());
            if (!fs::exists(mask_path)) throw IoError(record_tag + ": missing mask file " + mask_path.string());
            rec.image = read_png_rgb(image_path.string());
            rec.mask = read_png_gray(mask_path.string());
        } catch (const json::exception& e) {
            throw IoError(record_tag + ": " + e.what());
        }
        corpus.records.push_back(std::move(rec));
    }
    return corpus;
}

uint64_t dataset_checksum(const std::string& dir) {
    if (!fs::is_directory(dir)) throw IoError("dataset_checksum: not a directory: " + dir);
    std::vector<std::string> rels;
    for (const auto& entry : fs::recursive_directory_iterator(dir))
        if (entry.is_regular_file()) rels.push_back(fs::relative(entry.path(), dir).generic_string());
    std::sort(rels.begin(), rels.end());
    uint64_t h = 1469598103934665603ull;
    for (const auto& rel : rels) {
        h = fnv1a64(rel, h);
        h = fnv1a64("\x00", 1, h);
        std::ifstream f(fs::path(dir) / rel, std::ios::binary);
        if (!f) throw IoError("dataset_checksum: cannot read " + rel);
        std::stringstream ss;
        ss << f.rdbuf();
        const std::string bytes = ss.str();
        h = fnv1a64(bytes.data(), bytes.size(), h);
        h = fnv1a64("\x00", 1, h);
    }
    return h;
}

}  // namespace capbias
