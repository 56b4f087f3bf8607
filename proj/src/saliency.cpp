#include "capbias/saliency.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include "capbias/losses.hpp"

namespace capbias {

std::string to_string(SaliencyMethod m) {
    return m == SaliencyMethod::Occlusion ? "occlusion" : "gradcam";
}

SaliencyMethod saliency_method_from_string(const std::string& s) {
    if (s == "occlusion") return SaliencyMethod::Occlusion;
    if (s == "gradcam") return SaliencyMethod::GradCam;
    throw InvalidInput("unknown saliency method '" + s + "'");
}

std::vector<double> SaliencyMap::upscaled(int h, int w) const {
    std::vector<double> out(static_cast<size_t>(h) * w);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) out[static_cast<size_t>(y) * w + x] = at(y * g / h, x * g / w);
    return out;
}

std::pair<int, int> SaliencyMap::argmax_pixel(int h, int w) const {
    std::vector<double> up = upscaled(h, w);
    size_t best = 0;
    for (size_t i = 1; i < up.size(); ++i)
        if (up[i] > up[best]) best = i;
    return {static_cast<int>(best) / w, static_cast<int>(best) % w};
}

namespace {

void check_target(const std::vector<int>& caption, int target_position, const Vocabulary& vocab,
                  const char* who) {
    if (target_position <= 0 || target_position >= static_cast<int>(caption.size()))
        throw InvalidInput(std::string(who) + ": target position out of caption range");
    if (!vocab.is_gendered(caption[target_position]))
        throw InvalidInput(std::string(who) + ": target position does not hold a gendered word");
}

}  // namespace

SaliencyMap occlusion_saliency(const ModelParams& params, const ImageF& image,
                               const std::vector<int>& caption, int target_position,
                               const Vocabulary& vocab, int grid_side) {
    check_target(caption, target_position, vocab, "occlusion_saliency");
    if (grid_side <= 0 || image.h % grid_side != 0 || image.w % grid_side != 0)
        throw InvalidInput("occlusion_saliency: grid side must divide the image size");
    const int cell_h = image.h / grid_side, cell_w = image.w / grid_side;
    const int target_word = caption[target_position];
    const int step_idx = target_position - 1;

    SaliencyMap map;
    map.g = grid_side;
    map.grid.assign(static_cast<size_t>(grid_side) * grid_side, 0.0);
    map.method = SaliencyMethod::Occlusion;
    map.target_word = target_word;
    map.target_position = target_position;

    for (int cy = 0; cy < grid_side; ++cy)
        for (int cx = 0; cx < grid_side; ++cx) {
            ImageF blocked = image;
            for (int y = cy * cell_h; y < (cy + 1) * cell_h; ++y)
                for (int x = cx * cell_w; x < (cx + 1) * cell_w; ++x)
                    for (int ch = 0; ch < image.c; ++ch) blocked.at(y, x, ch) = 0.0;
            WordDists dists = forward_teacher_forced(blocked, caption, params);
            double p = std::max(dists[step_idx][target_word], 1e-12);
            map.grid[static_cast<size_t>(cy) * grid_side + cx] = -std::log(p);
        }
    for (double v : map.grid)
        if (!std::isfinite(v)) throw NumericFailure("occlusion_saliency: non-finite cell value");
    return map;
}

SaliencyMap grad_cam(const ModelParams& params, const ImageF& image, const std::vector<int>& caption,
                     int target_position, const Vocabulary& vocab) {
    check_target(caption, target_position, vocab, "grad_cam");
    const int target_word = caption[target_position];
    const int step_idx = target_position - 1;

    ForwardCache fc = forward_teacher_forced_cached(image, caption, params);
    const int V = params.cfg.vocab_size;
    std::vector<std::vector<double>> dlogits(fc.steps.size(), std::vector<double>(V, 0.0));
    // d log p(target) / d logits = onehot(target) - p
    const std::vector<double>& p = fc.steps[step_idx].probs;
    for (int i = 0; i < V; ++i) dlogits[step_idx][i] = (i == target_word ? 1.0 : 0.0) - p[i];

    Gradients scratch = Gradients::zeros_like(params);
    std::vector<double> dgrid;
    backward(fc, dlogits, params, scratch, &dgrid);
    for (double v : dgrid)
        if (!std::isfinite(v)) throw NumericFailure("grad_cam: non-finite activation gradient");

    const int G = ModelConfig::grid, C = params.cfg.conv2_ch;
    SaliencyMap map;
    map.g = G;
    map.grid.assign(static_cast<size_t>(G) * G, 0.0);
    map.method = SaliencyMethod::GradCam;
    map.target_word = target_word;
    map.target_position = target_position;

    std::vector<double> channel_w(C, 0.0);
    for (int c = 0; c < C; ++c) {
        double s = 0.0;
        for (int i = 0; i < G * G; ++i) s += dgrid[static_cast<size_t>(c) * G * G + i];
        channel_w[c] = s / (G * G);
    }
    for (int y = 0; y < G; ++y)
        for (int x = 0; x < G; ++x) {
            double s = 0.0;
            for (int c = 0; c < C; ++c)
                s += channel_w[c] * fc.enc.grid[(static_cast<size_t>(c) * G + y) * G + x];
            map.grid[static_cast<size_t>(y) * G + x] = s > 0.0 ? s : 0.0;
        }
    return map;
}

bool pointing(const SaliencyMap& map, const PersonMask& mask) {
    auto [y, x] = map.argmax_pixel(mask.h, mask.w);
    return mask.at(y, x) == 0;
}

double person_area_fraction(const PersonMask& mask) {
    return static_cast<double>(mask.person_pixel_count()) / (static_cast<double>(mask.h) * mask.w);
}

namespace {

// first reference caption holding a gendered word, with the word's position
bool find_gendered_target(const SceneRecord& rec, const Vocabulary& vocab, const std::vector<int>** caption,
                          int* position) {
    for (const auto& cap : rec.captions)
        for (size_t i = 1; i < cap.size(); ++i)
            if (vocab.is_gendered(cap[i])) {
                *caption = &cap;
                *position = static_cast<int>(i);
                return true;
            }
    return false;
}

SaliencyMap compute_map(const ModelParams& params, const SceneRecord& rec,
                        const std::vector<int>& caption, int position, const Vocabulary& vocab,
                        SaliencyMethod method, int grid_side) {
    ImageF img = rec.image.to_float();
    return method == SaliencyMethod::Occlusion
               ? occlusion_saliency(params, img, caption, position, vocab, grid_side)
               : grad_cam(params, img, caption, position, vocab);
}

}  // namespace

PointingSuiteResult pointing_suite(const ModelParams& params,
                                   const std::vector<const SceneRecord*>& records,
                                   const Vocabulary& vocab, SaliencyMethod method, int grid_side) {
    PointingSuiteResult out;
    long evaluated = 0;
    for (const SceneRecord* rec : records) {
        if (rec->label == GenderLabel::Discard) continue;
        const std::vector<int>* caption = nullptr;
        int position = 0;
        if (!find_gendered_target(*rec, vocab, &caption, &position)) continue;
        SaliencyMap map = compute_map(params, *rec, *caption, position, vocab, method, grid_side);
        bool hit = pointing(map, rec->mask);
        ++evaluated;
        PointingResult& row = rec->label == GenderLabel::Woman ? out.woman : out.man;
        (hit ? row.hits : row.misses) += 1;
        (hit ? out.all.hits : out.all.misses) += 1;
    }
    if (evaluated == 0) throw InvalidInput("pointing_suite: no gendered records to evaluate");
    return out;
}

ObjectPointingResult object_pointing(const ModelParams& params,
                                     const std::vector<const SceneRecord*>& records,
                                     const Vocabulary& vocab, SaliencyMethod method, int grid_side) {
    struct Acc {
        long w_hit = 0, w_n = 0, m_hit = 0, m_n = 0;
    };
    std::map<std::string, Acc> acc;
    for (const SceneRecord* rec : records) {
        if (rec->label == GenderLabel::Discard || rec->object_pixels.empty()) continue;
        const std::vector<int>* caption = nullptr;
        int position = 0;
        if (!find_gendered_target(*rec, vocab, &caption, &position)) continue;
        SaliencyMap map = compute_map(params, *rec, *caption, position, vocab, method, grid_side);
        auto [y, x] = map.argmax_pixel(rec->mask.h, rec->mask.w);
        int flat = y * rec->mask.w + x;
        for (const auto& [name, footprint] : rec->object_pixels) {
            bool on_object = std::binary_search(footprint.begin(), footprint.end(), flat);
            Acc& a = acc[name];
            if (rec->label == GenderLabel::Woman) {
                ++a.w_n;
                a.w_hit += on_object;
            } else {
                ++a.m_n;
                a.m_hit += on_object;
            }
        }
    }
    ObjectPointingResult out;
    double sum = 0.0;
    long n = 0;
    for (const auto& [name, a] : acc) {
        if (a.w_n == 0 || a.m_n == 0) {
            out.excluded.push_back(name);
            continue;
        }
        ObjectPointingEntry e;
        e.woman_rate = static_cast<double>(a.w_hit) / a.w_n;
        e.man_rate = static_cast<double>(a.m_hit) / a.m_n;
        e.woman_n = a.w_n;
        e.man_n = a.m_n;
        e.delta = std::abs(e.woman_rate - e.man_rate);
        out.per_object[name] = e;
        sum += e.delta;
        ++n;
    }
    out.mean_abs_delta = n ? sum / n : 0.0;
    return out;
}

void write_heatmap_overlay(const std::string& path, const ImageU8& image, const SaliencyMap& map) {
    std::vector<double> up = map.upscaled(image.h, image.w);
    double lo = *std::min_element(up.begin(), up.end());
    double hi = *std::max_element(up.begin(), up.end());
    double range = hi - lo > 1e-12 ? hi - lo : 1.0;
    ImageU8 out = image;
    for (int y = 0; y < image.h; ++y)
        for (int x = 0; x < image.w; ++x) {
            double v = (up[static_cast<size_t>(y) * image.w + x] - lo) / range;
            double r = image.at(y, x, 0) / 255.0, g = image.at(y, x, 1) / 255.0, b = image.at(y, x, 2) / 255.0;
            out.at(y, x, 0) = static_cast<uint8_t>(std::lround(255.0 * (0.45 * r + 0.55 * v)));
            out.at(y, x, 1) = static_cast<uint8_t>(std::lround(255.0 * (0.45 * g + 0.55 * 0.15 * v)));
            out.at(y, x, 2) = static_cast<uint8_t>(std::lround(255.0 * (0.45 * b + 0.55 * (1.0 - v))));
        }
    write_png_rgb(path, out);
}

void write_grid_csv(const std::string& path, const SaliencyMap& map) {
    std::ofstream f(path);
    if (!f) throw IoError("cannot write " + path);
    f.precision(12);
    for (int y = 0; y < map.g; ++y) {
        for (int x = 0; x < map.g; ++x) {
            if (x) f << ",";
            f << map.at(y, x);
        }
        f << "\n";
    }
}

}  // namespace capbias
