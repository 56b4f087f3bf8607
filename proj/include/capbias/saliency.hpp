#pragma once

#include <map>
#include <string>
#include <vector>

#include "capbias/dataset.hpp"
#include "capbias/model.hpp"

namespace capbias {

enum class SaliencyMethod { Occlusion, GradCam };
std::string to_string(SaliencyMethod m);
SaliencyMethod saliency_method_from_string(const std::string& s);

struct SaliencyMap {
    int g = 8;  // grid side
    std::vector<double> grid;
    SaliencyMethod method = SaliencyMethod::Occlusion;
    int target_word = -1;
    int target_position = -1;  // index into the caption

    double at(int y, int x) const { return grid[static_cast<size_t>(y) * g + x]; }
    // nearest-neighbor upscale to h x w
    std::vector<double> upscaled(int h, int w) const;
    // argmax of the upscaled view; ties broken by lowest flat index
    std::pair<int, int> argmax_pixel(int h, int w) const;
};

// Occludes one grid cell at a time (zero fill), reruns the teacher-forced
// pass and records the information loss -log p(target word) per cell.
SaliencyMap occlusion_saliency(const ModelParams& params, const ImageF& image,
                               const std::vector<int>& caption, int target_position,
                               const Vocabulary& vocab, int grid_side = 8);

// Gradient of the target word's log-probability w.r.t. the final conv grid;
// spatially averaged gradients weight the activation channels, rectified.
SaliencyMap grad_cam(const ModelParams& params, const ImageF& image, const std::vector<int>& caption,
                     int target_position, const Vocabulary& vocab);

// Hit iff the argmax pixel of the upscaled map lands on a person pixel.
bool pointing(const SaliencyMap& map, const PersonMask& mask);

double person_area_fraction(const PersonMask& mask);

struct PointingResult {
    long hits = 0;
    long misses = 0;
    double accuracy() const { return hits + misses ? 100.0 * hits / (hits + misses) : 0.0; }
};

struct PointingSuiteResult {
    PointingResult woman, man, all;
};

// Pointing game over the gendered records of a split, using the first
// reference caption that contains a gendered word.
PointingSuiteResult pointing_suite(const ModelParams& params, const std::vector<const SceneRecord*>& records,
                                   const Vocabulary& vocab, SaliencyMethod method, int grid_side = 8);

struct ObjectPointingEntry {
    double woman_rate = 0.0, man_rate = 0.0;
    long woman_n = 0, man_n = 0;
    double delta = 0.0;  // |woman_rate - man_rate|
};

struct ObjectPointingResult {
    std::map<std::string, ObjectPointingEntry> per_object;
    double mean_abs_delta = 0.0;
    std::vector<std::string> excluded;  // objects lacking records for a gender
};

// Fraction of records (per object, per gender) whose saliency argmax lands on
// the object's visible footprint.
ObjectPointingResult object_pointing(const ModelParams& params,
                                     const std::vector<const SceneRecord*>& records,
                                     const Vocabulary& vocab, SaliencyMethod method, int grid_side = 8);

// Heatmap exports: alpha-blended PNG overlay plus the raw grid as CSV.
void write_heatmap_overlay(const std::string& path, const ImageU8& image, const SaliencyMap& map);
void write_grid_csv(const std::string& path, const SaliencyMap& map);

}  // namespace capbias
