#pragma once

#include <map>
#include <string>
#include <vector>

#include "capbias/common.hpp"
#include "capbias/image.hpp"
#include "capbias/vocab.hpp"

namespace capbias {

enum class GenderLabel { Man, Woman, Discard };
enum class Evidence { Woman, Man, Occluded };
enum class Split { Train, TestBias, TestBalanced, Discard, Unused };

std::string to_string(GenderLabel v);
std::string to_string(Evidence v);
std::string to_string(Split v);
GenderLabel gender_label_from_string(const std::string& s);
Evidence evidence_from_string(const std::string& s);
Split split_from_string(const std::string& s);

// Knobs controlling the bias structure of a generated corpus plus the
// rendering parameters that set how subtle the gender evidence is.
struct BiasConfig {
    double woman_fraction = 0.25;
    // object -> {P(object | woman), P(object | man)}, used as sampling weights
    std::map<std::string, std::pair<double, double>> cooccurrence = default_cooccurrence();
    double evidence_occlusion_prob = 0.10;
    double annotator_mention_prob = 0.90;
    uint64_t seed = 0;
    bool multiword_gender_sets = false;

    // rendering
    double glyph_contrast = 0.32;
    double pixel_noise = 0.02;
    double object1_prob = 0.90;
    double object2_prob = 0.30;

    static std::map<std::string, std::pair<double, double>> default_cooccurrence();
    void validate() const;
    std::string serialize() const;
    static BiasConfig deserialize(const std::string&);
};

struct SceneRecord {
    int id = 0;
    ImageU8 image;
    PersonMask mask;
    std::vector<std::vector<int>> captions;  // 5 token-id sequences, BOS..EOS
    Evidence true_evidence = Evidence::Occluded;
    std::vector<std::string> context_objects;
    Split split = Split::Train;
    GenderLabel label = GenderLabel::Discard;
    // visible pixel footprint per rendered object, flat y*W+x indices
    std::map<std::string, std::vector<int>> object_pixels;
};

struct Corpus {
    Vocabulary vocab;
    BiasConfig config;
    std::vector<SceneRecord> records;

    std::vector<const SceneRecord*> split_records(Split s) const;
};

// Labeling rule over the five captions: Man when at least one caption uses a
// man-set word and none uses a woman-set word, Woman symmetrically, Discard
// when both or neither gender is mentioned.
GenderLabel derive_gender_label(const std::vector<std::vector<int>>& captions, const Vocabulary& vocab);

// I' = I (.) M + (1-M) * mu, mu the per-channel mean over the whole image.
// Background pixels (mask 1) are unchanged.
ImageF mask_person(const ImageF& image, const PersonMask& mask);
inline ImageF mask_person(const ImageU8& image, const PersonMask& mask) {
    return mask_person(image.to_float(), mask);
}

SceneRecord generate_scene(const BiasConfig& config, Rng& rng, const Vocabulary& vocab, int id);
Corpus generate_corpus(const BiasConfig& config, int n);

struct SplitSpec {
    int balanced_per_gender = 500;
    int test_bias_size = 1000;
    int train_size = -1;           // -1: all remaining labeled records
    bool include_discards = false; // keep Discard records (as split "discard") instead of dropping them
};

// Assigns Split tags in place. Discard-labeled records never enter a split;
// throws InvalidInput when a label pool is too small for the requested sizes.
void make_splits(Corpus& corpus, const SplitSpec& spec, Rng& rng);

// Dataset directory layout: manifest.jsonl + vocab.json + meta.json, one RGB
// PNG per image under images/ and one grayscale PNG per mask under masks/.
void save_dataset(const Corpus& corpus, const std::string& dir);
Corpus load_dataset(const std::string& dir);

// FNV-1a over every file in the directory (sorted by relative path).
uint64_t dataset_checksum(const std::string& dir);

}  // namespace capbias
