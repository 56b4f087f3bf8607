#pragma once

#include <string>
#include <vector>

#include "capbias/common.hpp"
#include "capbias/image.hpp"
#include "capbias/vocab.hpp"

namespace capbias {

// Two conv layers take the 64x64 RGB input down to an 8x8 feature grid; the
// flattened grid initializes the recurrent state through a tanh projection.
// The decoder is a single GRU with an output projection over the vocabulary.
struct ModelConfig {
    int vocab_size = 40;
    int hidden = 32;
    int embed = 16;
    int conv1_ch = 8;
    int conv2_ch = 16;
    int bos_id = 0;
    int eos_id = 1;

    static constexpr int k1 = 5, s1 = 4, p1 = 2;  // 64 -> 16
    static constexpr int k2 = 3, s2 = 2, p2 = 1;  // 16 -> 8
    static constexpr int mid = 16;                // conv1 output side
    static constexpr int grid = 8;                // conv2 output side

    int feat_len() const { return conv2_ch * grid * grid; }
    void validate() const;
};

enum class Block : int {
    Conv1W, Conv1B, Conv2W, Conv2B,
    ProjW, ProjB,
    Embed,
    GruWz, GruUz, GruBz, GruWr, GruUr, GruBr, GruWn, GruUn, GruBn,
    OutW, OutB,
    Count
};

constexpr int kBlockCount = static_cast<int>(Block::Count);
const char* block_name(Block b);

struct ParamBlock {
    std::string name;
    std::vector<int> shape;
    std::vector<double> v;

    size_t size() const { return v.size(); }
};

struct ModelParams {
    ModelConfig cfg;
    uint64_t vocab_hash = 0;
    std::vector<ParamBlock> blocks;

    static ModelParams init(const ModelConfig& cfg, uint64_t vocab_hash, uint64_t seed);

    ParamBlock& operator[](Block b) { return blocks[static_cast<int>(b)]; }
    const ParamBlock& operator[](Block b) const { return blocks[static_cast<int>(b)]; }
    size_t total_params() const;
};

// Same block structure as ModelParams, used as a gradient accumulator.
struct Gradients {
    std::vector<std::vector<double>> g;

    static Gradients zeros_like(const ModelParams& p);
    void zero();
    std::vector<double>& operator[](Block b) { return g[static_cast<int>(b)]; }
    const std::vector<double>& operator[](Block b) const { return g[static_cast<int>(b)]; }
    double norm() const;
    // throws NumericFailure naming the first non-finite block
    void check_finite() const;
};

struct DecoderState {
    std::vector<double> h;
};

struct EncodeCache {
    std::vector<double> input;          // 3 x 64 x 64 (CHW)
    std::vector<double> a1_pre, a1;     // conv1_ch x 16 x 16
    std::vector<double> a2_pre, grid;   // conv2_ch x 8 x 8, grid is post-ReLU
    std::vector<double> h0_pre, h0;
};

struct StepCache {
    int input_id = 0;
    std::vector<double> h_prev, z, r, n, rh, h;
    std::vector<double> logits, probs;
};

struct ForwardCache {
    EncodeCache enc;
    std::vector<StepCache> steps;
};

struct EncodeOut {
    std::vector<double> grid;  // final conv activations, conv2_ch x 8 x 8
    DecoderState state;
};

EncodeCache encode_cached(const ImageF& image, const ModelParams& params);
EncodeOut encode(const ImageF& image, const ModelParams& params);

// One decoder step: embeds prev_id, advances the GRU, returns softmax probs.
std::pair<std::vector<double>, DecoderState> step(int prev_id, const DecoderState& state,
                                                  const ModelParams& params);

// Teacher forcing over caption (BOS..EOS): step t consumes caption[t] and
// predicts caption[t+1], so a length-T caption yields T-1 distributions.
ForwardCache forward_teacher_forced_cached(const ImageF& image, const std::vector<int>& caption,
                                           const ModelParams& params);
std::vector<std::vector<double>> forward_teacher_forced(const ImageF& image,
                                                        const std::vector<int>& caption,
                                                        const ModelParams& params);

std::vector<int> greedy_decode(const ImageF& image, const ModelParams& params, int max_len);

// Exact reverse-mode pass. dlogits holds one vocab-sized row per decoder step
// (d loss / d logits). Parameter gradients accumulate into grads; when dgrid
// is non-null it receives d loss / d grid (the Grad-CAM layer gradient).
void backward(const ForwardCache& cache, const std::vector<std::vector<double>>& dlogits,
              const ModelParams& params, Gradients& grads, std::vector<double>* dgrid = nullptr);

// Versioned binary checkpoint: named parameter arrays + vocabulary hash.
void save_checkpoint(const std::string& path, const ModelParams& params);
ModelParams load_checkpoint(const std::string& path);
ModelParams load_checkpoint(const std::string& path, uint64_t expected_vocab_hash);

}  // namespace capbias
