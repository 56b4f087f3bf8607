#include "capbias/model.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>

namespace capbias {

void ModelConfig::validate() const {
    if (vocab_size < 5) throw InvalidInput("ModelConfig: vocab_size too small");
    if (hidden <= 0 || embed <= 0 || conv1_ch <= 0 || conv2_ch <= 0)
        throw InvalidInput("ModelConfig: dimensions must be positive");
    if (bos_id < 0 || bos_id >= vocab_size || eos_id < 0 || eos_id >= vocab_size || bos_id == eos_id)
        throw InvalidInput("ModelConfig: bad BOS/EOS ids");
}

const char* block_name(Block b) {
    static const char* names[kBlockCount] = {
        "conv1_w", "conv1_b", "conv2_w", "conv2_b",
        "proj_w", "proj_b",
        "embed",
        "gru_wz", "gru_uz", "gru_bz", "gru_wr", "gru_ur", "gru_br", "gru_wn", "gru_un", "gru_bn",
        "out_w", "out_b",
    };
    return names[static_cast<int>(b)];
}

namespace {

ParamBlock make_block(Block b, std::vector<int> shape) {
    size_t n = 1;
    for (int d : shape) n *= static_cast<size_t>(d);
    return ParamBlock{block_name(b), std::move(shape), std::vector<double>(n, 0.0)};
}

void glorot_fill(std::vector<double>& v, int fan_in, int fan_out, Rng& rng) {
    double r = std::sqrt(6.0 / (fan_in + fan_out));
    for (double& x : v) x = rng.uniform(-r, r);
}

inline double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

}  // namespace

ModelParams ModelParams::init(const ModelConfig& cfg, uint64_t vocab_hash, uint64_t seed) {
    cfg.validate();
    ModelParams p;
    p.cfg = cfg;
    p.vocab_hash = vocab_hash;
    const int H = cfg.hidden, E = cfg.embed, V = cfg.vocab_size;
    const int C1 = cfg.conv1_ch, C2 = cfg.conv2_ch, F = cfg.feat_len();

    p.blocks.resize(kBlockCount);
    auto set = [&p](Block b, std::vector<int> shape) { p.blocks[static_cast<int>(b)] = make_block(b, std::move(shape)); };
    set(Block::Conv1W, {C1, 3, ModelConfig::k1, ModelConfig::k1});
    set(Block::Conv1B, {C1});
    set(Block::Conv2W, {C2, C1, ModelConfig::k2, ModelConfig::k2});
    set(Block::Conv2B, {C2});
    set(Block::ProjW, {H, F});
    set(Block::ProjB, {H});
    set(Block::Embed, {V, E});
    set(Block::GruWz, {H, E});
    set(Block::GruUz, {H, H});
    set(Block::GruBz, {H});
    set(Block::GruWr, {H, E});
    set(Block::GruUr, {H, H});
    set(Block::GruBr, {H});
    set(Block::GruWn, {H, E});
    set(Block::GruUn, {H, H});
    set(Block::GruBn, {H});
    set(Block::OutW, {V, H});
    set(Block::OutB, {V});

    Rng rng(seed ^ 0xa5a5a5a55a5a5a5aull);
    glorot_fill(p[Block::Conv1W].v, 3 * ModelConfig::k1 * ModelConfig::k1, C1 * ModelConfig::k1 * ModelConfig::k1, rng);
    glorot_fill(p[Block::Conv2W].v, C1 * ModelConfig::k2 * ModelConfig::k2, C2 * ModelConfig::k2 * ModelConfig::k2, rng);
    glorot_fill(p[Block::ProjW].v, F, H, rng);
    for (double& x : p[Block::Embed].v) x = rng.uniform(-0.1, 0.1);
    for (Block b : {Block::GruWz, Block::GruWr, Block::GruWn}) glorot_fill(p[b].v, E, H, rng);
    for (Block b : {Block::GruUz, Block::GruUr, Block::GruUn}) glorot_fill(p[b].v, H, H, rng);
    glorot_fill(p[Block::OutW].v, H, V, rng);
    return p;
}

size_t ModelParams::total_params() const {
    size_t n = 0;
    for (const auto& b : blocks) n += b.size();
    return n;
}

Gradients Gradients::zeros_like(const ModelParams& p) {
    Gradients g;
    g.g.resize(p.blocks.size());
    for (size_t i = 0; i < p.blocks.size(); ++i) g.g[i].assign(p.blocks[i].size(), 0.0);
    return g;
}

void Gradients::zero() {
    for (auto& b : g) std::fill(b.begin(), b.end(), 0.0);
}

double Gradients::norm() const {
    double s = 0.0;
    for (const auto& b : g)
        for (double x : b) s += x * x;
    return std::sqrt(s);
}

void Gradients::check_finite() const {
    for (size_t i = 0; i < g.size(); ++i)
        for (double x : g[i])
            if (!std::isfinite(x))
                throw NumericFailure(std::string("non-finite gradient in block ") +
                                     block_name(static_cast<Block>(i)));
}

namespace {

// out[oc][oy][ox] = b[oc] + sum_ic,ky,kx w[oc][ic][ky][kx] * in[ic][oy*s+ky-p][ox*s+kx-p]
void conv_forward(const std::vector<double>& in, int in_ch, int in_side,
                  const std::vector<double>& w, const std::vector<double>& b,
                  int out_ch, int out_side, int k, int stride, int pad,
                  std::vector<double>& out) {
    out.assign(static_cast<size_t>(out_ch) * out_side * out_side, 0.0);
    for (int oc = 0; oc < out_ch; ++oc) {
        const double* wc = &w[static_cast<size_t>(oc) * in_ch * k * k];
        for (int oy = 0; oy < out_side; ++oy)
            for (int ox = 0; ox < out_side; ++ox) {
                double acc = b[oc];
                for (int ic = 0; ic < in_ch; ++ic) {
                    const double* inp = &in[static_cast<size_t>(ic) * in_side * in_side];
                    const double* wk = &wc[static_cast<size_t>(ic) * k * k];
                    for (int ky = 0; ky < k; ++ky) {
                        int iy = oy * stride + ky - pad;
                        if (iy < 0 || iy >= in_side) continue;
                        for (int kx = 0; kx < k; ++kx) {
                            int ix = ox * stride + kx - pad;
                            if (ix < 0 || ix >= in_side) continue;
                            acc += wk[ky * k + kx] * inp[iy * in_side + ix];
                        }
                    }
                }
                out[(static_cast<size_t>(oc) * out_side + oy) * out_side + ox] = acc;
            }
    }
}

// accumulates dw, db and (when din != nullptr) din
void conv_backward(const std::vector<double>& in, int in_ch, int in_side,
                   const std::vector<double>& w, int out_ch, int out_side, int k, int stride, int pad,
                   const std::vector<double>& dout,
                   std::vector<double>& dw, std::vector<double>& db, std::vector<double>* din) {
    for (int oc = 0; oc < out_ch; ++oc) {
        const double* wc = &w[static_cast<size_t>(oc) * in_ch * k * k];
        double* dwc = &dw[static_cast<size_t>(oc) * in_ch * k * k];
        for (int oy = 0; oy < out_side; ++oy)
            for (int ox = 0; ox < out_side; ++ox) {
                double g = dout[(static_cast<size_t>(oc) * out_side + oy) * out_side + ox];
                if (g == 0.0) continue;
                db[oc] += g;
                for (int ic = 0; ic < in_ch; ++ic) {
                    const double* inp = &in[static_cast<size_t>(ic) * in_side * in_side];
                    double* dwk = &dwc[static_cast<size_t>(ic) * k * k];
                    for (int ky = 0; ky < k; ++ky) {
                        int iy = oy * stride + ky - pad;
                        if (iy < 0 || iy >= in_side) continue;
                        for (int kx = 0; kx < k; ++kx) {
                            int ix = ox * stride + kx - pad;
                            if (ix < 0 || ix >= in_side) continue;
                            dwk[ky * k + kx] += g * inp[iy * in_side + ix];
                            if (din)
                                (*din)[static_cast<size_t>(ic) * in_side * in_side + iy * in_side + ix] +=
                                    g * wc[static_cast<size_t>(ic) * k * k + ky * k + kx];
                        }
                    }
                }
            }
    }
}

// y = W x + b, W is rows x cols (row-major)
void affine(const std::vector<double>& w, const std::vector<double>& b, const double* x, int rows,
            int cols, double* y) {
    for (int i = 0; i < rows; ++i) {
        double acc = b.empty() ? 0.0 : b[i];
        const double* wr = &w[static_cast<size_t>(i) * cols];
        for (int j = 0; j < cols; ++j) acc += wr[j] * x[j];
        y[i] = acc;
    }
}

// accumulates dW += dy x^T, db += dy, dx += W^T dy
void affine_backward(const std::vector<double>& w, const double* x, const double* dy, int rows,
                     int cols, std::vector<double>& dw, std::vector<double>* db, double* dx) {
    for (int i = 0; i < rows; ++i) {
        double g = dy[i];
        if (db) (*db)[i] += g;
        if (g == 0.0) continue;
        double* dwr = &dw[static_cast<size_t>(i) * cols];
        const double* wr = &w[static_cast<size_t>(i) * cols];
        for (int j = 0; j < cols; ++j) {
            dwr[j] += g * x[j];
            if (dx) dx[j] += g * wr[j];
        }
    }
}

std::vector<double> image_chw(const ImageF& image) {
    if (image.h != kImageSize || image.w != kImageSize || image.c != 3)
        throw InvalidInput("encode: expected 64x64x3 image");
    std::vector<double> chw(static_cast<size_t>(3) * kImageSize * kImageSize);
    for (int ch = 0; ch < 3; ++ch)
        for (int y = 0; y < kImageSize; ++y)
            for (int x = 0; x < kImageSize; ++x)
                chw[(static_cast<size_t>(ch) * kImageSize + y) * kImageSize + x] = image.at(y, x, ch);
    return chw;
}

void gru_step(const ModelParams& p, StepCache& sc) {
    const int H = p.cfg.hidden, E = p.cfg.embed;
    const double* x = &p[Block::Embed].v[static_cast<size_t>(sc.input_id) * E];
    const std::vector<double>& h = sc.h_prev;

    std::vector<double> az(H), ar(H), an(H), tmp(H);
    affine(p[Block::GruWz].v, p[Block::GruBz].v, x, H, E, az.data());
    affine(p[Block::GruUz].v, {}, h.data(), H, H, tmp.data());
    for (int i = 0; i < H; ++i) az[i] += tmp[i];
    affine(p[Block::GruWr].v, p[Block::GruBr].v, x, H, E, ar.data());
    affine(p[Block::GruUr].v, {}, h.data(), H, H, tmp.data());
    for (int i = 0; i < H; ++i) ar[i] += tmp[i];

    sc.z.resize(H);
    sc.r.resize(H);
    sc.rh.resize(H);
    for (int i = 0; i < H; ++i) {
        sc.z[i] = sigmoid(az[i]);
        sc.r[i] = sigmoid(ar[i]);
        sc.rh[i] = sc.r[i] * h[i];
    }
    affine(p[Block::GruWn].v, p[Block::GruBn].v, x, H, E, an.data());
    affine(p[Block::GruUn].v, {}, sc.rh.data(), H, H, tmp.data());
    for (int i = 0; i < H; ++i) an[i] += tmp[i];

    sc.n.resize(H);
    sc.h.resize(H);
    for (int i = 0; i < H; ++i) {
        sc.n[i] = std::tanh(an[i]);
        sc.h[i] = (1.0 - sc.z[i]) * sc.n[i] + sc.z[i] * h[i];
    }

    const int V = p.cfg.vocab_size;
    sc.logits.resize(V);
    affine(p[Block::OutW].v, p[Block::OutB].v, sc.h.data(), V, p.cfg.hidden, sc.logits.data());
    sc.probs.resize(V);
    double mx = *std::max_element(sc.logits.begin(), sc.logits.end());
    double sum = 0.0;
    for (int i = 0; i < V; ++i) {
        sc.probs[i] = std::exp(sc.logits[i] - mx);
        sum += sc.probs[i];
    }
    for (int i = 0; i < V; ++i) sc.probs[i] /= sum;
}

}  // namespace

EncodeCache encode_cached(const ImageF& image, const ModelParams& p) {
    const auto& cfg = p.cfg;
    EncodeCache ec;
    ec.input = image_chw(image);

    conv_forward(ec.input, 3, kImageSize, p[Block::Conv1W].v, p[Block::Conv1B].v, cfg.conv1_ch,
                 ModelConfig::mid, ModelConfig::k1, ModelConfig::s1, ModelConfig::p1, ec.a1_pre);
    ec.a1.resize(ec.a1_pre.size());
    for (size_t i = 0; i < ec.a1_pre.size(); ++i) ec.a1[i] = ec.a1_pre[i] > 0.0 ? ec.a1_pre[i] : 0.0;

    conv_forward(ec.a1, cfg.conv1_ch, ModelConfig::mid, p[Block::Conv2W].v, p[Block::Conv2B].v,
                 cfg.conv2_ch, ModelConfig::grid, ModelConfig::k2, ModelConfig::s2, ModelConfig::p2,
                 ec.a2_pre);
    ec.grid.resize(ec.a2_pre.size());
    for (size_t i = 0; i < ec.a2_pre.size(); ++i) ec.grid[i] = ec.a2_pre[i] > 0.0 ? ec.a2_pre[i] : 0.0;

    const int H = cfg.hidden;
    ec.h0_pre.resize(H);
    affine(p[Block::ProjW].v, p[Block::ProjB].v, ec.grid.data(), H, cfg.feat_len(), ec.h0_pre.data());
    ec.h0.resize(H);
    for (int i = 0; i < H; ++i) ec.h0[i] = std::tanh(ec.h0_pre[i]);

    for (double x : ec.h0)
        if (!std::isfinite(x)) throw NumericFailure("encode: non-finite initial state");
    for (double x : ec.grid)
        if (!std::isfinite(x)) throw NumericFailure("encode: non-finite feature grid");
    return ec;
}

EncodeOut encode(const ImageF& image, const ModelParams& p) {
    EncodeCache ec = encode_cached(image, p);
    return EncodeOut{std::move(ec.grid), DecoderState{std::move(ec.h0)}};
}

std::pair<std::vector<double>, DecoderState> step(int prev_id, const DecoderState& state,
                                                  const ModelParams& p) {
    if (prev_id < 0 || prev_id >= p.cfg.vocab_size)
        throw InvalidInput("step: token id out of range: " + std::to_string(prev_id));
    if (static_cast<int>(state.h.size()) != p.cfg.hidden)
        throw InvalidInput("step: decoder state has wrong size");
    StepCache sc;
    sc.input_id = prev_id;
    sc.h_prev = state.h;
    gru_step(p, sc);
    return {std::move(sc.probs), DecoderState{std::move(sc.h)}};
}

ForwardCache forward_teacher_forced_cached(const ImageF& image, const std::vector<int>& caption,
                                           const ModelParams& p) {
    if (caption.size() < 2) throw InvalidInput("forward_teacher_forced: caption too short");
    if (caption.front() != p.cfg.bos_id)
        throw InvalidInput("forward_teacher_forced: caption must begin with BOS");
    ForwardCache fc;
    fc.enc = encode_cached(image, p);
    std::vector<double> h = fc.enc.h0;
    fc.steps.reserve(caption.size() - 1);
    for (size_t t = 0; t + 1 < caption.size(); ++t) {
        int tok = caption[t];
        if (tok < 0 || tok >= p.cfg.vocab_size)
            throw InvalidInput("forward_teacher_forced: token id out of range: " + std::to_string(tok));
        StepCache sc;
        sc.input_id = tok;
        sc.h_prev = std::move(h);
        gru_step(p, sc);
        h = sc.h;
        fc.steps.push_back(std::move(sc));
    }
    return fc;
}

std::vector<std::vector<double>> forward_teacher_forced(const ImageF& image,
                                                        const std::vector<int>& caption,
                                                        const ModelParams& p) {
    ForwardCache fc = forward_teacher_forced_cached(image, caption, p);
    std::vector<std::vector<double>> dists;
    dists.reserve(fc.steps.size());
    for (auto& sc : fc.steps) dists.push_back(std::move(sc.probs));
    return dists;
}

std::vector<int> greedy_decode(const ImageF& image, const ModelParams& p, int max_len) {
    if (max_len < 2) throw InvalidInput("greedy_decode: max_len must be >= 2");
    EncodeOut enc = encode(image, p);
    std::vector<int> seq{p.cfg.bos_id};
    DecoderState state = std::move(enc.state);
    while (static_cast<int>(seq.size()) < max_len) {
        auto [probs, next_state] = step(seq.back(), state, p);
        int best = static_cast<int>(std::max_element(probs.begin(), probs.end()) - probs.begin());
        seq.push_back(best);
        state = std::move(next_state);
        if (best == p.cfg.eos_id) break;
    }
    return seq;
}

void backward(const ForwardCache& fc, const std::vector<std::vector<double>>& dlogits,
              const ModelParams& p, Gradients& grads, std::vector<double>* dgrid_out) {
    const auto& cfg = p.cfg;
    const int H = cfg.hidden, E = cfg.embed, V = cfg.vocab_size;
    if (dlogits.size() != fc.steps.size()) throw InvalidInput("backward: dlogits length mismatch");

    std::vector<double> dh(H, 0.0);
    std::vector<double> dx(E), dh_prev(H), daz(H), dar(H), dan(H), drh(H);

    for (int t = static_cast<int>(fc.steps.size()) - 1; t >= 0; --t) {
        const StepCache& sc = fc.steps[t];
        const std::vector<double>& dl = dlogits[t];
        if (static_cast<int>(dl.size()) != V) throw InvalidInput("backward: dlogits row has wrong size");

        // output projection
        affine_backward(p[Block::OutW].v, sc.h.data(), dl.data(), V, H, grads[Block::OutW],
                        &grads[Block::OutB], dh.data());

        // h = (1-z)*n + z*h_prev
        std::fill(dh_prev.begin(), dh_prev.end(), 0.0);
        std::fill(dx.begin(), dx.end(), 0.0);
        for (int i = 0; i < H; ++i) {
            double d = dh[i];
            dan[i] = d * (1.0 - sc.z[i]) * (1.0 - sc.n[i] * sc.n[i]);
            daz[i] = d * (sc.h_prev[i] - sc.n[i]) * sc.z[i] * (1.0 - sc.z[i]);
            dh_prev[i] = d * sc.z[i];
        }

        // candidate: an = Wn x + Un (r*h_prev) + bn
        std::fill(drh.begin(), drh.end(), 0.0);
        affine_backward(p[Block::GruUn].v, sc.rh.data(), dan.data(), H, H, grads[Block::GruUn],
                        nullptr, drh.data());
        affine_backward(p[Block::GruWn].v, &p[Block::Embed].v[static_cast<size_t>(sc.input_id) * E],
                        dan.data(), H, E, grads[Block::GruWn], &grads[Block::GruBn], dx.data());
        for (int i = 0; i < H; ++i) {
            dar[i] = drh[i] * sc.h_prev[i] * sc.r[i] * (1.0 - sc.r[i]);
            dh_prev[i] += drh[i] * sc.r[i];
        }

        // gates
        affine_backward(p[Block::GruUz].v, sc.h_prev.data(), daz.data(), H, H, grads[Block::GruUz],
                        nullptr, dh_prev.data());
        affine_backward(p[Block::GruWz].v, &p[Block::Embed].v[static_cast<size_t>(sc.input_id) * E],
                        daz.data(), H, E, grads[Block::GruWz], &grads[Block::GruBz], dx.data());
        affine_backward(p[Block::GruUr].v, sc.h_prev.data(), dar.data(), H, H, grads[Block::GruUr],
                        nullptr, dh_prev.data());
        affine_backward(p[Block::GruWr].v, &p[Block::Embed].v[static_cast<size_t>(sc.input_id) * E],
                        dar.data(), H, E, grads[Block::GruWr], &grads[Block::GruBr], dx.data());

        double* de = &grads[Block::Embed][static_cast<size_t>(sc.input_id) * E];
        for (int j = 0; j < E; ++j) de[j] += dx[j];
        dh = dh_prev;
    }

    // initial state: h0 = tanh(ProjW flat(grid) + ProjB)
    std::vector<double> dh0_pre(H);
    for (int i = 0; i < H; ++i) dh0_pre[i] = dh[i] * (1.0 - fc.enc.h0[i] * fc.enc.h0[i]);
    std::vector<double> dgrid(cfg.feat_len(), 0.0);
    affine_backward(p[Block::ProjW].v, fc.enc.grid.data(), dh0_pre.data(), H, cfg.feat_len(),
                    grads[Block::ProjW], &grads[Block::ProjB], dgrid.data());
    if (dgrid_out) *dgrid_out = dgrid;

    // conv2 (through its ReLU)
    std::vector<double> da2(dgrid.size());
    for (size_t i = 0; i < dgrid.size(); ++i) da2[i] = fc.enc.a2_pre[i] > 0.0 ? dgrid[i] : 0.0;
    std::vector<double> da1(fc.enc.a1.size(), 0.0);
    conv_backward(fc.enc.a1, cfg.conv1_ch, ModelConfig::mid, p[Block::Conv2W].v, cfg.conv2_ch,
                  ModelConfig::grid, ModelConfig::k2, ModelConfig::s2, ModelConfig::p2, da2,
                  grads[Block::Conv2W], grads[Block::Conv2B], &da1);

    // conv1 (input gradient not needed)
    std::vector<double> da1_pre(da1.size());
    for (size_t i = 0; i < da1.size(); ++i) da1_pre[i] = fc.enc.a1_pre[i] > 0.0 ? da1[i] : 0.0;
    conv_backward(fc.enc.input, 3, kImageSize, p[Block::Conv1W].v, cfg.conv1_ch, ModelConfig::mid,
                  ModelConfig::k1, ModelConfig::s1, ModelConfig::p1, da1_pre, grads[Block::Conv1W],
                  grads[Block::Conv1B], nullptr);
}

namespace {
constexpr char kCheckpointMagic[8] = {'C', 'B', 'C', 'K', 'P', 'T', '0', '1'};

template <typename T>
void write_raw(std::ofstream& f, const T& v) {
    f.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
void read_raw(std::ifstream& f, T& v) {
    f.read(reinterpret_cast<char*>(&v), sizeof(T));
    if (!f) throw IoError("checkpoint truncated");
}
}  // namespace

void save_checkpoint(const std::string& path, const ModelParams& p) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot write checkpoint: " + path);
    f.write(kCheckpointMagic, sizeof(kCheckpointMagic));
    write_raw(f, p.vocab_hash);
    int32_t dims[7] = {p.cfg.vocab_size, p.cfg.hidden,   p.cfg.embed, p.cfg.conv1_ch,
                       p.cfg.conv2_ch,   p.cfg.bos_id,   p.cfg.eos_id};
    f.write(reinterpret_cast<const char*>(dims), sizeof(dims));
    uint32_t n_blocks = static_cast<uint32_t>(p.blocks.size());
    write_raw(f, n_blocks);
    for (const auto& b : p.blocks) {
        uint32_t name_len = static_cast<uint32_t>(b.name.size());
        write_raw(f, name_len);
        f.write(b.name.data(), name_len);
        uint32_t ndim = static_cast<uint32_t>(b.shape.size());
        write_raw(f, ndim);
        for (int d : b.shape) {
            int32_t d32 = d;
            write_raw(f, d32);
        }
        f.write(reinterpret_cast<const char*>(b.v.data()), static_cast<std::streamsize>(b.v.size() * sizeof(double)));
    }
    if (!f) throw IoError("checkpoint write failed: " + path);
}

ModelParams load_checkpoint(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot open checkpoint: " + path);
    char magic[8];
    f.read(magic, 8);
    if (!f || std::memcmp(magic, kCheckpointMagic, 8) != 0)
        throw IoError("not a checkpoint file: " + path);
    ModelParams p;
    read_raw(f, p.vocab_hash);
    int32_t dims[7];
    f.read(reinterpret_cast<char*>(dims), sizeof(dims));
    if (!f) throw IoError("checkpoint truncated");
    p.cfg.vocab_size = dims[0];
    p.cfg.hidden = dims[1];
    p.cfg.embed = dims[2];
    p.cfg.conv1_ch = dims[3];
    p.cfg.conv2_ch = dims[4];
    p.cfg.bos_id = dims[5];
    p.cfg.eos_id = dims[6];
    p.cfg.validate();
    uint32_t n_blocks = 0;
    read_raw(f, n_blocks);
    if (n_blocks != static_cast<uint32_t>(kBlockCount))
        throw IoError("checkpoint block count mismatch in " + path);
    p.blocks.resize(n_blocks);
    for (uint32_t i = 0; i < n_blocks; ++i) {
        uint32_t name_len = 0;
        read_raw(f, name_len);
        if (name_len > 256) throw IoError("checkpoint corrupt (block name) in " + path);
        std::string name(name_len, '\0');
        f.read(name.data(), name_len);
        uint32_t ndim = 0;
        read_raw(f, ndim);
        if (ndim > 8) throw IoError("checkpoint corrupt (block rank) in " + path);
        std::vector<int> shape(ndim);
        size_t n = 1;
        for (uint32_t d = 0; d < ndim; ++d) {
            int32_t d32 = 0;
            read_raw(f, d32);
            shape[d] = d32;
            n *= static_cast<size_t>(d32);
        }
        std::vector<double> v(n);
        f.read(reinterpret_cast<char*>(v.data()), static_cast<std::streamsize>(n * sizeof(double)));
        if (!f) throw IoError("checkpoint truncated in block " + name);
        p.blocks[i] = ParamBlock{std::move(name), std::move(shape), std::move(v)};
        if (p.blocks[i].name != block_name(static_cast<Block>(i)))
            throw IoError("checkpoint block order mismatch: " + p.blocks[i].name);
    }
    return p;
}

ModelParams load_checkpoint(const std::string& path, uint64_t expected_vocab_hash) {
    ModelParams p = load_checkpoint(path);
    if (p.vocab_hash != expected_vocab_hash)
        throw IoError("checkpoint vocabulary hash mismatch: " + path);
    return p;
}

}  // namespace capbias
