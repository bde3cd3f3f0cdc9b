#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include "drivelang/common.hpp"

namespace dvl {

// Decoder-only causal transformer sized for the unified driving vocabulary.
// Pre-norm blocks with RMS normalization and a SiLU-gated feed-forward;
// frame-wise rotary positions are supplied by the caller per token.
struct ModelConfig {
    int vocab = 0;
    int context = 0;
    int layers = 0;
    int width = 0;
    int heads = 0;
    int ffn_hidden = 0;
    double token_dropout = 0.1;
    bool action_posemb = true;
    uint64_t seed = 1;
    double rope_base = 10000.0;

    int head_dim() const { return heads > 0 ? width / heads : 0; }
    void validate() const;
};

// ffn hidden width from a multiplier, rounded to the nearest multiple of 8.
int ffn_hidden_from_mult(int width, double mult);

template <typename S>
using MatX = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

template <typename S>
struct LayerParams {
    MatX<S> attn_norm;  // 1 x width
    MatX<S> wq, wk, wv, wo;  // width x width, y = x * W
    MatX<S> ffn_norm;   // 1 x width
    MatX<S> wg, wu;     // width x hidden
    MatX<S> wd;         // hidden x width
};

template <typename S>
struct ModelParams {
    MatX<S> embedding;  // vocab x width
    std::vector<LayerParams<S>> layers;
    MatX<S> final_norm;  // 1 x width
    MatX<S> wout;        // width x vocab

    // Fixed traversal order; also the checkpoint serialization order.
    std::vector<MatX<S>*> tensors();
    std::vector<const MatX<S>*> tensors() const;
    size_t count() const;
    void setZero();
    static ModelParams zeros_like(const ModelConfig& cfg);
};

template <typename S>
struct ForwardCache {
    struct Layer {
        MatX<S> x_in, a_normed, q, k, v, att_concat, x_mid, b_normed;
        MatX<S> inv_rms1, inv_rms2;     // T x 1
        std::vector<MatX<S>> probs;     // per head, T x T
        MatX<S> gate, up, fused;        // T x hidden
    };
    MatX<S> x0;
    std::vector<uint8_t> dropped;
    std::vector<Layer> layers;
    MatX<S> x_final, y_final;
    MatX<S> inv_rms_f;
};

template <typename S>
class Network {
public:
    explicit Network(const ModelConfig& cfg);

    // Deterministic seeded initialization (cfg.seed).
    static Network init(const ModelConfig& cfg);

    const ModelConfig& config() const { return cfg_; }
    ModelParams<S>& params() { return params_; }
    const ModelParams<S>& params() const { return params_; }

    // Full-sequence forward; logits row t depends only on tokens <= t.
    // Token dropout is active only in train_mode and is deterministic given
    // dropout_seed. Throws on streams longer than the configured context.
    MatX<S> forward(const std::vector<uint32_t>& tokens, const std::vector<int32_t>& pos,
                    bool train_mode, uint64_t dropout_seed) const;

    // Mean next-token cross entropy; accumulated in double regardless of S.
    static double nll_loss(const MatX<S>& logits, const std::vector<uint32_t>& targets);

    // d(mean nll)/d(logits); each row sums to zero.
    static MatX<S> nll_grad(const MatX<S>& logits, const std::vector<uint32_t>& targets);

    // Forward + exact analytic backward. Gradients are accumulated (+=) into
    // grads, which must be shaped like the parameters. Returns the loss.
    double loss_and_grad(const std::vector<uint32_t>& tokens, const std::vector<int32_t>& pos,
                         const std::vector<uint32_t>& targets, bool train_mode,
                         uint64_t dropout_seed, ModelParams<S>& grads) const;

private:
    MatX<S> forward_impl(const std::vector<uint32_t>& tokens, const std::vector<int32_t>& pos,
                         bool train_mode, uint64_t dropout_seed, ForwardCache<S>* cache) const;

    ModelConfig cfg_;
    ModelParams<S> params_;
};

// Rotate consecutive dimension pairs of every head slice of a 1 x width row
// by angles position * base^(-2i/head_dim). Norm preserving.
template <typename S>
void apply_rotary_row(S* row, int width, int heads, int head_dim, int32_t position, double base);

// Incremental decoding with a rotated-K/V cache. step() feeds one token and
// returns the logits row for the next-token distribution.
template <typename S>
class DecodeSession {
public:
    DecodeSession(const Network<S>& net, int capacity = -1);

    void reset();
    int length() const { return len_; }
    int capacity() const { return capacity_; }

    Eigen::RowVectorXd step(uint32_t token, int32_t position);

private:
    const Network<S>* net_;
    int capacity_ = 0;
    int len_ = 0;
    std::vector<MatX<S>> k_cache_, v_cache_;  // per layer, capacity x width
};

// AdamW with global-norm gradient clipping and decoupled weight decay.
template <typename S>
struct AdamWState {
    double lr = 1e-4;
    double beta1 = 0.9;
    double beta2 = 0.95;
    double eps = 1e-8;
    double weight_decay = 5e-2;
    double clip_norm = 1.0;
    int64_t step = 0;
    ModelParams<S> m, v;

    static AdamWState like(const ModelConfig& cfg);
};

// One optimizer step; returns the pre-clip global gradient norm.
// Throws DivergedError on non-finite gradients.
template <typename S>
double adamw_step(ModelParams<S>& params, const ModelParams<S>& grads, AdamWState<S>& st);

// Checkpoint IO; parameters and moments stored as float32 little-endian in
// tensors() order behind a "DGCK" header.
void save_checkpoint(const std::string& path, const ModelConfig& cfg,
                     const ModelParams<float>& params, const AdamWState<float>* opt);

struct Checkpoint {
    ModelConfig cfg;
    Network<float> net;
    std::optional<AdamWState<float>> opt;
};
Checkpoint load_checkpoint(const std::string& path);

extern template class Network<float>;
extern template class Network<double>;
extern template class DecodeSession<float>;
extern template class DecodeSession<double>;
extern template struct ModelParams<float>;
extern template struct ModelParams<double>;
extern template struct AdamWState<float>;
extern template struct AdamWState<double>;
extern template double adamw_step<float>(ModelParams<float>&, const ModelParams<float>&, AdamWState<float>&);
extern template double adamw_step<double>(ModelParams<double>&, const ModelParams<double>&, AdamWState<double>&);
extern template void apply_rotary_row<float>(float*, int, int, int, int32_t, double);
extern template void apply_rotary_row<double>(double*, int, int, int, int32_t, double);

}  // namespace dvl
