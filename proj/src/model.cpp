#include "drivelang/model.hpp"

#include <algorithm>
#include <cstring>
#include <fstream>
#include <random>

namespace dvl {

namespace {

constexpr double kRmsEps = 1e-6;
constexpr uint32_t kCheckpointVersion = 1;

template <typename Rng>
double normal01(Rng& rng) {
    // Box-Muller, one value per draw; avoids distribution implementation drift.
    double u1 = uniform01(rng);
    if (u1 < 1e-300) u1 = 1e-300;
    const double u2 = uniform01(rng);
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
}

// cos/sin per (position, pair) for all positions up to max_pos.
template <typename S>
struct RopeTable {
    int half = 0;
    std::vector<S> cs;  // (max_pos + 1) * half * 2, interleaved cos,sin

    const S* row(int32_t pos) const { return cs.data() + static_cast<size_t>(pos) * half * 2; }
};

template <typename S>
RopeTable<S> build_rope(int head_dim, double base, int32_t max_pos) {
    RopeTable<S> t;
    t.half = head_dim / 2;
    t.cs.resize(static_cast<size_t>(max_pos + 1) * t.half * 2);
    for (int32_t p = 0; p <= max_pos; ++p) {
        S* dst = t.cs.data() + static_cast<size_t>(p) * t.half * 2;
        for (int i = 0; i < t.half; ++i) {
            const double freq = std::pow(base, -2.0 * i / head_dim);
            const double angle = static_cast<double>(p) * freq;
            dst[2 * i] = static_cast<S>(std::cos(angle));
            dst[2 * i + 1] = static_cast<S>(std::sin(angle));
        }
    }
    return t;
}

// Rotate all heads of one row; sign=-1 applies the inverse rotation (backward).
template <typename S>
void rope_row(S* row, int heads, int head_dim, const S* cs, int sign) {
    const int half = head_dim / 2;
    for (int h = 0; h < heads; ++h) {
        S* v = row + h * head_dim;
        for (int i = 0; i < half; ++i) {
            const S c = cs[2 * i];
            const S s = static_cast<S>(sign) * cs[2 * i + 1];
            const S v0 = v[2 * i];
            const S v1 = v[2 * i + 1];
            v[2 * i] = v0 * c - v1 * s;
            v[2 * i + 1] = v0 * s + v1 * c;
        }
    }
}

template <typename S>
void rmsnorm_forward(const MatX<S>& x, const MatX<S>& gain, MatX<S>& out, MatX<S>& inv_rms) {
    const auto T = x.rows();
    const auto C = x.cols();
    out.resize(T, C);
    inv_rms.resize(T, 1);
    for (Eigen::Index t = 0; t < T; ++t) {
        const S ms = x.row(t).squaredNorm() / static_cast<S>(C);
        const S inv = static_cast<S>(1) / std::sqrt(ms + static_cast<S>(kRmsEps));
        inv_rms(t, 0) = inv;
        out.row(t) = (x.row(t) * inv).cwiseProduct(gain.row(0));
    }
}

// Backward of y = (x / rms(x)) .* gain. Adds into dgain, writes dx.
template <typename S>
void rmsnorm_backward(const MatX<S>& x, const MatX<S>& gain, const MatX<S>& inv_rms,
                      const MatX<S>& dy, MatX<S>& dx, MatX<S>& dgain) {
    const auto T = x.rows();
    const auto C = x.cols();
    dx.resize(T, C);
    for (Eigen::Index t = 0; t < T; ++t) {
        const S inv = inv_rms(t, 0);
        const auto xn = x.row(t) * inv;
        dgain.row(0) += dy.row(t).cwiseProduct(xn);
        const auto u = dy.row(t).cwiseProduct(gain.row(0));
        const S dot = u.cwiseProduct(xn).sum() / static_cast<S>(C);
        dx.row(t) = inv * (u - xn * dot);
    }
}

// In-place causal row softmax; entries past the diagonal are zeroed.
template <typename S>
void causal_softmax_rows(MatX<S>& scores) {
    const auto T = scores.rows();
    for (Eigen::Index i = 0; i < T; ++i) {
        auto live = scores.row(i).head(i + 1);
        const S m = live.maxCoeff();
        live = (live.array() - m).exp().matrix();
        const S sum = live.sum();
        live /= sum;
        if (i + 1 < scores.cols()) scores.row(i).tail(scores.cols() - i - 1).setZero();
    }
}

}  // namespace

void ModelConfig::validate() const {
    require(vocab >= 2, "model: vocab must be >= 2");
    require(context >= 1, "model: context must be >= 1");
    require(layers >= 1, "model: layers must be >= 1");
    require(width >= 2, "model: width must be >= 2");
    require(heads >= 1, "model: heads must be >= 1");
    require(width % heads == 0, "model: width must be divisible by heads");
    require((width / heads) % 2 == 0, "model: head_dim must be even");
    require(ffn_hidden >= 1, "model: ffn_hidden must be >= 1");
    require(token_dropout >= 0.0 && token_dropout < 1.0, "model: token_dropout must be in [0, 1)");
    require(rope_base > 1.0, "model: rope_base must be > 1");
}

int ffn_hidden_from_mult(int width, double mult) {
    require(width >= 1 && mult > 0.0, "ffn_hidden_from_mult: bad arguments");
    const int h = static_cast<int>(std::lround(width * mult / 8.0)) * 8;
    return std::max(h, 8);
}

template <typename S>
std::vector<MatX<S>*> ModelParams<S>::tensors() {
    std::vector<MatX<S>*> out;
    out.push_back(&embedding);
    for (auto& l : layers) {
        out.push_back(&l.attn_norm);
        out.push_back(&l.wq);
        out.push_back(&l.wk);
        out.push_back(&l.wv);
        out.push_back(&l.wo);
        out.push_back(&l.ffn_norm);
        out.push_back(&l.wg);
        out.push_back(&l.wu);
        out.push_back(&l.wd);
    }
    out.push_back(&final_norm);
    out.push_back(&wout);
    return out;
}

template <typename S>
std::vector<const MatX<S>*> ModelParams<S>::tensors() const {
    auto mut = const_cast<ModelParams<S>*>(this)->tensors();
    return std::vector<const MatX<S>*>(mut.begin(), mut.end());
}

template <typename S>
size_t ModelParams<S>::count() const {
    size_t n = 0;
    for (const auto* t : tensors()) n += static_cast<size_t>(t->size());
    return n;
}

template <typename S>
void ModelParams<S>::setZero() {
    for (auto* t : tensors()) t->setZero();
}

template <typename S>
ModelParams<S> ModelParams<S>::zeros_like(const ModelConfig& cfg) {
    ModelParams<S> p;
    p.embedding = MatX<S>::Zero(cfg.vocab, cfg.width);
    p.layers.resize(cfg.layers);
    for (auto& l : p.layers) {
        l.attn_norm = MatX<S>::Zero(1, cfg.width);
        l.wq = MatX<S>::Zero(cfg.width, cfg.width);
        l.wk = MatX<S>::Zero(cfg.width, cfg.width);
        l.wv = MatX<S>::Zero(cfg.width, cfg.width);
        l.wo = MatX<S>::Zero(cfg.width, cfg.width);
        l.ffn_norm = MatX<S>::Zero(1, cfg.width);
        l.wg = MatX<S>::Zero(cfg.width, cfg.ffn_hidden);
        l.wu = MatX<S>::Zero(cfg.width, cfg.ffn_hidden);
        l.wd = MatX<S>::Zero(cfg.ffn_hidden, cfg.width);
    }
    p.final_norm = MatX<S>::Zero(1, cfg.width);
    p.wout = MatX<S>::Zero(cfg.width, cfg.vocab);
    return p;
}

template <typename S>
Network<S>::Network(const ModelConfig& cfg) : cfg_(cfg) {
    cfg_.validate();
    params_ = ModelParams<S>::zeros_like(cfg_);
}

template <typename S>
Network<S> Network<S>::init(const ModelConfig& cfg) {
    Network net(cfg);
    std::mt19937_64 rng(cfg.seed);
    const double std_dev = 0.02;
    auto fill_normal = [&](MatX<S>& m) {
        for (Eigen::Index i = 0; i < m.rows(); ++i)
            for (Eigen::Index j = 0; j < m.cols(); ++j)
                m(i, j) = static_cast<S>(normal01(rng) * std_dev);
    };
    fill_normal(net.params_.embedding);
    for (auto& l : net.params_.layers) {
        l.attn_norm.setOnes();
        fill_normal(l.wq);
        fill_normal(l.wk);
        fill_normal(l.wv);
        fill_normal(l.wo);
        l.ffn_norm.setOnes();
        fill_normal(l.wg);
        fill_normal(l.wu);
        fill_normal(l.wd);
    }
    net.params_.final_norm.setOnes();
    fill_normal(net.params_.wout);
    return net;
}

template <typename S>
MatX<S> Network<S>::forward(const std::vector<uint32_t>& tokens, const std::vector<int32_t>& pos,
                            bool train_mode, uint64_t dropout_seed) const {
    return forward_impl(tokens, pos, train_mode, dropout_seed, nullptr);
}

template <typename S>
MatX<S> Network<S>::forward_impl(const std::vector<uint32_t>& tokens,
                                 const std::vector<int32_t>& pos, bool train_mode,
                                 uint64_t dropout_seed, ForwardCache<S>* cache) const {
    const auto T = static_cast<Eigen::Index>(tokens.size());
    require(T >= 1, "forward: empty stream");
    require(T <= static_cast<Eigen::Index>(cfg_.context),
            "forward: stream length " + std::to_string(T) + " exceeds context " +
                std::to_string(cfg_.context));
    require(pos.size() == tokens.size(), "forward: positions length mismatch");
    const int C = cfg_.width;
    const int H = cfg_.heads;
    const int hd = cfg_.head_dim();
    const S inv_sqrt_hd = static_cast<S>(1.0 / std::sqrt(static_cast<double>(hd)));

    int32_t max_pos = 0;
    for (size_t i = 0; i < tokens.size(); ++i) {
        require(tokens[i] < static_cast<uint32_t>(cfg_.vocab), "forward: token id out of vocab");
        require(pos[i] >= 0, "forward: negative position");
        max_pos = std::max(max_pos, pos[i]);
    }
    const RopeTable<S> rope = build_rope<S>(hd, cfg_.rope_base, max_pos);

    std::vector<uint8_t> dropped(tokens.size(), 0);
    if (train_mode && cfg_.token_dropout > 0.0) {
        std::mt19937_64 rng(dropout_seed);
        for (size_t t = 0; t < tokens.size(); ++t)
            dropped[t] = uniform01(rng) < cfg_.token_dropout ? 1 : 0;
    }

    MatX<S> x(T, C);
    for (Eigen::Index t = 0; t < T; ++t) {
        if (dropped[static_cast<size_t>(t)])
            x.row(t).setZero();
        else
            x.row(t) = params_.embedding.row(tokens[static_cast<size_t>(t)]);
    }
    if (cache) {
        cache->x0 = x;
        cache->dropped = dropped;
        cache->layers.resize(params_.layers.size());
    }

    MatX<S> scores(T, T);
    for (size_t li = 0; li < params_.layers.size(); ++li) {
        const LayerParams<S>& L = params_.layers[li];
        typename ForwardCache<S>::Layer* lc = cache ? &cache->layers[li] : nullptr;
        if (lc) lc->x_in = x;

        MatX<S> a, inv_rms1;
        rmsnorm_forward(x, L.attn_norm, a, inv_rms1);
        MatX<S> q = a * L.wq;
        MatX<S> k = a * L.wk;
        MatX<S> v = a * L.wv;
        for (Eigen::Index t = 0; t < T; ++t) {
            const S* cs = rope.row(pos[static_cast<size_t>(t)]);
            rope_row(q.row(t).data(), H, hd, cs, +1);
            rope_row(k.row(t).data(), H, hd, cs, +1);
        }

        MatX<S> att(T, C);
        if (lc) lc->probs.resize(H);
        for (int h = 0; h < H; ++h) {
            const auto q_h = q.middleCols(h * hd, hd);
            const auto k_h = k.middleCols(h * hd, hd);
            const auto v_h = v.middleCols(h * hd, hd);
            scores.noalias() = q_h * k_h.transpose();
            scores *= inv_sqrt_hd;
            causal_softmax_rows(scores);
            att.middleCols(h * hd, hd).noalias() = scores * v_h;
            if (lc) lc->probs[h] = scores;
        }
        if (lc) {
            lc->a_normed = a;
            lc->inv_rms1 = inv_rms1;
            lc->q = q;
            lc->k = k;
            lc->v = v;
            lc->att_concat = att;
        }
        x.noalias() += att * L.wo;
        if (lc) lc->x_mid = x;

        MatX<S> b, inv_rms2;
        rmsnorm_forward(x, L.ffn_norm, b, inv_rms2);
        MatX<S> gate = b * L.wg;
        MatX<S> up = b * L.wu;
        // silu(gate) .* up
        MatX<S> fused = ((gate.array() / (S(1) + (-gate.array()).exp())) * up.array()).matrix();
        x.noalias() += fused * L.wd;
        if (lc) {
            lc->b_normed = std::move(b);
            lc->inv_rms2 = std::move(inv_rms2);
            lc->gate = std::move(gate);
            lc->up = std::move(up);
            lc->fused = std::move(fused);
        }
    }

    MatX<S> y, inv_rms_f;
    rmsnorm_forward(x, params_.final_norm, y, inv_rms_f);
    if (cache) {
        cache->x_final = std::move(x);
        cache->y_final = y;
        cache->inv_rms_f = std::move(inv_rms_f);
    }
    MatX<S> logits = y * params_.wout;
    return logits;
}

template <typename S>
double Network<S>::nll_loss(const MatX<S>& logits, const std::vector<uint32_t>& targets) {
    require(static_cast<size_t>(logits.rows()) == targets.size(),
            "nll_loss: logits/targets length mismatch");
    require(!targets.empty(), "nll_loss: empty targets");
    double total = 0.0;
    for (Eigen::Index t = 0; t < logits.rows(); ++t) {
        require(targets[static_cast<size_t>(t)] < static_cast<uint32_t>(logits.cols()),
                "nll_loss: target out of vocab");
        const double m = static_cast<double>(logits.row(t).maxCoeff());
        double sum = 0.0;
        for (Eigen::Index j = 0; j < logits.cols(); ++j)
            sum += std::exp(static_cast<double>(logits(t, j)) - m);
        const double lse = m + std::log(sum);
        total += lse - static_cast<double>(logits(t, targets[static_cast<size_t>(t)]));
    }
    return total / static_cast<double>(logits.rows());
}

template <typename S>
MatX<S> Network<S>::nll_grad(const MatX<S>& logits, const std::vector<uint32_t>& targets) {
    require(static_cast<size_t>(logits.rows()) == targets.size(),
            "nll_grad: logits/targets length mismatch");
    MatX<S> d(logits.rows(), logits.cols());
    const S inv_t = static_cast<S>(1.0 / static_cast<double>(logits.rows()));
    for (Eigen::Index t = 0; t < logits.rows(); ++t) {
        const S m = logits.row(t).maxCoeff();
        d.row(t) = (logits.row(t).array() - m).exp();
        d.row(t) /= d.row(t).sum();
        d(t, targets[static_cast<size_t>(t)]) -= S(1);
        d.row(t) *= inv_t;
    }
    return d;
}

template <typename S>
double Network<S>::loss_and_grad(const std::vector<uint32_t>& tokens,
                                 const std::vector<int32_t>& pos,
                                 const std::vector<uint32_t>& targets, bool train_mode,
                                 uint64_t dropout_seed, ModelParams<S>& grads) const {
    ForwardCache<S> cache;
    const MatX<S> logits = forward_impl(tokens, pos, train_mode, dropout_seed, &cache);
    require(targets.size() == tokens.size(), "backward: targets length mismatch");
    require(grads.layers.size() == params_.layers.size(), "backward: gradient shape mismatch");
    const double loss = nll_loss(logits, targets);

    const auto T = static_cast<Eigen::Index>(tokens.size());
    const int C = cfg_.width;
    const int H = cfg_.heads;
    const int hd = cfg_.head_dim();
    const S inv_sqrt_hd = static_cast<S>(1.0 / std::sqrt(static_cast<double>(hd)));
    int32_t max_pos = 0;
    for (int32_t p : pos) max_pos = std::max(max_pos, p);
    const RopeTable<S> rope = build_rope<S>(hd, cfg_.rope_base, max_pos);

    // Head: logits = y_final * wout.
    const MatX<S> dlogits = nll_grad(logits, targets);
    grads.wout.noalias() += cache.y_final.transpose() * dlogits;
    MatX<S> dy = dlogits * params_.wout.transpose();

    MatX<S> dx;
    rmsnorm_backward(cache.x_final, params_.final_norm, cache.inv_rms_f, dy, dx, grads.final_norm);

    for (int li = static_cast<int>(params_.layers.size()) - 1; li >= 0; --li) {
        const LayerParams<S>& L = params_.layers[li];
        LayerParams<S>& G = grads.layers[li];
        const auto& lc = cache.layers[li];

        // FFN block backward; dx is the gradient at the block output.
        MatX<S> dfused = dx * L.wd.transpose();
        G.wd.noalias() += lc.fused.transpose() * dx;
        MatX<S> sig = (S(1) / (S(1) + (-lc.gate.array()).exp())).matrix();
        MatX<S> dup = (dfused.array() * (lc.gate.array() * sig.array())).matrix();
        MatX<S> dgate = (dfused.array() * lc.up.array() *
                         (sig.array() * (S(1) + lc.gate.array() * (S(1) - sig.array()))))
                            .matrix();
        G.wg.noalias() += lc.b_normed.transpose() * dgate;
        G.wu.noalias() += lc.b_normed.transpose() * dup;
        MatX<S> db = dgate * L.wg.transpose();
        db.noalias() += dup * L.wu.transpose();
        MatX<S> dx_norm;
        rmsnorm_backward(lc.x_mid, L.ffn_norm, lc.inv_rms2, db, dx_norm, G.ffn_norm);
        dx += dx_norm;

        // Attention block backward.
        MatX<S> datt = dx * L.wo.transpose();
        G.wo.noalias() += lc.att_concat.transpose() * dx;
        MatX<S> dq(T, C), dk(T, C), dv(T, C);
        for (int h = 0; h < H; ++h) {
            const auto& P = lc.probs[h];
            const auto datt_h = datt.middleCols(h * hd, hd);
            const auto v_h = lc.v.middleCols(h * hd, hd);
            MatX<S> dP = datt_h * v_h.transpose();
            dv.middleCols(h * hd, hd).noalias() = P.transpose() * datt_h;
            // softmax backward per row: dS = P .* (dP - rowsum(dP .* P))
            MatX<S> dS(T, T);
            for (Eigen::Index i = 0; i < T; ++i) {
                const S dot = dP.row(i).cwiseProduct(P.row(i)).sum();
                dS.row(i) = (P.row(i).array() * (dP.row(i).array() - dot)).matrix();
            }
            dS *= inv_sqrt_hd;
            dq.middleCols(h * hd, hd).noalias() = dS * lc.k.middleCols(h * hd, hd);
            dk.middleCols(h * hd, hd).noalias() = dS.transpose() * lc.q.middleCols(h * hd, hd);
        }
        for (Eigen::Index t = 0; t < T; ++t) {
            const S* cs = rope.row(pos[static_cast<size_t>(t)]);
            rope_row(dq.row(t).data(), H, hd, cs, -1);
            rope_row(dk.row(t).data(), H, hd, cs, -1);
        }
        G.wq.noalias() += lc.a_normed.transpose() * dq;
        G.wk.noalias() += lc.a_normed.transpose() * dk;
        G.wv.noalias() += lc.a_normed.transpose() * dv;
        MatX<S> da = dq * L.wq.transpose();
        da.noalias() += dk * L.wk.transpose();
        da.noalias() += dv * L.wv.transpose();
        rmsnorm_backward(lc.x_in, L.attn_norm, lc.inv_rms1, da, dx_norm, G.attn_norm);
        dx += dx_norm;
    }

    for (Eigen::Index t = 0; t < T; ++t) {
        if (!cache.dropped[static_cast<size_t>(t)])
            grads.embedding.row(tokens[static_cast<size_t>(t)]) += dx.row(t);
    }
    return loss;
}

template <typename S>
void apply_rotary_row(S* row, int width, int heads, int head_dim, int32_t position, double base) {
    require(head_dim % 2 == 0, "apply_rotary: head_dim must be even");
    require(heads * head_dim == width, "apply_rotary: width/head mismatch");
    require(position >= 0, "apply_rotary: negative position");
    const RopeTable<S> rope = build_rope<S>(head_dim, base, position);
    rope_row(row, heads, head_dim, rope.row(position), +1);
}

template <typename S>
DecodeSession<S>::DecodeSession(const Network<S>& net, int capacity) : net_(&net) {
    capacity_ = capacity > 0 ? capacity : net.config().context;
    const ModelConfig& cfg = net.config();
    k_cache_.assign(cfg.layers, MatX<S>::Zero(capacity_, cfg.width));
    v_cache_.assign(cfg.layers, MatX<S>::Zero(capacity_, cfg.width));
}

template <typename S>
void DecodeSession<S>::reset() {
    len_ = 0;
}

template <typename S>
Eigen::RowVectorXd DecodeSession<S>::step(uint32_t token, int32_t position) {
    const ModelConfig& cfg = net_->config();
    require(len_ < capacity_, "decode: context capacity exceeded");
    require(token < static_cast<uint32_t>(cfg.vocab), "decode: token id out of vocab");
    require(position >= 0, "decode: negative position");
    const int C = cfg.width;
    const int H = cfg.heads;
    const int hd = cfg.head_dim();
    const S inv_sqrt_hd = static_cast<S>(1.0 / std::sqrt(static_cast<double>(hd)));
    const RopeTable<S> rope = build_rope<S>(hd, cfg.rope_base, position);
    const S* cs = rope.row(position);
    const ModelParams<S>& P = net_->params();

    MatX<S> x = P.embedding.row(token);
    MatX<S> a, inv_rms;
    for (size_t li = 0; li < P.layers.size(); ++li) {
        const LayerParams<S>& L = P.layers[li];
        rmsnorm_forward(x, L.attn_norm, a, inv_rms);
        MatX<S> q = a * L.wq;
        MatX<S> k = a * L.wk;
        const MatX<S> v = a * L.wv;
        rope_row(q.row(0).data(), H, hd, cs, +1);
        rope_row(k.row(0).data(), H, hd, cs, +1);
        k_cache_[li].row(len_) = k.row(0);
        v_cache_[li].row(len_) = v.row(0);

        MatX<S> att(1, C);
        const int n = len_ + 1;
        for (int h = 0; h < H; ++h) {
            const auto k_h = k_cache_[li].block(0, h * hd, n, hd);
            const auto v_h = v_cache_[li].block(0, h * hd, n, hd);
            Eigen::Matrix<S, 1, Eigen::Dynamic> sc = q.row(0).segment(h * hd, hd) * k_h.transpose();
            sc *= inv_sqrt_hd;
            const S m = sc.maxCoeff();
            sc = (sc.array() - m).exp();
            sc /= sc.sum();
            att.row(0).segment(h * hd, hd).noalias() = sc * v_h;
        }
        x.noalias() += att * L.wo;

        MatX<S> b, inv_rms2;
        rmsnorm_forward(x, L.ffn_norm, b, inv_rms2);
        MatX<S> gate = b * L.wg;
        MatX<S> up = b * L.wu;
        MatX<S> fused = (gate.array() / (S(1) + (-gate.array()).exp())) * up.array();
        x.noalias() += fused * L.wd;
    }
    MatX<S> y, inv_rms_f;
    rmsnorm_forward(x, P.final_norm, y, inv_rms_f);
    MatX<S> logits = y * P.wout;
    ++len_;
    return logits.row(0).template cast<double>();
}

template <typename S>
AdamWState<S> AdamWState<S>::like(const ModelConfig& cfg) {
    AdamWState st;
    st.m = ModelParams<S>::zeros_like(cfg);
    st.v = ModelParams<S>::zeros_like(cfg);
    return st;
}

template <typename S>
double adamw_step(ModelParams<S>& params, const ModelParams<S>& grads, AdamWState<S>& st) {
    auto p = params.tensors();
    auto g = grads.tensors();
    auto m = st.m.tensors();
    auto v = st.v.tensors();
    require(p.size() == g.size() && p.size() == m.size() && p.size() == v.size(),
            "adamw: tensor list size mismatch");

    double norm_sq = 0.0;
    for (const auto* gt : g) norm_sq += static_cast<double>(gt->template cast<double>().squaredNorm());
    if (!std::isfinite(norm_sq)) throw DivergedError("adamw: non-finite gradient norm");
    const double norm = std::sqrt(norm_sq);
    const double scale =
        (st.clip_norm > 0.0 && norm > st.clip_norm) ? st.clip_norm / norm : 1.0;

    st.step += 1;
    const double bc1 = 1.0 - std::pow(st.beta1, static_cast<double>(st.step));
    const double bc2 = 1.0 - std::pow(st.beta2, static_cast<double>(st.step));
    const S b1 = static_cast<S>(st.beta1);
    const S b2 = static_cast<S>(st.beta2);
    const S one_m_b1 = static_cast<S>(1.0 - st.beta1);
    const S one_m_b2 = static_cast<S>(1.0 - st.beta2);
    const S sc = static_cast<S>(scale);
    const S lr = static_cast<S>(st.lr);
    const S inv_bc1 = static_cast<S>(1.0 / bc1);
    const S inv_bc2_sqrt = static_cast<S>(1.0 / std::sqrt(bc2));
    const S eps = static_cast<S>(st.eps);
    const S wd = static_cast<S>(st.weight_decay);
    for (size_t i = 0; i < p.size(); ++i) {
        require(p[i]->rows() == g[i]->rows() && p[i]->cols() == g[i]->cols(),
                "adamw: parameter/gradient shape mismatch");
        auto gs = g[i]->array() * sc;
        m[i]->array() = b1 * m[i]->array() + one_m_b1 * gs;
        v[i]->array() = b2 * v[i]->array() + one_m_b2 * gs.square();
        p[i]->array() -= lr * ((m[i]->array() * inv_bc1) /
                               ((v[i]->array().sqrt() * inv_bc2_sqrt) + eps) +
                               wd * p[i]->array());
    }
    return norm;
}

namespace {

void write_config(std::ofstream& f, const ModelConfig& cfg) {
    const uint32_t ints[6] = {static_cast<uint32_t>(cfg.vocab),  static_cast<uint32_t>(cfg.context),
                              static_cast<uint32_t>(cfg.layers), static_cast<uint32_t>(cfg.width),
                              static_cast<uint32_t>(cfg.heads),  static_cast<uint32_t>(cfg.ffn_hidden)};
    f.write(reinterpret_cast<const char*>(ints), sizeof(ints));
    f.write(reinterpret_cast<const char*>(&cfg.token_dropout), 8);
    f.write(reinterpret_cast<const char*>(&cfg.rope_base), 8);
    f.write(reinterpret_cast<const char*>(&cfg.seed), 8);
    const uint8_t ap = cfg.action_posemb ? 1 : 0;
    f.write(reinterpret_cast<const char*>(&ap), 1);
}

ModelConfig read_config(std::ifstream& f) {
    uint32_t ints[6];
    f.read(reinterpret_cast<char*>(ints), sizeof(ints));
    ModelConfig cfg;
    cfg.vocab = static_cast<int>(ints[0]);
    cfg.context = static_cast<int>(ints[1]);
    cfg.layers = static_cast<int>(ints[2]);
    cfg.width = static_cast<int>(ints[3]);
    cfg.heads = static_cast<int>(ints[4]);
    cfg.ffn_hidden = static_cast<int>(ints[5]);
    f.read(reinterpret_cast<char*>(&cfg.token_dropout), 8);
    f.read(reinterpret_cast<char*>(&cfg.rope_base), 8);
    f.read(reinterpret_cast<char*>(&cfg.seed), 8);
    uint8_t ap = 1;
    f.read(reinterpret_cast<char*>(&ap), 1);
    cfg.action_posemb = ap != 0;
    return cfg;
}

void write_tensors(std::ofstream& f, const std::vector<const MatX<float>*>& ts) {
    for (const auto* t : ts)
        f.write(reinterpret_cast<const char*>(t->data()),
                static_cast<std::streamsize>(t->size() * sizeof(float)));
}

void read_tensors(std::ifstream& f, const std::vector<MatX<float>*>& ts) {
    for (auto* t : ts)
        f.read(reinterpret_cast<char*>(t->data()),
               static_cast<std::streamsize>(t->size() * sizeof(float)));
}

}  // namespace

void save_checkpoint(const std::string& path, const ModelConfig& cfg,
                     const ModelParams<float>& params, const AdamWState<float>* opt) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw IoError("checkpoint: cannot open for write: " + path);
    f.write("DGCK", 4);
    f.write(reinterpret_cast<const char*>(&kCheckpointVersion), 4);
    write_config(f, cfg);
    const uint8_t has_opt = opt ? 1 : 0;
    f.write(reinterpret_cast<const char*>(&has_opt), 1);
    write_tensors(f, params.tensors());
    if (opt) {
        f.write(reinterpret_cast<const char*>(&opt->step), 8);
        const double hp[6] = {opt->lr, opt->beta1, opt->beta2, opt->eps, opt->weight_decay,
                              opt->clip_norm};
        f.write(reinterpret_cast<const char*>(hp), sizeof(hp));
        write_tensors(f, opt->m.tensors());
        write_tensors(f, opt->v.tensors());
    }
    if (!f) throw IoError("checkpoint: write failed: " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw IoError("checkpoint: cannot open: " + path);
    char magic[4];
    f.read(magic, 4);
    if (!f || std::memcmp(magic, "DGCK", 4) != 0)
        throw FormatError("checkpoint: bad magic: " + path);
    uint32_t version = 0;
    f.read(reinterpret_cast<char*>(&version), 4);
    if (version != kCheckpointVersion) throw FormatError("checkpoint: unsupported version");
    const ModelConfig cfg = read_config(f);
    if (!f) throw FormatError("checkpoint: truncated header: " + path);
    try {
        cfg.validate();
    } catch (const Error& e) {
        throw FormatError(std::string("checkpoint: invalid config: ") + e.what());
    }
    uint8_t has_opt = 0;
    f.read(reinterpret_cast<char*>(&has_opt), 1);
    Checkpoint ck{cfg, Network<float>(cfg), std::nullopt};
    read_tensors(f, ck.net.params().tensors());
    if (has_opt) {
        AdamWState<float> st = AdamWState<float>::like(cfg);
        f.read(reinterpret_cast<char*>(&st.step), 8);
        double hp[6];
        f.read(reinterpret_cast<char*>(hp), sizeof(hp));
        st.lr = hp[0];
        st.beta1 = hp[1];
        st.beta2 = hp[2];
        st.eps = hp[3];
        st.weight_decay = hp[4];
        st.clip_norm = hp[5];
        read_tensors(f, st.m.tensors());
        read_tensors(f, st.v.tensors());
        ck.opt = std::move(st);
    }
    if (!f) throw FormatError("checkpoint: truncated file: " + path);
    return ck;
}

template struct ModelParams<float>;
template struct ModelParams<double>;
template class Network<float>;
template class Network<double>;
template class DecodeSession<float>;
template class DecodeSession<double>;
template struct AdamWState<float>;
template struct AdamWState<double>;
template double adamw_step<float>(ModelParams<float>&, const ModelParams<float>&,
                                  AdamWState<float>&);
template double adamw_step<double>(ModelParams<double>&, const ModelParams<double>&,
                                   AdamWState<double>&);
template void apply_rotary_row<float>(float*, int, int, int, int32_t, double);
template void apply_rotary_row<double>(double*, int, int, int, int32_t, double);

}  // namespace dvl
