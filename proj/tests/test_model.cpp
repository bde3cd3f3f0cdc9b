#include <doctest.h>

#include <algorithm>
#include <fstream>
#include <cmath>
#include <filesystem>
#include <random>

#include "drivelang/driving_language.hpp"
#include "drivelang/model.hpp"

using namespace dvl;

namespace {

ModelConfig tiny_config(int vocab = 40, int context = 64) {
    ModelConfig cfg;
    cfg.vocab = vocab;
    cfg.context = context;
    cfg.layers = 2;
    cfg.width = 32;
    cfg.heads = 4;
    cfg.ffn_hidden = ffn_hidden_from_mult(32, 8.0 / 3.0);
    cfg.token_dropout = 0.1;
    cfg.seed = 5;
    return cfg;
}

std::vector<uint32_t> random_tokens(int n, int vocab, std::mt19937_64& rng) {
    std::vector<uint32_t> out(n);
    for (auto& t : out) t = static_cast<uint32_t>(rng() % vocab);
    return out;
}

std::vector<int32_t> frame_positions(int n, int tpf) {
    std::vector<int32_t> out(n);
    for (int i = 0; i < n; ++i) out[i] = i / tpf;
    return out;
}

}  // namespace

TEST_SUITE("model") {

TEST_CASE("config validation rejects degenerate shapes") {
    ModelConfig cfg = tiny_config();
    cfg.width = 0;
    CHECK_THROWS_AS((void)Network<double>(cfg), InvalidArgument);
    cfg = tiny_config();
    cfg.width = 30;  // not divisible by 4 heads
    CHECK_THROWS_AS((void)Network<double>(cfg), InvalidArgument);
    cfg = tiny_config();
    cfg.width = 48;
    cfg.heads = 3;  // head_dim 16, fine
    CHECK_NOTHROW((void)Network<double>(cfg));
    cfg.width = 6;
    cfg.heads = 2;  // head_dim 3, odd
    CHECK_THROWS_AS((void)Network<double>(cfg), InvalidArgument);
}

TEST_CASE("ffn hidden rounding") {
    CHECK(ffn_hidden_from_mult(128, 8.0 / 3.0) == 344);
    CHECK(ffn_hidden_from_mult(32, 8.0 / 3.0) == 88);
    CHECK(ffn_hidden_from_mult(4, 0.1) == 8);
}

TEST_CASE("init is deterministic given the seed") {
    const ModelConfig cfg = tiny_config();
    const Network<double> a = Network<double>::init(cfg);
    const Network<double> b = Network<double>::init(cfg);
    auto ta = a.params().tensors();
    auto tb = b.params().tensors();
    for (size_t i = 0; i < ta.size(); ++i) CHECK(*ta[i] == *tb[i]);

    ModelConfig cfg2 = cfg;
    cfg2.seed = 6;
    const Network<double> c = Network<double>::init(cfg2);
    CHECK(a.params().embedding != c.params().embedding);
}

TEST_CASE("apply_rotary at position zero is the identity") {
    std::vector<double> v = {1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0};
    const std::vector<double> orig = v;
    apply_rotary_row(v.data(), 8, 2, 4, 0, 10000.0);
    CHECK(v == orig);
}

TEST_CASE("apply_rotary preserves norms") {
    std::mt19937_64 rng(3);
    for (int it = 0; it < 20; ++it) {
        std::vector<double> v(16);
        for (double& x : v) x = uniform_range(rng, -1, 1);
        double n0 = 0;
        for (double x : v) n0 += x * x;
        apply_rotary_row(v.data(), 16, 2, 8, static_cast<int32_t>(rng() % 1000), 10000.0);
        double n1 = 0;
        for (double x : v) n1 += x * x;
        CHECK(std::abs(std::sqrt(n1) - std::sqrt(n0)) < 1e-12);
    }
}

TEST_CASE("apply_rotary rejects odd head_dim") {
    std::vector<double> v(6);
    CHECK_THROWS_AS(apply_rotary_row(v.data(), 6, 2, 3, 1, 10000.0), InvalidArgument);
}

TEST_CASE("rotary dot products depend only on relative position") {
    std::mt19937_64 rng(17);
    const int hd = 8;
    for (int it = 0; it < 25; ++it) {
        std::vector<double> q(hd), k(hd);
        for (double& x : q) x = uniform_range(rng, -1, 1);
        for (double& x : k) x = uniform_range(rng, -1, 1);
        const int m = static_cast<int>(rng() % 50);
        const int n = static_cast<int>(rng() % 50);
        auto dot_at = [&](int pm, int pn) {
            std::vector<double> qr = q, kr = k;
            apply_rotary_row(qr.data(), hd, 1, hd, pm, 10000.0);
            apply_rotary_row(kr.data(), hd, 1, hd, pn, 10000.0);
            double acc = 0;
            for (int i = 0; i < hd; ++i) acc += qr[i] * kr[i];
            return acc;
        };
        CHECK(std::abs(dot_at(m, n) - dot_at(m + 5, n + 5)) < 1e-9);
    }
}

TEST_CASE("forward shape and overlong stream rejection") {
    const ModelConfig cfg = tiny_config(40, 8);
    const Network<double> net = Network<double>::init(cfg);
    const std::vector<uint32_t> one = {7};
    const MatX<double> logits = net.forward(one, {0}, false, 0);
    CHECK(logits.rows() == 1);
    CHECK(logits.cols() == 40);
    std::mt19937_64 rng(1);
    const auto toks = random_tokens(9, 40, rng);
    CHECK_THROWS_AS(net.forward(toks, frame_positions(9, 4), false, 0), InvalidArgument);
}

TEST_CASE("causality: prefix logits are bitwise invariant to suffix edits") {
    const ModelConfig cfg = tiny_config();
    const Network<float> net = Network<float>::init(cfg);
    std::mt19937_64 rng(23);
    for (int it = 0; it < 20; ++it) {
        const int n = 8 + static_cast<int>(rng() % 24);
        auto toks = random_tokens(n, cfg.vocab, rng);
        const auto pos = frame_positions(n, 5);
        const MatX<float> base = net.forward(toks, pos, false, 0);
        const int t = 1 + static_cast<int>(rng() % (n - 1));
        auto perturbed = toks;
        for (int i = t; i < n; ++i)
            perturbed[i] = static_cast<uint32_t>((perturbed[i] + 1 + rng() % 7) % cfg.vocab);
        const MatX<float> after = net.forward(perturbed, pos, false, 0);
        for (int r = 0; r < t; ++r)
            for (int c = 0; c < cfg.vocab; ++c) CHECK(base(r, c) == after(r, c));
    }
}

TEST_CASE("eval-mode forward is bitwise reproducible") {
    const ModelConfig cfg = tiny_config();
    const Network<float> net = Network<float>::init(cfg);
    std::mt19937_64 rng(29);
    for (int it = 0; it < 100; ++it) {
        const int n = 4 + static_cast<int>(rng() % 30);
        const auto toks = random_tokens(n, cfg.vocab, rng);
        const auto pos = frame_positions(n, 3);
        const MatX<float> a = net.forward(toks, pos, false, 0);
        const MatX<float> b = net.forward(toks, pos, false, 0);
        CHECK(a == b);
    }
}

TEST_CASE("token dropout is deterministic given the seed and only active in train mode") {
    ModelConfig cfg = tiny_config();
    cfg.token_dropout = 0.5;
    const Network<float> net = Network<float>::init(cfg);
    std::mt19937_64 rng(31);
    const auto toks = random_tokens(20, cfg.vocab, rng);
    const auto pos = frame_positions(20, 5);
    const MatX<float> a = net.forward(toks, pos, true, 99);
    const MatX<float> b = net.forward(toks, pos, true, 99);
    CHECK(a == b);
    const MatX<float> c = net.forward(toks, pos, true, 100);
    CHECK(a != c);
    const MatX<float> eval1 = net.forward(toks, pos, false, 99);
    const MatX<float> eval2 = net.forward(toks, pos, false, 12345);
    CHECK(eval1 == eval2);
}

TEST_CASE("uniform logits give exactly ln(vocab)") {
    const MatX<double> logits = MatX<double>::Zero(6, 304);
    std::vector<uint32_t> targets(6, 17);
    CHECK(std::abs(Network<double>::nll_loss(logits, targets) - std::log(304.0)) < 1e-10);
}

TEST_CASE("one-hot logits give near-zero loss") {
    MatX<double> logits = MatX<double>::Zero(4, 32);
    std::vector<uint32_t> targets = {3, 9, 0, 31};
    for (int t = 0; t < 4; ++t) logits(t, targets[t]) = 80.0;
    CHECK(Network<double>::nll_loss(logits, targets) < 1e-10);
}

TEST_CASE("nll matches a naive softmax-then-log oracle") {
    std::mt19937_64 rng(37);
    MatX<double> logits(5, 23);
    for (int i = 0; i < 5; ++i)
        for (int j = 0; j < 23; ++j) logits(i, j) = uniform_range(rng, -4, 4);
    std::vector<uint32_t> targets(5);
    for (auto& t : targets) t = static_cast<uint32_t>(rng() % 23);
    double expect = 0;
    for (int i = 0; i < 5; ++i) {
        long double denom = 0;
        for (int j = 0; j < 23; ++j) denom += std::exp(static_cast<long double>(logits(i, j)));
        const long double p = std::exp(static_cast<long double>(logits(i, targets[i]))) / denom;
        expect += static_cast<double>(-std::log(p));
    }
    expect /= 5;
    CHECK(std::abs(Network<double>::nll_loss(logits, targets) - expect) < 1e-10);
}

TEST_CASE("nll rejects length mismatch") {
    const MatX<double> logits = MatX<double>::Zero(3, 8);
    CHECK_THROWS_AS(Network<double>::nll_loss(logits, {1, 2}), InvalidArgument);
}

TEST_CASE("initial loss on random tokens is close to ln(vocab)") {
    const ModelConfig cfg = tiny_config(304, 512);
    const Network<double> net = Network<double>::init(cfg);
    std::mt19937_64 rng(41);
    double total = 0;
    int count = 0;
    for (int it = 0; it < 4; ++it) {
        const auto toks = random_tokens(128, cfg.vocab, rng);
        const auto targets = random_tokens(128, cfg.vocab, rng);
        total += Network<double>::nll_loss(net.forward(toks, frame_positions(128, 19), false, 0),
                                           targets);
        ++count;
    }
    CHECK(std::abs(total / count - std::log(304.0)) < 0.15);
}

TEST_CASE("loss gradient rows sum to zero") {
    std::mt19937_64 rng(43);
    MatX<double> logits(4, 11);
    for (int i = 0; i < 4; ++i)
        for (int j = 0; j < 11; ++j) logits(i, j) = uniform_range(rng, -3, 3);
    std::vector<uint32_t> targets = {0, 5, 10, 3};
    const MatX<double> g = Network<double>::nll_grad(logits, targets);
    for (int i = 0; i < 4; ++i) CHECK(std::abs(g.row(i).sum()) < 1e-12);
}

TEST_CASE("analytic gradients match central finite differences") {
    ModelConfig cfg = tiny_config();
    cfg.token_dropout = 0.0;
    Network<double> net = Network<double>::init(cfg);
    std::mt19937_64 rng(47);
    const int n = 24;
    const auto toks = random_tokens(n, cfg.vocab, rng);
    const auto pos = frame_positions(n, 5);
    std::vector<uint32_t> targets(toks.begin() + 1, toks.end());
    const std::vector<uint32_t> inputs(toks.begin(), toks.end() - 1);
    const std::vector<int32_t> ipos(pos.begin(), pos.end() - 1);

    ModelParams<double> grads = ModelParams<double>::zeros_like(cfg);
    net.loss_and_grad(inputs, ipos, targets, false, 0, grads);

    auto p_tensors = net.params().tensors();
    auto g_tensors = grads.tensors();
    const double h = 1e-5;
    int checked = 0;
    for (size_t ti = 0; ti < p_tensors.size() && checked < 100; ++ti) {
        MatX<double>& P = *p_tensors[ti];
        const MatX<double>& G = *g_tensors[ti];
        const int probes = 2 + static_cast<int>(rng() % 3);
        for (int pr = 0; pr < probes && checked < 100; ++pr) {
            const Eigen::Index i = static_cast<Eigen::Index>(rng() % P.rows());
            const Eigen::Index j = static_cast<Eigen::Index>(rng() % P.cols());
            const double orig = P(i, j);
            P(i, j) = orig + h;
            const double lp = Network<double>::nll_loss(net.forward(inputs, ipos, false, 0), targets);
            P(i, j) = orig - h;
            const double lm = Network<double>::nll_loss(net.forward(inputs, ipos, false, 0), targets);
            P(i, j) = orig;
            const double fd = (lp - lm) / (2 * h);
            const double an = G(i, j);
            const double rel = std::abs(fd - an) / std::max({std::abs(fd), std::abs(an), 1e-8});
            CHECK(rel < 1e-4);
            ++checked;
        }
    }
    CHECK(checked == 100);
}

TEST_CASE("gradients flow through dropout masks") {
    ModelConfig cfg = tiny_config();
    cfg.token_dropout = 0.5;
    Network<double> net = Network<double>::init(cfg);
    std::mt19937_64 rng(53);
    const auto toks = random_tokens(16, cfg.vocab, rng);
    const auto targets = random_tokens(16, cfg.vocab, rng);
    ModelParams<double> grads = ModelParams<double>::zeros_like(cfg);
    const double loss = net.loss_and_grad(toks, frame_positions(16, 4), targets, true, 7, grads);
    CHECK(std::isfinite(loss));
    // embedding rows of tokens never seen must have zero gradient
    std::vector<bool> seen(cfg.vocab, false);
    for (uint32_t t : toks) seen[t] = true;
    for (int v = 0; v < cfg.vocab; ++v)
        if (!seen[v]) CHECK(grads.embedding.row(v).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("adamw: zero grads and zero decay leave params unchanged") {
    const ModelConfig cfg = tiny_config();
    Network<double> net = Network<double>::init(cfg);
    const MatX<double> before = net.params().embedding;
    ModelParams<double> grads = ModelParams<double>::zeros_like(cfg);
    AdamWState<double> st = AdamWState<double>::like(cfg);
    st.weight_decay = 0.0;
    adamw_step(net.params(), grads, st);
    CHECK(net.params().embedding == before);
    CHECK(st.step == 1);
}

TEST_CASE("adamw clips the global gradient norm") {
    const ModelConfig cfg = tiny_config();
    Network<double> net = Network<double>::init(cfg);
    ModelParams<double> grads = ModelParams<double>::zeros_like(cfg);
    grads.embedding.setConstant(1.0);
    AdamWState<double> st = AdamWState<double>::like(cfg);
    const double norm = adamw_step(net.params(), grads, st);
    CHECK(norm == doctest::Approx(grads.embedding.norm()));
    CHECK(norm > st.clip_norm);  // clip engaged; effective grad scaled to norm 1
}

TEST_CASE("adamw single scalar step matches the hand-computed update") {
    // one-parameter model stand-in: drive a 1x1 tensor through the same code
    ModelConfig cfg = tiny_config();
    Network<double> net(cfg);
    net.params().setZero();
    net.params().final_norm.setConstant(2.0);
    ModelParams<double> grads = ModelParams<double>::zeros_like(cfg);
    grads.final_norm.setConstant(0.5);  // norm over all grads = sqrt(32*0.25) > 1 -> clipped

    AdamWState<double> st = AdamWState<double>::like(cfg);
    st.lr = 1e-4;
    st.weight_decay = 5e-2;
    const double raw_norm = std::sqrt(32 * 0.25);
    const double scale = 1.0 / raw_norm;
    const double g = 0.5 * scale;
    const double m_hat = (0.1 * g) / (1 - 0.9);
    const double v_hat = (0.05 * g * g) / (1 - 0.95);
    const double expect = 2.0 - 1e-4 * (m_hat / (std::sqrt(v_hat) + 1e-8) + 5e-2 * 2.0);

    const double norm = adamw_step(net.params(), grads, st);
    CHECK(norm == doctest::Approx(raw_norm).epsilon(1e-12));
    CHECK(std::abs(net.params().final_norm(0, 0) - expect) < 1e-12);
}

TEST_CASE("adamw rejects non-finite gradients") {
    const ModelConfig cfg = tiny_config();
    Network<double> net = Network<double>::init(cfg);
    ModelParams<double> grads = ModelParams<double>::zeros_like(cfg);
    grads.wout(0, 0) = std::numeric_limits<double>::quiet_NaN();
    AdamWState<double> st = AdamWState<double>::like(cfg);
    CHECK_THROWS_AS(adamw_step(net.params(), grads, st), DivergedError);
}

TEST_CASE("checkpoint round trip preserves params, config and optimizer state") {
    ModelConfig cfg = tiny_config();
    cfg.action_posemb = false;
    Network<float> net = Network<float>::init(cfg);
    AdamWState<float> st = AdamWState<float>::like(cfg);
    st.step = 42;
    st.m.embedding.setConstant(0.25f);
    const std::string path =
        (std::filesystem::temp_directory_path() / "dvl_ckpt_test.dgck").string();
    save_checkpoint(path, cfg, net.params(), &st);
    const Checkpoint ck = load_checkpoint(path);
    CHECK(ck.cfg.vocab == cfg.vocab);
    CHECK(ck.cfg.action_posemb == false);
    CHECK(ck.cfg.ffn_hidden == cfg.ffn_hidden);
    CHECK(ck.net.params().embedding == net.params().embedding);
    REQUIRE(ck.opt.has_value());
    CHECK(ck.opt->step == 42);
    CHECK(ck.opt->m.embedding(0, 0) == 0.25f);
    std::filesystem::remove(path);
}

TEST_CASE("checkpoint loader rejects corrupted files") {
    const std::string path =
        (std::filesystem::temp_directory_path() / "dvl_ckpt_bad.dgck").string();
    {
        std::ofstream f(path, std::ios::binary);
        f << "NOPE";
    }
    CHECK_THROWS_AS(load_checkpoint(path), FormatError);
    std::filesystem::remove(path);
}

TEST_CASE("decode session matches full forward logits") {
    const ModelConfig cfg = tiny_config();
    const Network<double> net = Network<double>::init(cfg);
    std::mt19937_64 rng(61);
    const int n = 20;
    const auto toks = random_tokens(n, cfg.vocab, rng);
    const auto pos = frame_positions(n, 5);
    const MatX<double> full = net.forward(toks, pos, false, 0);
    DecodeSession<double> session(net);
    for (int t = 0; t < n; ++t) {
        const Eigen::RowVectorXd row = session.step(toks[t], pos[t]);
        for (int c = 0; c < cfg.vocab; ++c)
            CHECK(row(c) == doctest::Approx(full(t, c)).epsilon(1e-9));
    }
    CHECK(session.length() == n);
}

TEST_CASE("decode session enforces its capacity") {
    const ModelConfig cfg = tiny_config(40, 16);
    const Network<float> net = Network<float>::init(cfg);
    DecodeSession<float> session(net, 4);
    for (int t = 0; t < 4; ++t) session.step(1, 0);
    CHECK_THROWS_AS(session.step(1, 0), InvalidArgument);
    session.reset();
    CHECK_NOTHROW(session.step(1, 0));
}

TEST_CASE("training reduces loss below shuffled-target loss") {
    ModelConfig cfg = tiny_config(24, 40);
    cfg.layers = 1;
    cfg.token_dropout = 0.0;
    Network<double> net = Network<double>::init(cfg);
    std::mt19937_64 rng(67);
    const auto toks = random_tokens(33, cfg.vocab, rng);
    const std::vector<uint32_t> inputs(toks.begin(), toks.end() - 1);
    std::vector<uint32_t> targets(toks.begin() + 1, toks.end());
    const auto pos = frame_positions(32, 4);

    AdamWState<double> st = AdamWState<double>::like(cfg);
    st.lr = 3e-3;
    st.weight_decay = 0.0;
    ModelParams<double> grads = ModelParams<double>::zeros_like(cfg);
    for (int step = 0; step < 150; ++step) {
        grads.setZero();
        net.loss_and_grad(inputs, pos, targets, false, 0, grads);
        adamw_step(net.params(), grads, st);
    }
    const double trained =
        Network<double>::nll_loss(net.forward(inputs, pos, false, 0), targets);
    std::vector<uint32_t> shuffled = targets;
    std::shuffle(shuffled.begin(), shuffled.end(), rng);
    const double shuffled_loss =
        Network<double>::nll_loss(net.forward(inputs, pos, false, 0), shuffled);
    CHECK(trained < shuffled_loss);
}

}  // TEST_SUITE
