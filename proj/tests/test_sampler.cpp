#include <doctest.h>

#include <cmath>
#include <map>
#include <random>

#include "drivelang/sampler.hpp"

using namespace dvl;

namespace {

ModelConfig small_model(int vocab, int context) {
    ModelConfig cfg;
    cfg.vocab = vocab;
    cfg.context = context;
    cfg.layers = 1;
    cfg.width = 32;
    cfg.heads = 2;
    cfg.ffn_hidden = 64;
    cfg.token_dropout = 0.0;
    cfg.seed = 9;
    return cfg;
}

DrivingSequence constant_sequence(int T, int grid_size, const VocabLayout& L) {
    DrivingSequence seq;
    seq.frames.resize(T);
    for (int t = 0; t < T; ++t) {
        for (int i = 0; i < grid_size; ++i)
            seq.frames[t].grid.push_back(static_cast<uint32_t>((i * 7) % L.D));
        seq.frames[t].action = {1, 2, 3};
    }
    return seq;
}

}  // namespace

TEST_SUITE("sampler") {

TEST_CASE("one-hot logit is drawn with probability one") {
    Eigen::RowVectorXd logits = Eigen::RowVectorXd::Constant(10, -1e30);
    logits(4) = 0.0;
    SamplerConfig cfg{1.0, 10, false, 0};
    std::mt19937_64 rng(1);
    for (int it = 0; it < 200; ++it)
        CHECK(sample_token(logits, {2, 8}, cfg, rng) == 4u);
}

TEST_CASE("greedy picks the argmax with lowest-id ties") {
    Eigen::RowVectorXd logits(6);
    logits << 0.0, 3.0, 3.0, 1.0, -2.0, 9.0;
    SamplerConfig cfg{1.0, 6, true, 0};
    std::mt19937_64 rng(2);
    CHECK(sample_token(logits, {0, 5}, cfg, rng) == 1u);  // id 5 masked out
    CHECK(sample_token(logits, {0, 6}, cfg, rng) == 5u);
}

TEST_CASE("masked ids are never sampled") {
    std::mt19937_64 rng(3);
    Eigen::RowVectorXd logits(12);
    for (int i = 0; i < 12; ++i) logits(i) = uniform_range(rng, -1, 5);
    SamplerConfig cfg{1.3, 12, false, 0};
    for (int it = 0; it < 20000; ++it) {
        const uint32_t id = sample_token(logits, {4, 9}, cfg, rng);
        CHECK(id >= 4u);
        CHECK(id < 9u);
    }
}

TEST_CASE("empirical distribution matches the masked softmax within 1% TV") {
    Eigen::RowVectorXd logits(6);
    logits << 99.0, 0.6, -0.3, 1.4, 0.1, 99.0;  // ids 0 and 5 are outside the range
    SamplerConfig cfg{1.0, 6, false, 0};
    std::mt19937_64 rng(7);
    std::map<uint32_t, int> counts;
    const int n = 100000;
    for (int it = 0; it < n; ++it) counts[sample_token(logits, {1, 5}, cfg, rng)]++;
    double denom = 0;
    for (int i = 1; i < 5; ++i) denom += std::exp(logits(i));
    double tv = 0;
    for (int i = 1; i < 5; ++i) {
        const double expect = std::exp(logits(i)) / denom;
        const double got = counts[static_cast<uint32_t>(i)] / static_cast<double>(n);
        tv += std::abs(expect - got);
    }
    CHECK(tv / 2 < 0.01);
}

TEST_CASE("top_k keeps only the k best logits") {
    Eigen::RowVectorXd logits(5);
    logits << 5.0, 4.0, 3.0, 2.0, 1.0;
    SamplerConfig cfg{1.0, 2, false, 0};
    std::mt19937_64 rng(11);
    for (int it = 0; it < 5000; ++it) {
        const uint32_t id = sample_token(logits, {0, 5}, cfg, rng);
        CHECK(id <= 1u);
    }
}

TEST_CASE("temperature sharpens toward the argmax") {
    Eigen::RowVectorXd logits(3);
    logits << 1.0, 0.0, -1.0;
    SamplerConfig cold{0.05, 3, false, 0};
    std::mt19937_64 rng(13);
    int hits = 0;
    for (int it = 0; it < 2000; ++it)
        if (sample_token(logits, {0, 3}, cold, rng) == 0u) ++hits;
    CHECK(hits > 1990);
}

TEST_CASE("all non-finite logits in range raise a decoding error") {
    Eigen::RowVectorXd logits = Eigen::RowVectorXd::Constant(4, std::nan(""));
    SamplerConfig cfg{1.0, 4, false, 0};
    std::mt19937_64 rng(17);
    CHECK_THROWS_AS(sample_token(logits, {0, 4}, cfg, rng), DecodeError);
    SamplerConfig greedy{1.0, 4, true, 0};
    CHECK_THROWS_AS(sample_token(logits, {0, 4}, greedy, rng), DecodeError);
}

TEST_CASE("invalid sampler arguments are rejected") {
    Eigen::RowVectorXd logits = Eigen::RowVectorXd::Zero(4);
    std::mt19937_64 rng(19);
    SamplerConfig cfg{0.0, 4, false, 0};
    CHECK_THROWS_AS(sample_token(logits, {0, 4}, cfg, rng), InvalidArgument);
    SamplerConfig k0{1.0, 0, false, 0};
    CHECK_THROWS_AS(sample_token(logits, {0, 4}, k0, rng), InvalidArgument);
    SamplerConfig ok{1.0, 4, false, 0};
    CHECK_THROWS_AS(sample_token(logits, {3, 3}, ok, rng), InvalidArgument);
}

TEST_CASE("generated frames always deserialize cleanly") {
    const VocabLayout L = make_layout(23, 5);
    const ModelConfig cfg = small_model(L.total(), 24 * 7);
    const Network<float> net = Network<float>::init(cfg);
    const DrivingSequence ctx = constant_sequence(2, 4, L);
    SamplerConfig sc{1.0, L.total(), false, 0};
    for (uint64_t seed = 0; seed < 8; ++seed) {
        const Frame f = generate_next_frame(net, L, ctx, sc, seed);
        CHECK(f.grid.size() == 4);
        for (uint32_t id : f.grid) CHECK(id < 23u);
        CHECK(f.action.qx >= 0);
        CHECK(f.action.qx < 5);
        CHECK(f.action.qy >= 0);
        CHECK(f.action.qy < 5);
        CHECK(f.action.qtheta >= 0);
        CHECK(f.action.qtheta < 5);
        DrivingSequence one;
        one.frames = {f};
        CHECK_NOTHROW(deserialize(serialize(one, L), L, 7));
    }
}

TEST_CASE("generate_next_frame rejects context overflow") {
    const VocabLayout L = make_layout(23, 5);
    const ModelConfig cfg = small_model(L.total(), 2 * 7);  // room for 2 frames only
    const Network<float> net = Network<float>::init(cfg);
    const DrivingSequence ctx = constant_sequence(2, 4, L);
    SamplerConfig sc{1.0, L.total(), false, 0};
    CHECK_THROWS_AS(generate_next_frame(net, L, ctx, sc, 1), InvalidArgument);
}

TEST_CASE("single-chunk rollout equals chained frame generation") {
    const VocabLayout L = make_layout(23, 5);
    const ModelConfig cfg = small_model(L.total(), 12 * 7);
    const Network<float> net = Network<float>::init(cfg);
    DrivingSequence seed_frames = constant_sequence(3, 4, L);
    RolloutConfig rc{4, 3, 4};
    SamplerConfig sc{1.0, L.total(), false, 0};
    const DrivingSequence out = long_rollout(net, L, seed_frames, rc, sc, 77);
    REQUIRE(out.size() == 4);

    Generator gen(net, L, 7, sc, mix_seed(77, 0), (3 + 4) * 7);
    gen.prefill(serialize(seed_frames, L), 0);
    for (int f = 0; f < 4; ++f) {
        const Frame expect = gen.generate_frame(3 + f);
        CHECK(expect.grid == out.frames[f].grid);
        CHECK(expect.action.qx == out.frames[f].action.qx);
        CHECK(expect.action.qy == out.frames[f].action.qy);
        CHECK(expect.action.qtheta == out.frames[f].action.qtheta);
    }
}

TEST_CASE("rollout chunking: 64 frames from 8 seeds in 16-frame chunks") {
    const VocabLayout L = make_layout(13, 4);
    const int tpf = 4 + 3;
    const ModelConfig cfg = small_model(L.total(), (8 + 16) * tpf);
    const Network<float> net = Network<float>::init(cfg);
    const DrivingSequence seeds = constant_sequence(8, 4, L);
    RolloutConfig rc{16, 8, 64};
    SamplerConfig sc{1.0, L.total(), false, 0};
    const DrivingSequence out = long_rollout(net, L, seeds, rc, sc, 3);
    CHECK(out.size() == 64);
    for (const Frame& f : out.frames) {
        for (uint32_t id : f.grid) CHECK(id < 13u);
        CHECK(f.action.qx < 4);
    }
    const DrivingSequence again = long_rollout(net, L, seeds, rc, sc, 3);
    for (int i = 0; i < 64; ++i) {
        CHECK(again.frames[i].grid == out.frames[i].grid);
        CHECK(again.frames[i].action.qtheta == out.frames[i].action.qtheta);
    }
}

TEST_CASE("rollout requires enough seed frames") {
    const VocabLayout L = make_layout(13, 4);
    const ModelConfig cfg = small_model(L.total(), 200);
    const Network<float> net = Network<float>::init(cfg);
    const DrivingSequence seeds = constant_sequence(2, 4, L);
    RolloutConfig rc{4, 3, 4};
    SamplerConfig sc{1.0, L.total(), false, 0};
    CHECK_THROWS_AS(long_rollout(net, L, seeds, rc, sc, 1), InvalidArgument);
}

TEST_CASE("plan produces horizon actions and a consistent trajectory") {
    const VocabLayout L = make_layout(13, 4);
    const ModelConfig cfg = small_model(L.total(), 20 * 7);
    const Network<float> net = Network<float>::init(cfg);
    ActionCodec codec;
    codec.bounds_x = {0.0, 2.0};
    codec.bounds_y = {-0.5, 0.5};
    codec.bounds_theta = {-0.2, 0.2};
    codec.bins = 4;
    const DrivingSequence hist = constant_sequence(4, 4, L);
    SamplerConfig sc{1.0, L.total(), true, 0};
    const PlanResult pr = plan(net, L, codec, hist, 8, sc, 5);
    REQUIRE(pr.actions.size() == 8);
    REQUIRE(pr.trajectory.size() == 8);
    const Trajectory re = integrate(pr.actions);
    for (int k = 0; k < 8; ++k)
        CHECK((re[k].m - pr.trajectory[k].m).cwiseAbs().maxCoeff() < 1e-12);
    for (const RelativeAction& a : pr.actions) {
        CHECK(a.dx >= 0.0);
        CHECK(a.dx <= 2.0);
    }
    // greedy planning is deterministic
    const PlanResult pr2 = plan(net, L, codec, hist, 8, sc, 999);
    for (int k = 0; k < 8; ++k) CHECK(pr2.actions[k].dx == pr.actions[k].dx);

    const PlanResult one = plan(net, L, codec, hist, 1, sc, 5);
    CHECK(one.actions.size() == 1);
    CHECK(one.trajectory.size() == 1);
    const Transform2 expect = pose_from_action(one.actions[0]);
    CHECK((one.trajectory[0].m - expect.m).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("plan never conditions on the last history action") {
    const VocabLayout L = make_layout(13, 4);
    const ModelConfig cfg = small_model(L.total(), 20 * 7);
    const Network<float> net = Network<float>::init(cfg);
    ActionCodec codec;
    codec.bounds_x = {0.0, 2.0};
    codec.bounds_y = {-0.5, 0.5};
    codec.bounds_theta = {-0.2, 0.2};
    codec.bins = 4;
    DrivingSequence hist = constant_sequence(4, 4, L);
    SamplerConfig sc{1.0, L.total(), true, 0};
    const PlanResult a = plan(net, L, codec, hist, 4, sc, 5);
    hist.frames.back().action = {3, 3, 3};  // withheld slot; must not matter
    const PlanResult b = plan(net, L, codec, hist, 4, sc, 5);
    for (int k = 0; k < 4; ++k) {
        CHECK(a.actions[k].dx == b.actions[k].dx);
        CHECK(a.actions[k].dtheta == b.actions[k].dtheta);
    }
}

}  // TEST_SUITE
