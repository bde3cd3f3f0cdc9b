#include "drivelang/train.hpp"

#include <algorithm>
#include <chrono>
#include <numeric>
#include <random>
#include <thread>

#include "drivelang/driving_language.hpp"

namespace dvl {

TrainingData::TrainingData(const std::vector<RawSequence>& raws, const Codebook& cb,
                           const ActionCodec& codec, const VocabLayout& layout,
                           bool action_posemb) {
    require(!raws.empty(), "training data: empty corpus");
    const size_t T = raws.front().frames.size();
    normal_.reserve(raws.size());
    flipped_.reserve(raws.size());
    for (const RawSequence& raw : raws) {
        require(raw.frames.size() == T, "training data: inconsistent sequence lengths");
        require(raw.actions.size() == T, "training data: action count mismatch");
        DrivingSequence seq, seq_f;
        seq.frames.resize(T);
        seq_f.frames.resize(T);
        for (size_t t = 0; t < T; ++t) {
            seq.frames[t].grid = encode_image(raw.frames[t], cb).indices;
            seq.frames[t].action = encode_action(raw.actions[t], codec);
            seq_f.frames[t].grid = encode_image(hflip(raw.frames[t]), cb).indices;
            seq_f.frames[t].action = encode_action(flip_action(raw.actions[t]), codec);
        }
        normal_.push_back(serialize(seq, layout));
        flipped_.push_back(serialize(seq_f, layout));
        if (tpf_ == 0) tpf_ = seq.tokens_per_frame();
    }
    positions_ = positions_ex(static_cast<int>(T), tpf_, action_posemb);
}

TrainingData::Sample TrainingData::sample(size_t index, bool flipped) const {
    require(index < normal_.size(), "training data: index out of range");
    const std::vector<uint32_t>& ids = flipped ? flipped_[index] : normal_[index];
    Sample s;
    s.tokens.assign(ids.begin(), ids.end() - 1);
    s.targets.assign(ids.begin() + 1, ids.end());
    s.positions.assign(positions_.begin(), positions_.end() - 1);
    return s;
}

double corpus_nll(const Network<float>& net, const TrainingData& data) {
    double total = 0.0;
    for (size_t i = 0; i < data.size(); ++i) {
        const TrainingData::Sample s = data.sample(i, false);
        const MatX<float> logits = net.forward(s.tokens, s.positions, false, 0);
        total += Network<float>::nll_loss(logits, s.targets);
    }
    return total / static_cast<double>(data.size());
}

TrainResult train_model(Network<float>& net, const TrainingData& data, const TrainConfig& tc,
                        uint64_t train_seed, AdamWState<float>* opt_state,
                        const std::function<void(const TrainLogEntry&)>& on_log) {
    require(tc.steps >= 1 && tc.batch >= 1 && tc.threads >= 1, "train: invalid options");
    const auto t0 = std::chrono::steady_clock::now();
    const ModelConfig& cfg = net.config();

    AdamWState<float> local_state;
    AdamWState<float>* st = opt_state;
    if (!st) {
        local_state = AdamWState<float>::like(cfg);
        st = &local_state;
    } else if (st->m.layers.empty()) {
        *st = AdamWState<float>::like(cfg);
    }
    st->lr = tc.lr;
    st->beta1 = tc.beta1;
    st->beta2 = tc.beta2;
    st->weight_decay = tc.weight_decay;
    st->clip_norm = tc.clip_norm;

    const int B = tc.batch;
    std::vector<ModelParams<float>> slot_grads;
    slot_grads.reserve(B);
    for (int b = 0; b < B; ++b) slot_grads.push_back(ModelParams<float>::zeros_like(cfg));
    ModelParams<float> grad_mean = ModelParams<float>::zeros_like(cfg);
    std::vector<double> slot_loss(B, 0.0);

    std::mt19937_64 order_rng(mix_seed(train_seed, 0x0d0e));
    std::mt19937_64 aug_rng(mix_seed(train_seed, 0xf11b));
    std::vector<size_t> order(data.size());
    std::iota(order.begin(), order.end(), 0);
    size_t cursor = order.size();  // trigger shuffle on first use

    TrainResult result;
    for (int step = 0; step < tc.steps; ++step) {
        // Pick the batch and augmentation flags before any parallel work so
        // the random streams never depend on the thread count.
        std::vector<size_t> batch_idx(B);
        std::vector<uint8_t> flips(B);
        std::vector<uint64_t> drop_seeds(B);
        for (int b = 0; b < B; ++b) {
            if (cursor >= order.size()) {
                std::shuffle(order.begin(), order.end(), order_rng);
                cursor = 0;
            }
            batch_idx[b] = order[cursor++];
            flips[b] = uniform01(aug_rng) < tc.flip_prob ? 1 : 0;
            drop_seeds[b] = mix_seed(train_seed ^ 0xd20f07ULL,
                                     static_cast<uint64_t>(step) * B + b);
        }

        const int workers = std::min(tc.threads, B);
        auto run_slots = [&](int w) {
            for (int b = w; b < B; b += workers) {
                slot_grads[b].setZero();
                const TrainingData::Sample s = data.sample(batch_idx[b], flips[b] != 0);
                slot_loss[b] = net.loss_and_grad(s.tokens, s.positions, s.targets, true,
                                                 drop_seeds[b], slot_grads[b]);
            }
        };
        if (workers == 1) {
            run_slots(0);
        } else {
            std::vector<std::thread> pool;
            pool.reserve(workers);
            for (int w = 0; w < workers; ++w) pool.emplace_back(run_slots, w);
            for (auto& t : pool) t.join();
        }

        // Fixed-order reduction: slot 0, 1, ..., B-1.
        grad_mean.setZero();
        const float inv_b = 1.0f / static_cast<float>(B);
        auto acc = grad_mean.tensors();
        for (int b = 0; b < B; ++b) {
            auto src = slot_grads[b].tensors();
            for (size_t i = 0; i < acc.size(); ++i) *acc[i] += *src[i];
        }
        for (auto* t : acc) *t *= inv_b;

        double loss = 0.0;
        for (int b = 0; b < B; ++b) loss += slot_loss[b];
        loss /= B;

        const double gnorm = adamw_step(net.params(), grad_mean, *st);

        const bool is_log_step =
            tc.log_every > 0 && ((step + 1) % tc.log_every == 0 || step + 1 == tc.steps);
        const bool is_eval_step =
            tc.eval_every > 0 && ((step + 1) % tc.eval_every == 0 || step + 1 == tc.steps);
        if (is_log_step || is_eval_step) {
            TrainLogEntry e;
            e.step = step + 1;
            e.loss = loss;
            e.grad_norm = gnorm;
            if (is_eval_step) e.eval_nll = corpus_nll(net, data);
            result.log.push_back(e);
            if (on_log) on_log(e);
        }
    }
    result.final_eval_nll =
        result.log.empty() || result.log.back().eval_nll < 0 ? corpus_nll(net, data)
                                                             : result.log.back().eval_nll;
    result.wall_seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    return result;
}

}  // namespace dvl
