#include "drivelang/sampler.hpp"

#include <algorithm>
#include <cmath>

namespace dvl {

uint32_t sample_token(const Eigen::RowVectorXd& logits,
                      std::pair<uint32_t, uint32_t> allowed, const SamplerConfig& cfg,
                      std::mt19937_64& rng) {
    const auto [lo, hi] = allowed;
    require(lo < hi, "sample_token: empty allowed range");
    require(hi <= static_cast<uint32_t>(logits.size()), "sample_token: range exceeds vocab");
    require(cfg.greedy || cfg.temperature > 0.0, "sample_token: temperature must be > 0");
    require(cfg.top_k >= 1, "sample_token: top_k must be >= 1");

    if (cfg.greedy) {
        uint32_t arg = lo;
        double best = -std::numeric_limits<double>::infinity();
        bool any = false;
        for (uint32_t id = lo; id < hi; ++id) {
            const double l = logits(id);
            if (std::isfinite(l) && l > best) {  // strict: ties keep the lowest id
                best = l;
                arg = id;
                any = true;
            }
        }
        if (!any) throw DecodeError("sample_token: no finite logit in allowed range");
        return arg;
    }

    std::vector<uint32_t> cand;
    cand.reserve(hi - lo);
    for (uint32_t id = lo; id < hi; ++id)
        if (std::isfinite(logits(id))) cand.push_back(id);
    if (cand.empty()) throw DecodeError("sample_token: no finite logit in allowed range");

    const size_t k = std::min<size_t>(static_cast<size_t>(cfg.top_k), cand.size());
    auto by_logit = [&](uint32_t a, uint32_t b) {
        if (logits(a) != logits(b)) return logits(a) > logits(b);
        return a < b;
    };
    std::nth_element(cand.begin(), cand.begin() + (k - 1), cand.end(), by_logit);
    cand.resize(k);
    std::sort(cand.begin(), cand.end());  // walk the CDF in ascending id order

    double max_l = -std::numeric_limits<double>::infinity();
    for (uint32_t id : cand) max_l = std::max(max_l, logits(id));
    std::vector<double> w(k);
    double total = 0.0;
    for (size_t i = 0; i < k; ++i) {
        w[i] = std::exp((logits(cand[i]) - max_l) / cfg.temperature);
        total += w[i];
    }
    const double u = uniform01(rng) * total;
    double acc = 0.0;
    for (size_t i = 0; i < k; ++i) {
        acc += w[i];
        if (u < acc) return cand[i];
    }
    return cand.back();
}

Generator::Generator(const Network<float>& net, const VocabLayout& layout, int tokens_per_frame,
                     const SamplerConfig& sc, uint64_t rng_seed, int capacity)
    : net_(&net),
      layout_(layout),
      tpf_(tokens_per_frame),
      sc_(sc),
      session_(net, capacity),
      rng_(rng_seed) {
    require(tokens_per_frame >= 4, "generator: tokens_per_frame must be >= 4");
    require(layout.total() == net.config().vocab, "generator: layout/vocab mismatch");
}

void Generator::reset() {
    session_.reset();
    has_pending_ = false;
    fed_ = 0;
}

int32_t Generator::slot_position(int slot, int frame_index) const {
    const bool action_slot = slot >= tpf_ - 3;
    if (action_slot && !net_->config().action_posemb) return 0;
    return frame_index;
}

void Generator::prefill(const std::vector<uint32_t>& ids, int frame_of_first) {
    for (size_t i = 0; i < ids.size(); ++i) {
        const int slot = static_cast<int>((fed_) % tpf_);
        const int frame = frame_of_first + fed_ / tpf_;
        pending_logits_ = session_.step(ids[i], slot_position(slot, frame));
        ++fed_;
    }
    has_pending_ = fed_ > 0;
}

uint32_t Generator::next_token(int slot, int frame_index) {
    require(has_pending_, "generator: cannot sample with empty context");
    const auto range = allowed_range(slot, tpf_, layout_);
    const uint32_t tok = sample_token(pending_logits_, range, sc_, rng_);
    pending_logits_ = session_.step(tok, slot_position(slot, frame_index));
    ++fed_;
    return tok;
}

Frame Generator::generate_frame(int frame_index) {
    Frame f;
    const int grid_size = tpf_ - 3;
    f.grid.reserve(grid_size);
    for (int s = 0; s < grid_size; ++s) f.grid.push_back(next_token(s, frame_index));
    f.action.qx = static_cast<int>(next_token(grid_size, frame_index)) - layout_.offset_x();
    f.action.qy = static_cast<int>(next_token(grid_size + 1, frame_index)) - layout_.offset_y();
    f.action.qtheta =
        static_cast<int>(next_token(grid_size + 2, frame_index)) - layout_.offset_theta();
    return f;
}

ActionTokens Generator::generate_action(int frame_index) {
    const int grid_size = tpf_ - 3;
    ActionTokens a;
    a.qx = static_cast<int>(next_token(grid_size, frame_index)) - layout_.offset_x();
    a.qy = static_cast<int>(next_token(grid_size + 1, frame_index)) - layout_.offset_y();
    a.qtheta =
        static_cast<int>(next_token(grid_size + 2, frame_index)) - layout_.offset_theta();
    return a;
}

Frame generate_next_frame(const Network<float>& net, const VocabLayout& layout,
                          const DrivingSequence& context, const SamplerConfig& sc,
                          uint64_t seed) {
    require(!context.frames.empty(), "generate_next_frame: empty context");
    const int tpf = context.tokens_per_frame();
    Generator gen(net, layout, tpf, sc, seed);
    gen.prefill(serialize(context, layout), 0);
    return gen.generate_frame(context.size());
}

DrivingSequence long_rollout(const Network<float>& net, const VocabLayout& layout,
                             const DrivingSequence& seed_frames, const RolloutConfig& rc,
                             const SamplerConfig& sc, uint64_t seed) {
    require(rc.window_condition >= 1 && rc.window_generate >= 1 && rc.total_frames >= 1,
            "long_rollout: invalid rollout config");
    require(seed_frames.size() >= rc.window_condition,
            "long_rollout: need at least window_condition seed frames");
    const int tpf = seed_frames.tokens_per_frame();
    const int capacity = (rc.window_condition + rc.window_generate) * tpf;

    std::vector<Frame> all(seed_frames.frames.begin(), seed_frames.frames.end());
    const size_t n_seed = all.size();
    int produced = 0;
    int chunk_index = 0;
    while (produced < rc.total_frames) {
        const int chunk = std::min(rc.window_generate, rc.total_frames - produced);
        DrivingSequence window;
        window.frames.assign(all.end() - rc.window_condition, all.end());
        try {
            Generator gen(net, layout, tpf, sc, mix_seed(seed, chunk_index), capacity);
            gen.prefill(serialize(window, layout), 0);
            for (int f = 0; f < chunk; ++f)
                all.push_back(gen.generate_frame(rc.window_condition + f));
        } catch (const DecodeError& e) {
            throw DecodeError("long_rollout: chunk " + std::to_string(chunk_index) + ": " +
                              e.what());
        }
        produced += chunk;
        ++chunk_index;
    }
    DrivingSequence out;
    out.frames.assign(all.begin() + n_seed, all.end());
    return out;
}

PlanResult plan(const Network<float>& net, const VocabLayout& layout, const ActionCodec& codec,
                const DrivingSequence& history, int horizon, const SamplerConfig& sc,
                uint64_t seed) {
    require(!history.frames.empty(), "plan: empty history");
    require(horizon >= 1, "plan: horizon must be >= 1");
    const int tpf = history.tokens_per_frame();
    const int H = history.size();
    const int needed = (H + horizon - 1) * tpf;
    Generator gen(net, layout, tpf, sc, seed, std::max(net.config().context, needed));

    // Condition on the full history except the last frame's action tokens;
    // those are the first prediction (the motion out of the last history frame).
    std::vector<uint32_t> prompt = serialize(history, layout);
    prompt.resize(prompt.size() - 3);
    gen.prefill(prompt, 0);

    PlanResult out;
    out.actions.reserve(horizon);
    out.actions.push_back(decode_action(gen.generate_action(H - 1), codec));
    for (int j = 1; j < horizon; ++j) {
        const Frame f = gen.generate_frame(H - 1 + j);
        out.actions.push_back(decode_action(f.action, codec));
    }
    out.trajectory = integrate(out.actions);
    return out;
}

}  // namespace dvl
