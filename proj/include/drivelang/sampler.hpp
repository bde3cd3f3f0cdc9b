#pragma once

#include <random>
#include <utility>

#include "drivelang/driving_language.hpp"
#include "drivelang/model.hpp"

namespace dvl {

struct SamplerConfig {
    double temperature = 1.0;
    int top_k = 2000;
    bool greedy = false;
    uint64_t seed = 0;
};

struct RolloutConfig {
    int window_generate = 16;   // frames emitted per chunk
    int window_condition = 8;   // context frames carried between chunks
    int total_frames = 64;      // generated frames (seed frames excluded)
};

// Vocabulary-masked temperature/top-k sampling over one logits row. Ids
// outside [allowed.first, allowed.second) get probability exactly zero;
// top_k is applied after masking; ties broken by the lowest id.
uint32_t sample_token(const Eigen::RowVectorXd& logits,
                      std::pair<uint32_t, uint32_t> allowed, const SamplerConfig& cfg,
                      std::mt19937_64& rng);

// Incremental guided decoder: owns a KV-cache session and a private random
// stream. Independent generators never share state, so scenario-parallel
// sampling cannot change any single rollout.
class Generator {
public:
    Generator(const Network<float>& net, const VocabLayout& layout, int tokens_per_frame,
              const SamplerConfig& sc, uint64_t rng_seed, int capacity = -1);

    void reset();
    // Feed known tokens; frame_of_first is the frame index of the first fed
    // token's frame (tokens must start on a frame boundary).
    void prefill(const std::vector<uint32_t>& ids, int frame_of_first);
    // Sample the next token for the given slot of the given frame.
    uint32_t next_token(int slot, int frame_index);
    // Generate one full slot-masked frame at the given frame position.
    Frame generate_frame(int frame_index);
    // Generate only the 3 action slots of the frame whose image tokens were
    // already fed (used by plan()).
    ActionTokens generate_action(int frame_index);

    int tokens_fed() const { return fed_; }

private:
    int32_t slot_position(int slot, int frame_index) const;

    const Network<float>* net_;
    VocabLayout layout_;
    int tpf_;
    SamplerConfig sc_;
    DecodeSession<float> session_;
    std::mt19937_64 rng_;
    Eigen::RowVectorXd pending_logits_;
    bool has_pending_ = false;
    int fed_ = 0;
};

// Chain generate_frame from a fully-known context (must end on a frame boundary).
Frame generate_next_frame(const Network<float>& net, const VocabLayout& layout,
                          const DrivingSequence& context, const SamplerConfig& sc,
                          uint64_t seed);

// Sliding-window long generation: repeatedly condition on the last
// window_condition frames and emit window_generate frames until total_frames
// are produced. Returns only the generated frames.
DrivingSequence long_rollout(const Network<float>& net, const VocabLayout& layout,
                             const DrivingSequence& seed_frames, const RolloutConfig& rc,
                             const SamplerConfig& sc, uint64_t seed);

struct PlanResult {
    std::vector<RelativeAction> actions;  // horizon decoded actions
    Trajectory trajectory;                // poses relative to the last history frame
};

// Predict `horizon` future actions from an observation/action history. The
// last history frame's action tokens are never conditioned on (they are the
// first thing predicted). Future frame images are generated along the way.
PlanResult plan(const Network<float>& net, const VocabLayout& layout, const ActionCodec& codec,
                const DrivingSequence& history, int horizon, const SamplerConfig& sc,
                uint64_t seed);

}  // namespace dvl
