#pragma once

#include <cstdint>
#include <utility>
#include <vector>

#include "drivelang/action_codec.hpp"
#include "drivelang/obs_tokenizer.hpp"

namespace dvl {

// Unified vocabulary: image ids in [0, D), then one M-sized range per action
// component in order (x, y, theta). Total size D + 3M.
struct VocabLayout {
    int D = 0;
    int M = 0;

    int total() const { return D + 3 * M; }
    int offset_x() const { return D; }
    int offset_y() const { return D + M; }
    int offset_theta() const { return D + 2 * M; }
};

VocabLayout make_layout(int D, int M);

// One frame: flattened row-major observation token grid plus the action
// tokens for the motion into the next frame.
struct Frame {
    std::vector<uint32_t> grid;
    ActionTokens action;
};

struct DrivingSequence {
    std::vector<Frame> frames;

    int tokens_per_frame() const {
        return frames.empty() ? 0 : static_cast<int>(frames.front().grid.size()) + 3;
    }
    int size() const { return static_cast<int>(frames.size()); }
};

// Flat global-id stream with companion per-token position indices.
struct TokenStream {
    std::vector<uint32_t> ids;
    std::vector<int32_t> positions;

    size_t size() const { return ids.size(); }
};

// Per frame: image tokens unshifted, then qx+D, qy+D+M, qtheta+D+2M.
std::vector<uint32_t> serialize(const DrivingSequence& seq, const VocabLayout& layout);
DrivingSequence deserialize(const std::vector<uint32_t>& ids, const VocabLayout& layout,
                            int tokens_per_frame);

// Frame-wise position indices: every token of frame t gets index t.
std::vector<int32_t> positions(int T, int tokens_per_frame);

// Same, but with action-slot positions forced to zero when with_action_posemb
// is false (the position-embedding ablation).
std::vector<int32_t> positions_ex(int T, int tokens_per_frame, bool with_action_posemb);

// Inclusive-exclusive global-id range admissible for a slot within a frame.
std::pair<uint32_t, uint32_t> allowed_range(int slot, int tokens_per_frame,
                                            const VocabLayout& layout);

TokenStream make_stream(const DrivingSequence& seq, const VocabLayout& layout,
                        bool with_action_posemb = true);

}  // namespace dvl
