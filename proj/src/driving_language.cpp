#include "drivelang/driving_language.hpp"

#include <string>

namespace dvl {

VocabLayout make_layout(int D, int M) {
    require(D >= 1, "layout: D must be >= 1");
    require(M >= 2, "layout: M must be >= 2");
    return VocabLayout{D, M};
}

std::vector<uint32_t> serialize(const DrivingSequence& seq, const VocabLayout& layout) {
    std::vector<uint32_t> out;
    if (seq.frames.empty()) return out;
    const size_t grid_size = seq.frames.front().grid.size();
    out.reserve(seq.frames.size() * (grid_size + 3));
    for (size_t t = 0; t < seq.frames.size(); ++t) {
        const Frame& f = seq.frames[t];
        require(f.grid.size() == grid_size, "serialize: inconsistent frame token counts");
        for (uint32_t id : f.grid) {
            require(id < static_cast<uint32_t>(layout.D),
                    "serialize: image token out of range at frame " + std::to_string(t));
            out.push_back(id);
        }
        const int q[3] = {f.action.qx, f.action.qy, f.action.qtheta};
        const int off[3] = {layout.offset_x(), layout.offset_y(), layout.offset_theta()};
        for (int k = 0; k < 3; ++k) {
            require(q[k] >= 0 && q[k] < layout.M,
                    "serialize: action token out of range at frame " + std::to_string(t));
            out.push_back(static_cast<uint32_t>(off[k] + q[k]));
        }
    }
    return out;
}

DrivingSequence deserialize(const std::vector<uint32_t>& ids, const VocabLayout& layout,
                            int tokens_per_frame) {
    require(tokens_per_frame >= 4, "deserialize: tokens_per_frame must be >= 4");
    if (ids.size() % static_cast<size_t>(tokens_per_frame) != 0)
        throw FormatError("deserialize: stream length " + std::to_string(ids.size()) +
                          " not divisible by tokens_per_frame " + std::to_string(tokens_per_frame));
    DrivingSequence seq;
    const size_t T = ids.size() / tokens_per_frame;
    const int grid_size = tokens_per_frame - 3;
    seq.frames.reserve(T);
    for (size_t t = 0; t < T; ++t) {
        Frame f;
        f.grid.reserve(grid_size);
        const uint32_t* base = ids.data() + t * tokens_per_frame;
        for (int s = 0; s < tokens_per_frame; ++s) {
            const auto [lo, hi] = allowed_range(s, tokens_per_frame, layout);
            const uint32_t id = base[s];
            if (id < lo || id >= hi)
                throw FormatError("deserialize: malformed stream: token " + std::to_string(id) +
                                  " at frame " + std::to_string(t) + " slot " + std::to_string(s) +
                                  " outside [" + std::to_string(lo) + ", " + std::to_string(hi) + ")");
            if (s < grid_size) {
                f.grid.push_back(id);
            } else if (s == grid_size) {
                f.action.qx = static_cast<int>(id) - layout.offset_x();
            } else if (s == grid_size + 1) {
                f.action.qy = static_cast<int>(id) - layout.offset_y();
            } else {
                f.action.qtheta = static_cast<int>(id) - layout.offset_theta();
            }
        }
        seq.frames.push_back(std::move(f));
    }
    return seq;
}

std::vector<int32_t> positions(int T, int tokens_per_frame) {
    return positions_ex(T, tokens_per_frame, true);
}

std::vector<int32_t> positions_ex(int T, int tokens_per_frame, bool with_action_posemb) {
    require(T >= 1, "positions: T must be >= 1");
    require(tokens_per_frame >= 4, "positions: tokens_per_frame must be >= 4");
    std::vector<int32_t> out(static_cast<size_t>(T) * tokens_per_frame);
    size_t i = 0;
    for (int t = 0; t < T; ++t) {
        for (int s = 0; s < tokens_per_frame; ++s, ++i) {
            const bool action_slot = s >= tokens_per_frame - 3;
            out[i] = (action_slot && !with_action_posemb) ? 0 : t;
        }
    }
    return out;
}

std::pair<uint32_t, uint32_t> allowed_range(int slot, int tokens_per_frame,
                                            const VocabLayout& layout) {
    require(slot >= 0 && slot < tokens_per_frame, "allowed_range: slot out of range");
    const int grid_size = tokens_per_frame - 3;
    if (slot < grid_size) return {0u, static_cast<uint32_t>(layout.D)};
    const int k = slot - grid_size;  // 0 = x, 1 = y, 2 = theta
    const uint32_t lo = static_cast<uint32_t>(layout.D + k * layout.M);
    return {lo, lo + static_cast<uint32_t>(layout.M)};
}

TokenStream make_stream(const DrivingSequence& seq, const VocabLayout& layout,
                        bool with_action_posemb) {
    TokenStream s;
    s.ids = serialize(seq, layout);
    if (!seq.frames.empty())
        s.positions = positions_ex(seq.size(), seq.tokens_per_frame(), with_action_posemb);
    return s;
}

}  // namespace dvl
