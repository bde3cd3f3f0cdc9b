#pragma once

#include <functional>
#include <vector>

#include "drivelang/action_codec.hpp"
#include "drivelang/config.hpp"
#include "drivelang/dataset.hpp"
#include "drivelang/model.hpp"

namespace dvl {

// Tokenized training corpus. Both orientations of every sequence are
// tokenized up front (horizontal flip happens on pixels and raw actions,
// before tokenization), so a training step only gathers precomputed ids.
class TrainingData {
public:
    TrainingData(const std::vector<RawSequence>& raws, const Codebook& cb,
                 const ActionCodec& codec, const VocabLayout& layout, bool action_posemb);

    struct Sample {
        std::vector<uint32_t> tokens;
        std::vector<uint32_t> targets;
        std::vector<int32_t> positions;
    };

    size_t size() const { return normal_.size(); }
    int tokens_per_frame() const { return tpf_; }
    Sample sample(size_t index, bool flipped) const;

private:
    std::vector<std::vector<uint32_t>> normal_;   // serialized ids per sequence
    std::vector<std::vector<uint32_t>> flipped_;
    std::vector<int32_t> positions_;              // shared, full length
    int tpf_ = 0;
};

struct TrainLogEntry {
    int step = 0;
    double loss = 0.0;       // batch-mean training loss (dropout active)
    double grad_norm = 0.0;  // pre-clip global norm of the batch-mean gradient
    double eval_nll = -1.0;  // corpus NLL without dropout; -1 when not measured
};

struct TrainResult {
    std::vector<TrainLogEntry> log;
    double final_eval_nll = 0.0;
    double wall_seconds = 0.0;
};

// AdamW training loop over full sequences. Per-sequence gradients are
// computed into per-slot buffers and reduced in slot order, so any thread
// count produces bitwise-identical results.
TrainResult train_model(Network<float>& net, const TrainingData& data, const TrainConfig& tc,
                        uint64_t train_seed, AdamWState<float>* opt_state = nullptr,
                        const std::function<void(const TrainLogEntry&)>& on_log = nullptr);

// Corpus NLL in eval mode (no dropout, no flips).
double corpus_nll(const Network<float>& net, const TrainingData& data);

}  // namespace dvl
