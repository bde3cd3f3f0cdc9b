#pragma once

#include <string>

#include <nlohmann/json.hpp>

#include "drivelang/evaluator.hpp"
#include "drivelang/model.hpp"
#include "drivelang/sampler.hpp"
#include "drivelang/world_sim.hpp"

namespace dvl {

struct TrainConfig {
    int steps = 5000;
    int batch = 4;
    double lr = 1e-4;
    double beta1 = 0.9;
    double beta2 = 0.95;
    double weight_decay = 5e-2;
    double clip_norm = 1.0;
    double flip_prob = 0.5;
    int log_every = 50;
    int eval_every = 500;
    int threads = 1;
};

struct SeedConfig {
    uint64_t world = 1000;
    uint64_t eval_world = 9000;
    uint64_t model = 1;
    uint64_t train = 11;
};

// One config file drives every subcommand; sections mirror the pipeline.
struct RunConfig {
    WorldConfig world;
    int n_sequences = 32;

    int tokenizer_D = 256;
    int tokenizer_S = 8;
    int kmeans_iters = 25;
    int fit_max_patches = 16384;

    int codec_M = 16;
    double codec_lo_pct = 1.0;
    double codec_hi_pct = 99.0;

    int model_layers = 4;
    int model_width = 128;
    int model_heads = 4;
    double model_ffn_mult = 8.0 / 3.0;
    int model_context = 304;
    double token_dropout = 0.1;
    bool action_posemb = true;

    TrainConfig train;
    SamplerConfig sampler{1.0, 40, false, 7};
    RolloutConfig rollout;
    EvalProtocol evaluator;
    int n_eval_scenarios = 64;
    SeedConfig seeds;

    int tokens_per_frame() const {
        return (world.image_size / tokenizer_S) * (world.image_size / tokenizer_S) + 3;
    }
    int vocab() const { return tokenizer_D + 3 * codec_M; }
};

nlohmann::json config_to_json(const RunConfig& rc);
RunConfig config_from_json(const nlohmann::json& j);

RunConfig default_config();
RunConfig load_config_file(const std::string& path);

// Dotted-path override, e.g. "train.steps=200". The value is parsed as JSON
// when possible, else taken as a string.
void apply_override(nlohmann::json& j, const std::string& dotted_key, const std::string& value);

// Cross-field validation; throws InvalidArgument listing every offending field.
void validate_config(const RunConfig& rc);

ModelConfig make_model_config(const RunConfig& rc);

// FNV-1a hash of the canonical JSON dump, as fixed-width hex.
std::string config_hash(const nlohmann::json& j);

}  // namespace dvl
