#include "drivelang/config.hpp"

#include <fstream>
#include <sstream>

namespace dvl {

namespace {

// Fetch with default; records unknown-key errors at parse time via the
// strict merge in config_from_json.
template <typename T>
void get_if(const nlohmann::json& j, const char* key, T& out) {
    if (j.contains(key)) out = j.at(key).get<T>();
}

void merge_strict(nlohmann::json& base, const nlohmann::json& user, const std::string& prefix,
                  std::vector<std::string>& unknown) {
    for (auto it = user.begin(); it != user.end(); ++it) {
        const std::string path = prefix.empty() ? it.key() : prefix + "." + it.key();
        if (!base.contains(it.key())) {
            unknown.push_back(path);
            continue;
        }
        if (base[it.key()].is_object() && it.value().is_object()) {
            merge_strict(base[it.key()], it.value(), path, unknown);
        } else {
            base[it.key()] = it.value();
        }
    }
}

}  // namespace

nlohmann::json config_to_json(const RunConfig& rc) {
    nlohmann::json j;
    j["world"] = {
        {"image_size", rc.world.image_size},
        {"tick_hz", rc.world.tick_hz},
        {"frame_hz", rc.world.frame_hz},
        {"frames_per_seq", rc.world.frames_per_seq},
        {"n_sequences", rc.n_sequences},
        {"history_frames", rc.world.history_frames},
        {"future_frames", rc.world.future_frames},
        {"half_width", rc.world.half_width},
        {"min_radius", rc.world.min_radius},
        {"max_radius", rc.world.max_radius},
        {"straight_min", rc.world.straight_min},
        {"straight_max", rc.world.straight_max},
        {"arc_angle_min", rc.world.arc_angle_min},
        {"arc_angle_max", rc.world.arc_angle_max},
        {"ego_length", rc.world.ego_length},
        {"ego_width", rc.world.ego_width},
        {"wheelbase", rc.world.wheelbase},
        {"lookahead", rc.world.lookahead},
        {"cruise_min", rc.world.cruise_min},
        {"cruise_max", rc.world.cruise_max},
        {"accel", rc.world.accel},
        {"p_stop_release", rc.world.p_stop_release},
        {"p_decel_stop", rc.world.p_decel_stop},
        {"p_speed_change", rc.world.p_speed_change},
        {"max_agents", rc.world.max_agents},
        {"agent_length", rc.world.agent_length},
        {"agent_width", rc.world.agent_width},
        {"follower_prob", rc.world.follower_prob},
        {"lead_prob", rc.world.lead_prob},
        {"parked_prob", rc.world.parked_prob},
        {"meters_per_pixel", rc.world.meters_per_pixel},
        {"anchor_row", rc.world.anchor_row},
        {"anchor_col", rc.world.anchor_col},
        {"shade_offroad", rc.world.shade_offroad},
        {"shade_road", rc.world.shade_road},
        {"shade_agent", rc.world.shade_agent},
    };
    j["tokenizer"] = {{"D", rc.tokenizer_D},
                      {"S", rc.tokenizer_S},
                      {"kmeans_iters", rc.kmeans_iters},
                      {"fit_max_patches", rc.fit_max_patches}};
    j["codec"] = {{"M", rc.codec_M}, {"lo_pct", rc.codec_lo_pct}, {"hi_pct", rc.codec_hi_pct}};
    j["model"] = {{"layers", rc.model_layers},       {"width", rc.model_width},
                  {"heads", rc.model_heads},         {"ffn_mult", rc.model_ffn_mult},
                  {"context", rc.model_context},     {"token_dropout", rc.token_dropout},
                  {"action_posemb", rc.action_posemb}};
    j["train"] = {{"steps", rc.train.steps},
                  {"batch", rc.train.batch},
                  {"lr", rc.train.lr},
                  {"beta1", rc.train.beta1},
                  {"beta2", rc.train.beta2},
                  {"weight_decay", rc.train.weight_decay},
                  {"clip_norm", rc.train.clip_norm},
                  {"flip_prob", rc.train.flip_prob},
                  {"log_every", rc.train.log_every},
                  {"eval_every", rc.train.eval_every},
                  {"threads", rc.train.threads}};
    j["sampler"] = {{"temperature", rc.sampler.temperature},
                    {"top_k", rc.sampler.top_k},
                    {"greedy", rc.sampler.greedy},
                    {"seed", rc.sampler.seed}};
    j["rollout"] = {{"window_generate", rc.rollout.window_generate},
                    {"window_condition", rc.rollout.window_condition},
                    {"total_frames", rc.rollout.total_frames}};
    j["evaluator"] = {{"history_frames", rc.evaluator.history_frames},
                      {"future_frames", rc.evaluator.future_frames},
                      {"sim_seconds", rc.evaluator.sim_seconds},
                      {"ttc_horizon", rc.evaluator.ttc_horizon},
                      {"max_lon_accel", rc.evaluator.max_lon_accel},
                      {"max_lat_accel", rc.evaluator.max_lat_accel},
                      {"max_yaw_rate", rc.evaluator.max_yaw_rate},
                      {"w_ttc", rc.evaluator.w_ttc},
                      {"w_comf", rc.evaluator.w_comf},
                      {"w_ep", rc.evaluator.w_ep},
                      {"n_scenarios", rc.n_eval_scenarios}};
    j["seeds"] = {{"world", rc.seeds.world},
                  {"eval_world", rc.seeds.eval_world},
                  {"model", rc.seeds.model},
                  {"train", rc.seeds.train}};
    return j;
}

RunConfig config_from_json(const nlohmann::json& user) {
    nlohmann::json j = config_to_json(RunConfig{});
    std::vector<std::string> unknown;
    merge_strict(j, user, "", unknown);
    if (!unknown.empty()) {
        std::string msg = "config: unknown fields:";
        for (const std::string& u : unknown) msg += " " + u;
        throw InvalidArgument(msg);
    }
    RunConfig rc;
    try {
        const auto& w = j.at("world");
        get_if(w, "image_size", rc.world.image_size);
        get_if(w, "tick_hz", rc.world.tick_hz);
        get_if(w, "frame_hz", rc.world.frame_hz);
        get_if(w, "frames_per_seq", rc.world.frames_per_seq);
        get_if(w, "n_sequences", rc.n_sequences);
        get_if(w, "history_frames", rc.world.history_frames);
        get_if(w, "future_frames", rc.world.future_frames);
        get_if(w, "half_width", rc.world.half_width);
        get_if(w, "min_radius", rc.world.min_radius);
        get_if(w, "max_radius", rc.world.max_radius);
        get_if(w, "straight_min", rc.world.straight_min);
        get_if(w, "straight_max", rc.world.straight_max);
        get_if(w, "arc_angle_min", rc.world.arc_angle_min);
        get_if(w, "arc_angle_max", rc.world.arc_angle_max);
        get_if(w, "ego_length", rc.world.ego_length);
        get_if(w, "ego_width", rc.world.ego_width);
        get_if(w, "wheelbase", rc.world.wheelbase);
        get_if(w, "lookahead", rc.world.lookahead);
        get_if(w, "cruise_min", rc.world.cruise_min);
        get_if(w, "cruise_max", rc.world.cruise_max);
        get_if(w, "accel", rc.world.accel);
        get_if(w, "p_stop_release", rc.world.p_stop_release);
        get_if(w, "p_decel_stop", rc.world.p_decel_stop);
        get_if(w, "p_speed_change", rc.world.p_speed_change);
        get_if(w, "max_agents", rc.world.max_agents);
        get_if(w, "agent_length", rc.world.agent_length);
        get_if(w, "agent_width", rc.world.agent_width);
        get_if(w, "follower_prob", rc.world.follower_prob);
        get_if(w, "lead_prob", rc.world.lead_prob);
        get_if(w, "parked_prob", rc.world.parked_prob);
        get_if(w, "meters_per_pixel", rc.world.meters_per_pixel);
        get_if(w, "anchor_row", rc.world.anchor_row);
        get_if(w, "anchor_col", rc.world.anchor_col);
        get_if(w, "shade_offroad", rc.world.shade_offroad);
        get_if(w, "shade_road", rc.world.shade_road);
        get_if(w, "shade_agent", rc.world.shade_agent);

        const auto& tok = j.at("tokenizer");
        get_if(tok, "D", rc.tokenizer_D);
        get_if(tok, "S", rc.tokenizer_S);
        get_if(tok, "kmeans_iters", rc.kmeans_iters);
        get_if(tok, "fit_max_patches", rc.fit_max_patches);

        const auto& cod = j.at("codec");
        get_if(cod, "M", rc.codec_M);
        get_if(cod, "lo_pct", rc.codec_lo_pct);
        get_if(cod, "hi_pct", rc.codec_hi_pct);

        const auto& m = j.at("model");
        get_if(m, "layers", rc.model_layers);
        get_if(m, "width", rc.model_width);
        get_if(m, "heads", rc.model_heads);
        get_if(m, "ffn_mult", rc.model_ffn_mult);
        get_if(m, "context", rc.model_context);
        get_if(m, "token_dropout", rc.token_dropout);
        get_if(m, "action_posemb", rc.action_posemb);

        const auto& tr = j.at("train");
        get_if(tr, "steps", rc.train.steps);
        get_if(tr, "batch", rc.train.batch);
        get_if(tr, "lr", rc.train.lr);
        get_if(tr, "beta1", rc.train.beta1);
        get_if(tr, "beta2", rc.train.beta2);
        get_if(tr, "weight_decay", rc.train.weight_decay);
        get_if(tr, "clip_norm", rc.train.clip_norm);
        get_if(tr, "flip_prob", rc.train.flip_prob);
        get_if(tr, "log_every", rc.train.log_every);
        get_if(tr, "eval_every", rc.train.eval_every);
        get_if(tr, "threads", rc.train.threads);

        const auto& sa = j.at("sampler");
        get_if(sa, "temperature", rc.sampler.temperature);
        get_if(sa, "top_k", rc.sampler.top_k);
        get_if(sa, "greedy", rc.sampler.greedy);
        get_if(sa, "seed", rc.sampler.seed);

        const auto& ro = j.at("rollout");
        get_if(ro, "window_generate", rc.rollout.window_generate);
        get_if(ro, "window_condition", rc.rollout.window_condition);
        get_if(ro, "total_frames", rc.rollout.total_frames);

        const auto& ev = j.at("evaluator");
        get_if(ev, "history_frames", rc.evaluator.history_frames);
        get_if(ev, "future_frames", rc.evaluator.future_frames);
        get_if(ev, "sim_seconds", rc.evaluator.sim_seconds);
        get_if(ev, "ttc_horizon", rc.evaluator.ttc_horizon);
        get_if(ev, "max_lon_accel", rc.evaluator.max_lon_accel);
        get_if(ev, "max_lat_accel", rc.evaluator.max_lat_accel);
        get_if(ev, "max_yaw_rate", rc.evaluator.max_yaw_rate);
        get_if(ev, "w_ttc", rc.evaluator.w_ttc);
        get_if(ev, "w_comf", rc.evaluator.w_comf);
        get_if(ev, "w_ep", rc.evaluator.w_ep);
        get_if(ev, "n_scenarios", rc.n_eval_scenarios);

        const auto& se = j.at("seeds");
        get_if(se, "world", rc.seeds.world);
        get_if(se, "eval_world", rc.seeds.eval_world);
        get_if(se, "model", rc.seeds.model);
        get_if(se, "train", rc.seeds.train);
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(std::string("config: mistyped field: ") + e.what());
    }
    // The world generator anchors events to the evaluation split of the clip.
    rc.world.history_frames = rc.evaluator.history_frames;
    rc.world.future_frames = rc.evaluator.future_frames;
    return rc;
}

RunConfig default_config() { return RunConfig{}; }

RunConfig load_config_file(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw IoError("config: cannot open: " + path);
    nlohmann::json j;
    try {
        f >> j;
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(std::string("config: bad json in ") + path + ": " + e.what());
    }
    return config_from_json(j);
}

void apply_override(nlohmann::json& j, const std::string& dotted_key, const std::string& value) {
    nlohmann::json* node = &j;
    size_t start = 0;
    std::vector<std::string> parts;
    while (true) {
        const size_t dot = dotted_key.find('.', start);
        if (dot == std::string::npos) {
            parts.push_back(dotted_key.substr(start));
            break;
        }
        parts.push_back(dotted_key.substr(start, dot - start));
        start = dot + 1;
    }
    require(!parts.empty() && !parts.front().empty(), "override: empty key");
    for (size_t i = 0; i + 1 < parts.size(); ++i) node = &(*node)[parts[i]];
    nlohmann::json parsed = nlohmann::json::parse(value, nullptr, false);
    if (parsed.is_discarded()) parsed = value;  // plain string
    (*node)[parts.back()] = parsed;
}

void validate_config(const RunConfig& rc) {
    std::vector<std::string> errs;
    auto check = [&](bool ok, const std::string& msg) {
        if (!ok) errs.push_back(msg);
    };
    check(rc.tokenizer_D >= 1, "tokenizer.D: must be >= 1");
    check(rc.tokenizer_S >= 1, "tokenizer.S: must be >= 1");
    check(rc.tokenizer_S == 0 || rc.world.image_size % std::max(rc.tokenizer_S, 1) == 0,
          "world.image_size: must be divisible by tokenizer.S");
    check(rc.kmeans_iters >= 1, "tokenizer.kmeans_iters: must be >= 1");
    check(rc.codec_M >= 2, "codec.M: must be >= 2");
    check(rc.codec_lo_pct <= rc.codec_hi_pct, "codec.lo_pct: must be <= codec.hi_pct");
    check(rc.n_sequences >= 1, "world.n_sequences: must be >= 1");
    check(rc.model_layers >= 1, "model.layers: must be >= 1");
    check(rc.model_width >= 2, "model.width: must be >= 2");
    check(rc.model_heads >= 1 && rc.model_width % std::max(rc.model_heads, 1) == 0,
          "model.width: must be divisible by model.heads");
    check(rc.model_heads >= 1 && (rc.model_width / std::max(rc.model_heads, 1)) % 2 == 0,
          "model.heads: head_dim must be even");
    check(rc.token_dropout >= 0.0 && rc.token_dropout < 1.0,
          "model.token_dropout: must be in [0, 1)");
    check(rc.model_context >= rc.world.frames_per_seq * rc.tokens_per_frame(),
          "model.context: must cover frames_per_seq * tokens_per_frame");
    check(rc.train.steps >= 1, "train.steps: must be >= 1");
    check(rc.train.batch >= 1, "train.batch: must be >= 1");
    check(rc.train.threads >= 1, "train.threads: must be >= 1");
    check(rc.train.lr > 0.0, "train.lr: must be > 0");
    check(rc.train.beta1 >= 0.0 && rc.train.beta1 < 1.0, "train.beta1: must be in [0, 1)");
    check(rc.train.beta2 >= 0.0 && rc.train.beta2 < 1.0, "train.beta2: must be in [0, 1)");
    check(rc.train.flip_prob >= 0.0 && rc.train.flip_prob <= 1.0,
          "train.flip_prob: must be in [0, 1]");
    check(rc.sampler.top_k >= 1 && rc.sampler.top_k <= rc.vocab(),
          "sampler.top_k: must be in [1, vocab]");
    check(rc.sampler.temperature > 0.0, "sampler.temperature: must be > 0");
    check(rc.rollout.window_generate >= 1, "rollout.window_generate: must be >= 1");
    check(rc.rollout.window_condition >= 1, "rollout.window_condition: must be >= 1");
    check(rc.rollout.total_frames >= 1, "rollout.total_frames: must be >= 1");
    check(rc.evaluator.history_frames >= 2, "evaluator.history_frames: must be >= 2");
    check(rc.evaluator.future_frames >= 1, "evaluator.future_frames: must be >= 1");
    check(rc.evaluator.sim_seconds > 0.0, "evaluator.sim_seconds: must be > 0");
    check(static_cast<double>(rc.evaluator.future_frames) >=
              rc.evaluator.sim_seconds * rc.world.frame_hz - 1e-9,
          "evaluator.future_frames: must cover sim_seconds at the frame rate");
    check(rc.n_eval_scenarios >= 1, "evaluator.n_scenarios: must be >= 1");
    try {
        rc.world.validate();
    } catch (const Error& e) {
        errs.push_back(std::string("world: ") + e.what());
    }
    if (!errs.empty()) {
        std::string msg = "config validation failed:";
        for (const std::string& e : errs) msg += "\n  - " + e;
        throw InvalidArgument(msg);
    }
}

ModelConfig make_model_config(const RunConfig& rc) {
    ModelConfig mc;
    mc.vocab = rc.vocab();
    mc.context = rc.model_context;
    mc.layers = rc.model_layers;
    mc.width = rc.model_width;
    mc.heads = rc.model_heads;
    mc.ffn_hidden = ffn_hidden_from_mult(rc.model_width, rc.model_ffn_mult);
    mc.token_dropout = rc.token_dropout;
    mc.action_posemb = rc.action_posemb;
    mc.seed = rc.seeds.model;
    return mc;
}

std::string config_hash(const nlohmann::json& j) {
    const std::string s = j.dump();
    uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : s) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    std::ostringstream os;
    os << std::hex;
    os.width(16);
    os.fill('0');
    os << h;
    return os.str();
}

}  // namespace dvl
