#include "drivelang.h"

#include <cstdio>
#include <cstdlib>
#include <cstring>
#include <string>

#include "drivelang/action_codec.hpp"
#include "drivelang/config.hpp"
#include "drivelang/model.hpp"
#include "drivelang/obs_tokenizer.hpp"
#include "drivelang/pipeline.hpp"

namespace {

thread_local std::string g_last_error;

dvl_status status_of(const dvl::Error& e) {
    switch (e.code()) {
        case dvl::ErrorCode::invalid_argument: return DVL_INVALID_ARGUMENT;
        case dvl::ErrorCode::io_error: return DVL_IO_ERROR;
        case dvl::ErrorCode::format_error: return DVL_FORMAT_ERROR;
        case dvl::ErrorCode::decode_error: return DVL_DECODE_ERROR;
        case dvl::ErrorCode::diverged: return DVL_DIVERGED;
        default: return DVL_INTERNAL_ERROR;
    }
}

template <typename Fn>
dvl_status guarded(Fn&& fn) {
    try {
        fn();
        return DVL_OK;
    } catch (const dvl::Error& e) {
        g_last_error = e.what();
        return status_of(e);
    } catch (const std::exception& e) {
        g_last_error = e.what();
        return DVL_INTERNAL_ERROR;
    } catch (...) {
        g_last_error = "unknown error";
        return DVL_INTERNAL_ERROR;
    }
}

dvl_status fail_null(const char* what) {
    g_last_error = std::string(what) + ": null argument";
    return DVL_INVALID_ARGUMENT;
}

char* dup_string(const std::string& s) {
    char* out = static_cast<char*>(std::malloc(s.size() + 1));
    if (out) std::memcpy(out, s.c_str(), s.size() + 1);
    return out;
}

}  // namespace

struct dvl_config {
    nlohmann::json json;
};
struct dvl_codec {
    dvl::ActionCodec codec;
};
struct dvl_codebook {
    dvl::Codebook cb;
};
struct dvl_model {
    dvl::Checkpoint ck;
};

namespace {
dvl::RunConfig to_run_config(const dvl_config* cfg) { return dvl::config_from_json(cfg->json); }
}  // namespace

extern "C" {

const char* dvl_version(void) { return "0.1.0"; }

const char* dvl_last_error(void) { return g_last_error.c_str(); }

void dvl_string_free(char* s) { std::free(s); }

dvl_status dvl_config_default(dvl_config** out) {
    if (!out) return fail_null("dvl_config_default");
    return guarded([&] { *out = new dvl_config{dvl::config_to_json(dvl::default_config())}; });
}

dvl_status dvl_config_open(const char* path, dvl_config** out) {
    if (!path || !out) return fail_null("dvl_config_open");
    return guarded([&] {
        const dvl::RunConfig rc = dvl::load_config_file(path);
        *out = new dvl_config{dvl::config_to_json(rc)};
    });
}

dvl_status dvl_config_parse(const char* json_text, dvl_config** out) {
    if (!json_text || !out) return fail_null("dvl_config_parse");
    return guarded([&] {
        nlohmann::json j = nlohmann::json::parse(json_text, nullptr, false);
        if (j.is_discarded()) throw dvl::FormatError("config: bad json text");
        const dvl::RunConfig rc = dvl::config_from_json(j);
        *out = new dvl_config{dvl::config_to_json(rc)};
    });
}

dvl_status dvl_config_set(dvl_config* cfg, const char* dotted_key, const char* value) {
    if (!cfg || !dotted_key || !value) return fail_null("dvl_config_set");
    return guarded([&] {
        nlohmann::json j = cfg->json;
        dvl::apply_override(j, dotted_key, value);
        cfg->json = dvl::config_to_json(dvl::config_from_json(j));  // re-check field names/types
    });
}

dvl_status dvl_config_dump(const dvl_config* cfg, char** json_out) {
    if (!cfg || !json_out) return fail_null("dvl_config_dump");
    return guarded([&] { *json_out = dup_string(cfg->json.dump(2)); });
}

dvl_status dvl_config_validate(const dvl_config* cfg) {
    if (!cfg) return fail_null("dvl_config_validate");
    return guarded([&] { dvl::validate_config(dvl::config_from_json(cfg->json)); });
}

void dvl_config_free(dvl_config* cfg) { delete cfg; }

dvl_status dvl_gen_data(const dvl_config* cfg, const char* out_dir) {
    if (!cfg || !out_dir) return fail_null("dvl_gen_data");
    return guarded([&] { dvl::pipeline::cmd_gen_data(to_run_config(cfg), out_dir); });
}

dvl_status dvl_fit(const dvl_config* cfg, const char* data_dir) {
    if (!cfg || !data_dir) return fail_null("dvl_fit");
    return guarded([&] { dvl::pipeline::cmd_fit(to_run_config(cfg), data_dir); });
}

dvl_status dvl_train(const dvl_config* cfg, const char* data_dir, const char* out_ckpt,
                     int verbose) {
    if (!cfg || !data_dir || !out_ckpt) return fail_null("dvl_train");
    return guarded([&] {
        auto on_log = [verbose](const dvl::TrainLogEntry& e) {
            if (!verbose) return;
            if (e.eval_nll >= 0)
                std::printf("step %6d  loss %.6f  grad_norm %.4f  eval_nll %.6f\n", e.step, e.loss,
                            e.grad_norm, e.eval_nll);
            else
                std::printf("step %6d  loss %.6f  grad_norm %.4f\n", e.step, e.loss, e.grad_norm);
            std::fflush(stdout);
        };
        dvl::pipeline::cmd_train(to_run_config(cfg), data_dir, out_ckpt, on_log);
    });
}

dvl_status dvl_generate(const dvl_config* cfg, const char* ckpt, const char* data_dir,
                        int seq_index, int seed_frames, int total_frames, const char* out_dir,
                        int dump_frames) {
    if (!cfg || !ckpt || !data_dir || !out_dir) return fail_null("dvl_generate");
    return guarded([&] {
        dvl::pipeline::cmd_generate(to_run_config(cfg), ckpt, data_dir, seq_index, seed_frames,
                                    total_frames, out_dir, dump_frames != 0);
    });
}

dvl_status dvl_plan(const dvl_config* cfg, const char* ckpt, const char* data_dir,
                    const char* scenario_path, const char* out_path) {
    if (!cfg || !ckpt || !data_dir || !scenario_path || !out_path) return fail_null("dvl_plan");
    return guarded([&] {
        dvl::pipeline::cmd_plan(to_run_config(cfg), ckpt, data_dir, scenario_path, out_path);
    });
}

dvl_status dvl_evaluate(const dvl_config* cfg, const char* ckpt, const char* data_dir,
                        const char* scenarios_dir, const char* out_dir, int sample_actions) {
    if (!cfg || !ckpt || !data_dir || !scenarios_dir || !out_dir)
        return fail_null("dvl_evaluate");
    return guarded([&] {
        dvl::pipeline::cmd_evaluate(to_run_config(cfg), ckpt, data_dir, scenarios_dir, out_dir,
                                    sample_actions != 0);
    });
}

dvl_status dvl_ablate(const dvl_config* cfg, const char* ckpt, const char* variant_ckpt,
                      const char* data_dir, const char* scenarios_dir, const char* variants,
                      const char* out_dir, char** table_out) {
    if (!cfg || !ckpt || !data_dir || !scenarios_dir || !variants || !out_dir)
        return fail_null("dvl_ablate");
    return guarded([&] {
        std::vector<std::string> list;
        std::string cur;
        for (const char* p = variants;; ++p) {
            if (*p == ',' || *p == '\0') {
                if (!cur.empty()) list.push_back(cur);
                cur.clear();
                if (*p == '\0') break;
            } else {
                cur += *p;
            }
        }
        std::optional<std::string> vck;
        if (variant_ckpt && variant_ckpt[0] != '\0') vck = variant_ckpt;
        const std::string table = dvl::pipeline::cmd_ablate(to_run_config(cfg), ckpt, vck,
                                                            data_dir, scenarios_dir, list, out_dir);
        if (table_out) *table_out = dup_string(table);
    });
}

dvl_status dvl_codec_open(const char* path, dvl_codec** out) {
    if (!path || !out) return fail_null("dvl_codec_open");
    return guarded([&] { *out = new dvl_codec{dvl::load_codec(path)}; });
}

dvl_status dvl_codec_bins(const dvl_codec* c, int* bins_out) {
    if (!c || !bins_out) return fail_null("dvl_codec_bins");
    *bins_out = c->codec.bins;
    return DVL_OK;
}

dvl_status dvl_codec_encode(const dvl_codec* c, const double xyz[3], int tokens_out[3]) {
    if (!c || !xyz || !tokens_out) return fail_null("dvl_codec_encode");
    return guarded([&] {
        const dvl::ActionTokens t =
            dvl::encode_action(dvl::RelativeAction{xyz[0], xyz[1], xyz[2]}, c->codec);
        tokens_out[0] = t.qx;
        tokens_out[1] = t.qy;
        tokens_out[2] = t.qtheta;
    });
}

dvl_status dvl_codec_decode(const dvl_codec* c, const int tokens[3], double xyz_out[3]) {
    if (!c || !tokens || !xyz_out) return fail_null("dvl_codec_decode");
    return guarded([&] {
        const dvl::RelativeAction a =
            dvl::decode_action(dvl::ActionTokens{tokens[0], tokens[1], tokens[2]}, c->codec);
        xyz_out[0] = a.dx;
        xyz_out[1] = a.dy;
        xyz_out[2] = a.dtheta;
    });
}

void dvl_codec_free(dvl_codec* c) { delete c; }

dvl_status dvl_codebook_open(const char* path, dvl_codebook** out) {
    if (!path || !out) return fail_null("dvl_codebook_open");
    return guarded([&] { *out = new dvl_codebook{dvl::load_codebook(path)}; });
}

dvl_status dvl_codebook_info(const dvl_codebook* cb, int* d_out, int* s_out, int* channels_out) {
    if (!cb) return fail_null("dvl_codebook_info");
    if (d_out) *d_out = cb->cb.D;
    if (s_out) *s_out = cb->cb.S;
    if (channels_out) *channels_out = cb->cb.channels;
    return DVL_OK;
}

dvl_status dvl_codebook_encode(const dvl_codebook* cb, const float* image, int h, int w,
                               uint32_t* tokens_out) {
    if (!cb || !image || !tokens_out) return fail_null("dvl_codebook_encode");
    return guarded([&] {
        dvl::Image img;
        img.height = h;
        img.width = w;
        img.channels = cb->cb.channels;
        img.data.assign(image, image + static_cast<size_t>(h) * w * cb->cb.channels);
        const dvl::TokenGrid grid = dvl::encode_image(img, cb->cb);
        std::memcpy(tokens_out, grid.indices.data(), grid.indices.size() * sizeof(uint32_t));
    });
}

dvl_status dvl_codebook_decode(const dvl_codebook* cb, const uint32_t* tokens, int rows, int cols,
                               float* image_out) {
    if (!cb || !tokens || !image_out) return fail_null("dvl_codebook_decode");
    return guarded([&] {
        dvl::TokenGrid grid;
        grid.rows = rows;
        grid.cols = cols;
        grid.indices.assign(tokens, tokens + static_cast<size_t>(rows) * cols);
        const dvl::Image img = dvl::decode_grid(grid, cb->cb);
        std::memcpy(image_out, img.data.data(), img.data.size() * sizeof(float));
    });
}

void dvl_codebook_free(dvl_codebook* cb) { delete cb; }

dvl_status dvl_model_open(const char* ckpt_path, dvl_model** out) {
    if (!ckpt_path || !out) return fail_null("dvl_model_open");
    return guarded([&] { *out = new dvl_model{dvl::load_checkpoint(ckpt_path)}; });
}

dvl_status dvl_model_config_json(const dvl_model* m, char** json_out) {
    if (!m || !json_out) return fail_null("dvl_model_config_json");
    return guarded([&] {
        const dvl::ModelConfig& c = m->ck.cfg;
        nlohmann::json j = {{"vocab", c.vocab},
                            {"context", c.context},
                            {"layers", c.layers},
                            {"width", c.width},
                            {"heads", c.heads},
                            {"ffn_hidden", c.ffn_hidden},
                            {"token_dropout", c.token_dropout},
                            {"action_posemb", c.action_posemb},
                            {"seed", c.seed},
                            {"has_optimizer_state", m->ck.opt.has_value()}};
        *json_out = dup_string(j.dump(2));
    });
}

void dvl_model_free(dvl_model* m) { delete m; }

}  // extern "C"
