/*
 * drivelang — C API for the driving-language modeling library.
 *
 * A unified discrete vocabulary over top-down driving observations and
 * ego-motion actions, a causal next-token transformer over interleaved
 * frame/action tokens, guided sampling, long-horizon rollout and a
 * non-reactive planning evaluator, all driven by one JSON config.
 *
 * Conventions:
 *  - every function returns a dvl_status; DVL_OK (0) means success
 *  - on failure, dvl_last_error() returns a message for the calling thread
 *  - objects are opaque handles released with their matching _free function
 *  - strings returned through char** are heap-allocated; release them with
 *    dvl_string_free
 */
#ifndef DRIVELANG_H
#define DRIVELANG_H

#include <stddef.h>
#include <stdint.h>

#if defined(_WIN32)
#define DVL_API __declspec(dllexport)
#else
#define DVL_API __attribute__((visibility("default")))
#endif

#ifdef __cplusplus
extern "C" {
#endif

typedef enum dvl_status {
    DVL_OK = 0,
    DVL_INVALID_ARGUMENT = 1,
    DVL_IO_ERROR = 2,
    DVL_FORMAT_ERROR = 3,
    DVL_DECODE_ERROR = 4,
    DVL_DIVERGED = 5,
    DVL_INTERNAL_ERROR = 6
} dvl_status;

typedef struct dvl_config dvl_config;
typedef struct dvl_codec dvl_codec;
typedef struct dvl_codebook dvl_codebook;
typedef struct dvl_model dvl_model;

DVL_API const char* dvl_version(void);

/* Message for the most recent failure on the calling thread. */
DVL_API const char* dvl_last_error(void);

DVL_API void dvl_string_free(char* s);

/* ---- config ---------------------------------------------------------- */

DVL_API dvl_status dvl_config_default(dvl_config** out);
DVL_API dvl_status dvl_config_open(const char* path, dvl_config** out);
DVL_API dvl_status dvl_config_parse(const char* json_text, dvl_config** out);
/* Dotted-path override, e.g. ("train.steps", "200"). */
DVL_API dvl_status dvl_config_set(dvl_config* cfg, const char* dotted_key, const char* value);
DVL_API dvl_status dvl_config_dump(const dvl_config* cfg, char** json_out);
/* Cross-field validation; DVL_INVALID_ARGUMENT lists offending fields. */
DVL_API dvl_status dvl_config_validate(const dvl_config* cfg);
DVL_API void dvl_config_free(dvl_config* cfg);

/* ---- pipeline commands ------------------------------------------------ */

DVL_API dvl_status dvl_gen_data(const dvl_config* cfg, const char* out_dir);

DVL_API dvl_status dvl_fit(const dvl_config* cfg, const char* data_dir);

/* Prints one log line per train.log_every steps when verbose is nonzero. */
DVL_API dvl_status dvl_train(const dvl_config* cfg, const char* data_dir, const char* out_ckpt,
                             int verbose);

DVL_API dvl_status dvl_generate(const dvl_config* cfg, const char* ckpt, const char* data_dir,
                                int seq_index, int seed_frames, int total_frames,
                                const char* out_dir, int dump_frames);

DVL_API dvl_status dvl_plan(const dvl_config* cfg, const char* ckpt, const char* data_dir,
                            const char* scenario_path, const char* out_path);

DVL_API dvl_status dvl_evaluate(const dvl_config* cfg, const char* ckpt, const char* data_dir,
                                const char* scenarios_dir, const char* out_dir,
                                int sample_actions);

/* variants: comma-separated subset of
 * copy-x,copy-y,copy-theta,copy-all,const-vel,no-action-posemb.
 * variant_ckpt may be NULL (no-action-posemb then retrains from data_dir).
 * table_out (optional) receives the comparison table text. */
DVL_API dvl_status dvl_ablate(const dvl_config* cfg, const char* ckpt, const char* variant_ckpt,
                              const char* data_dir, const char* scenarios_dir,
                              const char* variants, const char* out_dir, char** table_out);

/* ---- action codec ------------------------------------------------------ */

DVL_API dvl_status dvl_codec_open(const char* path, dvl_codec** out);
DVL_API dvl_status dvl_codec_bins(const dvl_codec* c, int* bins_out);
/* xyz = (dx, dy, dtheta); tokens are per-component bins in [0, bins). */
DVL_API dvl_status dvl_codec_encode(const dvl_codec* c, const double xyz[3], int tokens_out[3]);
DVL_API dvl_status dvl_codec_decode(const dvl_codec* c, const int tokens[3], double xyz_out[3]);
DVL_API void dvl_codec_free(dvl_codec* c);

/* ---- observation codebook ---------------------------------------------- */

DVL_API dvl_status dvl_codebook_open(const char* path, dvl_codebook** out);
DVL_API dvl_status dvl_codebook_info(const dvl_codebook* cb, int* d_out, int* s_out,
                                     int* channels_out);
/* image: h*w*channels floats in [0,1], row-major; tokens_out: (h/S)*(w/S) ids. */
DVL_API dvl_status dvl_codebook_encode(const dvl_codebook* cb, const float* image, int h, int w,
                                       uint32_t* tokens_out);
/* image_out: (rows*S)*(cols*S)*channels floats. */
DVL_API dvl_status dvl_codebook_decode(const dvl_codebook* cb, const uint32_t* tokens, int rows,
                                       int cols, float* image_out);
DVL_API void dvl_codebook_free(dvl_codebook* cb);

/* ---- model checkpoints -------------------------------------------------- */

DVL_API dvl_status dvl_model_open(const char* ckpt_path, dvl_model** out);
DVL_API dvl_status dvl_model_config_json(const dvl_model* m, char** json_out);
DVL_API void dvl_model_free(dvl_model* m);

#ifdef __cplusplus
}
#endif

#endif /* DRIVELANG_H */
