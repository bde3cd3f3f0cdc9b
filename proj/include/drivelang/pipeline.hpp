#pragma once

#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "drivelang/config.hpp"
#include "drivelang/evaluator.hpp"
#include "drivelang/sampler.hpp"
#include "drivelang/train.hpp"

namespace dvl {
namespace pipeline {

// Dataset directory layout (relative to the dataset root):
//   scenarios/scenario_%04d.json       train-split scenario logs
//   raw/seq_%04d.dgrw                  rendered frames + raw actions + poses
//   eval_scenarios/scenario_%04d.json  held-out split (disjoint seeds)
//   codec.json, codebook.dgcb          written by fit
//   tokenized/manifest.json, tokenized/seq_%04d.dgsq
struct DataPaths {
    std::string root;
    std::string scenarios_dir() const { return root + "/scenarios"; }
    std::string raw_dir() const { return root + "/raw"; }
    std::string eval_dir() const { return root + "/eval_scenarios"; }
    std::string tokenized_dir() const { return root + "/tokenized"; }
    std::string codec_file() const { return root + "/codec.json"; }
    std::string codebook_file() const { return root + "/codebook.dgcb"; }
    std::string manifest_file() const { return root + "/tokenized/manifest.json"; }
};

void cmd_gen_data(const RunConfig& rc, const std::string& out_dir);

void cmd_fit(const RunConfig& rc, const std::string& data_dir);

TrainResult cmd_train(const RunConfig& rc, const std::string& data_dir,
                      const std::string& out_ckpt,
                      const std::function<void(const TrainLogEntry&)>& on_log = nullptr);

void cmd_generate(const RunConfig& rc, const std::string& ckpt_path, const std::string& data_dir,
                  int seq_index, int seed_frames, int total_frames, const std::string& out_dir,
                  bool dump_frames);

void cmd_plan(const RunConfig& rc, const std::string& ckpt_path, const std::string& data_dir,
              const std::string& scenario_path, const std::string& out_path);

EvalReport cmd_evaluate(const RunConfig& rc, const std::string& ckpt_path,
                        const std::string& data_dir, const std::string& scenarios_dir,
                        const std::string& out_dir, bool sample_actions = false);

// Variants: copy-x, copy-y, copy-theta, copy-all, const-vel, no-action-posemb.
// The full-prediction row is always included. no-action-posemb loads
// variant_ckpt when given, otherwise retrains one on data_dir.
std::string cmd_ablate(const RunConfig& rc, const std::string& ckpt_path,
                       const std::optional<std::string>& variant_ckpt,
                       const std::string& data_dir, const std::string& scenarios_dir,
                       const std::vector<std::string>& variants, const std::string& out_dir);

// Shared plumbing, exposed for tests and the acceptance suite.
std::vector<RawSequence> load_raws(const std::string& data_dir);
std::vector<Scenario> load_scenario_dir(const std::string& dir, std::vector<std::string>* names);
DrivingSequence history_sequence(const Scenario& sc, const WorldConfig& wcfg, const Codebook& cb,
                                 const ActionCodec& codec, const EvalProtocol& proto);

struct ModelPlanner {
    const Network<float>* net = nullptr;
    VocabLayout layout;
    const ActionCodec* codec = nullptr;
    const Codebook* codebook = nullptr;
    WorldConfig wcfg;
    EvalProtocol proto;
    SamplerConfig sampler;
    uint64_t seed = 0;

    std::vector<RelativeAction> plan_actions(const Scenario& sc) const;
    Trajectory operator()(const Scenario& sc, const EvalProtocol& p) const;
};

void write_ppm(const Image& img, const std::string& path);
void write_stamp(const std::string& path, const RunConfig& rc, const std::string& command,
                 const nlohmann::json& extra = nlohmann::json::object());

}  // namespace pipeline
}  // namespace dvl
