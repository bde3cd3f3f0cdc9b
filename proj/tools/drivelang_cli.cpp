// drivelang command line: data generation, tokenizer/codec fitting, training,
// guided generation, planning, evaluation and ablations. Thin wrapper over
// the C API in drivelang.h; one JSON config drives every subcommand.

#include <cstdio>
#include <cstdlib>
#include <memory>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "drivelang.h"

namespace {

struct ConfigDeleter {
    void operator()(dvl_config* c) const { dvl_config_free(c); }
};
using ConfigPtr = std::unique_ptr<dvl_config, ConfigDeleter>;

[[noreturn]] void die(const char* what, dvl_status st) {
    std::fprintf(stderr, "error: %s failed (status %d): %s\n", what, static_cast<int>(st),
                 dvl_last_error());
    std::exit(1);
}

void check(const char* what, dvl_status st) {
    if (st != DVL_OK) die(what, st);
}

ConfigPtr load_config(const std::string& config_path, const std::vector<std::string>& sets,
                      int seed, int threads) {
    dvl_config* raw = nullptr;
    std::string path = config_path;
    if (path.empty()) {
        if (const char* env = std::getenv("DRIVELANG_CONFIG")) path = env;
    }
    if (!path.empty())
        check("config open", dvl_config_open(path.c_str(), &raw));
    else
        check("config default", dvl_config_default(&raw));
    ConfigPtr cfg(raw);
    for (const std::string& kv : sets) {
        const size_t eq = kv.find('=');
        if (eq == std::string::npos) {
            std::fprintf(stderr, "error: --set expects key=value, got '%s'\n", kv.c_str());
            std::exit(1);
        }
        check("config set",
              dvl_config_set(cfg.get(), kv.substr(0, eq).c_str(), kv.substr(eq + 1).c_str()));
    }
    if (seed >= 0) {
        const std::string s = std::to_string(seed);
        check("config set", dvl_config_set(cfg.get(), "seeds.model", s.c_str()));
        check("config set", dvl_config_set(cfg.get(), "seeds.train", s.c_str()));
        check("config set", dvl_config_set(cfg.get(), "sampler.seed", s.c_str()));
    }
    if (threads > 0) {
        const std::string t = std::to_string(threads);
        check("config set", dvl_config_set(cfg.get(), "train.threads", t.c_str()));
    }
    check("config validate", dvl_config_validate(cfg.get()));
    return cfg;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"driving-language world model and planner toolkit"};
    app.require_subcommand(1);

    std::string config_path;
    std::vector<std::string> sets;
    int seed = -1;
    int threads = 0;
    app.add_option("--config", config_path,
                   "JSON config file (default: $DRIVELANG_CONFIG or built-in defaults)");
    app.add_option("--set", sets, "override a config field, dotted path: train.steps=200");
    app.add_option("--seed", seed, "override seeds.model, seeds.train and sampler.seed");
    app.add_option("--threads", threads, "override train.threads");

    std::string out, data, ckpt, scenario, scenarios, variant_ckpt;
    int seq_index = 0, seed_frames = 8, total_frames = 0;
    bool dump_frames = false, sample = false;
    std::vector<std::string> variants;

    auto* gen_data = app.add_subcommand("gen-data", "generate a synthetic driving dataset");
    gen_data->add_option("--out", out, "output dataset directory")->required();

    auto* fit = app.add_subcommand("fit", "fit the observation codebook and action codec");
    fit->add_option("--data", data, "dataset directory from gen-data")->required();

    auto* train = app.add_subcommand("train", "train the driving-language model");
    train->add_option("--data", data, "dataset directory (after fit)")->required();
    train->add_option("--out", out, "output checkpoint path")->required();

    auto* generate = app.add_subcommand("generate", "long-horizon rollout from seed frames");
    generate->add_option("--ckpt", ckpt, "model checkpoint")->required();
    generate->add_option("--data", data, "dataset directory (seed-frame source)")->required();
    generate->add_option("--seq", seq_index, "dataset sequence index for seed frames");
    generate->add_option("--seed-frames", seed_frames, "number of seed frames");
    generate->add_option("--total-frames", total_frames,
                         "frames to generate (default rollout.total_frames)");
    generate->add_option("--out", out, "output directory")->required();
    generate->add_flag("--dump-frames", dump_frames, "also write one ppm per frame");

    auto* plan = app.add_subcommand("plan", "plan a trajectory for one scenario");
    plan->add_option("--ckpt", ckpt, "model checkpoint")->required();
    plan->add_option("--data", data, "dataset directory (codec/codebook source)")->required();
    plan->add_option("--scenario", scenario, "scenario json file")->required();
    plan->add_option("--out", out, "output trajectory json path")->required();

    auto* evaluate = app.add_subcommand("evaluate", "score the planner on a scenario set");
    evaluate->add_option("--ckpt", ckpt, "model checkpoint")->required();
    evaluate->add_option("--data", data, "dataset directory (codec/codebook source)")->required();
    evaluate->add_option("--scenarios", scenarios, "directory of scenario json files")->required();
    evaluate->add_option("--out", out, "output report directory")->required();
    evaluate->add_flag("--sample", sample, "sample actions instead of greedy decoding");

    auto* ablate = app.add_subcommand("ablate", "compare against copy/constant-velocity variants");
    ablate->add_option("--ckpt", ckpt, "model checkpoint")->required();
    ablate->add_option("--data", data, "dataset directory (codec/codebook source)")->required();
    ablate->add_option("--scenarios", scenarios, "directory of scenario json files")->required();
    ablate
        ->add_option("--which", variants,
                     "variants: copy-x copy-y copy-theta copy-all const-vel no-action-posemb")
        ->required();
    ablate->add_option("--variant-ckpt", variant_ckpt,
                       "checkpoint for no-action-posemb (retrained from --data when omitted)");
    ablate->add_option("--out", out, "output directory")->required();

    CLI11_PARSE(app, argc, argv);

    ConfigPtr cfg = load_config(config_path, sets, seed, threads);

    if (gen_data->parsed()) {
        check("gen-data", dvl_gen_data(cfg.get(), out.c_str()));
        std::printf("dataset written to %s\n", out.c_str());
    } else if (fit->parsed()) {
        check("fit", dvl_fit(cfg.get(), data.c_str()));
        std::printf("codec, codebook and tokenized container written under %s\n", data.c_str());
    } else if (train->parsed()) {
        check("train", dvl_train(cfg.get(), data.c_str(), out.c_str(), /*verbose=*/1));
        std::printf("checkpoint written to %s\n", out.c_str());
    } else if (generate->parsed()) {
        check("generate", dvl_generate(cfg.get(), ckpt.c_str(), data.c_str(), seq_index,
                                       seed_frames, total_frames, out.c_str(), dump_frames));
        std::printf("rollout written to %s\n", out.c_str());
    } else if (plan->parsed()) {
        check("plan", dvl_plan(cfg.get(), ckpt.c_str(), data.c_str(), scenario.c_str(),
                               out.c_str()));
        std::printf("trajectory written to %s\n", out.c_str());
    } else if (evaluate->parsed()) {
        check("evaluate", dvl_evaluate(cfg.get(), ckpt.c_str(), data.c_str(), scenarios.c_str(),
                                       out.c_str(), sample ? 1 : 0));
        std::printf("report written under %s\n", out.c_str());
    } else if (ablate->parsed()) {
        std::string joined;
        for (const std::string& v : variants) {
            if (!joined.empty()) joined += ',';
            joined += v;
        }
        char* table = nullptr;
        check("ablate", dvl_ablate(cfg.get(), ckpt.c_str(),
                                   variant_ckpt.empty() ? nullptr : variant_ckpt.c_str(),
                                   data.c_str(), scenarios.c_str(), joined.c_str(), out.c_str(),
                                   &table));
        if (table) {
            std::fputs(table, stdout);
            dvl_string_free(table);
        }
    }
    return 0;
}
