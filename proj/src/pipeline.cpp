#include "drivelang/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>

namespace dvl {
namespace pipeline {

namespace fs = std::filesystem;

namespace {

std::string seq_name(int i, const char* ext) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "seq_%04d.%s", i, ext);
    return buf;
}

std::string scenario_name(int i) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "scenario_%04d.json", i);
    return buf;
}

void make_dirs(const std::string& dir) {
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec) throw IoError("cannot create directory " + dir + ": " + ec.message());
}

struct FitArtifacts {
    Codebook codebook;
    ActionCodec codec;
    VocabLayout layout;
};

FitArtifacts load_fit(const DataPaths& paths, const RunConfig& rc) {
    FitArtifacts fa;
    fa.codebook = load_codebook(paths.codebook_file());
    fa.codec = load_codec(paths.codec_file());
    require(fa.codec.bins == rc.codec_M, "fit artifacts: codec bins do not match config");
    require(fa.codebook.D == rc.tokenizer_D && fa.codebook.S == rc.tokenizer_S,
            "fit artifacts: codebook shape does not match config");
    fa.layout = make_layout(fa.codebook.D, fa.codec.bins);
    return fa;
}

}  // namespace

void write_ppm(const Image& img, const std::string& path) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw IoError("ppm: cannot open for write: " + path);
    f << "P6\n" << img.width << " " << img.height << "\n255\n";
    std::vector<unsigned char> row(static_cast<size_t>(img.width) * 3);
    for (int r = 0; r < img.height; ++r) {
        for (int c = 0; c < img.width; ++c) {
            for (int ch = 0; ch < 3; ++ch) {
                const float v = std::clamp(img.at(r, c, ch % img.channels), 0.0f, 1.0f);
                row[static_cast<size_t>(c) * 3 + ch] =
                    static_cast<unsigned char>(std::lround(v * 255.0f));
            }
        }
        f.write(reinterpret_cast<const char*>(row.data()), static_cast<std::streamsize>(row.size()));
    }
    if (!f) throw IoError("ppm: write failed: " + path);
}

void write_stamp(const std::string& path, const RunConfig& rc, const std::string& command,
                 const nlohmann::json& extra) {
    const nlohmann::json cj = config_to_json(rc);
    nlohmann::json j;
    j["command"] = command;
    j["config_hash"] = config_hash(cj);
    j["config"] = cj;
    j["format_versions"] = {{"codec", 1},      {"codebook", 1}, {"record", 1},
                            {"raw", 1},        {"manifest", 1}, {"scenario", 1},
                            {"checkpoint", 1}};
    if (!extra.empty()) j["extra"] = extra;
    std::ofstream f(path, std::ios::binary);
    if (!f) throw IoError("stamp: cannot open for write: " + path);
    f << j.dump(2) << "\n";
    if (!f) throw IoError("stamp: write failed: " + path);
}

void cmd_gen_data(const RunConfig& rc, const std::string& out_dir) {
    validate_config(rc);
    DataPaths paths{out_dir};
    make_dirs(paths.scenarios_dir());
    make_dirs(paths.raw_dir());
    make_dirs(paths.eval_dir());

    for (int i = 0; i < rc.n_sequences; ++i) {
        const Scenario sc = gen_scenario(rc.seeds.world + static_cast<uint64_t>(i), rc.world);
        save_scenario(sc, paths.scenarios_dir() + "/" + scenario_name(i));
        const RawSequence raw = build_raw_sequence(sc, rc.world);
        save_raw_sequence(raw, paths.raw_dir() + "/" + seq_name(i, "dgrw"));
    }
    for (int i = 0; i < rc.n_eval_scenarios; ++i) {
        const Scenario sc = gen_scenario(rc.seeds.eval_world + static_cast<uint64_t>(i), rc.world);
        save_scenario(sc, paths.eval_dir() + "/" + scenario_name(i));
    }
    write_stamp(out_dir + "/gen_stamp.json", rc, "gen-data");
}

std::vector<RawSequence> load_raws(const std::string& data_dir) {
    DataPaths paths{data_dir};
    std::vector<RawSequence> raws;
    for (int i = 0;; ++i) {
        const std::string p = paths.raw_dir() + "/" + seq_name(i, "dgrw");
        if (!fs::exists(p)) break;
        raws.push_back(load_raw_sequence(p));
    }
    require(!raws.empty(), "no raw sequences under " + data_dir + "/raw (run gen-data first)");
    return raws;
}

std::vector<Scenario> load_scenario_dir(const std::string& dir, std::vector<std::string>* names) {
    std::vector<std::string> files;
    std::error_code ec;
    for (const auto& entry : fs::directory_iterator(dir, ec)) {
        if (entry.path().extension() == ".json") files.push_back(entry.path().string());
    }
    if (ec) throw IoError("cannot list scenario dir " + dir + ": " + ec.message());
    std::sort(files.begin(), files.end());
    require(!files.empty(), "no scenario files under " + dir);
    std::vector<Scenario> out;
    out.reserve(files.size());
    for (const std::string& f : files) {
        out.push_back(load_scenario(f));
        if (names) names->push_back(fs::path(f).stem().string());
    }
    return out;
}

void cmd_fit(const RunConfig& rc, const std::string& data_dir) {
    validate_config(rc);
    DataPaths paths{data_dir};
    const std::vector<RawSequence> raws = load_raws(data_dir);

    // Codebook: k-means over patches of a deterministic image subsample.
    std::vector<Image> fit_images;
    size_t total_frames = 0;
    for (const RawSequence& r : raws) total_frames += r.frames.size();
    const int grid = (rc.world.image_size / rc.tokenizer_S) * (rc.world.image_size / rc.tokenizer_S);
    const size_t max_images = std::max<size_t>(1, static_cast<size_t>(rc.fit_max_patches) / grid);
    const size_t stride = std::max<size_t>(1, total_frames / max_images);
    size_t frame_counter = 0;
    for (const RawSequence& r : raws)
        for (const Image& img : r.frames)
            if (frame_counter++ % stride == 0) fit_images.push_back(img);
    const Codebook cb = fit_codebook(fit_images, rc.tokenizer_D, rc.tokenizer_S,
                                     mix_seed(rc.seeds.world, 0xc0deb00c), rc.kmeans_iters);
    save_codebook(cb, paths.codebook_file());

    // Codec bounds from the raw training actions.
    std::vector<RelativeAction> actions;
    for (const RawSequence& r : raws)
        actions.insert(actions.end(), r.actions.begin(), r.actions.end());
    const ActionCodec codec = fit_codec(actions, rc.codec_M, rc.codec_lo_pct, rc.codec_hi_pct);
    save_codec(codec, paths.codec_file());

    // Tokenized container.
    make_dirs(paths.tokenized_dir());
    const VocabLayout layout = make_layout(rc.tokenizer_D, rc.codec_M);
    DatasetManifest man;
    man.D = rc.tokenizer_D;
    man.M = rc.codec_M;
    man.S = rc.tokenizer_S;
    man.H = rc.world.image_size;
    man.W = rc.world.image_size;
    man.T = rc.world.frames_per_seq;
    man.frame_hz = rc.world.frame_hz;
    man.codec_file = "../codec.json";
    man.codebook_file = "../codebook.dgcb";
    for (size_t i = 0; i < raws.size(); ++i) {
        const RawSequence& r = raws[i];
        DrivingSequence seq;
        seq.frames.resize(r.frames.size());
        for (size_t t = 0; t < r.frames.size(); ++t) {
            seq.frames[t].grid = encode_image(r.frames[t], cb).indices;
            seq.frames[t].action = encode_action(r.actions[t], codec);
        }
        SequenceRecord rec;
        rec.ids = serialize(seq, layout);
        rec.tokens_per_frame = seq.tokens_per_frame();
        rec.actions = r.actions;
        const std::string name = seq_name(static_cast<int>(i), "dgsq");
        save_record(rec, paths.tokenized_dir() + "/" + name);
        man.sequences.push_back(name);
    }
    save_manifest(man, paths.manifest_file());
    write_stamp(data_dir + "/fit_stamp.json", rc, "fit");
}

TrainResult cmd_train(const RunConfig& rc, const std::string& data_dir,
                      const std::string& out_ckpt,
                      const std::function<void(const TrainLogEntry&)>& on_log) {
    validate_config(rc);
    DataPaths paths{data_dir};
    const FitArtifacts fa = load_fit(paths, rc);
    const std::vector<RawSequence> raws = load_raws(data_dir);
    const TrainingData data(raws, fa.codebook, fa.codec, fa.layout, rc.action_posemb);
    require(data.tokens_per_frame() == rc.tokens_per_frame(),
            "train: dataset tokens_per_frame does not match config");

    Network<float> net = Network<float>::init(make_model_config(rc));
    AdamWState<float> opt = AdamWState<float>::like(net.config());
    const TrainResult result = train_model(net, data, rc.train, rc.seeds.train, &opt, on_log);

    save_checkpoint(out_ckpt, net.config(), net.params(), &opt);
    nlohmann::json log;
    log["entries"] = nlohmann::json::array();
    for (const TrainLogEntry& e : result.log) {
        nlohmann::json je = {{"step", e.step}, {"loss", e.loss}, {"grad_norm", e.grad_norm}};
        if (e.eval_nll >= 0) je["eval_nll"] = e.eval_nll;
        log["entries"].push_back(je);
    }
    log["final_eval_nll"] = result.final_eval_nll;
    log["wall_seconds"] = result.wall_seconds;
    {
        std::ofstream f(out_ckpt + ".log.json", std::ios::binary);
        if (!f) throw IoError("train: cannot write log next to " + out_ckpt);
        f << log.dump(2) << "\n";
    }
    write_stamp(out_ckpt + ".stamp.json", rc, "train",
                {{"final_eval_nll", result.final_eval_nll}});
    return result;
}

void cmd_generate(const RunConfig& rc, const std::string& ckpt_path, const std::string& data_dir,
                  int seq_index, int seed_frames, int total_frames, const std::string& out_dir,
                  bool dump_frames) {
    validate_config(rc);
    DataPaths paths{data_dir};
    const FitArtifacts fa = load_fit(paths, rc);
    const DatasetManifest man = load_manifest(paths.manifest_file());
    require(seq_index >= 0 && seq_index < static_cast<int>(man.sequences.size()),
            "generate: sequence index out of range");
    const SequenceRecord rec =
        load_record(paths.tokenized_dir() + "/" + man.sequences[static_cast<size_t>(seq_index)]);
    const DrivingSequence full = deserialize(rec.ids, fa.layout, rec.tokens_per_frame);
    require(seed_frames >= 1 && seed_frames <= full.size(),
            "generate: seed frame count out of range");

    const Checkpoint ck = load_checkpoint(ckpt_path);
    DrivingSequence seed_seq;
    seed_seq.frames.assign(full.frames.begin(), full.frames.begin() + seed_frames);

    RolloutConfig rcfg = rc.rollout;
    if (total_frames > 0) rcfg.total_frames = total_frames;
    rcfg.window_condition = std::min(rcfg.window_condition, seed_frames);
    const DrivingSequence gen =
        long_rollout(ck.net, fa.layout, seed_seq, rcfg, rc.sampler, rc.sampler.seed);

    make_dirs(out_dir);
    DrivingSequence whole;
    whole.frames = seed_seq.frames;
    whole.frames.insert(whole.frames.end(), gen.frames.begin(), gen.frames.end());
    SequenceRecord out_rec;
    out_rec.ids = serialize(whole, fa.layout);
    out_rec.tokens_per_frame = whole.tokens_per_frame();
    for (const Frame& f : whole.frames)
        out_rec.actions.push_back(decode_action(f.action, fa.codec));
    save_record(out_rec, out_dir + "/rollout.dgsq");

    const int gh = rc.world.image_size / fa.codebook.S;
    Image strip = Image::zeros(rc.world.image_size,
                               rc.world.image_size * whole.size(), 3);
    for (int i = 0; i < whole.size(); ++i) {
        TokenGrid grid{gh, gh, whole.frames[static_cast<size_t>(i)].grid};
        const Image img = decode_grid(grid, fa.codebook);
        for (int r = 0; r < img.height; ++r)
            for (int c = 0; c < img.width; ++c)
                for (int ch = 0; ch < 3; ++ch)
                    strip.at(r, i * rc.world.image_size + c, ch) = img.at(r, c, ch);
        if (dump_frames) {
            char buf[32];
            std::snprintf(buf, sizeof(buf), "frame_%03d.ppm", i);
            write_ppm(img, out_dir + "/" + buf);
        }
    }
    write_ppm(strip, out_dir + "/strip.ppm");
    write_stamp(out_dir + "/run_stamp.json", rc, "generate",
                {{"checkpoint", ckpt_path},
                 {"seq_index", seq_index},
                 {"seed_frames", seed_frames},
                 {"total_frames", rcfg.total_frames}});
}

DrivingSequence history_sequence(const Scenario& sc, const WorldConfig& wcfg, const Codebook& cb,
                                 const ActionCodec& codec, const EvalProtocol& proto) {
    const int H = proto.history_frames;
    require(H >= 2, "history_sequence: need at least 2 history frames");
    require(sc.frame_tick(H - 1) < sc.ticks(), "history_sequence: scenario log too short");
    const std::vector<RelativeAction> hist = history_actions(sc, proto);
    DrivingSequence seq;
    seq.frames.resize(static_cast<size_t>(H));
    for (int k = 0; k < H; ++k) {
        const Image img = render_at_tick(sc, sc.frame_tick(k), wcfg);
        seq.frames[static_cast<size_t>(k)].grid = encode_image(img, cb).indices;
        // the last frame's action is withheld from planners; plan() strips it
        seq.frames[static_cast<size_t>(k)].action =
            k < H - 1 ? encode_action(hist[static_cast<size_t>(k)], codec) : ActionTokens{0, 0, 0};
    }
    return seq;
}

std::vector<RelativeAction> ModelPlanner::plan_actions(const Scenario& sc) const {
    const DrivingSequence hist = history_sequence(sc, wcfg, *codebook, *codec, proto);
    const PlanResult pr = plan(*net, layout, *codec, hist, proto.future_frames, sampler,
                               mix_seed(seed, sc.seed));
    return pr.actions;
}

Trajectory ModelPlanner::operator()(const Scenario& sc, const EvalProtocol&) const {
    return integrate(plan_actions(sc));
}

EvalReport cmd_evaluate(const RunConfig& rc, const std::string& ckpt_path,
                        const std::string& data_dir, const std::string& scenarios_dir,
                        const std::string& out_dir, bool sample_actions) {
    validate_config(rc);
    DataPaths paths{data_dir};
    const FitArtifacts fa = load_fit(paths, rc);
    const Checkpoint ck = load_checkpoint(ckpt_path);
    std::vector<std::string> names;
    const std::vector<Scenario> scenarios = load_scenario_dir(scenarios_dir, &names);

    // Greedy decoding keeps PDMS runs deterministic; sampling is opt-in.
    SamplerConfig sc = rc.sampler;
    sc.greedy = !sample_actions;
    ModelPlanner planner{&ck.net, fa.layout, &fa.codec, &fa.codebook,
                         rc.world, rc.evaluator, sc, rc.sampler.seed};
    const EvalReport report =
        evaluate_planner([&](const Scenario& s, const EvalProtocol& p) { return planner(s, p); },
                         scenarios, rc.evaluator, &names);

    make_dirs(out_dir);
    {
        std::ofstream f(out_dir + "/report.json", std::ios::binary);
        if (!f) throw IoError("evaluate: cannot write report.json under " + out_dir);
        f << report_to_json(report);
    }
    {
        std::ofstream f(out_dir + "/report.txt", std::ios::binary);
        if (!f) throw IoError("evaluate: cannot write report.txt under " + out_dir);
        f << report_table({{"model", report}});
    }
    write_stamp(out_dir + "/run_stamp.json", rc, "evaluate", {{"checkpoint", ckpt_path}});
    return report;
}

std::string cmd_ablate(const RunConfig& rc, const std::string& ckpt_path,
                       const std::optional<std::string>& variant_ckpt,
                       const std::string& data_dir, const std::string& scenarios_dir,
                       const std::vector<std::string>& variants, const std::string& out_dir) {
    validate_config(rc);
    static const std::vector<std::string> known = {"copy-x",   "copy-y",    "copy-theta",
                                                   "copy-all", "const-vel", "no-action-posemb"};
    for (const std::string& v : variants)
        require(std::find(known.begin(), known.end(), v) != known.end(),
                "ablate: unknown variant: " + v);

    DataPaths paths{data_dir};
    const FitArtifacts fa = load_fit(paths, rc);
    const Checkpoint ck = load_checkpoint(ckpt_path);
    std::vector<std::string> names;
    const std::vector<Scenario> scenarios = load_scenario_dir(scenarios_dir, &names);
    const EvalProtocol& proto = rc.evaluator;

    SamplerConfig sc = rc.sampler;
    sc.greedy = true;
    ModelPlanner planner{&ck.net, fa.layout, &fa.codec, &fa.codebook,
                         rc.world, proto, sc, rc.sampler.seed};

    const bool want_posemb_ablation =
        std::find(variants.begin(), variants.end(), "no-action-posemb") != variants.end();
    std::optional<Checkpoint> variant;
    if (want_posemb_ablation) {
        std::string vp;
        if (variant_ckpt) {
            vp = *variant_ckpt;
        } else {
            RunConfig vrc = rc;
            vrc.action_posemb = false;
            vp = out_dir + "/no_action_posemb.dgck";
            std::error_code ec;
            std::filesystem::create_directories(out_dir, ec);
            if (ec) throw IoError("ablate: cannot create " + out_dir + ": " + ec.message());
            cmd_train(vrc, data_dir, vp, nullptr);
        }
        variant = load_checkpoint(vp);
        require(!variant->cfg.action_posemb,
                "ablate: variant checkpoint was trained with action positions enabled");
    }

    std::vector<std::string> row_names = {"full"};
    for (const std::string& v : variants) row_names.push_back(v);
    std::vector<EvalReport> reports(row_names.size());
    for (auto& r : reports) r.scenarios.reserve(scenarios.size());

    for (size_t i = 0; i < scenarios.size(); ++i) {
        const Scenario& s = scenarios[i];
        const std::vector<RelativeAction> hist = history_actions(s, proto);
        std::vector<RelativeAction> pred;
        std::string plan_error;
        try {
            pred = planner.plan_actions(s);
        } catch (const std::exception& e) {
            plan_error = e.what();
        }
        for (size_t v = 0; v < row_names.size(); ++v) {
            const std::string& row = row_names[v];
            ScenarioScore ss;
            ss.name = names[i];
            try {
                Trajectory traj;
                if (row == "const-vel") {
                    traj = baseline_constant_velocity(hist, proto.future_frames);
                } else if (row == "no-action-posemb") {
                    ModelPlanner vplanner{&variant->net, fa.layout,   &fa.codec,
                                          &fa.codebook,  rc.world,    proto,
                                          sc,            rc.sampler.seed};
                    traj = integrate(vplanner.plan_actions(s));
                } else {
                    if (!plan_error.empty()) throw DecodeError(plan_error);
                    if (row == "full") {
                        traj = integrate(pred);
                    } else if (row == "copy-x") {
                        traj = ablate_copy(CopyComponent::x, pred, hist);
                    } else if (row == "copy-y") {
                        traj = ablate_copy(CopyComponent::y, pred, hist);
                    } else if (row == "copy-theta") {
                        traj = ablate_copy(CopyComponent::theta, pred, hist);
                    } else {  // copy-all
                        std::vector<RelativeAction> acts(
                            static_cast<size_t>(proto.future_frames), hist.back());
                        traj = integrate(acts);
                    }
                }
                const Timeline tl = rollout_nonreactive(traj, s, proto);
                ss.sub = score_all(tl, s, proto);
                ss.pdms = pdms(ss.sub, proto);
            } catch (const std::exception& e) {
                ss.planner_failed = true;
                ss.error = e.what();
            }
            reports[v].scenarios.push_back(std::move(ss));
        }
    }
    for (EvalReport& rep : reports) {
        const double n = static_cast<double>(rep.scenarios.size());
        for (const ScenarioScore& ss : rep.scenarios) {
            rep.mean.nc += ss.sub.nc / n;
            rep.mean.dac += ss.sub.dac / n;
            rep.mean.ttc += ss.sub.ttc / n;
            rep.mean.comf += ss.sub.comf / n;
            rep.mean.ep += ss.sub.ep / n;
            rep.pdms += ss.pdms / n;
        }
    }

    std::vector<std::pair<std::string, EvalReport>> rows;
    nlohmann::json jall;
    for (size_t v = 0; v < row_names.size(); ++v) {
        rows.emplace_back(row_names[v], reports[v]);
        jall[row_names[v]] = nlohmann::json::parse(report_to_json(reports[v]));
    }
    const std::string table = report_table(rows);

    make_dirs(out_dir);
    {
        std::ofstream f(out_dir + "/ablate_report.json", std::ios::binary);
        if (!f) throw IoError("ablate: cannot write report under " + out_dir);
        f << jall.dump(2) << "\n";
    }
    {
        std::ofstream f(out_dir + "/ablate_table.txt", std::ios::binary);
        if (!f) throw IoError("ablate: cannot write table under " + out_dir);
        f << table;
    }
    write_stamp(out_dir + "/run_stamp.json", rc, "ablate", {{"checkpoint", ckpt_path}});
    return table;
}

void cmd_plan(const RunConfig& rc, const std::string& ckpt_path, const std::string& data_dir,
              const std::string& scenario_path, const std::string& out_path) {
    validate_config(rc);
    DataPaths paths{data_dir};
    const FitArtifacts fa = load_fit(paths, rc);
    const Checkpoint ck = load_checkpoint(ckpt_path);
    const Scenario sc = load_scenario(scenario_path);

    SamplerConfig samp = rc.sampler;
    samp.greedy = true;
    const DrivingSequence hist =
        history_sequence(sc, rc.world, fa.codebook, fa.codec, rc.evaluator);
    const PlanResult pr = plan(ck.net, fa.layout, fa.codec, hist, rc.evaluator.future_frames,
                               samp, mix_seed(rc.sampler.seed, sc.seed));

    nlohmann::json j;
    j["actions"] = nlohmann::json::array();
    for (const RelativeAction& a : pr.actions) j["actions"].push_back({a.dx, a.dy, a.dtheta});
    j["poses"] = nlohmann::json::array();
    for (const Transform2& t : pr.trajectory)
        j["poses"].push_back({t.x(), t.y(), t.heading()});
    std::ofstream f(out_path, std::ios::binary);
    if (!f) throw IoError("plan: cannot open for write: " + out_path);
    f << j.dump(2) << "\n";
    if (!f) throw IoError("plan: write failed: " + out_path);
    write_stamp(out_path + ".stamp.json", rc, "plan",
                {{"checkpoint", ckpt_path}, {"scenario", scenario_path}});
}

}  // namespace pipeline
}  // namespace dvl
