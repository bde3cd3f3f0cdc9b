#include "drivelang/world_sim.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <random>

#include <nlohmann/json.hpp>

namespace dvl {

namespace {

constexpr int kScenarioFormatVersion = 1;

double wrap_angle(double a) {
    return a - 2.0 * M_PI * std::floor((a + M_PI) / (2.0 * M_PI));
}

// Point-in-oriented-rectangle test in the rectangle's local frame.
bool point_in_rect(double px, double py, const std::array<double, 3>& pose, double length,
                   double width) {
    const double c = std::cos(pose[2]);
    const double s = std::sin(pose[2]);
    const double dx = px - pose[0];
    const double dy = py - pose[1];
    const double lx = c * dx + s * dy;
    const double ly = -s * dx + c * dy;
    return std::abs(lx) <= length * 0.5 && std::abs(ly) <= width * 0.5;
}

}  // namespace

void Road::finalize() {
    starts.clear();
    starts.reserve(segments.size());
    double x = 0.0, y = 0.0, theta = 0.0, cum = 0.0;
    for (const RoadSegment& seg : segments) {
        starts.push_back(SegStart{x, y, theta, cum});
        if (seg.kind == RoadSegment::Kind::straight) {
            x += seg.length * std::cos(theta);
            y += seg.length * std::sin(theta);
            cum += seg.length;
        } else {
            // center is radius to the left (angle > 0) or right of the heading
            const double sweep = seg.angle;
            const double side = sweep >= 0 ? 1.0 : -1.0;
            const double ccx = x - side * seg.radius * std::sin(theta);
            const double ccy = y + side * seg.radius * std::cos(theta);
            const double ux = x - ccx;
            const double uy = y - ccy;
            const double cs = std::cos(sweep);
            const double sn = std::sin(sweep);
            x = ccx + cs * ux - sn * uy;
            y = ccy + sn * ux + cs * uy;
            theta = wrap_angle(theta + sweep);
            cum += seg.arc_length();
        }
    }
    total_len = cum;
}

std::array<double, 3> Road::pose_at(double s) const {
    require(!segments.empty() && starts.size() == segments.size(), "road: not finalized");
    s = std::clamp(s, 0.0, total_len);
    size_t i = 0;
    while (i + 1 < segments.size() && starts[i + 1].cum_s <= s) ++i;
    const SegStart& st = starts[i];
    const RoadSegment& seg = segments[i];
    const double local = std::min(s - st.cum_s, seg.arc_length());
    if (seg.kind == RoadSegment::Kind::straight) {
        return {st.x + local * std::cos(st.theta), st.y + local * std::sin(st.theta), st.theta};
    }
    const double side = seg.angle >= 0 ? 1.0 : -1.0;
    const double sweep = side * local / seg.radius;
    const double ccx = st.x - std::sin(st.theta) * side * seg.radius;
    const double ccy = st.y + std::cos(st.theta) * side * seg.radius;
    const double ux = st.x - ccx;
    const double uy = st.y - ccy;
    const double cs = std::cos(sweep);
    const double sn = std::sin(sweep);
    return {ccx + cs * ux - sn * uy, ccy + sn * ux + cs * uy, wrap_angle(st.theta + sweep)};
}

Road::Projection Road::project(double px, double py) const {
    require(!segments.empty() && starts.size() == segments.size(), "road: not finalized");
    Projection best;
    best.dist = std::numeric_limits<double>::infinity();
    for (size_t i = 0; i < segments.size(); ++i) {
        const SegStart& st = starts[i];
        const RoadSegment& seg = segments[i];
        double cand_s, cand_lat, cand_dist;
        if (seg.kind == RoadSegment::Kind::straight) {
            const double dx = std::cos(st.theta);
            const double dy = std::sin(st.theta);
            const double ux = px - st.x;
            const double uy = py - st.y;
            const double along = std::clamp(ux * dx + uy * dy, 0.0, seg.length);
            const double cx = st.x + along * dx;
            const double cy = st.y + along * dy;
            cand_dist = std::hypot(px - cx, py - cy);
            cand_lat = dx * (py - cy) - dy * (px - cx);
            cand_s = st.cum_s + along;
        } else {
            const double side = seg.angle >= 0 ? 1.0 : -1.0;
            const double ccx = st.x - std::sin(st.theta) * side * seg.radius;
            const double ccy = st.y + std::cos(st.theta) * side * seg.radius;
            const double u0x = st.x - ccx;
            const double u0y = st.y - ccy;
            const double wx = px - ccx;
            const double wy = py - ccy;
            const double beta = std::atan2(u0x * wy - u0y * wx, u0x * wx + u0y * wy);
            double sweep;
            if (seg.angle >= 0)
                sweep = std::clamp(beta, 0.0, seg.angle);
            else
                sweep = std::clamp(beta, seg.angle, 0.0);
            const double cs = std::cos(sweep);
            const double sn = std::sin(sweep);
            const double cx = ccx + cs * u0x - sn * u0y;
            const double cy = ccy + sn * u0x + cs * u0y;
            cand_dist = std::hypot(px - cx, py - cy);
            const double th = st.theta + sweep;
            cand_lat = std::cos(th) * (py - cy) - std::sin(th) * (px - cx);
            cand_s = st.cum_s + seg.radius * std::abs(sweep);
        }
        if (cand_dist < best.dist) {
            best.dist = cand_dist;
            best.lateral = cand_lat;
            best.s = cand_s;
        }
    }
    return best;
}

void WorldConfig::validate() const {
    require(image_size >= 8, "world: image_size too small");
    require(tick_hz > 0 && frame_hz > 0, "world: rates must be positive");
    const double tpfd = tick_hz / frame_hz;
    require(std::abs(tpfd - std::lround(tpfd)) < 1e-9, "world: tick_hz must be a multiple of frame_hz");
    require(frames_per_seq >= 2, "world: frames_per_seq must be >= 2");
    require(min_radius >= 2.0 * wheelbase, "world: min radius infeasible for wheelbase");
    require(min_radius <= max_radius, "world: min_radius > max_radius");
    require(half_width > 0.5, "world: half_width too small");
    require(cruise_min > 0 && cruise_min <= cruise_max, "world: bad cruise speed range");
    require(accel > 0, "world: accel must be positive");
    require(lookahead > 1.0, "world: lookahead too small");
    require(anchor_row >= 0 && anchor_row < image_size && anchor_col >= 0 && anchor_col < image_size,
            "world: anchor outside image");
    require(meters_per_pixel > 0, "world: meters_per_pixel must be positive");
}

namespace {

// Piecewise target speed with rate-limited tracking.
struct SpeedEvent {
    double time_s;
    double target;
};

std::vector<double> build_speed_log(const std::vector<SpeedEvent>& events, double v0, int ticks,
                                    double dt, double accel) {
    std::vector<double> v(ticks);
    double cur = v0;
    for (int t = 0; t < ticks; ++t) {
        const double now = t * dt;
        double target = v0;
        for (const SpeedEvent& e : events)
            if (now >= e.time_s) target = e.target;
        const double dv = std::clamp(target - cur, -accel * dt, accel * dt);
        cur = std::max(0.0, cur + dv);
        v[t] = cur;
    }
    return v;
}

}  // namespace

Scenario gen_scenario(uint64_t seed, const WorldConfig& cfg) {
    cfg.validate();
    std::mt19937_64 rng(seed);

    Scenario sc;
    sc.seed = seed;
    sc.tick_hz = cfg.tick_hz;
    sc.frame_hz = cfg.frame_hz;
    sc.ego_length = cfg.ego_length;
    sc.ego_width = cfg.ego_width;

    const int tpframe = sc.ticks_per_frame();
    sc.clip_start_tick = 2 * tpframe;
    const int clip_ticks = (std::max(cfg.frames_per_seq, cfg.history_frames + cfg.future_frames)) *
                           tpframe;
    // margin covers the pose after the last frame, the 4 s rollout and TTC lookahead
    const int total_ticks =
        sc.clip_start_tick + clip_ticks + tpframe + static_cast<int>(2.0 * cfg.tick_hz) + 2;
    const double dt = 1.0 / cfg.tick_hz;

    // Road: straight lead-in long enough that followers spawn on pavement,
    // then alternating arcs and straights until the centerline comfortably
    // covers the whole drive.
    const double s0 = 30.0;
    const double reach = s0 + cfg.cruise_max * total_ticks * dt + cfg.lookahead + 30.0;
    sc.road.half_width = cfg.half_width;
    sc.road.segments.push_back(RoadSegment{
        RoadSegment::Kind::straight, s0 + uniform_range(rng, cfg.straight_min, cfg.straight_max), 0, 0});
    double built = sc.road.segments.back().length;
    bool next_arc = true;
    while (built < reach) {
        if (next_arc) {
            RoadSegment seg;
            seg.kind = RoadSegment::Kind::arc;
            seg.radius = uniform_range(rng, cfg.min_radius, cfg.max_radius);
            const double mag = uniform_range(rng, cfg.arc_angle_min, cfg.arc_angle_max);
            seg.angle = uniform01(rng) < 0.5 ? mag : -mag;
            sc.road.segments.push_back(seg);
        } else {
            sc.road.segments.push_back(RoadSegment{RoadSegment::Kind::straight,
                                                   uniform_range(rng, cfg.straight_min, cfg.straight_max), 0, 0});
        }
        built += sc.road.segments.back().arc_length();
        next_arc = !next_arc;
    }
    sc.road.finalize();

    // Speed profile. Events are placed relative to the last history frame so
    // clip windows regularly contain launches, brakes and speed changes.
    const double anchor_s =
        (sc.clip_start_tick + (cfg.history_frames - 1) * tpframe) * dt;
    const double v_cruise = uniform_range(rng, cfg.cruise_min, cfg.cruise_max);
    std::vector<SpeedEvent> events;
    double v0 = v_cruise;
    const double fam = uniform01(rng);
    bool stop_release_scene = false;
    if (fam < cfg.p_stop_release) {
        stop_release_scene = true;
        const double release = anchor_s + uniform_range(rng, 0.4, 1.8);
        const double dwell = uniform_range(rng, 1.5, 4.0);
        const double stop_from = release - dwell;
        if (stop_from <= 0.0) {
            v0 = 0.0;
        } else {
            events.push_back(SpeedEvent{stop_from, 0.0});
        }
        events.push_back(SpeedEvent{release, uniform_range(rng, cfg.cruise_min, cfg.cruise_max)});
    } else if (fam < cfg.p_stop_release + cfg.p_decel_stop) {
        events.push_back(SpeedEvent{anchor_s + uniform_range(rng, 0.2, 1.5), 0.0});
    } else if (fam < cfg.p_stop_release + cfg.p_decel_stop + cfg.p_speed_change) {
        events.push_back(SpeedEvent{anchor_s + uniform_range(rng, 0.0, 1.0),
                                    uniform_range(rng, cfg.cruise_min, cfg.cruise_max)});
    }
    if (v0 == 0.0) {
        // start from standstill; keep the pre-stop cruise speed out of the log
        std::vector<SpeedEvent> shifted;
        for (const SpeedEvent& e : events)
            if (e.target > 0.0) shifted.push_back(e);
        events = std::move(shifted);
    }
    sc.ego_speed = build_speed_log(events, v0, total_ticks, dt, cfg.accel);

    // Ego: pure pursuit along the centerline at the profile speed.
    const double kappa_max = 1.0 / (cfg.min_radius * 0.7);
    std::array<double, 3> pose = sc.road.pose_at(s0);
    sc.ego_poses.resize(total_ticks);
    for (int t = 0; t < total_ticks; ++t) {
        sc.ego_poses[t] = pose;
        const double v = sc.ego_speed[t];
        if (v > 0.0) {
            const Road::Projection prj = sc.road.project(pose[0], pose[1]);
            const std::array<double, 3> target = sc.road.pose_at(prj.s + cfg.lookahead);
            const double c = std::cos(pose[2]);
            const double s = std::sin(pose[2]);
            const double tx = target[0] - pose[0];
            const double ty = target[1] - pose[1];
            const double local_x = c * tx + s * ty;
            const double local_y = -s * tx + c * ty;
            const double d2 = local_x * local_x + local_y * local_y;
            double kappa = d2 > 1e-9 ? 2.0 * local_y / d2 : 0.0;
            kappa = std::clamp(kappa, -kappa_max, kappa_max);
            pose[0] += v * dt * std::cos(pose[2]);
            pose[1] += v * dt * std::sin(pose[2]);
            pose[2] = wrap_angle(pose[2] + v * dt * kappa);
        }
    }

    // Background agents: replayed logs, never reactive.
    const double l_avg = 0.5 * (cfg.ego_length + cfg.agent_length);
    int budget = static_cast<int>(rng() % static_cast<uint64_t>(cfg.max_agents + 1));
    if (stop_release_scene && uniform01(rng) < cfg.follower_prob) {
        // A constant-speed follower behind the ego. Spaced so the logged ego
        // always keeps a >= 1 s time-to-collision margin; a planner that fails
        // to launch after the stop gets run into.
        AgentTrack ag;
        ag.length = cfg.agent_length;
        ag.width = cfg.agent_width;
        const double v_f = uniform_range(rng, 3.2, 4.4);
        const double clearance = v_f * 1.0 + 3.0;
        double min_lead = std::numeric_limits<double>::infinity();
        for (int t = 0; t < total_ticks; ++t) {
            const Road::Projection prj = sc.road.project(sc.ego_poses[t][0], sc.ego_poses[t][1]);
            min_lead = std::min(min_lead, prj.s - v_f * t * dt);
        }
        const double s_f0 = min_lead - l_avg - clearance;
        ag.poses.resize(total_ticks);
        for (int t = 0; t < total_ticks; ++t) ag.poses[t] = sc.road.pose_at(s_f0 + v_f * t * dt);
        sc.agents.push_back(std::move(ag));
    }
    if (budget > 0 && uniform01(rng) < cfg.lead_prob) {
        AgentTrack ag;
        ag.length = cfg.agent_length;
        ag.width = cfg.agent_width;
        const double v_l = uniform_range(rng, cfg.cruise_max, cfg.cruise_max + 1.5);
        const double s_l0 = s0 + uniform_range(rng, 32.0, 55.0);
        ag.poses.resize(total_ticks);
        for (int t = 0; t < total_ticks; ++t) ag.poses[t] = sc.road.pose_at(s_l0 + v_l * t * dt);
        sc.agents.push_back(std::move(ag));
        --budget;
    }
    while (budget > 0) {
        if (uniform01(rng) < cfg.parked_prob) {
            // Parked off-road along a straight segment, clear of the TTC cone.
            std::vector<size_t> straights;
            for (size_t i = 0; i < sc.road.segments.size(); ++i)
                if (sc.road.segments[i].kind == RoadSegment::Kind::straight &&
                    sc.road.starts[i].cum_s < s0 + 130.0)
                    straights.push_back(i);
            if (!straights.empty()) {
                const size_t si = straights[rng() % straights.size()];
                const RoadSegment& seg = sc.road.segments[si];
                const Road::SegStart& st = sc.road.starts[si];
                const double along = uniform_range(rng, 0.0, seg.length);
                const double side = uniform01(rng) < 0.5 ? 1.0 : -1.0;
                const double off = cfg.half_width + 2.6 + uniform_range(rng, 0.0, 1.2);
                AgentTrack ag;
                ag.length = cfg.agent_length;
                ag.width = cfg.agent_width;
                const double px = st.x + along * std::cos(st.theta) - side * off * std::sin(st.theta);
                const double py = st.y + along * std::sin(st.theta) + side * off * std::cos(st.theta);
                ag.poses.assign(total_ticks, {px, py, st.theta});
                sc.agents.push_back(std::move(ag));
            }
        }
        --budget;
    }
    return sc;
}

WorldState state_at(const Scenario& sc, int tick) {
    require(tick >= 0 && tick < sc.ticks(), "state_at: tick out of range");
    WorldState ws;
    ws.ego_pose = sc.ego_poses[tick];
    ws.ego_speed = sc.ego_speed.empty() ? 0.0 : sc.ego_speed[tick];
    for (const AgentTrack& ag : sc.agents) {
        ws.agent_poses.push_back(ag.poses[tick]);
        ws.agent_dims.emplace_back(ag.length, ag.width);
    }
    return ws;
}

Image render(const WorldState& state, const Scenario& sc, const WorldConfig& cfg) {
    const int n = cfg.image_size;
    Image img = Image::zeros(n, n, 3);
    const double c = std::cos(state.ego_pose[2]);
    const double s = std::sin(state.ego_pose[2]);
    for (int r = 0; r < n; ++r) {
        for (int col = 0; col < n; ++col) {
            // pixel -> ego frame (+x forward/up, +y left), then into the map
            const double fx = (cfg.anchor_row - r) * cfg.meters_per_pixel;
            const double fy = (cfg.anchor_col - col) * cfg.meters_per_pixel;
            const double mx = state.ego_pose[0] + c * fx - s * fy;
            const double my = state.ego_pose[1] + s * fx + c * fy;
            float shade = cfg.shade_offroad;
            bool agent_hit = false;
            for (size_t a = 0; a < state.agent_poses.size(); ++a) {
                if (point_in_rect(mx, my, state.agent_poses[a], state.agent_dims[a].first,
                                  state.agent_dims[a].second)) {
                    agent_hit = true;
                    break;
                }
            }
            if (agent_hit)
                shade = cfg.shade_agent;
            else if (sc.road.on_road(mx, my))
                shade = cfg.shade_road;
            img.at(r, col, 0) = shade;
            img.at(r, col, 1) = shade;
            img.at(r, col, 2) = shade;
        }
    }
    return img;
}

Image render_at_tick(const Scenario& sc, int tick, const WorldConfig& cfg) {
    return render(state_at(sc, tick), sc, cfg);
}

Transform2 ego_transform(const Scenario& sc, int tick) {
    require(tick >= 0 && tick < sc.ticks(), "ego_transform: tick out of range");
    const auto& p = sc.ego_poses[tick];
    Transform2 t;
    const double c = std::cos(p[2]);
    const double s = std::sin(p[2]);
    t.m << c, -s, p[0],
           s,  c, p[1],
           0,  0, 1;
    return t;
}

RawSequence build_raw_sequence(const Scenario& sc, const WorldConfig& cfg) {
    const int T = cfg.frames_per_seq;
    require(sc.frame_tick(T) < sc.ticks(), "build_raw_sequence: scenario log too short");
    RawSequence raw;
    raw.frames.reserve(T);
    raw.poses.reserve(T + 1);
    std::vector<Transform2> tfs;
    tfs.reserve(T + 1);
    for (int k = 0; k <= T; ++k) {
        const int tick = sc.frame_tick(k);
        if (k < T) raw.frames.push_back(render_at_tick(sc, tick, cfg));
        raw.poses.push_back(sc.ego_poses[tick]);
        tfs.push_back(ego_transform(sc, tick));
    }
    raw.actions = relativize(tfs);
    return raw;
}

void save_scenario(const Scenario& sc, const std::string& path) {
    nlohmann::json j;
    j["format_version"] = kScenarioFormatVersion;
    j["seed"] = sc.seed;
    j["tick_hz"] = sc.tick_hz;
    j["frame_hz"] = sc.frame_hz;
    j["clip_start_tick"] = sc.clip_start_tick;
    j["ego_length"] = sc.ego_length;
    j["ego_width"] = sc.ego_width;
    j["road"]["half_width"] = sc.road.half_width;
    auto& segs = j["road"]["segments"];
    segs = nlohmann::json::array();
    for (const RoadSegment& s : sc.road.segments) {
        nlohmann::json js;
        if (s.kind == RoadSegment::Kind::straight) {
            js["type"] = "straight";
            js["length"] = s.length;
        } else {
            js["type"] = "arc";
            js["radius"] = s.radius;
            js["angle"] = s.angle;
        }
        segs.push_back(js);
    }
    j["ego_poses"] = sc.ego_poses;
    j["ego_speed"] = sc.ego_speed;
    auto& ags = j["agents"];
    ags = nlohmann::json::array();
    for (const AgentTrack& a : sc.agents) {
        nlohmann::json ja;
        ja["length"] = a.length;
        ja["width"] = a.width;
        ja["poses"] = a.poses;
        ags.push_back(ja);
    }
    std::ofstream f(path, std::ios::binary);
    if (!f) throw IoError("scenario: cannot open for write: " + path);
    f << j.dump() << "\n";
    if (!f) throw IoError("scenario: write failed: " + path);
}

Scenario load_scenario(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw IoError("scenario: cannot open: " + path);
    nlohmann::json j;
    try {
        f >> j;
        if (j.at("format_version").get<int>() != kScenarioFormatVersion)
            throw FormatError("scenario: unsupported format_version");
        Scenario sc;
        sc.seed = j.at("seed").get<uint64_t>();
        sc.tick_hz = j.at("tick_hz").get<double>();
        sc.frame_hz = j.at("frame_hz").get<double>();
        sc.clip_start_tick = j.at("clip_start_tick").get<int>();
        sc.ego_length = j.at("ego_length").get<double>();
        sc.ego_width = j.at("ego_width").get<double>();
        sc.road.half_width = j.at("road").at("half_width").get<double>();
        for (const auto& js : j.at("road").at("segments")) {
            RoadSegment s;
            if (js.at("type").get<std::string>() == "straight") {
                s.kind = RoadSegment::Kind::straight;
                s.length = js.at("length").get<double>();
            } else {
                s.kind = RoadSegment::Kind::arc;
                s.radius = js.at("radius").get<double>();
                s.angle = js.at("angle").get<double>();
            }
            sc.road.segments.push_back(s);
        }
        sc.road.finalize();
        sc.ego_poses = j.at("ego_poses").get<std::vector<std::array<double, 3>>>();
        sc.ego_speed = j.at("ego_speed").get<std::vector<double>>();
        for (const auto& ja : j.at("agents")) {
            AgentTrack a;
            a.length = ja.at("length").get<double>();
            a.width = ja.at("width").get<double>();
            a.poses = ja.at("poses").get<std::vector<std::array<double, 3>>>();
            sc.agents.push_back(std::move(a));
        }
        require(!sc.ego_poses.empty(), "scenario: empty ego log");
        for (const AgentTrack& a : sc.agents)
            require(a.poses.size() == sc.ego_poses.size(), "scenario: agent log length mismatch");
        return sc;
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(std::string("scenario: bad json: ") + e.what());
    }
}

}  // namespace dvl
