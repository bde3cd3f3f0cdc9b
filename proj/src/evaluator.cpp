#include "drivelang/evaluator.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include <nlohmann/json.hpp>

namespace dvl {

namespace {

double wrap_angle(double a) {
    return a - 2.0 * M_PI * std::floor((a + M_PI) / (2.0 * M_PI));
}

int anchor_tick(const Scenario& sc, const EvalProtocol& proto) {
    return sc.frame_tick(proto.history_frames - 1);
}

int sim_ticks(const Scenario& sc, const EvalProtocol& proto) {
    return static_cast<int>(std::lround(proto.sim_seconds * sc.tick_hz));
}

std::array<double, 2> corner(const std::array<double, 3>& pose, double l, double w, int which) {
    const double sx = (which == 0 || which == 3) ? 0.5 : -0.5;
    const double sy = (which == 0 || which == 1) ? 0.5 : -0.5;
    const double c = std::cos(pose[2]);
    const double s = std::sin(pose[2]);
    const double lx = sx * l;
    const double ly = sy * w;
    return {pose[0] + c * lx - s * ly, pose[1] + s * lx + c * ly};
}

}  // namespace

bool rects_overlap(const std::array<double, 3>& pose_a, double la, double wa,
                   const std::array<double, 3>& pose_b, double lb, double wb) {
    std::array<std::array<double, 2>, 4> ca, cb;
    for (int i = 0; i < 4; ++i) {
        ca[i] = corner(pose_a, la, wa, i);
        cb[i] = corner(pose_b, lb, wb, i);
    }
    const std::array<std::array<double, 2>, 4> axes = {{
        {std::cos(pose_a[2]), std::sin(pose_a[2])},
        {-std::sin(pose_a[2]), std::cos(pose_a[2])},
        {std::cos(pose_b[2]), std::sin(pose_b[2])},
        {-std::sin(pose_b[2]), std::cos(pose_b[2])},
    }};
    for (const auto& ax : axes) {
        double amin = std::numeric_limits<double>::infinity(), amax = -amin;
        double bmin = amin, bmax = -amin;
        for (int i = 0; i < 4; ++i) {
            const double pa = ca[i][0] * ax[0] + ca[i][1] * ax[1];
            const double pb = cb[i][0] * ax[0] + cb[i][1] * ax[1];
            amin = std::min(amin, pa);
            amax = std::max(amax, pa);
            bmin = std::min(bmin, pb);
            bmax = std::max(bmax, pb);
        }
        if (amax < bmin || bmax < amin) return false;  // separating axis found
    }
    return true;
}

Timeline rollout_nonreactive(const Trajectory& traj, const Scenario& sc,
                             const EvalProtocol& proto) {
    const int n_sim = sim_ticks(sc, proto);
    const double frames_needed = proto.sim_seconds * sc.frame_hz;
    require(static_cast<double>(traj.size()) >= frames_needed - 1e-9,
            "rollout: trajectory shorter than the simulation duration");
    const int a_tick = anchor_tick(sc, proto);
    require(a_tick >= 0 && a_tick + n_sim < sc.ticks(), "rollout: scenario log too short");

    const Transform2 anchor = ego_transform(sc, a_tick);
    Timeline tl(n_sim + 1);
    const double ticks_per_frame = sc.tick_hz / sc.frame_hz;
    for (int t = 0; t <= n_sim; ++t) {
        const double f = t / ticks_per_frame;
        const int k = std::min(static_cast<int>(std::floor(f)), static_cast<int>(traj.size()) - 1);
        const double alpha = f - k;
        // knot 0 is the anchor itself; knot j>0 is traj[j-1]
        const auto knot = [&](int j) -> std::array<double, 3> {
            if (j <= 0) return {0.0, 0.0, 0.0};
            const Transform2& p = traj[std::min<size_t>(j - 1, traj.size() - 1)];
            return {p.x(), p.y(), p.heading()};
        };
        const std::array<double, 3> p0 = knot(k);
        const std::array<double, 3> p1 = knot(k + 1);
        const double lx = p0[0] + alpha * (p1[0] - p0[0]);
        const double ly = p0[1] + alpha * (p1[1] - p0[1]);
        const double lth = p0[2] + alpha * wrap_angle(p1[2] - p0[2]);
        const double c = std::cos(anchor.heading());
        const double s = std::sin(anchor.heading());
        tl[t] = {anchor.x() + c * lx - s * ly, anchor.y() + s * lx + c * ly,
                 wrap_angle(anchor.heading() + lth)};
    }
    return tl;
}

double score_nc(const Timeline& tl, const Scenario& sc, const EvalProtocol& proto) {
    const int a_tick = anchor_tick(sc, proto);
    for (size_t t = 0; t < tl.size(); ++t) {
        const int tick = a_tick + static_cast<int>(t);
        for (const AgentTrack& ag : sc.agents) {
            if (rects_overlap(tl[t], sc.ego_length, sc.ego_width, ag.poses[tick], ag.length,
                              ag.width))
                return 0.0;
        }
    }
    return 1.0;
}

double score_dac(const Timeline& tl, const Scenario& sc, const EvalProtocol&) {
    for (const auto& pose : tl) {
        for (int i = 0; i < 4; ++i) {
            const auto c = corner(pose, sc.ego_length, sc.ego_width, i);
            if (sc.road.project(c[0], c[1]).dist > sc.road.half_width) return 0.0;
        }
    }
    return 1.0;
}

namespace {

// Velocity over a trailing window of one frame period; smooth across the
// piecewise-linear resampling knots.
std::array<double, 2> velocity_at(const Timeline& tl, size_t t, int window, double dt) {
    const size_t hi = std::min(t + static_cast<size_t>(window), tl.size() - 1);
    const size_t lo = hi >= static_cast<size_t>(window) ? hi - window : 0;
    if (hi == lo) return {0.0, 0.0};
    const double inv = 1.0 / ((hi - lo) * dt);
    return {(tl[hi][0] - tl[lo][0]) * inv, (tl[hi][1] - tl[lo][1]) * inv};
}

std::array<double, 2> agent_velocity_at(const AgentTrack& ag, int tick, int window, double dt) {
    const int hi = std::min(tick + window, static_cast<int>(ag.poses.size()) - 1);
    const int lo = std::max(hi - window, 0);
    if (hi == lo) return {0.0, 0.0};
    const double inv = 1.0 / ((hi - lo) * dt);
    return {(ag.poses[hi][0] - ag.poses[lo][0]) * inv, (ag.poses[hi][1] - ag.poses[lo][1]) * inv};
}

}  // namespace

double score_ttc(const Timeline& tl, const Scenario& sc, const EvalProtocol& proto) {
    const int a_tick = anchor_tick(sc, proto);
    const double dt = 1.0 / sc.tick_hz;
    const int window = sc.ticks_per_frame();
    for (size_t t = 0; t < tl.size(); ++t) {
        const int tick = a_tick + static_cast<int>(t);
        const auto ev = velocity_at(tl, t, window, dt);
        for (const AgentTrack& ag : sc.agents) {
            const auto av = agent_velocity_at(ag, tick, window, dt);
            for (double tau = 0.05; tau < proto.ttc_horizon - 1e-9; tau += 0.05) {
                const std::array<double, 3> ep = {tl[t][0] + ev[0] * tau, tl[t][1] + ev[1] * tau,
                                                  tl[t][2]};
                const std::array<double, 3> ap = {ag.poses[tick][0] + av[0] * tau,
                                                  ag.poses[tick][1] + av[1] * tau,
                                                  ag.poses[tick][2]};
                if (rects_overlap(ep, sc.ego_length, sc.ego_width, ap, ag.length, ag.width))
                    return 0.0;
            }
        }
    }
    return 1.0;
}

double score_comf(const Timeline& tl, const Scenario& sc, const EvalProtocol& proto) {
    // Derivatives are estimated at the planning frame rate; the resampled
    // timeline is piecewise linear, so tighter differencing only measures the
    // interpolation knots.
    const int step = sc.ticks_per_frame();
    const double rate = sc.frame_hz;
    const int a_tick = anchor_tick(sc, proto);

    std::vector<std::array<double, 3>> knots;
    // one pre-anchor knot from the logged history so launch jerk is visible
    if (a_tick - step >= 0) knots.push_back(sc.ego_poses[a_tick - step]);
    for (size_t t = 0; t < tl.size(); t += static_cast<size_t>(step)) knots.push_back(tl[t]);

    std::vector<std::array<double, 2>> vel;
    for (size_t k = 0; k + 1 < knots.size(); ++k) {
        vel.push_back({(knots[k + 1][0] - knots[k][0]) * rate,
                       (knots[k + 1][1] - knots[k][1]) * rate});
        const double yaw_rate = wrap_angle(knots[k + 1][2] - knots[k][2]) * rate;
        if (std::abs(yaw_rate) > proto.max_yaw_rate) return 0.0;
    }
    for (size_t k = 0; k + 1 < vel.size(); ++k) {
        const double ax = (vel[k + 1][0] - vel[k][0]) * rate;
        const double ay = (vel[k + 1][1] - vel[k][1]) * rate;
        const double h = knots[k + 1][2];
        const double lon = std::cos(h) * ax + std::sin(h) * ay;
        const double lat = -std::sin(h) * ax + std::cos(h) * ay;
        if (std::abs(lon) > proto.max_lon_accel || std::abs(lat) > proto.max_lat_accel) return 0.0;
    }
    return 1.0;
}

double score_ep(const Timeline& tl, const Scenario& sc, const EvalProtocol& proto) {
    const int a_tick = anchor_tick(sc, proto);
    const int n_sim = static_cast<int>(tl.size()) - 1;
    const double s_start = sc.road.project(tl.front()[0], tl.front()[1]).s;
    const double s_end = sc.road.project(tl.back()[0], tl.back()[1]).s;
    const double gt_start = sc.road.project(sc.ego_poses[a_tick][0], sc.ego_poses[a_tick][1]).s;
    const double gt_end = sc.road.project(sc.ego_poses[a_tick + n_sim][0],
                                          sc.ego_poses[a_tick + n_sim][1]).s;
    const double gt_progress = gt_end - gt_start;
    if (gt_progress < 0.1) return 1.0;
    const double progress = std::max(0.0, s_end - s_start);
    return std::clamp(progress / gt_progress, 0.0, 1.0);
}

SubScores score_all(const Timeline& tl, const Scenario& sc, const EvalProtocol& proto) {
    SubScores s;
    s.nc = score_nc(tl, sc, proto);
    s.dac = score_dac(tl, sc, proto);
    s.ttc = score_ttc(tl, sc, proto);
    s.comf = score_comf(tl, sc, proto);
    s.ep = score_ep(tl, sc, proto);
    return s;
}

double pdms(const SubScores& sub, const EvalProtocol& proto) {
    const double wsum = proto.w_ttc + proto.w_comf + proto.w_ep;
    return sub.nc * sub.dac *
           (proto.w_ttc * sub.ttc + proto.w_comf * sub.comf + proto.w_ep * sub.ep) / wsum;
}

std::vector<RelativeAction> history_actions(const Scenario& sc, const EvalProtocol& proto) {
    require(proto.history_frames >= 2, "history_actions: need at least 2 history frames");
    std::vector<Transform2> poses;
    for (int k = 0; k < proto.history_frames; ++k)
        poses.push_back(ego_transform(sc, sc.frame_tick(k)));
    return relativize(poses);
}

std::vector<RelativeAction> future_actions(const Scenario& sc, const EvalProtocol& proto) {
    std::vector<Transform2> poses;
    for (int k = proto.history_frames - 1; k < proto.history_frames + proto.future_frames; ++k) {
        require(sc.frame_tick(k) < sc.ticks(), "future_actions: scenario log too short");
        poses.push_back(ego_transform(sc, sc.frame_tick(k)));
    }
    return relativize(poses);
}

Trajectory baseline_constant_velocity(const std::vector<RelativeAction>& history, int horizon) {
    require(!history.empty(), "constant_velocity: empty history");
    require(horizon >= 1, "constant_velocity: horizon must be >= 1");
    std::vector<RelativeAction> acts(static_cast<size_t>(horizon),
                                     RelativeAction{history.back().dx, 0.0, 0.0});
    return integrate(acts);
}

Trajectory ablate_copy(CopyComponent which, const std::vector<RelativeAction>& predicted,
                       const std::vector<RelativeAction>& history) {
    require(!predicted.empty(), "ablate_copy: empty prediction");
    require(!history.empty(), "ablate_copy: empty history");
    const RelativeAction last = history.back();
    std::vector<RelativeAction> acts = predicted;
    for (RelativeAction& a : acts) {
        switch (which) {
            case CopyComponent::x: a.dx = last.dx; break;
            case CopyComponent::y: a.dy = last.dy; break;
            case CopyComponent::theta: a.dtheta = last.dtheta; break;
        }
    }
    return integrate(acts);
}

EvalReport evaluate_planner(const Planner& planner, const std::vector<Scenario>& scenarios,
                            const EvalProtocol& proto, const std::vector<std::string>* names) {
    require(!scenarios.empty(), "evaluate_planner: empty scenario set");
    EvalReport report;
    report.scenarios.reserve(scenarios.size());
    for (size_t i = 0; i < scenarios.size(); ++i) {
        ScenarioScore ss;
        ss.name = names && i < names->size() ? (*names)[i] : "scenario_" + std::to_string(i);
        try {
            const Trajectory traj = planner(scenarios[i], proto);
            const Timeline tl = rollout_nonreactive(traj, scenarios[i], proto);
            ss.sub = score_all(tl, scenarios[i], proto);
            ss.pdms = pdms(ss.sub, proto);
        } catch (const std::exception& e) {
            ss.planner_failed = true;
            ss.error = e.what();
            ss.sub = SubScores{};
            ss.pdms = 0.0;
        }
        report.scenarios.push_back(std::move(ss));
    }
    const double n = static_cast<double>(report.scenarios.size());
    for (const ScenarioScore& ss : report.scenarios) {
        report.mean.nc += ss.sub.nc / n;
        report.mean.dac += ss.sub.dac / n;
        report.mean.ttc += ss.sub.ttc / n;
        report.mean.comf += ss.sub.comf / n;
        report.mean.ep += ss.sub.ep / n;
        report.pdms += ss.pdms / n;
    }
    return report;
}

std::string report_to_json(const EvalReport& report) {
    nlohmann::json j;
    j["mean"] = {{"nc", report.mean.nc},   {"dac", report.mean.dac}, {"ttc", report.mean.ttc},
                 {"comf", report.mean.comf}, {"ep", report.mean.ep}};
    j["pdms"] = report.pdms;
    auto& arr = j["scenarios"];
    arr = nlohmann::json::array();
    for (const ScenarioScore& ss : report.scenarios) {
        nlohmann::json js;
        js["name"] = ss.name;
        js["nc"] = ss.sub.nc;
        js["dac"] = ss.sub.dac;
        js["ttc"] = ss.sub.ttc;
        js["comf"] = ss.sub.comf;
        js["ep"] = ss.sub.ep;
        js["pdms"] = ss.pdms;
        if (ss.planner_failed) js["error"] = ss.error;
        arr.push_back(js);
    }
    return j.dump(2) + "\n";
}

std::string report_table(const std::vector<std::pair<std::string, EvalReport>>& rows) {
    std::ostringstream os;
    os << std::left;
    os.setf(std::ios::fixed);
    os.precision(1);
    constexpr int name_w = 22;
    os.width(name_w);
    os << "Method";
    for (const char* col : {"NC", "DAC", "TTC", "Comf", "EP", "PDMS"}) {
        os.width(8);
        os << col;
    }
    os << "\n";
    for (const auto& [name, rep] : rows) {
        os.width(name_w);
        os << name;
        for (double v : {rep.mean.nc, rep.mean.dac, rep.mean.ttc, rep.mean.comf, rep.mean.ep,
                         rep.pdms}) {
            os.width(8);
            os << v * 100.0;
        }
        os << "\n";
    }
    return os.str();
}

}  // namespace dvl
