#pragma once

#include <functional>
#include <string>
#include <vector>

#include "drivelang/geometry.hpp"
#include "drivelang/world_sim.hpp"

namespace dvl {

struct EvalProtocol {
    int history_frames = 4;    // at the scenario frame rate
    int future_frames = 8;     // planning horizon
    double sim_seconds = 4.0;  // non-reactive rollout duration
    double ttc_horizon = 1.0;  // minimum admissible projected time to collision
    double max_lon_accel = 4.0;
    double max_lat_accel = 4.0;
    double max_yaw_rate = 1.0;
    double w_ttc = 5.0;
    double w_comf = 2.0;
    double w_ep = 5.0;
};

struct SubScores {
    double nc = 0.0;
    double dac = 0.0;
    double ttc = 0.0;
    double comf = 0.0;
    double ep = 0.0;
};

struct ScenarioScore {
    std::string name;
    SubScores sub;
    double pdms = 0.0;
    bool planner_failed = false;
    std::string error;
};

struct EvalReport {
    SubScores mean;
    double pdms = 0.0;
    std::vector<ScenarioScore> scenarios;
};

// Map-frame ego poses at simulator ticks over the rollout window.
using Timeline = std::vector<std::array<double, 3>>;

// Resample a planned trajectory (poses relative to the last history frame at
// the scenario frame rate) to simulator ticks by linear interpolation,
// anchored at the last history pose.
Timeline rollout_nonreactive(const Trajectory& traj, const Scenario& sc,
                             const EvalProtocol& proto);

// Oriented-rectangle overlap via the separating axis test.
bool rects_overlap(const std::array<double, 3>& pose_a, double la, double wa,
                   const std::array<double, 3>& pose_b, double lb, double wb);

double score_nc(const Timeline& tl, const Scenario& sc, const EvalProtocol& proto);
double score_dac(const Timeline& tl, const Scenario& sc, const EvalProtocol& proto);
double score_ttc(const Timeline& tl, const Scenario& sc, const EvalProtocol& proto);
double score_comf(const Timeline& tl, const Scenario& sc, const EvalProtocol& proto);
double score_ep(const Timeline& tl, const Scenario& sc, const EvalProtocol& proto);

SubScores score_all(const Timeline& tl, const Scenario& sc, const EvalProtocol& proto);

// NC * DAC * (w_ttc*TTC + w_comf*Comf + w_ep*EP) / (w_ttc + w_comf + w_ep).
double pdms(const SubScores& sub, const EvalProtocol& proto);

// History actions at the scenario frame rate: motions between frames
// 0..history_frames (the last one is the motion into the first future frame
// and is withheld from planners).
std::vector<RelativeAction> history_actions(const Scenario& sc, const EvalProtocol& proto);
std::vector<RelativeAction> future_actions(const Scenario& sc, const EvalProtocol& proto);

// Repeat the last observed longitudinal displacement along a straight heading.
Trajectory baseline_constant_velocity(const std::vector<RelativeAction>& history, int horizon);

enum class CopyComponent { x, y, theta };

// Replace one component of every predicted action with the last history
// frame's value for that component, then re-integrate.
Trajectory ablate_copy(CopyComponent which, const std::vector<RelativeAction>& predicted,
                       const std::vector<RelativeAction>& history);

// A planner maps (scenario, protocol) to a trajectory of future_frames poses
// relative to the last history frame.
using Planner = std::function<Trajectory(const Scenario&, const EvalProtocol&)>;

EvalReport evaluate_planner(const Planner& planner, const std::vector<Scenario>& scenarios,
                            const EvalProtocol& proto, const std::vector<std::string>* names = nullptr);

std::string report_to_json(const EvalReport& report);
// Fixed-column table: NC, DAC, TTC, Comf, EP, PDMS.
std::string report_table(const std::vector<std::pair<std::string, EvalReport>>& rows);

}  // namespace dvl
