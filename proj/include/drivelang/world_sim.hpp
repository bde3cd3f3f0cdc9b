#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "drivelang/dataset.hpp"
#include "drivelang/geometry.hpp"
#include "drivelang/obs_tokenizer.hpp"

namespace dvl {

struct RoadSegment {
    enum class Kind { straight, arc };
    Kind kind = Kind::straight;
    double length = 0.0;  // straight only
    double radius = 0.0;  // arc only
    double angle = 0.0;   // arc only, signed (left positive)

    double arc_length() const { return kind == Kind::straight ? length : radius * std::abs(angle); }
};

// Chained centerline starting at the origin heading +x, with constant half-width.
struct Road {
    double half_width = 3.5;
    std::vector<RoadSegment> segments;

    struct SegStart {
        double x, y, theta, cum_s;
    };
    std::vector<SegStart> starts;  // derived; call finalize() after filling segments
    double total_len = 0.0;

    void finalize();
    std::array<double, 3> pose_at(double s) const;

    struct Projection {
        double s = 0.0;        // arc length of the closest centerline point
        double lateral = 0.0;  // signed offset, left of travel positive
        double dist = 0.0;     // distance to the closest centerline point
    };
    Projection project(double px, double py) const;
    bool on_road(double px, double py) const { return project(px, py).dist <= half_width; }
};

struct AgentTrack {
    double length = 4.5;
    double width = 2.0;
    std::vector<std::array<double, 3>> poses;  // per tick, map frame
};

// Deterministic logged scene: procedural road, ego pose log from a
// pure-pursuit controller over a piecewise speed profile, and constant-speed
// or parked background agents replayed from their logs.
struct Scenario {
    uint64_t seed = 0;
    double tick_hz = 10.0;
    double frame_hz = 2.0;
    int clip_start_tick = 0;
    double ego_length = 4.5;
    double ego_width = 2.0;
    Road road;
    std::vector<std::array<double, 3>> ego_poses;  // per tick
    std::vector<double> ego_speed;                 // per tick
    std::vector<AgentTrack> agents;

    int ticks() const { return static_cast<int>(ego_poses.size()); }
    int ticks_per_frame() const { return static_cast<int>(std::lround(tick_hz / frame_hz)); }
    int frame_tick(int frame) const { return clip_start_tick + frame * ticks_per_frame(); }
};

struct WorldConfig {
    int image_size = 32;
    double tick_hz = 10.0;
    double frame_hz = 10.0;
    int frames_per_seq = 16;
    int history_frames = 4;  // anchors event placement within the clip window
    int future_frames = 8;

    double half_width = 3.5;
    double min_radius = 18.0;
    double max_radius = 60.0;
    double straight_min = 22.0;
    double straight_max = 60.0;
    double arc_angle_min = 0.35;
    double arc_angle_max = 1.0;

    double ego_length = 4.5;
    double ego_width = 2.0;
    double wheelbase = 2.7;
    double lookahead = 6.0;

    double cruise_min = 4.0;
    double cruise_max = 8.0;
    double accel = 2.5;

    // Scene family mix (cumulative draw: stop-release, decel-to-stop,
    // speed-change, remainder cruise).
    double p_stop_release = 0.45;
    double p_decel_stop = 0.15;
    double p_speed_change = 0.2;

    int max_agents = 3;
    double agent_length = 4.5;
    double agent_width = 2.0;
    double follower_prob = 0.8;  // within stop-release scenes
    double lead_prob = 0.55;
    double parked_prob = 0.6;

    double meters_per_pixel = 1.5;
    int anchor_row = 20;
    int anchor_col = 16;
    float shade_offroad = 0.15f;
    float shade_road = 0.55f;
    float shade_agent = 0.95f;

    void validate() const;
};

struct WorldState {
    std::array<double, 3> ego_pose{0, 0, 0};
    double ego_speed = 0.0;
    std::vector<std::array<double, 3>> agent_poses;
    std::vector<std::pair<double, double>> agent_dims;  // (length, width)
};

Scenario gen_scenario(uint64_t seed, const WorldConfig& cfg);

WorldState state_at(const Scenario& sc, int tick);

// Ego-centric top-down raster, ego at the anchor pixel facing up and not drawn.
Image render(const WorldState& state, const Scenario& sc, const WorldConfig& cfg);
Image render_at_tick(const Scenario& sc, int tick, const WorldConfig& cfg);

// Ego poses at the T+1 frame ticks starting from the clip start, the frames
// rendered at the first T of them, and the T relative actions between them.
RawSequence build_raw_sequence(const Scenario& sc, const WorldConfig& cfg);

// Ego pose at a tick as a Transform2 (map frame).
Transform2 ego_transform(const Scenario& sc, int tick);

void save_scenario(const Scenario& sc, const std::string& path);
Scenario load_scenario(const std::string& path);

}  // namespace dvl
