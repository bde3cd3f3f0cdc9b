#pragma once

#include <Eigen/Dense>
#include <vector>

#include "drivelang/common.hpp"

namespace dvl {

// Frame-to-frame SE(2) motion of the ego vehicle: longitudinal translation,
// lateral translation and yaw rotation between consecutive frames.
struct RelativeAction {
    double dx = 0.0;
    double dy = 0.0;
    double dtheta = 0.0;
};

// Homogeneous planar transform. The upper-left 2x2 block is a rotation and
// the bottom row is exactly (0, 0, 1).
struct Transform2 {
    Eigen::Matrix3d m = Eigen::Matrix3d::Identity();

    double x() const { return m(0, 2); }
    double y() const { return m(1, 2); }
    double heading() const { return std::atan2(m(1, 0), m(0, 0)); }

    static Transform2 identity() { return Transform2{}; }
};

// Poses at t+1..t+k expressed in the frame of t.
using Trajectory = std::vector<Transform2>;

Transform2 pose_from_action(const RelativeAction& a);
Transform2 compose(const Transform2& a, const Transform2& b);
Transform2 inverse(const Transform2& t);

// k-th output is the product of the first k single-step transforms.
Trajectory integrate(const std::vector<RelativeAction>& actions);

// Inverse of integration: N poses (in any common frame) -> N-1 relative actions.
std::vector<RelativeAction> relativize(const std::vector<Transform2>& absolute);

bool action_finite(const RelativeAction& a);

}  // namespace dvl
