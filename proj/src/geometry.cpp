#include "drivelang/geometry.hpp"

#include <cmath>

namespace dvl {

bool action_finite(const RelativeAction& a) {
    return std::isfinite(a.dx) && std::isfinite(a.dy) && std::isfinite(a.dtheta);
}

Transform2 pose_from_action(const RelativeAction& a) {
    require(action_finite(a), "pose_from_action: non-finite action component");
    const double c = std::cos(a.dtheta);
    const double s = std::sin(a.dtheta);
    Transform2 t;
    t.m << c, -s, a.dx,
           s,  c, a.dy,
           0,  0, 1;
    return t;
}

Transform2 compose(const Transform2& a, const Transform2& b) {
    Transform2 out;
    out.m.noalias() = a.m * b.m;
    // Re-orthonormalize the rotation block so long products cannot drift.
    const double theta = std::atan2(out.m(1, 0), out.m(0, 0));
    const double c = std::cos(theta);
    const double s = std::sin(theta);
    out.m(0, 0) = c; out.m(0, 1) = -s;
    out.m(1, 0) = s; out.m(1, 1) = c;
    out.m(2, 0) = 0; out.m(2, 1) = 0; out.m(2, 2) = 1;
    return out;
}

Transform2 inverse(const Transform2& t) {
    Transform2 out;
    const Eigen::Matrix2d r = t.m.topLeftCorner<2, 2>();
    const Eigen::Vector2d p = t.m.topRightCorner<2, 1>();
    out.m.topLeftCorner<2, 2>() = r.transpose();
    out.m.topRightCorner<2, 1>() = -r.transpose() * p;
    out.m.row(2) << 0, 0, 1;
    return out;
}

Trajectory integrate(const std::vector<RelativeAction>& actions) {
    require(!actions.empty(), "integrate: empty action list");
    Trajectory out;
    out.reserve(actions.size());
    Transform2 acc = Transform2::identity();
    for (const RelativeAction& a : actions) {
        acc = compose(acc, pose_from_action(a));
        out.push_back(acc);
    }
    return out;
}

std::vector<RelativeAction> relativize(const std::vector<Transform2>& absolute) {
    require(absolute.size() >= 2, "relativize: need at least 2 poses");
    std::vector<RelativeAction> out;
    out.reserve(absolute.size() - 1);
    for (size_t i = 0; i + 1 < absolute.size(); ++i) {
        const Transform2 d = compose(inverse(absolute[i]), absolute[i + 1]);
        RelativeAction a;
        a.dx = d.x();
        a.dy = d.y();
        a.dtheta = std::atan2(d.m(1, 0), d.m(0, 0));
        out.push_back(a);
    }
    return out;
}

}  // namespace dvl
