#pragma once

#include <string>
#include <vector>

#include "drivelang/geometry.hpp"

namespace dvl {

// Per-component clamp range; lo/hi are the fitted low/high percentiles.
struct ComponentBounds {
    double lo = 0.0;
    double hi = 0.0;
};

struct ActionTokens {
    int qx = 0;
    int qy = 0;
    int qtheta = 0;
};

// Clamp-then-uniform-bin quantizer over (dx, dy, dtheta), one vocabulary of
// M bins per component.
struct ActionCodec {
    ComponentBounds bounds_x;
    ComponentBounds bounds_y;
    ComponentBounds bounds_theta;
    int bins = 0;  // M
    double lo_pct = 1.0;
    double hi_pct = 99.0;
};

// Nearest-rank percentile bounds: sort ascending, index = ceil(p/100 * n) - 1
// clamped to [0, n-1].
ComponentBounds fit_bounds(std::vector<double> samples, double lo_pct = 1.0, double hi_pct = 99.0);

// q = floor((clamp(v) - lo) / (hi - lo) * (M - 1)), in [0, M-1].
// Degenerate bounds (lo == hi) encode to 0.
int encode_component(double v, const ComponentBounds& b, int bins);

// Bin-center decode, top bin clamped to hi. Degenerate bounds decode to lo.
double decode_component(int q, const ComponentBounds& b, int bins);

ActionCodec fit_codec(const std::vector<RelativeAction>& samples, int bins,
                      double lo_pct = 1.0, double hi_pct = 99.0);

ActionTokens encode_action(const RelativeAction& a, const ActionCodec& c);
RelativeAction decode_action(const ActionTokens& t, const ActionCodec& c);

// Mirror across the ego x-axis: (dx, -dy, -dtheta). Matches horizontal image flip.
RelativeAction flip_action(const RelativeAction& a);

std::string codec_to_json(const ActionCodec& c);
ActionCodec codec_from_json(const std::string& json_text);
void save_codec(const ActionCodec& c, const std::string& path);
ActionCodec load_codec(const std::string& path);

}  // namespace dvl
