#include "drivelang/action_codec.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include <nlohmann/json.hpp>

namespace dvl {

namespace {
constexpr int kCodecFormatVersion = 1;
}

ComponentBounds fit_bounds(std::vector<double> samples, double lo_pct, double hi_pct) {
    require(!samples.empty(), "fit_bounds: empty sample set");
    require(lo_pct <= hi_pct, "fit_bounds: lo_pct > hi_pct");
    for (double v : samples) require(std::isfinite(v), "fit_bounds: non-finite sample");
    std::sort(samples.begin(), samples.end());
    const auto n = static_cast<double>(samples.size());
    auto nearest_rank = [&](double p) {
        auto idx = static_cast<long>(std::ceil(p / 100.0 * n)) - 1;
        idx = std::clamp<long>(idx, 0, static_cast<long>(samples.size()) - 1);
        return samples[static_cast<size_t>(idx)];
    };
    return ComponentBounds{nearest_rank(lo_pct), nearest_rank(hi_pct)};
}

int encode_component(double v, const ComponentBounds& b, int bins) {
    require(bins >= 2, "encode_component: bins must be >= 2");
    require(b.lo <= b.hi, "encode_component: invalid bounds");
    if (b.hi == b.lo) return 0;
    const double clamped = std::clamp(v, b.lo, b.hi);
    const double u = (clamped - b.lo) / (b.hi - b.lo);
    auto q = static_cast<int>(std::floor(u * (bins - 1)));
    return std::clamp(q, 0, bins - 1);
}

double decode_component(int q, const ComponentBounds& b, int bins) {
    require(bins >= 2, "decode_component: bins must be >= 2");
    require(q >= 0 && q < bins, "decode_component: token out of range");
    if (b.hi == b.lo) return b.lo;
    const double u = std::min((q + 0.5) / (bins - 1), 1.0);
    return b.lo + u * (b.hi - b.lo);
}

ActionCodec fit_codec(const std::vector<RelativeAction>& samples, int bins,
                      double lo_pct, double hi_pct) {
    require(bins >= 2, "fit_codec: bins must be >= 2");
    require(!samples.empty(), "fit_codec: empty sample set");
    std::vector<double> xs, ys, ts;
    xs.reserve(samples.size());
    ys.reserve(samples.size());
    ts.reserve(samples.size());
    for (const RelativeAction& a : samples) {
        xs.push_back(a.dx);
        ys.push_back(a.dy);
        ts.push_back(a.dtheta);
    }
    ActionCodec c;
    c.bounds_x = fit_bounds(std::move(xs), lo_pct, hi_pct);
    c.bounds_y = fit_bounds(std::move(ys), lo_pct, hi_pct);
    c.bounds_theta = fit_bounds(std::move(ts), lo_pct, hi_pct);
    c.bins = bins;
    c.lo_pct = lo_pct;
    c.hi_pct = hi_pct;
    return c;
}

ActionTokens encode_action(const RelativeAction& a, const ActionCodec& c) {
    return ActionTokens{
        encode_component(a.dx, c.bounds_x, c.bins),
        encode_component(a.dy, c.bounds_y, c.bins),
        encode_component(a.dtheta, c.bounds_theta, c.bins),
    };
}

RelativeAction decode_action(const ActionTokens& t, const ActionCodec& c) {
    return RelativeAction{
        decode_component(t.qx, c.bounds_x, c.bins),
        decode_component(t.qy, c.bounds_y, c.bins),
        decode_component(t.qtheta, c.bounds_theta, c.bins),
    };
}

RelativeAction flip_action(const RelativeAction& a) {
    return RelativeAction{a.dx, -a.dy, -a.dtheta};
}

std::string codec_to_json(const ActionCodec& c) {
    nlohmann::json j;
    j["format_version"] = kCodecFormatVersion;
    j["bins"] = c.bins;
    j["lo_pct"] = c.lo_pct;
    j["hi_pct"] = c.hi_pct;
    j["x"] = {{"lo", c.bounds_x.lo}, {"hi", c.bounds_x.hi}};
    j["y"] = {{"lo", c.bounds_y.lo}, {"hi", c.bounds_y.hi}};
    j["theta"] = {{"lo", c.bounds_theta.lo}, {"hi", c.bounds_theta.hi}};
    return j.dump(2) + "\n";
}

ActionCodec codec_from_json(const std::string& json_text) {
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(json_text);
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(std::string("codec: bad json: ") + e.what());
    }
    try {
        if (j.at("format_version").get<int>() != kCodecFormatVersion)
            throw FormatError("codec: unsupported format_version");
        ActionCodec c;
        c.bins = j.at("bins").get<int>();
        c.lo_pct = j.at("lo_pct").get<double>();
        c.hi_pct = j.at("hi_pct").get<double>();
        c.bounds_x = {j.at("x").at("lo").get<double>(), j.at("x").at("hi").get<double>()};
        c.bounds_y = {j.at("y").at("lo").get<double>(), j.at("y").at("hi").get<double>()};
        c.bounds_theta = {j.at("theta").at("lo").get<double>(), j.at("theta").at("hi").get<double>()};
        require(c.bins >= 2, "codec: bins must be >= 2");
        return c;
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(std::string("codec: missing or mistyped field: ") + e.what());
    }
}

void save_codec(const ActionCodec& c, const std::string& path) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw IoError("codec: cannot open for write: " + path);
    f << codec_to_json(c);
    if (!f) throw IoError("codec: write failed: " + path);
}

ActionCodec load_codec(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw IoError("codec: cannot open: " + path);
    std::string text((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
    return codec_from_json(text);
}

}  // namespace dvl
