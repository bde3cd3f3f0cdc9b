#include "drivelang/dataset.hpp"

#include <cstring>
#include <fstream>

#include <nlohmann/json.hpp>

namespace dvl {

namespace {

constexpr uint32_t kRecordVersion = 1;
constexpr uint32_t kRawVersion = 1;
constexpr int kManifestVersion = 1;

void write_u32(std::ofstream& f, uint32_t v) { f.write(reinterpret_cast<const char*>(&v), 4); }

uint32_t read_u32(std::ifstream& f) {
    uint32_t v = 0;
    f.read(reinterpret_cast<char*>(&v), 4);
    return v;
}

static_assert(sizeof(float) == 4 && sizeof(double) == 8, "unexpected float sizes");

}  // namespace

void save_record(const SequenceRecord& rec, const std::string& path) {
    require(rec.tokens_per_frame >= 4, "record: tokens_per_frame must be >= 4");
    require(rec.ids.size() % static_cast<size_t>(rec.tokens_per_frame) == 0,
            "record: token count not divisible by tokens_per_frame");
    const size_t T = rec.ids.size() / rec.tokens_per_frame;
    require(rec.actions.size() == T, "record: action count must equal frame count");
    std::ofstream f(path, std::ios::binary);
    if (!f) throw IoError("record: cannot open for write: " + path);
    f.write("DGSQ", 4);
    write_u32(f, kRecordVersion);
    write_u32(f, static_cast<uint32_t>(T));
    write_u32(f, static_cast<uint32_t>(rec.tokens_per_frame));
    f.write(reinterpret_cast<const char*>(rec.ids.data()),
            static_cast<std::streamsize>(rec.ids.size() * 4));
    for (const RelativeAction& a : rec.actions) {
        const double v[3] = {a.dx, a.dy, a.dtheta};
        f.write(reinterpret_cast<const char*>(v), 24);
    }
    if (!f) throw IoError("record: write failed: " + path);
}

SequenceRecord load_record(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw IoError("record: cannot open: " + path);
    char magic[4];
    f.read(magic, 4);
    if (!f || std::memcmp(magic, "DGSQ", 4) != 0) throw FormatError("record: bad magic: " + path);
    const uint32_t version = read_u32(f);
    if (version != kRecordVersion) throw FormatError("record: unsupported version");
    const uint32_t T = read_u32(f);
    const uint32_t tpf = read_u32(f);
    if (!f || tpf < 4 || T > (1u << 24) || tpf > (1u << 20))
        throw FormatError("record: implausible header: " + path);
    SequenceRecord rec;
    rec.tokens_per_frame = static_cast<int>(tpf);
    rec.ids.resize(static_cast<size_t>(T) * tpf);
    f.read(reinterpret_cast<char*>(rec.ids.data()),
           static_cast<std::streamsize>(rec.ids.size() * 4));
    rec.actions.resize(T);
    for (uint32_t t = 0; t < T; ++t) {
        double v[3];
        f.read(reinterpret_cast<char*>(v), 24);
        rec.actions[t] = RelativeAction{v[0], v[1], v[2]};
    }
    if (!f) throw FormatError("record: truncated file: " + path);
    return rec;
}

void save_raw_sequence(const RawSequence& raw, const std::string& path) {
    require(!raw.frames.empty(), "raw: no frames");
    require(raw.actions.size() == raw.frames.size(), "raw: action count must equal frame count");
    require(raw.poses.size() == raw.frames.size() + 1, "raw: need T+1 poses");
    const Image& f0 = raw.frames.front();
    std::ofstream f(path, std::ios::binary);
    if (!f) throw IoError("raw: cannot open for write: " + path);
    f.write("DGRW", 4);
    write_u32(f, kRawVersion);
    write_u32(f, static_cast<uint32_t>(raw.frames.size()));
    write_u32(f, static_cast<uint32_t>(f0.height));
    write_u32(f, static_cast<uint32_t>(f0.width));
    write_u32(f, static_cast<uint32_t>(f0.channels));
    for (const Image& img : raw.frames) {
        require(img.height == f0.height && img.width == f0.width && img.channels == f0.channels,
                "raw: inconsistent frame shapes");
        f.write(reinterpret_cast<const char*>(img.data.data()),
                static_cast<std::streamsize>(img.data.size() * 4));
    }
    for (const RelativeAction& a : raw.actions) {
        const double v[3] = {a.dx, a.dy, a.dtheta};
        f.write(reinterpret_cast<const char*>(v), 24);
    }
    for (const auto& p : raw.poses) {
        f.write(reinterpret_cast<const char*>(p.data()), 24);
    }
    if (!f) throw IoError("raw: write failed: " + path);
}

RawSequence load_raw_sequence(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw IoError("raw: cannot open: " + path);
    char magic[4];
    f.read(magic, 4);
    if (!f || std::memcmp(magic, "DGRW", 4) != 0) throw FormatError("raw: bad magic: " + path);
    if (read_u32(f) != kRawVersion) throw FormatError("raw: unsupported version");
    const uint32_t T = read_u32(f);
    const uint32_t H = read_u32(f);
    const uint32_t W = read_u32(f);
    const uint32_t C = read_u32(f);
    if (!f || T == 0 || T > (1u << 20) || H == 0 || W == 0 || H > 65536 || W > 65536 || C == 0 || C > 16)
        throw FormatError("raw: implausible header: " + path);
    RawSequence raw;
    raw.frames.resize(T);
    for (uint32_t t = 0; t < T; ++t) {
        raw.frames[t] = Image::zeros(static_cast<int>(H), static_cast<int>(W), static_cast<int>(C));
        f.read(reinterpret_cast<char*>(raw.frames[t].data.data()),
               static_cast<std::streamsize>(raw.frames[t].data.size() * 4));
    }
    raw.actions.resize(T);
    for (uint32_t t = 0; t < T; ++t) {
        double v[3];
        f.read(reinterpret_cast<char*>(v), 24);
        raw.actions[t] = RelativeAction{v[0], v[1], v[2]};
    }
    raw.poses.resize(T + 1);
    for (uint32_t t = 0; t <= T; ++t) {
        f.read(reinterpret_cast<char*>(raw.poses[t].data()), 24);
    }
    if (!f) throw FormatError("raw: truncated file: " + path);
    return raw;
}

void save_manifest(const DatasetManifest& m, const std::string& path) {
    nlohmann::json j;
    j["format_version"] = kManifestVersion;
    j["D"] = m.D;
    j["M"] = m.M;
    j["S"] = m.S;
    j["H"] = m.H;
    j["W"] = m.W;
    j["T"] = m.T;
    j["frame_hz"] = m.frame_hz;
    j["codec_file"] = m.codec_file;
    j["codebook_file"] = m.codebook_file;
    j["sequences"] = m.sequences;
    std::ofstream f(path, std::ios::binary);
    if (!f) throw IoError("manifest: cannot open for write: " + path);
    f << j.dump(2) << "\n";
    if (!f) throw IoError("manifest: write failed: " + path);
}

DatasetManifest load_manifest(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw IoError("manifest: cannot open: " + path);
    nlohmann::json j;
    try {
        f >> j;
        if (j.at("format_version").get<int>() != kManifestVersion)
            throw FormatError("manifest: unsupported format_version");
        DatasetManifest m;
        m.D = j.at("D").get<int>();
        m.M = j.at("M").get<int>();
        m.S = j.at("S").get<int>();
        m.H = j.at("H").get<int>();
        m.W = j.at("W").get<int>();
        m.T = j.at("T").get<int>();
        m.frame_hz = j.at("frame_hz").get<double>();
        m.codec_file = j.at("codec_file").get<std::string>();
        m.codebook_file = j.at("codebook_file").get<std::string>();
        m.sequences = j.at("sequences").get<std::vector<std::string>>();
        return m;
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(std::string("manifest: bad json: ") + e.what());
    }
}

}  // namespace dvl
