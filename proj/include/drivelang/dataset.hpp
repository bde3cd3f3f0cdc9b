#pragma once

#include <array>
#include <string>
#include <vector>

#include "drivelang/driving_language.hpp"
#include "drivelang/geometry.hpp"
#include "drivelang/obs_tokenizer.hpp"

namespace dvl {

// Tokenized sequence record (.dgsq): the serialized token stream of one
// driving sequence plus the raw relative actions kept as evaluation ground
// truth alongside their quantized counterparts.
struct SequenceRecord {
    std::vector<uint32_t> ids;            // T * tokens_per_frame global token ids
    int tokens_per_frame = 0;
    std::vector<RelativeAction> actions;  // T raw actions (float64 on disk)
};

void save_record(const SequenceRecord& rec, const std::string& path);
SequenceRecord load_record(const std::string& path);

// Raw staging record (.dgrw): rendered frames, raw relative actions and the
// ego poses they were derived from. Input to codec/codebook fitting.
struct RawSequence {
    std::vector<Image> frames;                 // T frames
    std::vector<RelativeAction> actions;       // T actions (frame t -> t+1)
    std::vector<std::array<double, 3>> poses;  // T+1 ego poses (x, y, theta), map frame
};

void save_raw_sequence(const RawSequence& raw, const std::string& path);
RawSequence load_raw_sequence(const std::string& path);

// Tokenized dataset manifest (manifest.json in the dataset directory).
struct DatasetManifest {
    int D = 0;
    int M = 0;
    int S = 0;
    int H = 0;
    int W = 0;
    int T = 0;
    double frame_hz = 0.0;
    std::string codec_file;
    std::string codebook_file;
    std::vector<std::string> sequences;
};

void save_manifest(const DatasetManifest& m, const std::string& path);
DatasetManifest load_manifest(const std::string& path);

}  // namespace dvl
