#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "drivelang/common.hpp"

namespace dvl {

// Row-major H x W x C image, values in [0, 1].
struct Image {
    int height = 0;
    int width = 0;
    int channels = 3;
    std::vector<float> data;  // height * width * channels

    float& at(int r, int c, int ch) { return data[(static_cast<size_t>(r) * width + c) * channels + ch]; }
    float at(int r, int c, int ch) const { return data[(static_cast<size_t>(r) * width + c) * channels + ch]; }

    static Image zeros(int h, int w, int c = 3) {
        Image img;
        img.height = h;
        img.width = w;
        img.channels = c;
        img.data.assign(static_cast<size_t>(h) * w * c, 0.0f);
        return img;
    }
};

// Flat codebook of D codewords, each a flattened S x S x C patch.
struct Codebook {
    int D = 0;
    int S = 0;
    int channels = 3;
    std::vector<float> codewords;  // D * S * S * C, row-major per codeword

    int patch_dim() const { return S * S * channels; }
    const float* codeword(int i) const { return codewords.data() + static_cast<size_t>(i) * patch_dim(); }
};

// (H/S) x (W/S) grid of codeword indices, row-major.
struct TokenGrid {
    int rows = 0;
    int cols = 0;
    std::vector<uint32_t> indices;

    int count() const { return rows * cols; }
};

// k-means over all S x S patches of the dataset. Deterministic given
// (image order, seed): k-means++ seeding, ties broken by lowest index,
// empty clusters re-seeded with the patch farthest from its assigned centroid.
Codebook fit_codebook(const std::vector<Image>& images, int D, int S, uint64_t seed, int iters);

TokenGrid encode_image(const Image& img, const Codebook& cb);
Image decode_grid(const TokenGrid& grid, const Codebook& cb);

// Mirror columns. Applied to pixels only, never to token grids.
Image hflip(const Image& img);

void save_codebook(const Codebook& cb, const std::string& path);
Codebook load_codebook(const std::string& path);

}  // namespace dvl
