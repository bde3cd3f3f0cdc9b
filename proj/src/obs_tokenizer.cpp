#include "drivelang/obs_tokenizer.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>
#include <random>

namespace dvl {

namespace {

constexpr char kCodebookMagic[4] = {'D', 'G', 'C', 'B'};
constexpr uint32_t kCodebookVersion = 1;

void check_divisible(const Image& img, int S) {
    require(S >= 1, "tokenizer: S must be >= 1");
    require(img.height % S == 0 && img.width % S == 0,
            "tokenizer: image dims must be divisible by S");
    require(static_cast<size_t>(img.height) * img.width * img.channels == img.data.size(),
            "tokenizer: image data size mismatch");
}

// Extract all S x S patches of all images, row-major per image.
std::vector<float> collect_patches(const std::vector<Image>& images, int S, int channels,
                                   size_t* n_out) {
    size_t n = 0;
    for (const Image& img : images) {
        check_divisible(img, S);
        require(img.channels == channels, "tokenizer: inconsistent channel count");
        n += static_cast<size_t>(img.height / S) * (img.width / S);
    }
    const size_t dim = static_cast<size_t>(S) * S * channels;
    std::vector<float> patches(n * dim);
    size_t p = 0;
    for (const Image& img : images) {
        const int gr = img.height / S, gc = img.width / S;
        for (int br = 0; br < gr; ++br) {
            for (int bc = 0; bc < gc; ++bc) {
                float* dst = patches.data() + p * dim;
                for (int r = 0; r < S; ++r)
                    for (int c = 0; c < S; ++c)
                        for (int ch = 0; ch < channels; ++ch)
                            *dst++ = img.at(br * S + r, bc * S + c, ch);
                ++p;
            }
        }
    }
    *n_out = n;
    return patches;
}

double sq_dist(const float* a, const float* b, size_t dim) {
    double acc = 0.0;
    for (size_t i = 0; i < dim; ++i) {
        const double d = static_cast<double>(a[i]) - static_cast<double>(b[i]);
        acc += d * d;
    }
    return acc;
}

}  // namespace

Codebook fit_codebook(const std::vector<Image>& images, int D, int S, uint64_t seed, int iters) {
    require(!images.empty(), "fit_codebook: empty dataset");
    require(D >= 1, "fit_codebook: D must be >= 1");
    require(iters >= 1, "fit_codebook: iters must be >= 1");
    const int channels = images.front().channels;
    size_t n = 0;
    std::vector<float> patches = collect_patches(images, S, channels, &n);
    const size_t dim = static_cast<size_t>(S) * S * channels;
    for (float v : patches) require(std::isfinite(v), "fit_codebook: non-finite pixel");

    std::mt19937_64 rng(seed);
    std::vector<double> centroids(static_cast<size_t>(D) * dim);
    std::vector<double> best_d2(n, std::numeric_limits<double>::infinity());

    // k-means++ seeding. Patches identical to an already-chosen centroid carry
    // zero weight, so distinct patch values are preferred while they last.
    auto pick_weighted = [&]() -> size_t {
        double total = 0.0;
        for (double d : best_d2) total += d;
        if (total <= 0.0) return rng() % n;  // all patches already covered
        double target = uniform01(rng) * total;
        for (size_t i = 0; i < n; ++i) {
            target -= best_d2[i];
            if (target <= 0.0) return i;
        }
        return n - 1;
    };
    {
        const size_t first = rng() % n;
        for (size_t j = 0; j < dim; ++j) centroids[j] = patches[first * dim + j];
    }
    for (int k = 1; k < D; ++k) {
        const double* prev = centroids.data() + static_cast<size_t>(k - 1) * dim;
        for (size_t i = 0; i < n; ++i) {
            const float* pt = patches.data() + i * dim;
            double d2 = 0.0;
            for (size_t j = 0; j < dim; ++j) {
                const double d = pt[j] - prev[j];
                d2 += d * d;
            }
            best_d2[i] = std::min(best_d2[i], d2);
        }
        const size_t pick = pick_weighted();
        double* dst = centroids.data() + static_cast<size_t>(k) * dim;
        for (size_t j = 0; j < dim; ++j) dst[j] = patches[pick * dim + j];
    }

    // Lloyd iterations.
    std::vector<int> assign(n, 0);
    std::vector<double> sums(static_cast<size_t>(D) * dim);
    std::vector<size_t> counts(D);
    for (int it = 0; it < iters; ++it) {
        bool changed = false;
        for (size_t i = 0; i < n; ++i) {
            const float* pt = patches.data() + i * dim;
            double best = std::numeric_limits<double>::infinity();
            int arg = 0;
            for (int k = 0; k < D; ++k) {
                const double* ck = centroids.data() + static_cast<size_t>(k) * dim;
                double d2 = 0.0;
                for (size_t j = 0; j < dim; ++j) {
                    const double d = pt[j] - ck[j];
                    d2 += d * d;
                }
                if (d2 < best) {  // strict: ties keep the lowest index
                    best = d2;
                    arg = k;
                }
            }
            if (assign[i] != arg) changed = true;
            assign[i] = arg;
            best_d2[i] = best;
        }
        std::fill(sums.begin(), sums.end(), 0.0);
        std::fill(counts.begin(), counts.end(), 0);
        for (size_t i = 0; i < n; ++i) {
            double* sk = sums.data() + static_cast<size_t>(assign[i]) * dim;
            const float* pt = patches.data() + i * dim;
            for (size_t j = 0; j < dim; ++j) sk[j] += pt[j];
            counts[assign[i]]++;
        }
        for (int k = 0; k < D; ++k) {
            double* ck = centroids.data() + static_cast<size_t>(k) * dim;
            if (counts[k] > 0) {
                for (size_t j = 0; j < dim; ++j) ck[j] = sums[static_cast<size_t>(k) * dim + j] / counts[k];
            } else {
                // Re-seed dead code with the patch farthest from its assigned centroid.
                size_t far = 0;
                double far_d2 = -1.0;
                for (size_t i = 0; i < n; ++i) {
                    if (best_d2[i] > far_d2) {
                        far_d2 = best_d2[i];
                        far = i;
                    }
                }
                const float* pt = patches.data() + far * dim;
                for (size_t j = 0; j < dim; ++j) ck[j] = pt[j];
                best_d2[far] = 0.0;
                changed = true;
            }
        }
        if (!changed) break;
    }

    Codebook cb;
    cb.D = D;
    cb.S = S;
    cb.channels = channels;
    cb.codewords.resize(centroids.size());
    for (size_t i = 0; i < centroids.size(); ++i) cb.codewords[i] = static_cast<float>(centroids[i]);
    return cb;
}

TokenGrid encode_image(const Image& img, const Codebook& cb) {
    require(cb.D >= 1 && cb.S >= 1, "encode: invalid codebook");
    check_divisible(img, cb.S);
    require(img.channels == cb.channels, "encode: channel mismatch");
    const int S = cb.S;
    const size_t dim = static_cast<size_t>(cb.patch_dim());
    TokenGrid grid;
    grid.rows = img.height / S;
    grid.cols = img.width / S;
    grid.indices.resize(static_cast<size_t>(grid.rows) * grid.cols);
    std::vector<float> patch(dim);
    for (int br = 0; br < grid.rows; ++br) {
        for (int bc = 0; bc < grid.cols; ++bc) {
            float* dst = patch.data();
            for (int r = 0; r < S; ++r)
                for (int c = 0; c < S; ++c)
                    for (int ch = 0; ch < cb.channels; ++ch)
                        *dst++ = img.at(br * S + r, bc * S + c, ch);
            double best = std::numeric_limits<double>::infinity();
            uint32_t arg = 0;
            for (int k = 0; k < cb.D; ++k) {
                const double d2 = sq_dist(patch.data(), cb.codeword(k), dim);
                if (d2 < best) {
                    best = d2;
                    arg = static_cast<uint32_t>(k);
                }
            }
            grid.indices[static_cast<size_t>(br) * grid.cols + bc] = arg;
        }
    }
    return grid;
}

Image decode_grid(const TokenGrid& grid, const Codebook& cb) {
    require(grid.rows >= 1 && grid.cols >= 1, "decode: empty grid");
    Image img = Image::zeros(grid.rows * cb.S, grid.cols * cb.S, cb.channels);
    for (int br = 0; br < grid.rows; ++br) {
        for (int bc = 0; bc < grid.cols; ++bc) {
            const uint32_t idx = grid.indices[static_cast<size_t>(br) * grid.cols + bc];
            if (idx >= static_cast<uint32_t>(cb.D))
                throw InvalidArgument("decode: token index out of range");
            const float* cw = cb.codeword(static_cast<int>(idx));
            for (int r = 0; r < cb.S; ++r)
                for (int c = 0; c < cb.S; ++c)
                    for (int ch = 0; ch < cb.channels; ++ch)
                        img.at(br * cb.S + r, bc * cb.S + c, ch) = *cw++;
        }
    }
    return img;
}

Image hflip(const Image& img) {
    Image out = img;
    for (int r = 0; r < img.height; ++r)
        for (int c = 0; c < img.width; ++c)
            for (int ch = 0; ch < img.channels; ++ch)
                out.at(r, c, ch) = img.at(r, img.width - 1 - c, ch);
    return out;
}

void save_codebook(const Codebook& cb, const std::string& path) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw IoError("codebook: cannot open for write: " + path);
    f.write(kCodebookMagic, 4);
    const uint32_t header[4] = {kCodebookVersion, static_cast<uint32_t>(cb.D),
                                static_cast<uint32_t>(cb.S), static_cast<uint32_t>(cb.channels)};
    f.write(reinterpret_cast<const char*>(header), sizeof(header));
    f.write(reinterpret_cast<const char*>(cb.codewords.data()),
            static_cast<std::streamsize>(cb.codewords.size() * sizeof(float)));
    if (!f) throw IoError("codebook: write failed: " + path);
}

Codebook load_codebook(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw IoError("codebook: cannot open: " + path);
    char magic[4];
    uint32_t header[4];
    f.read(magic, 4);
    f.read(reinterpret_cast<char*>(header), sizeof(header));
    if (!f || std::memcmp(magic, kCodebookMagic, 4) != 0)
        throw FormatError("codebook: bad magic: " + path);
    if (header[0] != kCodebookVersion) throw FormatError("codebook: unsupported version");
    Codebook cb;
    cb.D = static_cast<int>(header[1]);
    cb.S = static_cast<int>(header[2]);
    cb.channels = static_cast<int>(header[3]);
    if (cb.D < 1 || cb.S < 1 || cb.channels < 1 || cb.D > (1 << 24) || cb.S > 4096)
        throw FormatError("codebook: implausible header");
    cb.codewords.resize(static_cast<size_t>(cb.D) * cb.patch_dim());
    f.read(reinterpret_cast<char*>(cb.codewords.data()),
           static_cast<std::streamsize>(cb.codewords.size() * sizeof(float)));
    if (!f) throw FormatError("codebook: truncated file: " + path);
    return cb;
}

}  // namespace dvl
