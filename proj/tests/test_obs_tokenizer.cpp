#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <random>

#include "drivelang/obs_tokenizer.hpp"

using namespace dvl;

namespace {

Image constant_image(int n, float v) {
    Image img = Image::zeros(n, n, 3);
    for (float& x : img.data) x = v;
    return img;
}

double mse(const Image& a, const Image& b) {
    double acc = 0;
    for (size_t i = 0; i < a.data.size(); ++i) {
        const double d = a.data[i] - b.data[i];
        acc += d * d;
    }
    return acc / static_cast<double>(a.data.size());
}

Image random_image(int n, std::mt19937_64& rng) {
    Image img = Image::zeros(n, n, 3);
    for (float& x : img.data) x = static_cast<float>(uniform01(rng));
    return img;
}

}  // namespace

TEST_SUITE("obs_tokenizer") {

TEST_CASE("D=1 codebook is the mean patch") {
    std::vector<Image> imgs = {constant_image(8, 0.2f), constant_image(8, 0.8f)};
    const Codebook cb = fit_codebook(imgs, 1, 8, 1, 10);
    REQUIRE(cb.D == 1);
    REQUIRE(cb.patch_dim() == 8 * 8 * 3);
    for (int i = 0; i < cb.patch_dim(); ++i)
        CHECK(cb.codewords[i] == doctest::Approx(0.5f).epsilon(1e-6));
}

TEST_CASE("exactly D distinct constant patches are recovered") {
    std::vector<Image> imgs;
    const float shades[4] = {0.1f, 0.35f, 0.6f, 0.9f};
    for (float s : shades) {
        imgs.push_back(constant_image(4, s));
        imgs.push_back(constant_image(4, s));  // duplicates must not matter
    }
    const Codebook cb = fit_codebook(imgs, 4, 4, 99, 20);
    std::vector<bool> found(4, false);
    for (int k = 0; k < 4; ++k) {
        for (int s = 0; s < 4; ++s) {
            bool match = true;
            for (int i = 0; i < cb.patch_dim(); ++i)
                if (std::abs(cb.codeword(k)[i] - shades[s]) > 1e-6) match = false;
            if (match) found[s] = true;
        }
    }
    for (int s = 0; s < 4; ++s) CHECK(found[s]);
}

TEST_CASE("same seed gives a bitwise-identical codebook") {
    std::mt19937_64 rng(2024);
    std::vector<Image> imgs;
    for (int i = 0; i < 6; ++i) imgs.push_back(random_image(16, rng));
    const Codebook a = fit_codebook(imgs, 7, 4, 42, 15);
    const Codebook b = fit_codebook(imgs, 7, 4, 42, 15);
    REQUIRE(a.codewords.size() == b.codewords.size());
    for (size_t i = 0; i < a.codewords.size(); ++i) CHECK(a.codewords[i] == b.codewords[i]);
}

TEST_CASE("more clusters than distinct patches is fine") {
    std::vector<Image> imgs = {constant_image(8, 0.3f)};
    const Codebook cb = fit_codebook(imgs, 5, 4, 3, 8);
    CHECK(cb.D == 5);
    const TokenGrid g = encode_image(imgs[0], cb);
    for (uint32_t id : g.indices) CHECK(id < 5u);
}

TEST_CASE("encode shape arithmetic") {
    std::mt19937_64 rng(9);
    std::vector<Image> imgs = {random_image(32, rng)};
    const Codebook cb = fit_codebook(imgs, 8, 8, 5, 5);
    const TokenGrid g = encode_image(imgs[0], cb);
    CHECK(g.rows == 4);
    CHECK(g.cols == 4);
    CHECK(g.count() == 16);
}

TEST_CASE("constant image with one codeword encodes to zeros") {
    std::vector<Image> imgs = {constant_image(16, 0.5f)};
    const Codebook cb = fit_codebook(imgs, 1, 8, 1, 3);
    const TokenGrid g = encode_image(imgs[0], cb);
    for (uint32_t id : g.indices) CHECK(id == 0u);
}

TEST_CASE("checkerboard against a black/white codebook by hand") {
    Codebook cb;
    cb.D = 2;
    cb.S = 4;
    cb.channels = 3;
    cb.codewords.assign(2 * 48, 0.0f);
    for (int i = 48; i < 96; ++i) cb.codewords[i] = 1.0f;  // codeword 1 = white

    Image img = Image::zeros(8, 8, 3);
    // patch layout: (0,0) black, (0,1) white, (1,0) white, (1,1) black
    for (int r = 0; r < 8; ++r)
        for (int c = 0; c < 8; ++c) {
            const bool white = (r < 4) != (c < 4);
            for (int ch = 0; ch < 3; ++ch) img.at(r, c, ch) = white ? 1.0f : 0.0f;
        }
    const TokenGrid g = encode_image(img, cb);
    CHECK(g.indices == std::vector<uint32_t>({0, 1, 1, 0}));
}

TEST_CASE("encode rejects mismatched dims") {
    std::vector<Image> imgs = {constant_image(8, 0.5f)};
    const Codebook cb = fit_codebook(imgs, 2, 8, 1, 3);
    Image odd = Image::zeros(12, 12, 3);
    CHECK_THROWS_AS(encode_image(odd, cb), InvalidArgument);
}

TEST_CASE("decode of codebook-built image is exact and idempotent") {
    std::mt19937_64 rng(13);
    std::vector<Image> imgs;
    for (int i = 0; i < 4; ++i) imgs.push_back(random_image(16, rng));
    const Codebook cb = fit_codebook(imgs, 6, 4, 77, 10);

    TokenGrid g;
    g.rows = 3;
    g.cols = 4;
    for (int i = 0; i < 12; ++i) g.indices.push_back(static_cast<uint32_t>(i % 6));
    const Image x = decode_grid(g, cb);
    const TokenGrid g2 = encode_image(x, cb);
    CHECK(g2.indices == g.indices);
    const Image x2 = decode_grid(g2, cb);
    CHECK(mse(x, x2) == 0.0);
}

TEST_CASE("all-zeros grid tiles codeword zero") {
    std::vector<Image> imgs = {constant_image(8, 0.25f)};
    const Codebook cb = fit_codebook(imgs, 2, 4, 1, 3);
    TokenGrid g;
    g.rows = 2;
    g.cols = 2;
    g.indices.assign(4, 0);
    const Image x = decode_grid(g, cb);
    for (int r = 0; r < 4; ++r)
        for (int c = 0; c < 4; ++c)
            CHECK(x.at(r, c, 0) == cb.codeword(0)[(r * 4 + c) * 3]);
}

TEST_CASE("decode rejects out-of-range indices") {
    std::vector<Image> imgs = {constant_image(8, 0.25f)};
    const Codebook cb = fit_codebook(imgs, 2, 4, 1, 3);
    TokenGrid g;
    g.rows = 1;
    g.cols = 1;
    g.indices = {9};
    CHECK_THROWS_AS(decode_grid(g, cb), InvalidArgument);
}

TEST_CASE("reconstruction beats the mean-patch baseline") {
    // structured images: patches drawn from a small palette of shade patterns
    std::mt19937_64 rng(55);
    auto structured = [&](uint64_t salt) {
        Image img = Image::zeros(16, 16, 3);
        std::mt19937_64 local(salt);
        for (int br = 0; br < 4; ++br)
            for (int bc = 0; bc < 4; ++bc) {
                const int kind = static_cast<int>(local() % 3);
                for (int r = 0; r < 4; ++r)
                    for (int c = 0; c < 4; ++c) {
                        float v = kind == 0 ? 0.1f : (kind == 1 ? 0.6f : (c < 2 ? 0.1f : 0.6f));
                        for (int ch = 0; ch < 3; ++ch) img.at(br * 4 + r, bc * 4 + c, ch) = v;
                    }
            }
        return img;
    };
    std::vector<Image> train, held;
    for (int i = 0; i < 8; ++i) train.push_back(structured(rng()));
    for (int i = 0; i < 3; ++i) held.push_back(structured(rng()));
    const Codebook cb = fit_codebook(train, 16, 4, 4, 12);
    const Codebook mean_cb = fit_codebook(train, 1, 4, 4, 12);
    for (const Image& img : held) {
        const Image rec = decode_grid(encode_image(img, cb), cb);
        const Image base = decode_grid(encode_image(img, mean_cb), mean_cb);
        CHECK(mse(rec, img) <= mse(base, img));
    }
}

TEST_CASE("quantization error non-increasing in D via nested codebooks") {
    std::mt19937_64 rng(19);
    std::vector<Image> imgs;
    for (int i = 0; i < 5; ++i) imgs.push_back(random_image(16, rng));
    const Codebook small = fit_codebook(imgs, 4, 4, 21, 12);
    Codebook big = small;
    big.D = 8;
    const Codebook extra = fit_codebook(imgs, 8, 4, 22, 12);
    big.codewords.insert(big.codewords.end(), extra.codewords.begin(),
                         extra.codewords.begin() + 4 * extra.patch_dim());
    for (const Image& img : imgs) {
        const double e_small = mse(decode_grid(encode_image(img, small), small), img);
        const double e_big = mse(decode_grid(encode_image(img, big), big), img);
        CHECK(e_big <= e_small + 1e-12);
    }
}

TEST_CASE("hflip mirrors columns and is an involution") {
    std::mt19937_64 rng(77);
    const Image img = random_image(8, rng);
    const Image f = hflip(img);
    for (int r = 0; r < 8; ++r)
        for (int ch = 0; ch < 3; ++ch) CHECK(f.at(r, 0, ch) == img.at(r, 7, ch));
    const Image ff = hflip(f);
    CHECK(mse(ff, img) == 0.0);
}

TEST_CASE("encode of hflip equals column-reversed encode for a symmetric codebook") {
    // codewords: constant patches (each mirror-symmetric)
    Codebook cb;
    cb.D = 3;
    cb.S = 4;
    cb.channels = 3;
    cb.codewords.assign(3 * 48, 0.0f);
    for (int i = 0; i < 48; ++i) cb.codewords[48 + i] = 0.5f;
    for (int i = 0; i < 48; ++i) cb.codewords[96 + i] = 1.0f;

    Image img = Image::zeros(8, 12, 3);
    const float shades[6] = {0.0f, 0.5f, 1.0f, 1.0f, 0.0f, 0.5f};
    for (int r = 0; r < 8; ++r)
        for (int c = 0; c < 12; ++c)
            for (int ch = 0; ch < 3; ++ch) img.at(r, c, ch) = shades[(r / 4) * 3 + c / 4];
    const TokenGrid a = encode_image(hflip(img), cb);
    const TokenGrid b = encode_image(img, cb);
    for (int r = 0; r < a.rows; ++r)
        for (int c = 0; c < a.cols; ++c)
            CHECK(a.indices[r * a.cols + c] == b.indices[r * b.cols + (b.cols - 1 - c)]);
}

TEST_CASE("codebook file round trip") {
    std::mt19937_64 rng(123);
    std::vector<Image> imgs = {random_image(16, rng)};
    const Codebook cb = fit_codebook(imgs, 5, 4, 9, 6);
    const std::string path =
        (std::filesystem::temp_directory_path() / "dvl_codebook_test.dgcb").string();
    save_codebook(cb, path);
    const Codebook back = load_codebook(path);
    CHECK(back.D == cb.D);
    CHECK(back.S == cb.S);
    CHECK(back.channels == cb.channels);
    CHECK(back.codewords == cb.codewords);
    std::filesystem::remove(path);
}

TEST_CASE("codebook loader rejects bad magic") {
    const std::string path =
        (std::filesystem::temp_directory_path() / "dvl_codebook_bad.dgcb").string();
    {
        std::ofstream f(path, std::ios::binary);
        f << "XXXX garbage";
    }
    CHECK_THROWS_AS(load_codebook(path), FormatError);
    std::filesystem::remove(path);
}

}  // TEST_SUITE
