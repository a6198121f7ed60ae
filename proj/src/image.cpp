#include "dvmsr/image.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <map>

namespace dvmsr {

namespace {

void require(bool cond, const std::string& msg) {
    if (!cond) throw std::invalid_argument(msg);
}

}  // namespace

Image Image::create(int height, int width, int channels, double fill) {
    require(height >= 1 && width >= 1, "Image: extents must be >= 1");
    require(channels == 1 || channels == 3, "Image: channels must be 1 or 3");
    Image img;
    img.height = height;
    img.width = width;
    img.channels = channels;
    img.values.assign(static_cast<size_t>(height) * width * channels, fill);
    return img;
}

void Image::clamp() {
    for (auto& v : values) v = std::min(1.0, std::max(0.0, v));
}

// ---------------------------------------------------------------------------
// PNG I/O (libpng)

Image load_png(const std::string& path) {
    FILE* fp = std::fopen(path.c_str(), "rb");
    if (!fp) throw std::runtime_error("cannot open " + path);

    png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    png_infop info = png ? png_create_info_struct(png) : nullptr;
    if (!png || !info) {
        if (png) png_destroy_read_struct(&png, &info, nullptr);
        std::fclose(fp);
        throw std::runtime_error("libpng init failed");
    }
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_read_struct(&png, &info, nullptr);
        std::fclose(fp);
        throw std::runtime_error("failed to decode " + path);
    }

    png_init_io(png, fp);
    png_read_info(png, info);

    png_byte color = png_get_color_type(png, info);
    png_byte depth = png_get_bit_depth(png, info);
    if (depth == 16) png_set_strip_16(png);
    if (color == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
    if (color == PNG_COLOR_TYPE_GRAY && depth < 8) png_set_expand_gray_1_2_4_to_8(png);
    if (png_get_valid(png, info, PNG_INFO_tRNS)) png_set_tRNS_to_alpha(png);
    if (color & PNG_COLOR_MASK_ALPHA) png_set_strip_alpha(png);
    png_read_update_info(png, info);

    int width = static_cast<int>(png_get_image_width(png, info));
    int height = static_cast<int>(png_get_image_height(png, info));
    int channels = static_cast<int>(png_get_channels(png, info));
    if (channels != 1 && channels != 3) {
        png_destroy_read_struct(&png, &info, nullptr);
        std::fclose(fp);
        throw std::runtime_error(path + ": unsupported channel count " + std::to_string(channels));
    }

    std::vector<png_byte> rowbuf(static_cast<size_t>(width) * channels);
    Image img = Image::create(height, width, channels);
    for (int y = 0; y < height; ++y) {
        png_read_row(png, rowbuf.data(), nullptr);
        for (size_t i = 0; i < rowbuf.size(); ++i) {
            img.values[static_cast<size_t>(y) * width * channels + i] = rowbuf[i] / 255.0;
        }
    }
    png_read_end(png, nullptr);
    png_destroy_read_struct(&png, &info, nullptr);
    std::fclose(fp);
    return img;
}

void save_png(const Image& img, const std::string& path) {
    require(img.channels == 1 || img.channels == 3, "save_png: channels must be 1 or 3");
    FILE* fp = std::fopen(path.c_str(), "wb");
    if (!fp) throw std::runtime_error("cannot write " + path);

    png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    png_infop info = png ? png_create_info_struct(png) : nullptr;
    if (!png || !info) {
        if (png) png_destroy_write_struct(&png, &info);
        std::fclose(fp);
        throw std::runtime_error("libpng init failed");
    }
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_write_struct(&png, &info);
        std::fclose(fp);
        throw std::runtime_error("failed to encode " + path);
    }

    png_init_io(png, fp);
    png_set_IHDR(png, info, static_cast<png_uint_32>(img.width),
                 static_cast<png_uint_32>(img.height), 8,
                 img.channels == 1 ? PNG_COLOR_TYPE_GRAY : PNG_COLOR_TYPE_RGB,
                 PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
    png_write_info(png, info);

    std::vector<png_byte> row(static_cast<size_t>(img.width) * img.channels);
    for (int y = 0; y < img.height; ++y) {
        for (size_t i = 0; i < row.size(); ++i) {
            double v = img.values[static_cast<size_t>(y) * img.width * img.channels + i];
            v = std::min(1.0, std::max(0.0, v));
            row[i] = static_cast<png_byte>(std::lround(v * 255.0));
        }
        png_write_row(png, row.data());
    }
    png_write_end(png, nullptr);
    png_destroy_write_struct(&png, &info);
    std::fclose(fp);
}

// ---------------------------------------------------------------------------
// Bicubic resampling

namespace {

double cubic_kernel(double x) {
    double ax = std::abs(x);
    if (ax <= 1.0) return (1.5 * ax - 2.5) * ax * ax + 1.0;
    if (ax < 2.0) return ((-0.5 * ax + 2.5) * ax - 4.0) * ax + 2.0;
    return 0.0;
}

struct ContribRow {
    std::vector<int> indices;     // 0-based source samples, boundary-mapped
    std::vector<double> weights;  // normalized to sum 1
};

// One output sample draws from ceil(width)+2 source samples; out-of-range
// indices reflect symmetrically (the edge sample repeats).
std::vector<ContribRow> contributions(int in_len, int out_len, double scale) {
    bool antialias = scale < 1.0;
    double kscale = antialias ? scale : 1.0;
    double width = 4.0 / kscale;
    int pcount = static_cast<int>(std::ceil(width)) + 2;

    std::vector<ContribRow> rows(static_cast<size_t>(out_len));
    for (int x = 1; x <= out_len; ++x) {
        double u = x / scale + 0.5 * (1.0 - 1.0 / scale);
        long long left = static_cast<long long>(std::floor(u - width / 2.0));
        ContribRow row;
        row.indices.resize(static_cast<size_t>(pcount));
        row.weights.resize(static_cast<size_t>(pcount));
        double sum = 0.0;
        for (int p = 0; p < pcount; ++p) {
            long long j = left + p;  // 1-based, may run off either end
            double wt = kscale * cubic_kernel(kscale * (u - static_cast<double>(j)));
            row.weights[static_cast<size_t>(p)] = wt;
            sum += wt;
            long long period = 2LL * in_len;
            long long m = ((j - 1) % period + period) % period;  // into [1..n, n..1]
            row.indices[static_cast<size_t>(p)] =
                static_cast<int>(m < in_len ? m : period - 1 - m);
        }
        for (auto& wv : row.weights) wv /= sum;
        rows[static_cast<size_t>(x - 1)] = std::move(row);
    }
    return rows;
}

}  // namespace

Image bicubic_resize(const Image& img, double scale) {
    if (!(scale > 0.0)) throw std::domain_error("bicubic_resize: scale must be > 0");
    int out_h = static_cast<int>(std::ceil(img.height * scale));
    int out_w = static_cast<int>(std::ceil(img.width * scale));
    if (out_h < 1 || out_w < 1) throw std::domain_error("bicubic_resize: empty output");

    auto rows = contributions(img.height, out_h, scale);
    auto cols = contributions(img.width, out_w, scale);

    // Vertical pass.
    Image tmp = Image::create(out_h, img.width, img.channels);
    for (int y = 0; y < out_h; ++y) {
        const auto& cr = rows[static_cast<size_t>(y)];
        for (int x = 0; x < img.width; ++x) {
            for (int c = 0; c < img.channels; ++c) {
                double acc = 0.0;
                for (size_t p = 0; p < cr.indices.size(); ++p) {
                    acc += cr.weights[p] * img.at(cr.indices[p], x, c);
                }
                tmp.at(y, x, c) = acc;
            }
        }
    }

    // Horizontal pass.
    Image out = Image::create(out_h, out_w, img.channels);
    for (int y = 0; y < out_h; ++y) {
        for (int x = 0; x < out_w; ++x) {
            const auto& cc = cols[static_cast<size_t>(x)];
            for (int c = 0; c < img.channels; ++c) {
                double acc = 0.0;
                for (size_t p = 0; p < cc.indices.size(); ++p) {
                    acc += cc.weights[p] * tmp.at(y, cc.indices[p], c);
                }
                out.at(y, x, c) = acc;
            }
        }
    }
    out.clamp();
    return out;
}

Image rgb_to_y(const Image& img) {
    if (img.channels == 1) return img;
    Image out = Image::create(img.height, img.width, 1);
    for (int y = 0; y < img.height; ++y) {
        for (int x = 0; x < img.width; ++x) {
            out.at(y, x, 0) = (65.481 * img.at(y, x, 0) + 128.553 * img.at(y, x, 1) +
                               24.966 * img.at(y, x, 2) + 16.0) /
                              255.0;
        }
    }
    return out;
}

Image quantize8(const Image& img) {
    Image out = img;
    for (auto& v : out.values) {
        v = std::min(1.0, std::max(0.0, v));
        v = std::lround(v * 255.0) / 255.0;
    }
    return out;
}

Image crop_to_multiple(const Image& img, int scale) {
    require(scale >= 1, "crop_to_multiple: scale must be >= 1");
    int h = img.height - img.height % scale;
    int w = img.width - img.width % scale;
    require(h >= scale && w >= scale, "crop_to_multiple: image smaller than one scale unit");
    if (h == img.height && w == img.width) return img;
    Image out = Image::create(h, w, img.channels);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x)
            for (int c = 0; c < img.channels; ++c) out.at(y, x, c) = img.at(y, x, c);
    return out;
}

Image flip_horizontal(const Image& img) {
    Image out = Image::create(img.height, img.width, img.channels);
    for (int y = 0; y < img.height; ++y)
        for (int x = 0; x < img.width; ++x)
            for (int c = 0; c < img.channels; ++c)
                out.at(y, x, c) = img.at(y, img.width - 1 - x, c);
    return out;
}

Image rotate90(const Image& img, int k) {
    k = ((k % 4) + 4) % 4;
    if (k == 0) return img;
    Image rotated = Image::create(img.width, img.height, img.channels);
    for (int y = 0; y < img.height; ++y)
        for (int x = 0; x < img.width; ++x)
            for (int c = 0; c < img.channels; ++c)
                rotated.at(img.width - 1 - x, y, c) = img.at(y, x, c);
    return rotate90(rotated, k - 1);
}

PatchPair sample_aligned_crop(const Image& hr, const Image& lr, int scale, int patch, Rng& rng) {
    require(patch % scale == 0, "sample_aligned_crop: patch must be divisible by scale");
    require(hr.height >= patch && hr.width >= patch,
            "sample_aligned_crop: image smaller than the patch");
    require(lr.height * scale == hr.height && lr.width * scale == hr.width,
            "sample_aligned_crop: LR extents must be HR/scale");
    int lp = patch / scale;
    int ly = static_cast<int>(rng.randint(lr.height - lp + 1));
    int lx = static_cast<int>(rng.randint(lr.width - lp + 1));

    PatchPair pair;
    pair.lr = Image::create(lp, lp, lr.channels);
    for (int y = 0; y < lp; ++y)
        for (int x = 0; x < lp; ++x)
            for (int c = 0; c < lr.channels; ++c) pair.lr.at(y, x, c) = lr.at(ly + y, lx + x, c);
    pair.hr = Image::create(patch, patch, hr.channels);
    for (int y = 0; y < patch; ++y)
        for (int x = 0; x < patch; ++x)
            for (int c = 0; c < hr.channels; ++c)
                pair.hr.at(y, x, c) = hr.at(ly * scale + y, lx * scale + x, c);
    return pair;
}

PatchPair sample_training_pair(const Image& hr, const Image& lr, int scale, int patch, Rng& rng) {
    PatchPair pair = sample_aligned_crop(hr, lr, scale, patch, rng);
    int k = static_cast<int>(rng.randint(4));
    bool flip = rng.bernoulli();
    if (k) {
        pair.lr = rotate90(pair.lr, k);
        pair.hr = rotate90(pair.hr, k);
    }
    if (flip) {
        pair.lr = flip_horizontal(pair.lr);
        pair.hr = flip_horizontal(pair.hr);
    }
    return pair;
}

std::vector<DatasetPair> load_dataset(const std::string& hr_dir, const std::string& lr_dir,
                                      int scale, std::vector<std::string>* unmatched) {
    namespace fs = std::filesystem;
    if (!fs::is_directory(hr_dir)) throw std::invalid_argument("not a directory: " + hr_dir);

    std::map<std::string, fs::path> hr_files;
    for (const auto& entry : fs::directory_iterator(hr_dir)) {
        if (entry.path().extension() == ".png") hr_files[entry.path().stem().string()] = entry.path();
    }

    std::map<std::string, fs::path> lr_files;
    if (!lr_dir.empty()) {
        if (!fs::is_directory(lr_dir)) throw std::invalid_argument("not a directory: " + lr_dir);
        for (const auto& entry : fs::directory_iterator(lr_dir)) {
            if (entry.path().extension() == ".png")
                lr_files[entry.path().stem().string()] = entry.path();
        }
    }

    std::vector<DatasetPair> pairs;
    for (const auto& [stem, path] : hr_files) {
        Image hr = crop_to_multiple(load_png(path.string()), scale);
        DatasetPair pair;
        pair.stem = stem;
        if (lr_dir.empty()) {
            pair.lr = bicubic_resize(hr, 1.0 / scale);
        } else {
            auto it = lr_files.find(stem);
            if (it == lr_files.end()) {
                if (unmatched) unmatched->push_back(stem);
                continue;
            }
            pair.lr = load_png(it->second.string());
            if (pair.lr.height * scale != hr.height || pair.lr.width * scale != hr.width) {
                throw std::runtime_error("LR/HR extents disagree for stem " + stem);
            }
        }
        pair.hr = std::move(hr);
        pairs.push_back(std::move(pair));
    }
    if (pairs.empty()) throw std::invalid_argument("no usable image pairs under " + hr_dir);
    return pairs;
}

Image make_synthetic_image(int height, int width, Rng& rng) {
    Image img = Image::create(height, width, 3);
    constexpr int kWaves = 6;
    double fx[kWaves], fy[kWaves], ph[kWaves], amp[kWaves];
    for (int i = 0; i < kWaves; ++i) {
        fx[i] = rng.uniform(0.2, 3.0);
        fy[i] = rng.uniform(0.2, 3.0);
        ph[i] = rng.uniform(0.0, 6.28318530717958648);
        amp[i] = rng.uniform(0.2, 1.0) / (1.0 + 0.5 * i);
    }
    double tint[3] = {rng.uniform(-0.12, 0.12), rng.uniform(-0.12, 0.12),
                      rng.uniform(-0.12, 0.12)};
    for (int y = 0; y < height; ++y) {
        for (int x = 0; x < width; ++x) {
            double u = static_cast<double>(x) / width;
            double v = static_cast<double>(y) / height;
            double base = 0.0;
            for (int i = 0; i < kWaves; ++i) {
                base += amp[i] * std::cos(6.28318530717958648 * (fx[i] * u + fy[i] * v) + ph[i]);
            }
            base = 0.5 + 0.18 * base;
            for (int c = 0; c < 3; ++c) {
                img.at(y, x, c) = std::min(0.98, std::max(0.02, base + tint[c] * (u - v)));
            }
        }
    }
    return img;
}

Tensor image_to_tensor(const Image& img) {
    Tensor t = Tensor::zeros({1, img.channels, img.height, img.width});
    double* p = t.data();
    for (int c = 0; c < img.channels; ++c)
        for (int y = 0; y < img.height; ++y)
            for (int x = 0; x < img.width; ++x)
                p[(static_cast<int64_t>(c) * img.height + y) * img.width + x] = img.at(y, x, c);
    return t;
}

Image tensor_to_image(const Tensor& t) {
    require(t.ndim() == 4 && t.dim(0) == 1, "tensor_to_image: expected [1,C,H,W]");
    int c = static_cast<int>(t.dim(1));
    int h = static_cast<int>(t.dim(2));
    int w = static_cast<int>(t.dim(3));
    Image img = Image::create(h, w, c);
    const double* p = t.data();
    for (int ci = 0; ci < c; ++ci)
        for (int y = 0; y < h; ++y)
            for (int x = 0; x < w; ++x)
                img.at(y, x, ci) = p[(static_cast<int64_t>(ci) * h + y) * w + x];
    img.clamp();
    return img;
}

}  // namespace dvmsr
