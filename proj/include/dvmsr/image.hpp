#pragma once

#include <string>
#include <vector>

#include "dvmsr/common.hpp"
#include "dvmsr/tensor.hpp"

namespace dvmsr {

// Interleaved [0,1] doubles, index (y*width + x)*channels + c.
struct Image {
    int height = 0, width = 0, channels = 0;
    std::vector<double> values;
    int bit_depth = 8;

    static Image create(int height, int width, int channels, double fill = 0.0);
    double at(int y, int x, int c) const {
        return values[static_cast<size_t>((y * width + x) * channels + c)];
    }
    double& at(int y, int x, int c) {
        return values[static_cast<size_t>((y * width + x) * channels + c)];
    }
    void clamp();
};

// 8-bit PNG, grayscale or RGB. Palette and alpha inputs are expanded /
// stripped on load; 16-bit files are reduced to 8.
Image load_png(const std::string& path);
void save_png(const Image& img, const std::string& path);

// Separable cubic interpolation (a = -0.5) with the imresize conventions:
// the kernel support widens by 1/scale when downscaling (antialiasing),
// boundaries are handled symmetrically, weights are normalized per output
// sample. Output extent is ceil(extent * scale).
Image bicubic_resize(const Image& img, double scale);

// BT.601 limited range: Y = (65.481 R + 128.553 G + 24.966 B + 16) / 255.
// Single-channel input passes through unchanged.
Image rgb_to_y(const Image& img);

// Round to the nearest 8-bit level.
Image quantize8(const Image& img);

Image crop_to_multiple(const Image& img, int scale);
Image flip_horizontal(const Image& img);
Image rotate90(const Image& img, int k);  // k quarter turns counter-clockwise

struct PatchPair {
    Image lr, hr;
};

// Aligned random crop: the LR origin is drawn on the LR grid and the HR
// origin is exactly scale times it.
PatchPair sample_aligned_crop(const Image& hr, const Image& lr, int scale, int patch, Rng& rng);

// sample_aligned_crop plus one shared augmentation: k*90 degree rotation
// and an optional horizontal flip, applied identically to both patches.
PatchPair sample_training_pair(const Image& hr, const Image& lr, int scale, int patch, Rng& rng);

struct DatasetPair {
    std::string stem;
    Image lr, hr;
};

// Pairs <hr_dir>/*.png with <lr_dir>/<stem>.png; with an empty lr_dir the
// LR side is synthesized by bicubic_resize(1/scale). HR extents are cropped
// to multiples of scale first. Unmatched stems are appended to *unmatched
// when provided; zero resulting pairs is an error.
std::vector<DatasetPair> load_dataset(const std::string& hr_dir, const std::string& lr_dir,
                                      int scale, std::vector<std::string>* unmatched = nullptr);

// Smooth procedural test content: random low-frequency cosine mixture.
Image make_synthetic_image(int height, int width, Rng& rng);

Tensor image_to_tensor(const Image& img);  // [1, C, H, W]
Image tensor_to_image(const Tensor& t);    // clamps into [0,1]

// Y-channel PSNR in dB over the border-cropped region at 8-bit scale;
// identical crops report the 100 dB cap.
double psnr(const Image& a, const Image& b, int border);

// Mean local SSIM on Y over the border-cropped region: 11x11 Gaussian
// window (sigma 1.5), K1=0.01, K2=0.03, L=255, valid-region convolution.
double ssim(const Image& a, const Image& b, int border);

}  // namespace dvmsr
