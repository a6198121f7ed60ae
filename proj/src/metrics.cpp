#include <cmath>

#include "dvmsr/image.hpp"

namespace dvmsr {

namespace {

Image crop_border(const Image& img, int border) {
    if (border == 0) return img;
    int h = img.height - 2 * border;
    int w = img.width - 2 * border;
    if (h < 1 || w < 1) {
        throw std::invalid_argument("border " + std::to_string(border) +
                                    " leaves no pixels of a " + std::to_string(img.height) + "x" +
                                    std::to_string(img.width) + " image");
    }
    Image out = Image::create(h, w, img.channels);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x)
            for (int c = 0; c < img.channels; ++c)
                out.at(y, x, c) = img.at(y + border, x + border, c);
    return out;
}

void require_match(const Image& a, const Image& b, const char* what) {
    if (a.height != b.height || a.width != b.width || a.channels != b.channels) {
        throw std::invalid_argument(std::string(what) + ": image shapes differ");
    }
}

constexpr double kPsnrCapDb = 100.0;

}  // namespace

double psnr(const Image& a, const Image& b, int border) {
    require_match(a, b, "psnr");
    if (border < 0 || 2 * border >= a.height || 2 * border >= a.width) {
        throw std::invalid_argument("psnr: border must be below half of each extent");
    }
    Image ya = crop_border(rgb_to_y(a), border);
    Image yb = crop_border(rgb_to_y(b), border);
    double mse = 0.0;
    for (size_t i = 0; i < ya.values.size(); ++i) {
        double d = (ya.values[i] - yb.values[i]) * 255.0;
        mse += d * d;
    }
    mse /= static_cast<double>(ya.values.size());
    if (mse == 0.0) return kPsnrCapDb;
    return std::min(kPsnrCapDb, 10.0 * std::log10(255.0 * 255.0 / mse));
}

double ssim(const Image& a, const Image& b, int border) {
    require_match(a, b, "ssim");
    if (border < 0 || 2 * border >= a.height || 2 * border >= a.width) {
        throw std::invalid_argument("ssim: border must be below half of each extent");
    }
    Image ya = crop_border(rgb_to_y(a), border);
    Image yb = crop_border(rgb_to_y(b), border);
    constexpr int kWin = 11;
    if (ya.height < kWin || ya.width < kWin) {
        throw std::domain_error("ssim: cropped extents must be >= 11");
    }

    // 11x11 Gaussian, sigma 1.5, normalized.
    double win[kWin][kWin];
    double wsum = 0.0;
    for (int i = 0; i < kWin; ++i)
        for (int j = 0; j < kWin; ++j) {
            double dy = i - (kWin - 1) / 2.0;
            double dx = j - (kWin - 1) / 2.0;
            win[i][j] = std::exp(-(dx * dx + dy * dy) / (2.0 * 1.5 * 1.5));
            wsum += win[i][j];
        }
    for (auto& row : win)
        for (auto& v : row) v /= wsum;

    constexpr double kC1 = (0.01 * 255.0) * (0.01 * 255.0);
    constexpr double kC2 = (0.03 * 255.0) * (0.03 * 255.0);

    int oh = ya.height - kWin + 1;
    int ow = ya.width - kWin + 1;
    double total = 0.0;
    for (int y = 0; y < oh; ++y) {
        for (int x = 0; x < ow; ++x) {
            double mu1 = 0, mu2 = 0, s11 = 0, s22 = 0, s12 = 0;
            for (int i = 0; i < kWin; ++i)
                for (int j = 0; j < kWin; ++j) {
                    double p = ya.at(y + i, x + j, 0) * 255.0;
                    double q = yb.at(y + i, x + j, 0) * 255.0;
                    double w = win[i][j];
                    mu1 += w * p;
                    mu2 += w * q;
                    s11 += w * (p * p);
                    s22 += w * (q * q);
                    s12 += w * (p * q);  // grouping keeps ssim(a,b) == ssim(b,a) bitwise
                }
            double var1 = s11 - mu1 * mu1;
            double var2 = s22 - mu2 * mu2;
            double cov = s12 - mu1 * mu2;
            total += ((2.0 * (mu1 * mu2) + kC1) * (2.0 * cov + kC2)) /
                     ((mu1 * mu1 + mu2 * mu2 + kC1) * (var1 + var2 + kC2));
        }
    }
    return total / (static_cast<double>(oh) * ow);
}

}  // namespace dvmsr
