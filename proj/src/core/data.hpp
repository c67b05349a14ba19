#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "cluster.hpp"
#include "common.hpp"
#include "tensor.hpp"

namespace digpt {

// Interleaved RGB float image, values in [0, 1].
struct Image {
    int h = 0;
    int w = 0;
    std::vector<float> rgb;  // h * w * 3

    Image() = default;
    Image(int h_, int w_) : h(h_), w(w_), rgb(static_cast<size_t>(h_) * w_ * 3, 0.f) {}

    float* px(int y, int x) { return rgb.data() + (static_cast<size_t>(y) * w + x) * 3; }
    const float* px(int y, int x) const { return rgb.data() + (static_cast<size_t>(y) * w + x) * 3; }
};

Image bilinear_resize(const Image& src, int out_h, int out_w);

struct AugmentParams {
    bool flip = false;
    bool crop = false;
    int crop_y = 0, crop_x = 0, crop_h = 0, crop_w = 0;
};

// Random resized crop box + flip decision; pure function of the rng draws.
AugmentParams draw_augment(Rng& rng, int h, int w, bool crop_on, double scale_min, double scale_max, bool flip_on);

Image apply_augment(const Image& src, const AugmentParams& ap, int out_h, int out_w);

// Row-major patch pixel matrix: num_patches x (patch_size^2 * 3).
template <class T>
Tensor<T> patchify(const Image& img, const ClusterLayout& layout) {
    if (img.h != layout.image_h || img.w != layout.image_w)
        throw ConfigError("patchify: image size does not match layout");
    const int p = layout.patch_size;
    Tensor<T> out(layout.num_patches, p * p * 3);
    for (int pr = 0; pr < layout.patch_rows; ++pr) {
        for (int pc = 0; pc < layout.patch_cols; ++pc) {
            T* dst = out.row(pr * layout.patch_cols + pc);
            int k = 0;
            for (int y = pr * p; y < (pr + 1) * p; ++y)
                for (int x = pc * p; x < (pc + 1) * p; ++x) {
                    const float* src = img.px(y, x);
                    dst[k++] = static_cast<T>(src[0]);
                    dst[k++] = static_cast<T>(src[1]);
                    dst[k++] = static_cast<T>(src[2]);
                }
        }
    }
    return out;
}

// In-memory labeled dataset with train/test splits and stable 64-bit ids.
struct LabeledDataset {
    std::vector<Image> train_images;
    std::vector<int> train_labels;
    std::vector<uint64_t> train_ids;
    std::vector<Image> test_images;
    std::vector<int> test_labels;
    std::vector<uint64_t> test_ids;
    std::vector<std::string> class_names;

    int num_classes() const { return static_cast<int>(class_names.size()); }
    size_t train_size() const { return train_images.size(); }
    size_t test_size() const { return test_images.size(); }
};

// Loads `synthetic://...` specs or directory-per-class image folders
// (png/ppm/pgm). Images are resized to image_size x image_size.
LabeledDataset load_dataset(const std::string& spec, const std::string& data_root, int image_size);

// image file IO (used by the folder loader and by tests)
Image load_image_file(const std::string& path);
void save_ppm(const std::string& path, const Image& img);
void save_png(const std::string& path, const Image& img);

}  // namespace digpt
