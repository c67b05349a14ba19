#include "data.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <map>

namespace fs = std::filesystem;

namespace digpt {

AugmentParams draw_augment(Rng& rng, int h, int w, bool crop_on, double scale_min, double scale_max, bool flip_on) {
    AugmentParams ap;
    ap.flip = flip_on && rng.uniform() < 0.5;
    if (crop_on) {
        const double area = static_cast<double>(h) * w;
        const double s = rng.uniform(scale_min, scale_max);
        const double log_r = rng.uniform(std::log(3.0 / 4.0), std::log(4.0 / 3.0));
        const double aspect = std::exp(log_r);
        int ch = static_cast<int>(std::lround(std::sqrt(s * area / aspect)));
        int cw = static_cast<int>(std::lround(std::sqrt(s * area * aspect)));
        ch = std::clamp(ch, 1, h);
        cw = std::clamp(cw, 1, w);
        ap.crop = true;
        ap.crop_h = ch;
        ap.crop_w = cw;
        ap.crop_y = static_cast<int>(rng.below(static_cast<uint64_t>(h - ch + 1)));
        ap.crop_x = static_cast<int>(rng.below(static_cast<uint64_t>(w - cw + 1)));
    }
    return ap;
}

Image apply_augment(const Image& src, const AugmentParams& ap, int out_h, int out_w) {
    Image cropped;
    if (ap.crop) {
        cropped = Image(ap.crop_h, ap.crop_w);
        for (int y = 0; y < ap.crop_h; ++y)
            for (int x = 0; x < ap.crop_w; ++x) {
                const float* s = src.px(ap.crop_y + y, ap.crop_x + x);
                float* d = cropped.px(y, x);
                d[0] = s[0];
                d[1] = s[1];
                d[2] = s[2];
            }
    } else {
        cropped = src;
    }
    Image resized = bilinear_resize(cropped, out_h, out_w);
    if (ap.flip) {
        for (int y = 0; y < resized.h; ++y)
            for (int x = 0; x < resized.w / 2; ++x)
                for (int c = 0; c < 3; ++c) std::swap(resized.px(y, x)[c], resized.px(y, resized.w - 1 - x)[c]);
    }
    return resized;
}

namespace {

// ----------------------------------------------------- synthetic families ---

void paint_gradient_background(Image& img, Rng& rng) {
    const float base[3] = {static_cast<float>(rng.uniform(0.15, 0.75)), static_cast<float>(rng.uniform(0.15, 0.75)),
                           static_cast<float>(rng.uniform(0.15, 0.75))};
    const double theta = rng.uniform(0.0, 6.283185307179586);
    const float gx = static_cast<float>(std::cos(theta));
    const float gy = static_cast<float>(std::sin(theta));
    const float amp = static_cast<float>(rng.uniform(0.0, 0.15));
    for (int y = 0; y < img.h; ++y)
        for (int x = 0; x < img.w; ++x) {
            const float t = amp * (gx * (static_cast<float>(x) / img.w - 0.5f) +
                                   gy * (static_cast<float>(y) / img.h - 0.5f));
            float* p = img.px(y, x);
            p[0] = base[0] + t;
            p[1] = base[1] + t;
            p[2] = base[2] + t;
        }
}

void paint_disk(Image& img, double cy, double cx, double radius, const float color[3], float opacity) {
    for (int y = 0; y < img.h; ++y)
        for (int x = 0; x < img.w; ++x) {
            const double d = std::hypot(y + 0.5 - cy, x + 0.5 - cx);
            if (d < radius) {
                const float a = opacity * static_cast<float>(std::min(1.0, (radius - d) / 1.5));
                float* p = img.px(y, x);
                for (int c = 0; c < 3; ++c) p[c] = (1 - a) * p[c] + a * color[c];
            }
        }
}

void add_noise_and_clamp(Image& img, Rng& rng, double sigma) {
    for (auto& v : img.rgb) {
        v += static_cast<float>(sigma * rng.normal());
        v = std::clamp(v, 0.0f, 1.0f);
    }
}

// Mean-color separable: each class owns a distinct hue.
Image make_colors_image(int size, int cls, int num_classes, Rng& rng) {
    Image img(size, size);
    const double hue = 6.283185307179586 * cls / std::max(1, num_classes);
    const float color[3] = {static_cast<float>(0.5 + 0.35 * std::cos(hue)),
                            static_cast<float>(0.5 + 0.35 * std::cos(hue + 2.094)),
                            static_cast<float>(0.5 + 0.35 * std::cos(hue + 4.189))};
    for (int y = 0; y < size; ++y)
        for (int x = 0; x < size; ++x) {
            float* p = img.px(y, x);
            p[0] = color[0];
            p[1] = color[1];
            p[2] = color[2];
        }
    add_noise_and_clamp(img, rng, 0.06);
    return img;
}

// Position-coded classes: a bright disk sits at a class-specific angle from
// the center while color, brightness, background and a distractor disk are
// all randomized, so pooled color statistics carry little class signal.
Image make_shapes_image(int size, int cls, int num_classes, Rng& rng) {
    Image img(size, size);
    paint_gradient_background(img, rng);

    const double angle = 6.283185307179586 * cls / std::max(1, num_classes) + rng.uniform(-0.25, 0.25);
    const double radius = size * rng.uniform(0.27, 0.34);
    const double cy = size * 0.5 + radius * std::sin(angle);
    const double cx = size * 0.5 + radius * std::cos(angle);
    const float bright = static_cast<float>(rng.uniform(0.75, 1.0));
    const float fg[3] = {bright, bright, bright};
    paint_disk(img, cy, cx, size * rng.uniform(0.11, 0.15), fg, 0.9f);

    // distractor: dark disk at a random angle
    const double da = rng.uniform(0.0, 6.283185307179586);
    const float dark = static_cast<float>(rng.uniform(0.0, 0.2));
    const float bg[3] = {dark, dark, dark};
    paint_disk(img, size * 0.5 + radius * std::sin(da), size * 0.5 + radius * std::cos(da),
               size * rng.uniform(0.07, 0.1), bg, 0.8f);

    add_noise_and_clamp(img, rng, 0.04);
    return img;
}

struct SyntheticSpec {
    std::string family = "shapes";
    int classes = 4;
    int train = 512;
    int test = 128;
    int size = 32;
    uint64_t seed = 1;
};

SyntheticSpec parse_synthetic(const std::string& spec) {
    // synthetic://family,key=value,...
    SyntheticSpec s;
    std::string body = spec.substr(std::string("synthetic://").size());
    size_t pos = 0;
    bool first = true;
    while (pos <= body.size()) {
        size_t comma = body.find(',', pos);
        if (comma == std::string::npos) comma = body.size();
        const std::string tok = body.substr(pos, comma - pos);
        pos = comma + 1;
        if (tok.empty()) {
            if (pos > body.size()) break;
            continue;
        }
        const size_t eq = tok.find('=');
        if (eq == std::string::npos) {
            if (!first) throw ConfigError("synthetic spec: unexpected token '" + tok + "'");
            s.family = tok;
        } else {
            const std::string k = tok.substr(0, eq), v = tok.substr(eq + 1);
            if (k == "classes")
                s.classes = std::stoi(v);
            else if (k == "train")
                s.train = std::stoi(v);
            else if (k == "test")
                s.test = std::stoi(v);
            else if (k == "size")
                s.size = std::stoi(v);
            else if (k == "seed")
                s.seed = std::stoull(v);
            else
                throw ConfigError("synthetic spec: unknown key '" + k + "'");
        }
        first = false;
        if (comma == body.size()) break;
    }
    if (s.family != "shapes" && s.family != "colors")
        throw ConfigError("synthetic family must be shapes|colors, got '" + s.family + "'");
    if (s.classes < 1 || s.train < 0 || s.test < 0 || s.size < 4)
        throw ConfigError("synthetic spec: invalid counts");
    return s;
}

LabeledDataset make_synthetic(const SyntheticSpec& s, int image_size) {
    LabeledDataset d;
    for (int c = 0; c < s.classes; ++c) d.class_names.push_back("class" + std::to_string(c));
    auto gen_split = [&](const char* split, int count, std::vector<Image>& images, std::vector<int>& labels,
                         std::vector<uint64_t>& ids) {
        for (int i = 0; i < count; ++i) {
            const int cls = i % s.classes;
            Rng rng = Rng::derive(s.seed, std::string("synthetic-") + split, static_cast<uint64_t>(i), 0);
            Image img = s.family == "colors" ? make_colors_image(s.size, cls, s.classes, rng)
                                             : make_shapes_image(s.size, cls, s.classes, rng);
            images.push_back(bilinear_resize(img, image_size, image_size));
            labels.push_back(cls);
            ids.push_back(splitmix64(s.seed ^ fnv1a64(std::string(split) + ":" + std::to_string(i))));
        }
    };
    gen_split("train", s.train, d.train_images, d.train_labels, d.train_ids);
    gen_split("test", s.test, d.test_images, d.test_labels, d.test_ids);
    return d;
}

// ------------------------------------------------------- folder datasets ---

bool is_image_file(const fs::path& p) {
    const std::string ext = p.extension().string();
    return ext == ".png" || ext == ".PNG" || ext == ".ppm" || ext == ".pgm";
}

void load_class_dirs(const fs::path& root, int image_size, std::vector<Image>& images, std::vector<int>& labels,
                     std::vector<uint64_t>& ids, std::vector<std::string>& class_names) {
    std::vector<fs::path> class_dirs;
    for (const auto& e : fs::directory_iterator(root))
        if (e.is_directory()) class_dirs.push_back(e.path());
    std::sort(class_dirs.begin(), class_dirs.end());
    if (class_dirs.empty()) throw ConfigError("dataset directory has no class subdirectories: " + root.string());

    for (const auto& dir : class_dirs) {
        const std::string cls_name = dir.filename().string();
        int cls = -1;
        for (size_t i = 0; i < class_names.size(); ++i)
            if (class_names[i] == cls_name) cls = static_cast<int>(i);
        if (cls < 0) {
            cls = static_cast<int>(class_names.size());
            class_names.push_back(cls_name);
        }
        std::vector<fs::path> files;
        for (const auto& e : fs::directory_iterator(dir))
            if (e.is_regular_file() && is_image_file(e.path())) files.push_back(e.path());
        std::sort(files.begin(), files.end());
        for (const auto& f : files) {
            images.push_back(bilinear_resize(load_image_file(f.string()), image_size, image_size));
            labels.push_back(cls);
            ids.push_back(fnv1a64(cls_name + "/" + f.filename().string()));
        }
    }
}

LabeledDataset load_folder(const fs::path& root, int image_size) {
    LabeledDataset d;
    const fs::path train_dir = root / "train";
    fs::path test_dir = root / "val";
    if (!fs::exists(test_dir)) test_dir = root / "test";

    if (fs::exists(train_dir) && fs::is_directory(train_dir)) {
        load_class_dirs(train_dir, image_size, d.train_images, d.train_labels, d.train_ids, d.class_names);
        if (fs::exists(test_dir) && fs::is_directory(test_dir))
            load_class_dirs(test_dir, image_size, d.test_images, d.test_labels, d.test_ids, d.class_names);
        return d;
    }

    // flat layout: split 80/20 deterministically by id hash
    std::vector<Image> images;
    std::vector<int> labels;
    std::vector<uint64_t> ids;
    load_class_dirs(root, image_size, images, labels, ids, d.class_names);
    for (size_t i = 0; i < images.size(); ++i) {
        if (splitmix64(ids[i]) % 5 == 0) {
            d.test_images.push_back(std::move(images[i]));
            d.test_labels.push_back(labels[i]);
            d.test_ids.push_back(ids[i]);
        } else {
            d.train_images.push_back(std::move(images[i]));
            d.train_labels.push_back(labels[i]);
            d.train_ids.push_back(ids[i]);
        }
    }
    return d;
}

}  // namespace

LabeledDataset load_dataset(const std::string& spec, const std::string& data_root, int image_size) {
    if (spec.empty()) throw ConfigError("dataset not set (data.train)");
    if (spec.rfind("synthetic://", 0) == 0) return make_synthetic(parse_synthetic(spec), image_size);

    fs::path p(spec);
    if (p.is_relative() && !data_root.empty()) p = fs::path(data_root) / p;
    if (!fs::exists(p)) throw IoError("dataset path does not exist: " + p.string());
    LabeledDataset d = load_folder(p, image_size);
    if (d.train_images.empty()) throw ConfigError("dataset is empty: " + p.string());
    return d;
}

}  // namespace digpt
