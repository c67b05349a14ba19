#pragma once

#include <cstdint>
#include <memory>
#include <string>
#include <unordered_map>
#include <vector>

#include "model.hpp"

namespace digpt {

enum class TeacherKind : uint8_t { pixel, frozen, cache };

TeacherKind parse_teacher_kind(const std::string& s);
const char* teacher_kind_name(TeacherKind k);

// Per-patch target vectors f(x) for one image: num_patches x teacher_dim.
template <class T>
struct TeacherTokens {
    Tensor<T> tokens;
    TeacherKind provenance = TeacherKind::pixel;
};

// Raw pixel targets: each patch's pixel vector standardized to mean 0,
// variance 1 (variance epsilon 1e-6, so constant patches map to zero).
template <class T>
TeacherTokens<T> pixel_tokens(const Tensor<T>& patches, const ClusterLayout& layout) {
    if (patches.rows != layout.num_patches || patches.cols != layout.patch_size * layout.patch_size * 3)
        throw ConfigError("pixel_tokens: patch tensor does not match layout");
    TeacherTokens<T> out;
    out.provenance = TeacherKind::pixel;
    out.tokens.resize(patches.rows, patches.cols);
    const int d = patches.cols;
    for (int r = 0; r < patches.rows; ++r) {
        const T* src = patches.row(r);
        T mean = 0;
        for (int c = 0; c < d; ++c) mean += src[c];
        mean /= static_cast<T>(d);
        T var = 0;
        for (int c = 0; c < d; ++c) {
            const T dv = src[c] - mean;
            var += dv * dv;
        }
        var /= static_cast<T>(d);
        const T rstd = T(1) / std::sqrt(var + static_cast<T>(1e-6));
        T* dst = out.tokens.row(r);
        for (int c = 0; c < d; ++c) dst[c] = (src[c] - mean) * rstd;
    }
    return out;
}

// Frozen network targets: last-layer per-patch features of a fixed encoder
// run with full bidirectional attention on the same view the student sees.
template <class T>
TeacherTokens<T> frozen_tokens(const ModelParams<T>& teacher, const Tensor<T>& patches) {
    const ClusterLayout tl = teacher.cfg.layout();
    if (patches.rows != tl.num_patches || patches.cols != teacher.cfg.patch_dim())
        throw ConfigError("frozen_tokens: teacher patch grid does not match input (no resampling)");
    EncoderCache<T> cache;
    encode_forward(teacher, patches, AttentionMask::all_true(patches.rows, patches.rows), full_patch_ids<T>(tl),
                   cache);
    TeacherTokens<T> out;
    out.provenance = TeacherKind::frozen;
    out.tokens = cache.out;
    return out;
}

// ------------------------------------------------------------ cache format ---
//
// Binary layout (little-endian):
//   magic "DGPT" | version u32 = 1 | dtype u8 (0 = float32) |
//   grid_h u16 | grid_w u16 | dim u32 | count u64 |
//   count * ( image_id u64 | grid_h*grid_w*dim float32 )

struct TeacherCacheEntry {
    uint64_t image_id = 0;
    Tensor<float> tokens;  // (grid_h*grid_w) x dim
};

void cache_write(const std::string& path, int grid_h, int grid_w, int dim,
                 const std::vector<TeacherCacheEntry>& entries);

class TeacherCache {
public:
    static TeacherCache read(const std::string& path);

    int grid_h() const { return grid_h_; }
    int grid_w() const { return grid_w_; }
    int dim() const { return dim_; }
    size_t size() const { return entries_.size(); }

    const Tensor<float>& lookup(uint64_t image_id) const;

private:
    int grid_h_ = 0, grid_w_ = 0, dim_ = 0;
    std::vector<TeacherCacheEntry> entries_;
    std::unordered_map<uint64_t, size_t> index_;
};

// ---------------------------------------------------------------- provider ---

// Uniform front over the three target sources. Read-only after construction;
// nothing downstream ever writes back into it.
template <class T>
class TeacherProvider {
public:
    static TeacherProvider pixel() { return TeacherProvider(TeacherKind::pixel); }

    static TeacherProvider frozen(ModelParams<T> params) {
        TeacherProvider p(TeacherKind::frozen);
        p.frozen_ = std::make_shared<ModelParams<T>>(std::move(params));
        return p;
    }

    static TeacherProvider cache(std::shared_ptr<TeacherCache> c) {
        TeacherProvider p(TeacherKind::cache);
        p.cache_ = std::move(c);
        return p;
    }

    TeacherKind kind() const { return kind_; }

    int dim(const ClusterLayout& layout) const {
        switch (kind_) {
            case TeacherKind::pixel: return layout.patch_size * layout.patch_size * 3;
            case TeacherKind::frozen: return frozen_->cfg.width;
            case TeacherKind::cache: return cache_->dim();
        }
        return 0;
    }

    const ModelParams<T>* frozen_params() const { return frozen_ ? frozen_.get() : nullptr; }

    TeacherTokens<T> tokens(const Tensor<T>& patches, uint64_t image_id, const ClusterLayout& layout) const {
        switch (kind_) {
            case TeacherKind::pixel: return pixel_tokens(patches, layout);
            case TeacherKind::frozen: {
                const ClusterLayout tl = frozen_->cfg.layout();
                if (tl.patch_rows != layout.patch_rows || tl.patch_cols != layout.patch_cols)
                    throw ConfigError("teacher patch grid (" + std::to_string(tl.patch_rows) + "x" +
                                      std::to_string(tl.patch_cols) + ") does not match student grid (" +
                                      std::to_string(layout.patch_rows) + "x" + std::to_string(layout.patch_cols) +
                                      "); feature resampling is not supported");
                return frozen_tokens(*frozen_, patches);
            }
            case TeacherKind::cache: {
                if (cache_->grid_h() != layout.patch_rows || cache_->grid_w() != layout.patch_cols)
                    throw ConfigError("cached teacher grid does not match student grid");
                TeacherTokens<T> out;
                out.provenance = TeacherKind::cache;
                out.tokens = cache_->lookup(image_id).template cast<T>();
                return out;
            }
        }
        throw ConfigError("unreachable teacher kind");
    }

private:
    explicit TeacherProvider(TeacherKind k) : kind_(k) {}

    TeacherKind kind_;
    std::shared_ptr<ModelParams<T>> frozen_;
    std::shared_ptr<TeacherCache> cache_;
};

}  // namespace digpt
