#include "cluster.hpp"

#include <numeric>
#include <string>

namespace digpt {

namespace {

void require_divisible(int a, int b, const std::string& a_name, const std::string& b_name) {
    if (b <= 0 || a % b != 0) {
        throw ConfigError(a_name + " (" + std::to_string(a) + ") must be an exact multiple of " + b_name + " (" +
                          std::to_string(b) + ")");
    }
}

}  // namespace

ClusterLayout build_layout(int image_h, int image_w, int patch_size, int cluster_rows, int cluster_cols) {
    if (image_h <= 0 || image_w <= 0 || patch_size <= 0 || cluster_rows <= 0 || cluster_cols <= 0)
        throw ConfigError("build_layout: all layout inputs must be positive");
    require_divisible(image_h, patch_size, "image_h", "patch_size");
    require_divisible(image_w, patch_size, "image_w", "patch_size");

    ClusterLayout l;
    l.image_h = image_h;
    l.image_w = image_w;
    l.patch_size = patch_size;
    l.cluster_rows = cluster_rows;
    l.cluster_cols = cluster_cols;
    l.patch_rows = image_h / patch_size;
    l.patch_cols = image_w / patch_size;
    require_divisible(l.patch_rows, cluster_rows, "patch_rows", "cluster_rows");
    require_divisible(l.patch_cols, cluster_cols, "patch_cols", "cluster_cols");
    l.num_patches = l.patch_rows * l.patch_cols;
    l.num_clusters = cluster_rows * cluster_cols;
    l.patches_per_cluster = l.num_patches / l.num_clusters;
    return l;
}

std::vector<int> patch_cluster_map(const ClusterLayout& l) {
    const int tile_h = l.patch_rows / l.cluster_rows;  // patches per cluster, vertically
    const int tile_w = l.patch_cols / l.cluster_cols;
    std::vector<int> map(static_cast<size_t>(l.num_patches));
    for (int pr = 0; pr < l.patch_rows; ++pr) {
        for (int pc = 0; pc < l.patch_cols; ++pc) {
            const int cr = pr / tile_h;
            const int cc = pc / tile_w;
            map[static_cast<size_t>(pr) * l.patch_cols + pc] = cr * l.cluster_cols + cc;
        }
    }
    return map;
}

std::vector<int> cluster_patches(const ClusterLayout& l, int cluster) {
    const int tile_h = l.patch_rows / l.cluster_rows;
    const int tile_w = l.patch_cols / l.cluster_cols;
    const int cr = cluster / l.cluster_cols;
    const int cc = cluster % l.cluster_cols;
    std::vector<int> out;
    out.reserve(static_cast<size_t>(l.patches_per_cluster));
    for (int r = cr * tile_h; r < (cr + 1) * tile_h; ++r)
        for (int c = cc * tile_w; c < (cc + 1) * tile_w; ++c) out.push_back(r * l.patch_cols + c);
    return out;
}

PermutedSequence sample_permutation(int n, Rng& rng) {
    if (n < 1) throw ConfigError("sample_permutation: n must be >= 1");
    PermutedSequence seq;
    seq.order.resize(static_cast<size_t>(n));
    std::iota(seq.order.begin(), seq.order.end(), 0);
    rng.shuffle(seq.order);
    return seq;
}

PermutedSequence identity_permutation(int n) {
    PermutedSequence seq;
    seq.order.resize(static_cast<size_t>(n));
    std::iota(seq.order.begin(), seq.order.end(), 0);
    return seq;
}

std::pair<int, int> factor_cluster_count(int n) {
    if (n < 1) throw ConfigError("cluster count must be >= 1");
    int rows = 1;
    for (int d = 1; d * d <= n; ++d)
        if (n % d == 0) rows = d;
    return {rows, n / rows};
}

}  // namespace digpt
