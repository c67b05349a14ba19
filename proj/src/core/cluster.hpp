#pragma once

#include <cstdint>
#include <vector>

#include "common.hpp"

namespace digpt {

// Partition of the patch grid into equally-sized, non-overlapping rectangular
// clusters. Patches are indexed row-major over the patch grid; clusters are
// indexed row-major over the cluster grid.
struct ClusterLayout {
    int image_h = 0;
    int image_w = 0;
    int patch_size = 0;
    int cluster_rows = 0;
    int cluster_cols = 0;
    // derived
    int patch_rows = 0;
    int patch_cols = 0;
    int num_patches = 0;
    int num_clusters = 0;
    int patches_per_cluster = 0;
};

struct PermutedSequence {
    // order[rank] = cluster id visited at that rank.
    std::vector<int> order;

    int size() const { return static_cast<int>(order.size()); }

    // rank_of[cluster] = position of the cluster in the visitation order.
    std::vector<int> rank_of() const {
        std::vector<int> r(order.size());
        for (size_t i = 0; i < order.size(); ++i) r[static_cast<size_t>(order[i])] = static_cast<int>(i);
        return r;
    }
};

ClusterLayout build_layout(int image_h, int image_w, int patch_size, int cluster_rows, int cluster_cols);

// patch index -> cluster index, length num_patches. Pure and idempotent.
std::vector<int> patch_cluster_map(const ClusterLayout& layout);

// Patch ids belonging to one cluster, ascending.
std::vector<int> cluster_patches(const ClusterLayout& layout, int cluster);

// Uniform random visitation order over n clusters.
PermutedSequence sample_permutation(int n, Rng& rng);

PermutedSequence identity_permutation(int n);

// (cluster_rows, cluster_cols) for a cluster count, matching the convention
// used for the cluster-count sweep: rows = largest divisor <= sqrt(n).
// E.g. 1->(1,1), 2->(1,2), 4->(2,2), 14->(2,7), 196->(14,14).
std::pair<int, int> factor_cluster_count(int n);

}  // namespace digpt
