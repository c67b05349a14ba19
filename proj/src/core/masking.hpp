#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "cluster.hpp"

namespace digpt {

// Boolean attention mask. allow[q * cols + k] is true when query slot q may
// attend key slot k. Immutable after construction.
struct AttentionMask {
    int rows = 0;
    int cols = 0;
    std::vector<uint8_t> allow;
    std::vector<int> row_labels;  // patch id (encoder) or query row index (decoder)
    std::vector<int> col_labels;  // patch id

    AttentionMask() = default;
    AttentionMask(int r, int c) : rows(r), cols(c), allow(static_cast<size_t>(r) * c, 0) {}

    bool at(int q, int k) const { return allow[static_cast<size_t>(q) * cols + k] != 0; }
    void set(int q, int k, bool v) { allow[static_cast<size_t>(q) * cols + k] = v ? 1 : 0; }

    static AttentionMask all_true(int r, int c) {
        AttentionMask m(r, c);
        std::fill(m.allow.begin(), m.allow.end(), uint8_t(1));
        return m;
    }
};

enum class QueryKind : uint8_t { gen, dis };
enum class DisMode : uint8_t { off, latest, all };

DisMode parse_dis_mode(const std::string& s);
const char* dis_mode_name(DisMode m);

// One decoder prediction task: predict the teacher tokens of target_cluster
// given the first prefix_len clusters of the permuted order as context. The
// packed forward expands this into one query row per patch of the target.
struct QueryEntry {
    QueryKind kind = QueryKind::gen;
    int target_cluster = 0;
    int prefix_len = 0;
};

struct QuerySet {
    std::vector<QueryEntry> entries;
    std::vector<std::string> warnings;

    int count(QueryKind k) const {
        int c = 0;
        for (const auto& e : entries)
            if (e.kind == k) ++c;
        return c;
    }
};

// Flattened (entry, patch) pairs in expansion order: entries in listed order,
// patches ascending within each target cluster.
struct QueryRow {
    int entry = 0;
    int patch = 0;
};
std::vector<QueryRow> query_rows(const QuerySet& qs, const ClusterLayout& layout);

// Block-causal mask over patch slots: a patch may attend exactly the patches
// of clusters ranked at or before its own cluster's rank. Within-cluster
// attention is fully bidirectional.
AttentionMask encoder_mask(const ClusterLayout& layout, const PermutedSequence& perm);

// Prediction schedule realizing the packed multi-prefix pass.
//   gen:        target order[k] from prefix k, for k = 1..n-1
//   dis latest: target order[k-1] from prefix k, for k = 1..n-1
//   dis all:    target order[j] from prefix k, for all 0 <= j < k <= n-1
QuerySet decoder_query_set(const ClusterLayout& layout, const PermutedSequence& perm, DisMode dis_mode, bool gen_on);

// Mask for decoder query rows over encoder key slots: a query with prefix k
// attends exactly the patch slots of clusters order[0..k-1].
AttentionMask query_attend_mask(const QuerySet& qs, const ClusterLayout& layout, const PermutedSequence& perm);

std::string mask_to_text(const AttentionMask& m);

}  // namespace digpt
