#include "masking.hpp"

#include <algorithm>

namespace digpt {

DisMode parse_dis_mode(const std::string& s) {
    if (s == "off") return DisMode::off;
    if (s == "latest") return DisMode::latest;
    if (s == "all") return DisMode::all;
    throw ConfigError("loss.dis_mode must be one of off|latest|all, got '" + s + "'");
}

const char* dis_mode_name(DisMode m) {
    switch (m) {
        case DisMode::off: return "off";
        case DisMode::latest: return "latest";
        case DisMode::all: return "all";
    }
    return "?";
}

std::vector<QueryRow> query_rows(const QuerySet& qs, const ClusterLayout& layout) {
    std::vector<QueryRow> rows;
    rows.reserve(qs.entries.size() * static_cast<size_t>(layout.patches_per_cluster));
    for (int e = 0; e < static_cast<int>(qs.entries.size()); ++e) {
        for (int p : cluster_patches(layout, qs.entries[static_cast<size_t>(e)].target_cluster))
            rows.push_back({e, p});
    }
    return rows;
}

AttentionMask encoder_mask(const ClusterLayout& layout, const PermutedSequence& perm) {
    if (perm.size() != layout.num_clusters)
        throw ConfigError("encoder_mask: permutation length " + std::to_string(perm.size()) +
                          " does not match num_clusters " + std::to_string(layout.num_clusters));
    const std::vector<int> cluster_of = patch_cluster_map(layout);
    const std::vector<int> rank = perm.rank_of();

    AttentionMask m(layout.num_patches, layout.num_patches);
    m.row_labels.resize(static_cast<size_t>(layout.num_patches));
    m.col_labels.resize(static_cast<size_t>(layout.num_patches));
    for (int q = 0; q < layout.num_patches; ++q) {
        m.row_labels[static_cast<size_t>(q)] = q;
        m.col_labels[static_cast<size_t>(q)] = q;
        const int rq = rank[static_cast<size_t>(cluster_of[static_cast<size_t>(q)])];
        for (int k = 0; k < layout.num_patches; ++k)
            m.set(q, k, rank[static_cast<size_t>(cluster_of[static_cast<size_t>(k)])] <= rq);
    }
    return m;
}

QuerySet decoder_query_set(const ClusterLayout& layout, const PermutedSequence& perm, DisMode dis_mode, bool gen_on) {
    if (perm.size() != layout.num_clusters) throw ConfigError("decoder_query_set: permutation does not match layout");
    const int n = layout.num_clusters;
    QuerySet qs;
    if (gen_on) {
        if (n == 1) {
            qs.warnings.push_back("gen requested with a single cluster: no prefix exists, gen set is empty");
        } else {
            for (int k = 1; k < n; ++k)
                qs.entries.push_back({QueryKind::gen, perm.order[static_cast<size_t>(k)], k});
        }
    }
    switch (dis_mode) {
        case DisMode::off: break;
        case DisMode::latest:
            for (int k = 1; k < n; ++k)
                qs.entries.push_back({QueryKind::dis, perm.order[static_cast<size_t>(k - 1)], k});
            break;
        case DisMode::all:
            for (int k = 1; k < n; ++k)
                for (int j = 0; j < k; ++j)
                    qs.entries.push_back({QueryKind::dis, perm.order[static_cast<size_t>(j)], k});
            break;
    }
    return qs;
}

AttentionMask query_attend_mask(const QuerySet& qs, const ClusterLayout& layout, const PermutedSequence& perm) {
    const std::vector<int> cluster_of = patch_cluster_map(layout);
    const std::vector<int> rank = perm.rank_of();
    const std::vector<QueryRow> rows = query_rows(qs, layout);

    AttentionMask m(static_cast<int>(rows.size()), layout.num_patches);
    m.row_labels.resize(rows.size());
    m.col_labels.resize(static_cast<size_t>(layout.num_patches));
    for (int k = 0; k < layout.num_patches; ++k) m.col_labels[static_cast<size_t>(k)] = k;
    for (int r = 0; r < static_cast<int>(rows.size()); ++r) {
        m.row_labels[static_cast<size_t>(r)] = r;
        const QueryEntry& e = qs.entries[static_cast<size_t>(rows[static_cast<size_t>(r)].entry)];
        for (int k = 0; k < layout.num_patches; ++k)
            m.set(r, k, rank[static_cast<size_t>(cluster_of[static_cast<size_t>(k)])] < e.prefix_len);
    }
    return m;
}

std::string mask_to_text(const AttentionMask& m) {
    std::string out;
    out.reserve(static_cast<size_t>(m.rows) * (static_cast<size_t>(m.cols) * 2 + 1));
    for (int r = 0; r < m.rows; ++r) {
        for (int c = 0; c < m.cols; ++c) {
            if (c) out += ' ';
            out += m.at(r, c) ? '1' : '0';
        }
        out += '\n';
    }
    return out;
}

}  // namespace digpt
