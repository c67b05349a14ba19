#pragma once

#include <string>
#include <vector>

#include "teacher.hpp"

namespace digpt {

enum class Paradigm : uint8_t { digpt, fd, mim };

Paradigm parse_paradigm(const std::string& s);
const char* paradigm_name(Paradigm p);

// Which supervision terms are active and how they are weighted.
struct LossSpec {
    Paradigm paradigm = Paradigm::digpt;
    bool gen_on = true;
    DisMode dis_mode = DisMode::latest;
    bool fd_on = false;  // extra encoder-level distillation on top of digpt
    double lambda_dis = 1.0;
    double lambda_fd = 1.0;
    double mim_mask_ratio = 0.5;

    void validate() const {
        if (lambda_dis < 0 || lambda_fd < 0) throw ConfigError("loss weights must be >= 0");
        if (paradigm == Paradigm::digpt && !gen_on && dis_mode == DisMode::off && !fd_on)
            throw ConfigError("no supervision enabled: loss.gen, loss.dis_mode and loss.fd are all off");
        if (paradigm == Paradigm::mim && (mim_mask_ratio <= 0.0 || mim_mask_ratio >= 1.0))
            throw ConfigError("mim.mask_ratio must lie in (0, 1)");
    }
};

struct LossReport {
    double loss_gen = 0.0;
    double loss_dis = 0.0;
    double loss_fd = 0.0;
    double loss_total = 0.0;
    int gen_entries = 0;
    int dis_entries = 0;
    int gen_rows = 0;
    int dis_rows = 0;
    int fd_rows = 0;
    bool gen_empty = false;
    bool dis_empty = false;

    void accumulate(const LossReport& o) {
        loss_gen += o.loss_gen;
        loss_dis += o.loss_dis;
        loss_fd += o.loss_fd;
        loss_total += o.loss_total;
        gen_entries += o.gen_entries;
        dis_entries += o.dis_entries;
        gen_rows += o.gen_rows;
        dis_rows += o.dis_rows;
        fd_rows += o.fd_rows;
        gen_empty = gen_empty || o.gen_empty;
        dis_empty = dis_empty || o.dis_empty;
    }

    void scale(double s) {
        loss_gen *= s;
        loss_dis *= s;
        loss_fd *= s;
        loss_total *= s;
    }
};

// ------------------------------------------------------------------ cosine ---

// Per-row cosine similarity; epsilon 1e-8 is added to each norm, so zero
// rows yield 0 and |result| <= 1 always.
template <class T>
std::vector<T> cosine_rows(const Tensor<T>& a, const Tensor<T>& b) {
    if (a.rows != b.rows || a.cols != b.cols) throw ConfigError("cosine_rows: shape mismatch");
    std::vector<T> out(static_cast<size_t>(a.rows));
    for (int r = 0; r < a.rows; ++r) {
        const auto ar = a.map().row(r);
        const auto br = b.map().row(r);
        const T na = ar.norm() + static_cast<T>(1e-8);
        const T nb = br.norm() + static_cast<T>(1e-8);
        out[static_cast<size_t>(r)] = ar.dot(br) / (na * nb);
    }
    return out;
}

// L = -mean_r cosine(a_r, b_r). Writes dL/da when da is given (b is a
// target and never receives gradients).
template <class T>
double neg_mean_cosine(const Tensor<T>& a, const Tensor<T>& b, Tensor<T>* da = nullptr) {
    if (a.rows != b.rows || a.cols != b.cols) throw ConfigError("neg_mean_cosine: shape mismatch");
    if (a.rows == 0) {
        if (da) da->resize(0, a.cols);
        return 0.0;
    }
    if (da) da->resize(a.rows, a.cols);
    double total = 0.0;
    const T inv_rows = T(1) / static_cast<T>(a.rows);
    for (int r = 0; r < a.rows; ++r) {
        const auto ar = a.map().row(r);
        const auto br = b.map().row(r);
        const T norm_a = ar.norm();
        const T na = norm_a + static_cast<T>(1e-8);
        const T nb = br.norm() + static_cast<T>(1e-8);
        const T dot = ar.dot(br);
        const T cos = dot / (na * nb);
        total += static_cast<double>(cos);
        if (da) {
            // d(-cos)/da = -(b/(na*nb) - cos * a/(norm_a*na))
            const T safe_norm = std::max(norm_a, static_cast<T>(1e-30));
            da->map().row(r) = (-inv_rows) * (br / (na * nb) - (cos / (safe_norm * na)) * ar);
        }
    }
    return -total / a.rows;
}

// Teacher tokens for each (entry, patch) query row.
template <class T>
Tensor<T> gather_teacher_rows(const TeacherTokens<T>& teacher, const std::vector<QueryRow>& rows) {
    Tensor<T> out(static_cast<int>(rows.size()), teacher.tokens.cols);
    for (size_t r = 0; r < rows.size(); ++r) out.map().row(static_cast<int>(r)) = teacher.tokens.map().row(rows[r].patch);
    return out;
}

template <class T>
double loss_gen(const Tensor<T>& predictions, const TeacherTokens<T>& teacher, const QuerySet& qs,
                const ClusterLayout& layout, Tensor<T>* dpred = nullptr) {
    const auto rows = query_rows(qs, layout);
    if (predictions.rows != static_cast<int>(rows.size())) throw ConfigError("loss_gen: predictions not aligned");
    const Tensor<T> targets = gather_teacher_rows(teacher, rows);
    return neg_mean_cosine(predictions, targets, dpred);
}

template <class T>
double loss_dis(const Tensor<T>& predictions, const TeacherTokens<T>& teacher, const QuerySet& qs,
                const ClusterLayout& layout, Tensor<T>* dpred = nullptr) {
    return loss_gen(predictions, teacher, qs, layout, dpred);
}

// Combines the active terms: total = gen + lambda_dis * dis + lambda_fd * fd.
inline LossReport total_loss(double gen, int gen_entries, int gen_rows, bool gen_empty, double dis, int dis_entries,
                             int dis_rows, bool dis_empty, double fd, int fd_rows, const LossSpec& spec) {
    spec.validate();
    LossReport r;
    r.loss_gen = gen;
    r.loss_dis = dis;
    r.loss_fd = fd;
    r.gen_entries = gen_entries;
    r.dis_entries = dis_entries;
    r.gen_rows = gen_rows;
    r.dis_rows = dis_rows;
    r.fd_rows = fd_rows;
    r.gen_empty = gen_empty;
    r.dis_empty = dis_empty;
    r.loss_total = r.loss_gen + spec.lambda_dis * r.loss_dis + spec.lambda_fd * r.loss_fd;
    return r;
}

// --------------------------------------------------- per-sample training op ---

inline QuerySet filter_queries(const QuerySet& qs, QueryKind kind) {
    QuerySet out;
    for (const auto& e : qs.entries)
        if (e.kind == kind) out.entries.push_back(e);
    return out;
}

// Full packed forward (and optional backward) for one sample. Gradients are
// accumulated into *grads scaled by grad_scale, so a batch mean is obtained
// by passing 1/batch_size.
template <class T>
LossReport sample_loss(const ModelParams<T>& p, const Tensor<T>& patches, const PermutedSequence& perm,
                       const TeacherTokens<T>& teacher, const LossSpec& spec,
                       const std::vector<int>& mim_clusters = {}, ModelParams<T>* grads = nullptr,
                       double grad_scale = 1.0) {
    const ClusterLayout layout = p.cfg.layout();
    if (teacher.tokens.rows != layout.num_patches || teacher.tokens.cols != p.cfg.teacher_dim)
        throw ConfigError("sample_loss: teacher token grid/dim mismatch");
    const T gscale = static_cast<T>(grad_scale);

    if (spec.paradigm == Paradigm::fd || spec.paradigm == Paradigm::mim) {
        const bool is_mim = spec.paradigm == Paradigm::mim;
        std::vector<int> mim_rows;
        if (is_mim) {
            if (mim_clusters.empty()) throw ConfigError("mim paradigm requires a masked cluster choice");
            for (int cl : mim_clusters)
                for (int pid : cluster_patches(layout, cl)) mim_rows.push_back(pid);
            std::sort(mim_rows.begin(), mim_rows.end());
        }
        EncoderCache<T> cache;
        const AttentionMask amask = AttentionMask::all_true(layout.num_patches, layout.num_patches);
        encode_forward(p, patches, amask, full_patch_ids<T>(layout), cache, mim_rows);

        // Supervised positions: every patch for fd, masked patches for mim.
        std::vector<int> sup = is_mim ? mim_rows : full_patch_ids<T>(layout);
        Tensor<T> feats(static_cast<int>(sup.size()), p.cfg.width);
        Tensor<T> targets(static_cast<int>(sup.size()), teacher.tokens.cols);
        for (size_t i = 0; i < sup.size(); ++i) {
            feats.map().row(static_cast<int>(i)) = cache.out.map().row(sup[i]);
            targets.map().row(static_cast<int>(i)) = teacher.tokens.map().row(sup[i]);
        }
        Tensor<T> preds, dpreds;
        nn::linear_forward(feats, p.fd_w, p.fd_b, preds);
        const double fd = neg_mean_cosine(preds, targets, grads ? &dpreds : nullptr);
        if (grads) {
            dpreds.map() *= static_cast<T>(spec.lambda_fd) * gscale;
            nn::linear_backward_params(feats, dpreds, grads->fd_w, grads->fd_b);
            Tensor<T> dfeats;
            nn::linear_backward_input(dpreds, p.fd_w, dfeats);
            Tensor<T> denc(layout.num_patches, p.cfg.width);
            for (size_t i = 0; i < sup.size(); ++i) denc.map().row(sup[i]) = dfeats.map().row(static_cast<int>(i));
            encode_backward(p, cache, amask, denc, *grads);
        }
        return total_loss(0.0, 0, 0, false, 0.0, 0, 0, false, fd, static_cast<int>(sup.size()), spec);
    }

    // digpt paradigm: packed block-causal pass + cross-attention decoders.
    const AttentionMask emask = encoder_mask(layout, perm);
    EncoderCache<T> cache;
    encode_forward(p, patches, emask, full_patch_ids<T>(layout), cache);

    const bool gen_on = spec.gen_on && p.cfg.with_gen;
    const DisMode dmode = p.cfg.with_dis ? spec.dis_mode : DisMode::off;
    const QuerySet qs = decoder_query_set(layout, perm, dmode, gen_on);
    const QuerySet qs_gen = filter_queries(qs, QueryKind::gen);
    const QuerySet qs_dis = filter_queries(qs, QueryKind::dis);

    Tensor<T> d_enc_out(layout.num_patches, p.cfg.width);

    double lg = 0.0, ld = 0.0, lfd = 0.0;
    int gen_rows_n = 0, dis_rows_n = 0, fd_rows_n = 0;
    DecoderCache<T> gcache, dcache;
    Tensor<T> dpred;

    if (gen_on && !qs_gen.entries.empty()) {
        const auto rows = query_rows(qs_gen, layout);
        gen_rows_n = static_cast<int>(rows.size());
        const AttentionMask qmask = query_attend_mask(qs_gen, layout, perm);
        decode_forward(p.cfg, *p.gen, p.encoder.pos_embed, cache.out, rows, qmask, gcache);
        lg = loss_gen(gcache.preds, teacher, qs_gen, layout, grads ? &dpred : nullptr);
        if (grads) {
            dpred.map() *= gscale;
            decode_backward(p.cfg, *p.gen, cache.out, gcache, dpred, *grads->gen, grads->encoder.pos_embed,
                            d_enc_out);
        }
    }
    if (dmode != DisMode::off && !qs_dis.entries.empty()) {
        const auto rows = query_rows(qs_dis, layout);
        dis_rows_n = static_cast<int>(rows.size());
        const AttentionMask qmask = query_attend_mask(qs_dis, layout, perm);
        decode_forward(p.cfg, *p.dis, p.encoder.pos_embed, cache.out, rows, qmask, dcache);
        ld = loss_dis(dcache.preds, teacher, qs_dis, layout, grads ? &dpred : nullptr);
        if (grads) {
            dpred.map() *= static_cast<T>(spec.lambda_dis) * gscale;
            decode_backward(p.cfg, *p.dis, cache.out, dcache, dpred, *grads->dis, grads->encoder.pos_embed,
                            d_enc_out);
        }
    }
    if (spec.fd_on && p.cfg.with_fd) {
        Tensor<T> preds, dpreds;
        nn::linear_forward(cache.out, p.fd_w, p.fd_b, preds);
        lfd = neg_mean_cosine(preds, teacher.tokens, grads ? &dpreds : nullptr);
        fd_rows_n = layout.num_patches;
        if (grads) {
            dpreds.map() *= static_cast<T>(spec.lambda_fd) * gscale;
            nn::linear_backward_params(cache.out, dpreds, grads->fd_w, grads->fd_b);
            d_enc_out.map() += dpreds.map() * p.fd_w.map().transpose();
        }
    }
    if (grads) encode_backward(p, cache, emask, d_enc_out, *grads);

    return total_loss(lg, static_cast<int>(qs_gen.entries.size()), gen_rows_n, gen_on && qs_gen.entries.empty(), ld,
                      static_cast<int>(qs_dis.entries.size()), dis_rows_n,
                      dmode == DisMode::off || qs_dis.entries.empty(), lfd, fd_rows_n, spec);
}

}  // namespace digpt
