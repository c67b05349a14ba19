#pragma once

#include <optional>
#include <string>
#include <vector>

#include "cluster.hpp"
#include "masking.hpp"
#include "nn.hpp"

namespace digpt {

// Dimensions and component switches. Parameters are allocated from this,
// so a checkpoint's config snapshot fully determines tensor shapes.
struct ModelConfig {
    int image_h = 32;
    int image_w = 32;
    int patch_size = 4;
    int cluster_rows = 2;
    int cluster_cols = 2;
    int width = 192;
    int depth = 6;
    int heads = 3;
    double mlp_ratio = 4.0;
    int dec_depth = 2;
    int dec_dim = 192;
    int dec_heads = 3;
    int teacher_dim = 48;
    bool with_gen = true;
    bool with_dis = true;
    bool with_fd = false;
    bool with_mask_token = false;
    int num_classes = 0;  // > 0 allocates a classifier head

    ClusterLayout layout() const { return build_layout(image_h, image_w, patch_size, cluster_rows, cluster_cols); }
    int patch_dim() const { return patch_size * patch_size * 3; }
    int mlp_hidden() const { return static_cast<int>(width * mlp_ratio + 0.5); }
    int dec_mlp_hidden() const { return static_cast<int>(dec_dim * mlp_ratio + 0.5); }

    void validate() const {
        if (width <= 0 || depth <= 0 || heads <= 0) throw ConfigError("model dims must be positive");
        if (width % heads != 0)
            throw ConfigError("model.heads (" + std::to_string(heads) + ") must divide model.dim (" +
                              std::to_string(width) + ")");
        if (with_gen || with_dis) {
            if (dec_depth < 1) throw ConfigError("decoder.depth must be >= 1");
            if (dec_dim % dec_heads != 0)
                throw ConfigError("decoder.heads (" + std::to_string(dec_heads) + ") must divide decoder.dim (" +
                                  std::to_string(dec_dim) + ")");
        }
        layout();  // throws on divisibility violations
    }
};

template <class T>
struct LnParams {
    Tensor<T> g, b;
};

template <class T>
struct AttnParams {
    Tensor<T> wq, bq, wk, bk, wv, bv, wo, bo;
};

template <class T>
struct MlpParams {
    Tensor<T> w1, b1, w2, b2;
};

template <class T>
struct EncoderBlockParams {
    LnParams<T> ln1;
    AttnParams<T> attn;
    LnParams<T> ln2;
    MlpParams<T> mlp;
};

template <class T>
struct EncoderParams {
    Tensor<T> patch_embed_w;  // patch_dim x width
    Tensor<T> patch_embed_b;  // 1 x width
    Tensor<T> pos_embed;      // num_patches x width
    std::vector<EncoderBlockParams<T>> blocks;
    LnParams<T> ln_final;
};

template <class T>
struct DecoderBlockParams {
    LnParams<T> lnq;
    AttnParams<T> xattn;  // wq: dec_dim->dec_dim, wk/wv: width->dec_dim
    LnParams<T> ln2;
    MlpParams<T> mlp;
};

// Cross-attention decoder with a learned task token. The query for a patch
// position is token_embed + pos_proj(pos_embed[patch]); there is no
// query-query self-attention, so queries of different prefixes cannot mix.
template <class T>
struct DecoderParams {
    Tensor<T> token_embed;  // 1 x dec_dim
    Tensor<T> pos_proj_w;   // width x dec_dim
    std::vector<DecoderBlockParams<T>> blocks;
    LnParams<T> ln_final;
    Tensor<T> proj_w;  // dec_dim x teacher_dim
    Tensor<T> proj_b;  // 1 x teacher_dim
};

template <class T>
struct ModelParams {
    ModelConfig cfg;
    EncoderParams<T> encoder;
    std::optional<DecoderParams<T>> gen;
    std::optional<DecoderParams<T>> dis;
    Tensor<T> fd_w, fd_b;      // width -> teacher_dim head (fd / mim paradigms)
    Tensor<T> mask_token;      // 1 x width (mim)
    Tensor<T> head_w, head_b;  // width -> num_classes
};

// ------------------------------------------------------------- visitation ---

template <class T, class F>
void visit_ln(const std::string& prefix, LnParams<T>& p, F&& f) {
    f(prefix + ".g", p.g);
    f(prefix + ".b", p.b);
}

template <class T, class F>
void visit_attn(const std::string& prefix, AttnParams<T>& p, F&& f) {
    f(prefix + ".wq", p.wq);
    f(prefix + ".bq", p.bq);
    f(prefix + ".wk", p.wk);
    f(prefix + ".bk", p.bk);
    f(prefix + ".wv", p.wv);
    f(prefix + ".bv", p.bv);
    f(prefix + ".wo", p.wo);
    f(prefix + ".bo", p.bo);
}

template <class T, class F>
void visit_mlp(const std::string& prefix, MlpParams<T>& p, F&& f) {
    f(prefix + ".w1", p.w1);
    f(prefix + ".b1", p.b1);
    f(prefix + ".w2", p.w2);
    f(prefix + ".b2", p.b2);
}

template <class T, class F>
void visit_decoder(const std::string& prefix, DecoderParams<T>& d, F&& f) {
    f(prefix + ".tok", d.token_embed);
    f(prefix + ".pos_proj.w", d.pos_proj_w);
    for (size_t i = 0; i < d.blocks.size(); ++i) {
        const std::string bp = prefix + ".b" + std::to_string(i);
        visit_ln(bp + ".lnq", d.blocks[i].lnq, f);
        visit_attn(bp + ".xattn", d.blocks[i].xattn, f);
        visit_ln(bp + ".ln2", d.blocks[i].ln2, f);
        visit_mlp(bp + ".mlp", d.blocks[i].mlp, f);
    }
    visit_ln(prefix + ".lnf", d.ln_final, f);
    f(prefix + ".proj.w", d.proj_w);
    f(prefix + ".proj.b", d.proj_b);
}

// Canonical enumeration of every trainable tensor. Checkpoint layout,
// initialization order and the optimizer all rely on this order.
template <class T, class F>
void visit_params(ModelParams<T>& p, F&& f) {
    f("enc.patch_embed.w", p.encoder.patch_embed_w);
    f("enc.patch_embed.b", p.encoder.patch_embed_b);
    f("enc.pos", p.encoder.pos_embed);
    for (size_t i = 0; i < p.encoder.blocks.size(); ++i) {
        const std::string bp = "enc.b" + std::to_string(i);
        visit_ln(bp + ".ln1", p.encoder.blocks[i].ln1, f);
        visit_attn(bp + ".attn", p.encoder.blocks[i].attn, f);
        visit_ln(bp + ".ln2", p.encoder.blocks[i].ln2, f);
        visit_mlp(bp + ".mlp", p.encoder.blocks[i].mlp, f);
    }
    visit_ln("enc.lnf", p.encoder.ln_final, f);
    if (p.gen) visit_decoder("gen", *p.gen, f);
    if (p.dis) visit_decoder("dis", *p.dis, f);
    if (p.cfg.with_fd) {
        f("fd.w", p.fd_w);
        f("fd.b", p.fd_b);
    }
    if (p.cfg.with_mask_token) f("mask_tok", p.mask_token);
    if (p.cfg.num_classes > 0) {
        f("head.w", p.head_w);
        f("head.b", p.head_b);
    }
}

template <class T>
size_t num_params(ModelParams<T>& p) {
    size_t n = 0;
    visit_params(p, [&](const std::string&, Tensor<T>& t) { n += t.size(); });
    return n;
}

template <class T>
uint64_t params_checksum(ModelParams<T>& p) {
    uint64_t h = 0xcbf29ce484222325ull;
    visit_params(p, [&](const std::string& name, Tensor<T>& t) {
        h = splitmix64(h ^ fnv1a64(name));
        h = splitmix64(h ^ checksum(t));
    });
    return h;
}

// ---------------------------------------------------------- construction ---

template <class T>
void alloc_decoder(DecoderParams<T>& d, const ModelConfig& c) {
    const int dd = c.dec_dim, w = c.width, hid = c.dec_mlp_hidden();
    d.token_embed.resize(1, dd);
    d.pos_proj_w.resize(w, dd);
    d.blocks.resize(static_cast<size_t>(c.dec_depth));
    for (auto& b : d.blocks) {
        b.lnq.g.resize(1, dd);
        b.lnq.b.resize(1, dd);
        b.xattn.wq.resize(dd, dd);
        b.xattn.bq.resize(1, dd);
        b.xattn.wk.resize(w, dd);
        b.xattn.bk.resize(1, dd);
        b.xattn.wv.resize(w, dd);
        b.xattn.bv.resize(1, dd);
        b.xattn.wo.resize(dd, dd);
        b.xattn.bo.resize(1, dd);
        b.ln2.g.resize(1, dd);
        b.ln2.b.resize(1, dd);
        b.mlp.w1.resize(dd, hid);
        b.mlp.b1.resize(1, hid);
        b.mlp.w2.resize(hid, dd);
        b.mlp.b2.resize(1, dd);
    }
    d.ln_final.g.resize(1, dd);
    d.ln_final.b.resize(1, dd);
    d.proj_w.resize(dd, c.teacher_dim);
    d.proj_b.resize(1, c.teacher_dim);
}

template <class T>
ModelParams<T> alloc_params(const ModelConfig& c) {
    c.validate();
    ModelParams<T> p;
    p.cfg = c;
    const ClusterLayout layout = c.layout();
    const int w = c.width, hid = c.mlp_hidden();
    p.encoder.patch_embed_w.resize(c.patch_dim(), w);
    p.encoder.patch_embed_b.resize(1, w);
    p.encoder.pos_embed.resize(layout.num_patches, w);
    p.encoder.blocks.resize(static_cast<size_t>(c.depth));
    for (auto& b : p.encoder.blocks) {
        b.ln1.g.resize(1, w);
        b.ln1.b.resize(1, w);
        b.attn.wq.resize(w, w);
        b.attn.bq.resize(1, w);
        b.attn.wk.resize(w, w);
        b.attn.bk.resize(1, w);
        b.attn.wv.resize(w, w);
        b.attn.bv.resize(1, w);
        b.attn.wo.resize(w, w);
        b.attn.bo.resize(1, w);
        b.ln2.g.resize(1, w);
        b.ln2.b.resize(1, w);
        b.mlp.w1.resize(w, hid);
        b.mlp.b1.resize(1, hid);
        b.mlp.w2.resize(hid, w);
        b.mlp.b2.resize(1, w);
    }
    p.encoder.ln_final.g.resize(1, w);
    p.encoder.ln_final.b.resize(1, w);
    if (c.with_gen) {
        p.gen.emplace();
        alloc_decoder(*p.gen, c);
    }
    if (c.with_dis) {
        p.dis.emplace();
        alloc_decoder(*p.dis, c);
    }
    if (c.with_fd) {
        p.fd_w.resize(w, c.teacher_dim);
        p.fd_b.resize(1, c.teacher_dim);
    }
    if (c.with_mask_token) p.mask_token.resize(1, w);
    if (c.num_classes > 0) {
        p.head_w.resize(w, c.num_classes);
        p.head_b.resize(1, c.num_classes);
    }
    return p;
}

// Truncated-normal(0, 0.02) weights, zero biases, unit layernorm gains.
template <class T>
ModelParams<T> init_params(const ModelConfig& c, Rng& rng) {
    ModelParams<T> p = alloc_params<T>(c);
    visit_params(p, [&](const std::string& name, Tensor<T>& t) {
        const std::string leaf = name.substr(name.rfind('.') + 1);
        const bool is_ln_gain = leaf == "g";
        const bool is_bias = !leaf.empty() && leaf[0] == 'b';
        if (is_ln_gain) {
            std::fill(t.v.begin(), t.v.end(), T(1));
        } else if (is_bias) {
            t.zero();
        } else {
            for (auto& x : t.v) x = static_cast<T>(rng.trunc_normal(0.02));
        }
    });
    return p;
}

template <class T>
ModelParams<T> zeros_like(const ModelParams<T>& src) {
    return alloc_params<T>(src.cfg);
}

// -------------------------------------------------------- encoder forward ---

template <class T>
struct EncoderBlockCache {
    Tensor<T> x;  // block input
    nn::LnCache<T> ln1c;
    Tensor<T> ln1, q, k, v;
    nn::AttnCache<T> attnc;
    Tensor<T> attn_concat, attn_proj, h1;
    nn::LnCache<T> ln2c;
    Tensor<T> ln2, mlp_pre, mlp_act, mlp_out;
};

template <class T>
struct EncoderCache {
    Tensor<T> patches;  // rows x patch_dim
    Tensor<T> tokens0;
    std::vector<int> patch_ids;    // positional ids per row
    std::vector<int> mim_rows;     // rows whose embedding was replaced by the mask token
    std::vector<EncoderBlockCache<T>> blocks;
    nn::LnCache<T> lnfc;
    Tensor<T> out;
};

// Forward over an arbitrary list of patch rows. patch_ids selects positional
// embeddings (identity for the packed full-grid pass; a subsequence for the
// prefix oracle). mim_rows are embedded as mask_token instead of pixels.
template <class T>
void encode_forward(const ModelParams<T>& p, const Tensor<T>& patches, const AttentionMask& mask,
                    const std::vector<int>& patch_ids, EncoderCache<T>& c, const std::vector<int>& mim_rows = {}) {
    const int n = patches.rows;
    if (static_cast<int>(patch_ids.size()) != n) throw ConfigError("encode_forward: patch_ids size mismatch");
    if (mask.rows != n || mask.cols != n) throw ConfigError("encode_forward: mask dims do not match sequence length");
    if (patches.cols != p.encoder.patch_embed_w.rows) throw ConfigError("encode_forward: patch dim mismatch");

    c.patches = patches;
    c.patch_ids = patch_ids;
    c.mim_rows = mim_rows;
    nn::linear_forward(patches, p.encoder.patch_embed_w, p.encoder.patch_embed_b, c.tokens0);
    for (int r : mim_rows) c.tokens0.map().row(r) = p.mask_token.map().row(0);
    for (int r = 0; r < n; ++r) c.tokens0.map().row(r) += p.encoder.pos_embed.map().row(patch_ids[static_cast<size_t>(r)]);

    c.blocks.resize(p.encoder.blocks.size());
    const Tensor<T>* x = &c.tokens0;
    for (size_t i = 0; i < p.encoder.blocks.size(); ++i) {
        const auto& bp = p.encoder.blocks[i];
        auto& bc = c.blocks[i];
        bc.x = *x;
        nn::layernorm_forward(bc.x, bp.ln1.g, bp.ln1.b, bc.ln1, bc.ln1c);
        nn::linear_forward(bc.ln1, bp.attn.wq, bp.attn.bq, bc.q);
        nn::linear_forward(bc.ln1, bp.attn.wk, bp.attn.bk, bc.k);
        nn::linear_forward(bc.ln1, bp.attn.wv, bp.attn.bv, bc.v);
        nn::attention_forward(bc.q, bc.k, bc.v, mask, p.cfg.heads, bc.attnc, bc.attn_concat);
        nn::linear_forward(bc.attn_concat, bp.attn.wo, bp.attn.bo, bc.attn_proj);
        bc.h1.resize(n, p.cfg.width);
        bc.h1.map() = bc.x.map() + bc.attn_proj.map();
        nn::layernorm_forward(bc.h1, bp.ln2.g, bp.ln2.b, bc.ln2, bc.ln2c);
        nn::linear_forward(bc.ln2, bp.mlp.w1, bp.mlp.b1, bc.mlp_pre);
        nn::gelu_forward(bc.mlp_pre, bc.mlp_act);
        nn::linear_forward(bc.mlp_act, bp.mlp.w2, bp.mlp.b2, bc.mlp_out);
        bc.mlp_out.map() += bc.h1.map();  // reused as block output
        x = &bc.mlp_out;
    }
    nn::layernorm_forward(*x, p.encoder.ln_final.g, p.encoder.ln_final.b, c.out, c.lnfc);
}

template <class T>
void encode_backward(const ModelParams<T>& p, const EncoderCache<T>& c, const AttentionMask& mask,
                     const Tensor<T>& dout, ModelParams<T>& g) {
    Tensor<T> dx, tmp, d_ln, dq, dk, dv, d_concat, d_act, d_pre;
    const Tensor<T>& last = c.blocks.empty() ? c.tokens0 : c.blocks.back().mlp_out;
    (void)last;
    nn::layernorm_backward(c.lnfc, p.encoder.ln_final.g, dout, dx, g.encoder.ln_final.g, g.encoder.ln_final.b);

    for (size_t ii = p.encoder.blocks.size(); ii-- > 0;) {
        const auto& bp = p.encoder.blocks[ii];
        const auto& bc = c.blocks[ii];
        auto& bg = g.encoder.blocks[ii];
        // dx holds gradient at block output = h1 + mlp_out
        nn::linear_backward_params(bc.mlp_act, dx, bg.mlp.w2, bg.mlp.b2);
        nn::linear_backward_input(dx, bp.mlp.w2, d_act);
        nn::gelu_backward(bc.mlp_pre, d_act, d_pre);
        nn::linear_backward_params(bc.ln2, d_pre, bg.mlp.w1, bg.mlp.b1);
        nn::linear_backward_input(d_pre, bp.mlp.w1, d_ln);
        nn::layernorm_backward(bc.ln2c, bp.ln2.g, d_ln, tmp, bg.ln2.g, bg.ln2.b);
        tmp.map() += dx.map();  // gradient at h1 = x + attn_proj

        nn::linear_backward_params(bc.attn_concat, tmp, bg.attn.wo, bg.attn.bo);
        nn::linear_backward_input(tmp, bp.attn.wo, d_concat);
        nn::attention_backward(bc.q, bc.k, bc.v, p.cfg.heads, bc.attnc, d_concat, dq, dk, dv);
        nn::linear_backward_params(bc.ln1, dq, bg.attn.wq, bg.attn.bq);
        nn::linear_backward_params(bc.ln1, dk, bg.attn.wk, bg.attn.bk);
        nn::linear_backward_params(bc.ln1, dv, bg.attn.wv, bg.attn.bv);
        nn::linear_backward_input(dq, bp.attn.wq, d_ln);
        nn::linear_backward_input(dk, bp.attn.wk, d_ln, /*accumulate=*/true);
        nn::linear_backward_input(dv, bp.attn.wv, d_ln, /*accumulate=*/true);
        nn::layernorm_backward(bc.ln1c, bp.ln1.g, d_ln, dx, bg.ln1.g, bg.ln1.b);
        dx.map() += tmp.map();  // gradient at block input
    }

    // dx is the gradient at tokens0
    for (int r = 0; r < dx.rows; ++r)
        g.encoder.pos_embed.map().row(c.patch_ids[static_cast<size_t>(r)]) += dx.map().row(r);
    if (!c.mim_rows.empty()) {
        for (int r : c.mim_rows) {
            g.mask_token.map().row(0) += dx.map().row(r);
            dx.map().row(r).setZero();  // pixel embedding did not contribute
        }
    }
    nn::linear_backward_params(c.patches, dx, g.encoder.patch_embed_w, g.encoder.patch_embed_b);
}

// -------------------------------------------------------- decoder forward ---

template <class T>
struct DecoderBlockCache {
    Tensor<T> x;
    nn::LnCache<T> lnqc;
    Tensor<T> lnq, q, k, v;
    nn::AttnCache<T> attnc;
    Tensor<T> attn_concat, attn_proj, h1;
    nn::LnCache<T> ln2c;
    Tensor<T> ln2, mlp_pre, mlp_act, mlp_out;
};

template <class T>
struct DecoderCache {
    std::vector<QueryRow> rows;
    Tensor<T> pos_rows;  // gathered encoder positional embeddings, R x width
    Tensor<T> q0;        // R x dec_dim
    std::vector<DecoderBlockCache<T>> blocks;
    nn::LnCache<T> lnfc;
    Tensor<T> lnf, preds;  // preds: R x teacher_dim
};

template <class T>
void decode_forward(const ModelConfig& cfg, const DecoderParams<T>& d, const Tensor<T>& pos_embed,
                    const Tensor<T>& enc_out, const std::vector<QueryRow>& rows, const AttentionMask& qmask,
                    DecoderCache<T>& c) {
    const int r_count = static_cast<int>(rows.size());
    if (qmask.rows != r_count || qmask.cols != enc_out.rows)
        throw ConfigError("decode_forward: query mask inconsistent with query set");
    c.rows = rows;
    c.pos_rows.resize(r_count, cfg.width);
    for (int r = 0; r < r_count; ++r) c.pos_rows.map().row(r) = pos_embed.map().row(rows[static_cast<size_t>(r)].patch);
    c.q0.resize(r_count, cfg.dec_dim);
    c.q0.map().noalias() = c.pos_rows.map() * d.pos_proj_w.map();
    c.q0.map().rowwise() += d.token_embed.map().row(0);

    c.blocks.resize(d.blocks.size());
    const Tensor<T>* x = &c.q0;
    for (size_t i = 0; i < d.blocks.size(); ++i) {
        const auto& bp = d.blocks[i];
        auto& bc = c.blocks[i];
        bc.x = *x;
        nn::layernorm_forward(bc.x, bp.lnq.g, bp.lnq.b, bc.lnq, bc.lnqc);
        nn::linear_forward(bc.lnq, bp.xattn.wq, bp.xattn.bq, bc.q);
        nn::linear_forward(enc_out, bp.xattn.wk, bp.xattn.bk, bc.k);
        nn::linear_forward(enc_out, bp.xattn.wv, bp.xattn.bv, bc.v);
        nn::attention_forward(bc.q, bc.k, bc.v, qmask, cfg.dec_heads, bc.attnc, bc.attn_concat);
        nn::linear_forward(bc.attn_concat, bp.xattn.wo, bp.xattn.bo, bc.attn_proj);
        bc.h1.resize(r_count, cfg.dec_dim);
        bc.h1.map() = bc.x.map() + bc.attn_proj.map();
        nn::layernorm_forward(bc.h1, bp.ln2.g, bp.ln2.b, bc.ln2, bc.ln2c);
        nn::linear_forward(bc.ln2, bp.mlp.w1, bp.mlp.b1, bc.mlp_pre);
        nn::gelu_forward(bc.mlp_pre, bc.mlp_act);
        nn::linear_forward(bc.mlp_act, bp.mlp.w2, bp.mlp.b2, bc.mlp_out);
        bc.mlp_out.map() += bc.h1.map();
        x = &bc.mlp_out;
    }
    nn::layernorm_forward(*x, d.ln_final.g, d.ln_final.b, c.lnf, c.lnfc);
    nn::linear_forward(c.lnf, d.proj_w, d.proj_b, c.preds);
}

// Accumulates into decoder grads, the shared positional-embedding grad, and
// the encoder-output grad (both decoders feed the same encoder).
template <class T>
void decode_backward(const ModelConfig& cfg, const DecoderParams<T>& d, const Tensor<T>& enc_out,
                     const DecoderCache<T>& c, const Tensor<T>& dpreds, DecoderParams<T>& gd, Tensor<T>& g_pos,
                     Tensor<T>& d_enc_out) {
    Tensor<T> dx, tmp, d_ln, dq, dk, dv, d_concat, d_act, d_pre, d_lnf;
    nn::linear_backward_params(c.lnf, dpreds, gd.proj_w, gd.proj_b);
    nn::linear_backward_input(dpreds, d.proj_w, d_lnf);
    nn::layernorm_backward(c.lnfc, d.ln_final.g, d_lnf, dx, gd.ln_final.g, gd.ln_final.b);

    for (size_t ii = d.blocks.size(); ii-- > 0;) {
        const auto& bp = d.blocks[ii];
        const auto& bc = c.blocks[ii];
        auto& bg = gd.blocks[ii];
        nn::linear_backward_params(bc.mlp_act, dx, bg.mlp.w2, bg.mlp.b2);
        nn::linear_backward_input(dx, bp.mlp.w2, d_act);
        nn::gelu_backward(bc.mlp_pre, d_act, d_pre);
        nn::linear_backward_params(bc.ln2, d_pre, bg.mlp.w1, bg.mlp.b1);
        nn::linear_backward_input(d_pre, bp.mlp.w1, d_ln);
        nn::layernorm_backward(bc.ln2c, bp.ln2.g, d_ln, tmp, bg.ln2.g, bg.ln2.b);
        tmp.map() += dx.map();

        nn::linear_backward_params(bc.attn_concat, tmp, bg.xattn.wo, bg.xattn.bo);
        nn::linear_backward_input(tmp, bp.xattn.wo, d_concat);
        nn::attention_backward(bc.q, bc.k, bc.v, cfg.dec_heads, bc.attnc, d_concat, dq, dk, dv);
        nn::linear_backward_params(bc.lnq, dq, bg.xattn.wq, bg.xattn.bq);
        nn::linear_backward_params(enc_out, dk, bg.xattn.wk, bg.xattn.bk);
        nn::linear_backward_params(enc_out, dv, bg.xattn.wv, bg.xattn.bv);
        nn::linear_backward_input(dk, bp.xattn.wk, d_enc_out, /*accumulate=*/true);
        nn::linear_backward_input(dv, bp.xattn.wv, d_enc_out, /*accumulate=*/true);
        nn::linear_backward_input(dq, bp.xattn.wq, d_ln);
        nn::layernorm_backward(bc.lnqc, bp.lnq.g, d_ln, dx, bg.lnq.g, bg.lnq.b);
        dx.map() += tmp.map();
    }

    // dx = gradient at q0 = token + pos_rows * pos_proj
    gd.token_embed.map().row(0) += dx.map().colwise().sum();
    gd.pos_proj_w.map().noalias() += c.pos_rows.map().transpose() * dx.map();
    Tensor<T> d_pos_rows;
    nn::linear_backward_input(dx, d.pos_proj_w, d_pos_rows);
    for (int r = 0; r < d_pos_rows.rows; ++r)
        g_pos.map().row(c.rows[static_cast<size_t>(r)].patch) += d_pos_rows.map().row(r);
}

// ----------------------------------------------------------------- oracle ---

// Context-restricted reference: runs the UNMASKED encoder on only the patches
// of clusters order[0..j] and returns the features at cluster order[j]'s
// patch positions. The packed masked pass must reproduce these values.
template <class T>
Tensor<T> oracle_prefix_forward(const ModelParams<T>& p, const Tensor<T>& patches, const ClusterLayout& layout,
                                const PermutedSequence& perm, int j) {
    if (j < 0 || j >= layout.num_clusters) throw ConfigError("oracle_prefix_forward: rank out of range");
    std::vector<int> ids;
    for (int r = 0; r <= j; ++r) {
        for (int pid : cluster_patches(layout, perm.order[static_cast<size_t>(r)])) ids.push_back(pid);
    }
    std::sort(ids.begin(), ids.end());

    Tensor<T> sub(static_cast<int>(ids.size()), patches.cols);
    for (size_t r = 0; r < ids.size(); ++r) sub.map().row(static_cast<int>(r)) = patches.map().row(ids[r]);

    EncoderCache<T> cache;
    encode_forward(p, sub, AttentionMask::all_true(sub.rows, sub.rows), ids, cache);

    const std::vector<int> target = cluster_patches(layout, perm.order[static_cast<size_t>(j)]);
    Tensor<T> out(static_cast<int>(target.size()), p.cfg.width);
    for (size_t r = 0; r < target.size(); ++r) {
        const auto it = std::lower_bound(ids.begin(), ids.end(), target[r]);
        out.map().row(static_cast<int>(r)) = cache.out.map().row(static_cast<int>(it - ids.begin()));
    }
    return out;
}

// ------------------------------------------------------------- downstream ---

template <class T>
std::vector<int> full_patch_ids(const ClusterLayout& layout) {
    std::vector<int> ids(static_cast<size_t>(layout.num_patches));
    for (int i = 0; i < layout.num_patches; ++i) ids[static_cast<size_t>(i)] = i;
    return ids;
}

// Pooled representation for transfer: full bidirectional attention, no
// decoders, mean over final patch tokens.
template <class T>
Tensor<T> downstream_features(const ModelParams<T>& p, const Tensor<T>& patches) {
    const ClusterLayout layout = p.cfg.layout();
    EncoderCache<T> cache;
    encode_forward(p, patches, AttentionMask::all_true(patches.rows, patches.rows), full_patch_ids<T>(layout), cache);
    Tensor<T> pooled(1, p.cfg.width);
    pooled.map().row(0) = cache.out.map().colwise().mean();
    return pooled;
}

}  // namespace digpt
