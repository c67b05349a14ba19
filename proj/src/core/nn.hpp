#pragma once

// Dense forward/backward kernels. Convention throughout: backward functions
// WRITE input gradients (unless an accumulate flag says otherwise) and
// ACCUMULATE parameter gradients, so one batch can sum over samples.

#define EIGEN_DONT_PARALLELIZE 1

#include <cassert>
#include <cmath>

#include "masking.hpp"
#include "tensor.hpp"

namespace digpt::nn {

constexpr double kLayerNormEps = 1e-6;

// ---------------------------------------------------------------- linear ---

template <class T>
void linear_forward(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b, Tensor<T>& y) {
    assert(x.cols == w.rows);
    y.resize(x.rows, w.cols);
    y.map().noalias() = x.map() * w.map();
    if (b.size() > 0) y.map().rowwise() += b.map().row(0);
}

template <class T>
void linear_backward_params(const Tensor<T>& x, const Tensor<T>& dy, Tensor<T>& dw, Tensor<T>& db) {
    dw.map().noalias() += x.map().transpose() * dy.map();
    if (db.size() > 0) db.map().row(0) += dy.map().colwise().sum();
}

template <class T>
void linear_backward_input(const Tensor<T>& dy, const Tensor<T>& w, Tensor<T>& dx, bool accumulate = false) {
    if (accumulate) {
        assert(dx.rows == dy.rows && dx.cols == w.rows);
        dx.map().noalias() += dy.map() * w.map().transpose();
    } else {
        dx.resize(dy.rows, w.rows);
        dx.map().noalias() = dy.map() * w.map().transpose();
    }
}

// ------------------------------------------------------------- layernorm ---

template <class T>
struct LnCache {
    Tensor<T> xhat;
    std::vector<T> rstd;
};

template <class T>
void layernorm_forward(const Tensor<T>& x, const Tensor<T>& g, const Tensor<T>& b, Tensor<T>& y, LnCache<T>& cache) {
    const int n = x.cols;
    y.resize(x.rows, n);
    cache.xhat.resize(x.rows, n);
    cache.rstd.assign(static_cast<size_t>(x.rows), T(0));
    for (int r = 0; r < x.rows; ++r) {
        const T* xr = x.row(r);
        T mean = 0;
        for (int c = 0; c < n; ++c) mean += xr[c];
        mean /= static_cast<T>(n);
        T var = 0;
        for (int c = 0; c < n; ++c) {
            const T d = xr[c] - mean;
            var += d * d;
        }
        var /= static_cast<T>(n);
        const T rstd = T(1) / std::sqrt(var + static_cast<T>(kLayerNormEps));
        cache.rstd[static_cast<size_t>(r)] = rstd;
        T* xh = cache.xhat.row(r);
        T* yr = y.row(r);
        for (int c = 0; c < n; ++c) {
            xh[c] = (xr[c] - mean) * rstd;
            yr[c] = xh[c] * g.v[static_cast<size_t>(c)] + b.v[static_cast<size_t>(c)];
        }
    }
}

template <class T>
void layernorm_backward(const LnCache<T>& cache, const Tensor<T>& g, const Tensor<T>& dy, Tensor<T>& dx,
                        Tensor<T>& dg, Tensor<T>& db) {
    const int n = dy.cols;
    dx.resize(dy.rows, n);
    for (int r = 0; r < dy.rows; ++r) {
        const T* dyr = dy.row(r);
        const T* xh = cache.xhat.row(r);
        const T rstd = cache.rstd[static_cast<size_t>(r)];
        T sum_dxhat = 0, sum_dxhat_xhat = 0;
        for (int c = 0; c < n; ++c) {
            const T dxhat = dyr[c] * g.v[static_cast<size_t>(c)];
            sum_dxhat += dxhat;
            sum_dxhat_xhat += dxhat * xh[c];
            dg.v[static_cast<size_t>(c)] += dyr[c] * xh[c];
            db.v[static_cast<size_t>(c)] += dyr[c];
        }
        const T inv_n = T(1) / static_cast<T>(n);
        T* dxr = dx.row(r);
        for (int c = 0; c < n; ++c) {
            const T dxhat = dyr[c] * g.v[static_cast<size_t>(c)];
            dxr[c] = rstd * (dxhat - inv_n * sum_dxhat - xh[c] * inv_n * sum_dxhat_xhat);
        }
    }
}

// ------------------------------------------------------------------ gelu ---

template <class T>
void gelu_forward(const Tensor<T>& x, Tensor<T>& y) {
    y.resize(x.rows, x.cols);
    constexpr double inv_sqrt2 = 0.7071067811865475244;
    for (size_t i = 0; i < x.v.size(); ++i) {
        const double v = static_cast<double>(x.v[i]);
        y.v[i] = static_cast<T>(0.5 * v * (1.0 + std::erf(v * inv_sqrt2)));
    }
}

template <class T>
void gelu_backward(const Tensor<T>& x, const Tensor<T>& dy, Tensor<T>& dx) {
    dx.resize(x.rows, x.cols);
    constexpr double inv_sqrt2 = 0.7071067811865475244;
    constexpr double inv_sqrt2pi = 0.3989422804014326779;
    for (size_t i = 0; i < x.v.size(); ++i) {
        const double v = static_cast<double>(x.v[i]);
        const double cdf = 0.5 * (1.0 + std::erf(v * inv_sqrt2));
        const double pdf = inv_sqrt2pi * std::exp(-0.5 * v * v);
        dx.v[i] = static_cast<T>(static_cast<double>(dy.v[i]) * (cdf + v * pdf));
    }
}

// ------------------------------------------------------- masked attention ---

// Scaled dot-product attention over pre-projected q/k/v, with a boolean
// key mask per query row. Disallowed keys get probability exactly zero:
// max and normalization run over allowed keys only, so perturbing a masked
// key's value can never reach the output.
template <class T>
struct AttnCache {
    Tensor<T> probs;  // (heads * n_q) x n_k
};

template <class T>
void attention_forward(const Tensor<T>& q, const Tensor<T>& k, const Tensor<T>& v, const AttentionMask& mask,
                       int heads, AttnCache<T>& cache, Tensor<T>& out) {
    const int n_q = q.rows, n_k = k.rows, dim = q.cols;
    assert(dim % heads == 0 && k.cols == dim && v.cols == dim);
    assert(mask.rows == n_q && mask.cols == n_k);
    const int hd = dim / heads;
    const T scale = static_cast<T>(1.0 / std::sqrt(static_cast<double>(hd)));

    cache.probs.resize(heads * n_q, n_k);
    out.resize(n_q, dim);

    Tensor<T> scores(n_q, n_k);
    for (int h = 0; h < heads; ++h) {
        const auto qh = q.map().middleCols(h * hd, hd);
        const auto kh = k.map().middleCols(h * hd, hd);
        const auto vh = v.map().middleCols(h * hd, hd);
        scores.map().noalias() = qh * kh.transpose();

        for (int r = 0; r < n_q; ++r) {
            const T* sr = scores.row(r);
            const uint8_t* allow = &mask.allow[static_cast<size_t>(r) * n_k];
            T m = std::numeric_limits<T>::lowest();
            for (int c = 0; c < n_k; ++c)
                if (allow[c]) m = std::max(m, sr[c] * scale);
            assert(m != std::numeric_limits<T>::lowest() && "attention row with no allowed key");
            T* pr = cache.probs.row(h * n_q + r);
            T denom = 0;
            for (int c = 0; c < n_k; ++c) {
                if (allow[c]) {
                    pr[c] = std::exp(sr[c] * scale - m);
                    denom += pr[c];
                } else {
                    pr[c] = T(0);
                }
            }
            const T inv = T(1) / denom;
            for (int c = 0; c < n_k; ++c) pr[c] *= inv;
        }

        Eigen::Map<const MatrixRM<T>> ph(cache.probs.row(h * n_q), n_q, n_k);
        out.map().middleCols(h * hd, hd).noalias() = ph * vh;
    }
}

template <class T>
void attention_backward(const Tensor<T>& q, const Tensor<T>& k, const Tensor<T>& v, int heads,
                        const AttnCache<T>& cache, const Tensor<T>& dout, Tensor<T>& dq, Tensor<T>& dk,
                        Tensor<T>& dv) {
    const int n_q = q.rows, n_k = k.rows, dim = q.cols;
    const int hd = dim / heads;
    const T scale = static_cast<T>(1.0 / std::sqrt(static_cast<double>(hd)));

    dq.resize(n_q, dim);
    dk.resize(n_k, dim);
    dk.zero();
    dv.resize(n_k, dim);
    dv.zero();

    Tensor<T> dprobs(n_q, n_k);
    Tensor<T> dscores(n_q, n_k);
    for (int h = 0; h < heads; ++h) {
        const auto qh = q.map().middleCols(h * hd, hd);
        const auto kh = k.map().middleCols(h * hd, hd);
        const auto vh = v.map().middleCols(h * hd, hd);
        const auto doh = dout.map().middleCols(h * hd, hd);
        Eigen::Map<const MatrixRM<T>> ph(cache.probs.row(h * n_q), n_q, n_k);

        dv.map().middleCols(h * hd, hd).noalias() += ph.transpose() * doh;
        dprobs.map().noalias() = doh * vh.transpose();

        // softmax jacobian: ds = p * (dp - sum(dp * p)); masked keys have p = 0.
        for (int r = 0; r < n_q; ++r) {
            const T* pr = cache.probs.row(h * n_q + r);
            const T* dpr = dprobs.row(r);
            T dot = 0;
            for (int c = 0; c < n_k; ++c) dot += pr[c] * dpr[c];
            T* dsr = dscores.row(r);
            for (int c = 0; c < n_k; ++c) dsr[c] = pr[c] * (dpr[c] - dot) * scale;
        }

        dq.map().middleCols(h * hd, hd).noalias() = dscores.map() * kh;
        dk.map().middleCols(h * hd, hd).noalias() += dscores.map().transpose() * qh;
    }
}

// -------------------------------------------------- softmax cross-entropy ---

// Mean cross-entropy over rows of logits against integer labels.
// dlogits is written (softmax - onehot) / rows.
template <class T>
double softmax_xent(const Tensor<T>& logits, const std::vector<int>& labels, Tensor<T>* dlogits = nullptr) {
    assert(static_cast<size_t>(logits.rows) == labels.size());
    if (dlogits) dlogits->resize(logits.rows, logits.cols);
    double loss = 0.0;
    const T inv_rows = T(1) / static_cast<T>(logits.rows);
    for (int r = 0; r < logits.rows; ++r) {
        const T* lr = logits.row(r);
        T m = lr[0];
        for (int c = 1; c < logits.cols; ++c) m = std::max(m, lr[c]);
        double denom = 0.0;
        for (int c = 0; c < logits.cols; ++c) denom += std::exp(static_cast<double>(lr[c] - m));
        const int y = labels[static_cast<size_t>(r)];
        loss += std::log(denom) - static_cast<double>(lr[y] - m);
        if (dlogits) {
            T* dr = dlogits->row(r);
            for (int c = 0; c < logits.cols; ++c) {
                const double p = std::exp(static_cast<double>(lr[c] - m)) / denom;
                dr[c] = (static_cast<T>(p) - static_cast<T>(c == y ? 1 : 0)) * inv_rows;
            }
        }
    }
    return loss / logits.rows;
}

template <class T>
int argmax_row(const Tensor<T>& t, int r) {
    const T* row = t.row(r);
    int best = 0;
    for (int c = 1; c < t.cols; ++c)
        if (row[c] > row[best]) best = c;
    return best;
}

}  // namespace digpt::nn
