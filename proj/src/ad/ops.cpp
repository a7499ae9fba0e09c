#include "skeldiff/ad/ops.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <string>
#include <utility>

#include "skeldiff/error.hpp"

namespace skeldiff::ad {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapMat = Eigen::Map<RowMat>;
using CMapMat = Eigen::Map<const RowMat>;

[[noreturn]] void shape_error(const char* op, const Shape& a, const Shape& b) {
    fail(ErrorCategory::shape, std::string(op) + ": incompatible shapes " + shape_str(a) + " and " + shape_str(b));
}

[[noreturn]] void shape_error(const char* op, const std::string& what, const Shape& a) {
    fail(ErrorCategory::shape, std::string(op) + ": " + what + ", got " + shape_str(a));
}

bool is_suffix(const Shape& a, const Shape& b) {
    if (b.size() > a.size()) return false;
    return std::equal(b.rbegin(), b.rend(), a.rbegin());
}

Node& parent(Node& self, std::size_t i) { return *self.parents[i]; }

bool wants(Node& self, std::size_t i) {
    return i < self.parents.size() && self.parents[i]->requires_grad;
}

// C(m x n) += A(m x k) * B(k x n). Each output row depends only on the
// matching input row, so results do not change with the number of rows.
void gemm_acc(const double* A, const double* B, double* C, std::size_t m, std::size_t k, std::size_t n) {
    for (std::size_t i = 0; i < m; ++i) {
        double* c = C + i * n;
        const double* a = A + i * k;
        for (std::size_t kk = 0; kk < k; ++kk) {
            const double av = a[kk];
            const double* b = B + kk * n;
            for (std::size_t j = 0; j < n; ++j) c[j] += av * b[j];
        }
    }
}

// dA(m x k) += dC(m x n) * B^T.
void gemm_acc_nt(const double* dC, const double* B, double* dA, std::size_t m, std::size_t k, std::size_t n) {
    for (std::size_t i = 0; i < m; ++i) {
        const double* g = dC + i * n;
        double* da = dA + i * k;
        for (std::size_t kk = 0; kk < k; ++kk) {
            const double* b = B + kk * n;
            double s = 0.0;
            for (std::size_t j = 0; j < n; ++j) s += g[j] * b[j];
            da[kk] += s;
        }
    }
}

// dB(k x n) += A^T * dC(m x n).
void gemm_acc_tn(const double* A, const double* dC, double* dB, std::size_t m, std::size_t k, std::size_t n) {
    for (std::size_t i = 0; i < m; ++i) {
        const double* a = A + i * k;
        const double* g = dC + i * n;
        for (std::size_t kk = 0; kk < k; ++kk) {
            const double av = a[kk];
            double* db = dB + kk * n;
            for (std::size_t j = 0; j < n; ++j) db[j] += av * g[j];
        }
    }
}

enum class Binary { add, sub, mul };

Value binary(const Value& a, const Value& b, Binary kind, const char* op) {
    const Shape& sa = a.shape();
    const Shape& sb = b.shape();
    if (!is_suffix(sa, sb)) shape_error(op, sa, sb);
    const std::size_t n = a.data().size();
    const std::size_t nb = b.data().size();
    Tensor out(sa);
    const double* x = a.data().data();
    const double* y = b.data().data();
    double* o = out.data();
    for (std::size_t i = 0; i < n; ++i) {
        const double yv = y[i % nb];
        switch (kind) {
            case Binary::add: o[i] = x[i] + yv; break;
            case Binary::sub: o[i] = x[i] - yv; break;
            case Binary::mul: o[i] = x[i] * yv; break;
        }
    }
    return make_result(std::move(out), {a, b}, [kind, n, nb](Node& self) {
        const double* g = self.grad.data();
        Node& pa = parent(self, 0);
        Node& pb = parent(self, 1);
        if (pa.requires_grad) {
            double* ga = pa.grad_buffer().data();
            if (kind == Binary::mul) {
                const double* y = pb.data.data();
                for (std::size_t i = 0; i < n; ++i) ga[i] += g[i] * y[i % nb];
            } else {
                for (std::size_t i = 0; i < n; ++i) ga[i] += g[i];
            }
        }
        if (pb.requires_grad) {
            double* gb = pb.grad_buffer().data();
            const double* x = pa.data.data();
            for (std::size_t i = 0; i < n; ++i) {
                switch (kind) {
                    case Binary::add: gb[i % nb] += g[i]; break;
                    case Binary::sub: gb[i % nb] -= g[i]; break;
                    case Binary::mul: gb[i % nb] += g[i] * x[i]; break;
                }
            }
        }
    }, op);
}

template <class F, class DF>
Value unary(const Value& a, F f, DF df, const char* op) {
    const Tensor& x = a.data();
    Tensor out(x.shape());
    for (std::size_t i = 0; i < x.size(); ++i) out[i] = f(x[i]);
    return make_result(std::move(out), {a}, [df](Node& self) {
        Node& p = parent(self, 0);
        double* g = p.grad_buffer().data();
        const double* x = p.data.data();
        const double* up = self.grad.data();
        for (std::size_t i = 0; i < p.data.size(); ++i) g[i] += up[i] * df(x[i]);
    }, op);
}

double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

void check_nchw(const char* op, const Shape& s) {
    if (s.size() != 4) shape_error(op, "expected (N, C, H, W)", s);
}

}  // namespace

Value add(const Value& a, const Value& b) { return binary(a, b, Binary::add, "add"); }
Value sub(const Value& a, const Value& b) { return binary(a, b, Binary::sub, "sub"); }
Value mul(const Value& a, const Value& b) { return binary(a, b, Binary::mul, "mul"); }

Value scale(const Value& a, double c) {
    return unary(a, [c](double x) { return c * x; }, [c](double) { return c; }, "scale");
}

Value square(const Value& a) {
    return unary(a, [](double x) { return x * x; }, [](double x) { return 2.0 * x; }, "square");
}

Value silu(const Value& a) {
    return unary(
        a, [](double x) { return x * sigmoid(x); },
        [](double x) {
            const double s = sigmoid(x);
            return s * (1.0 + x * (1.0 - s));
        },
        "silu");
}

Value gelu(const Value& a) {
    return unary(
        a, [](double x) { return 0.5 * x * (1.0 + std::erf(x / std::numbers::sqrt2)); },
        [](double x) {
            const double cdf = 0.5 * (1.0 + std::erf(x / std::numbers::sqrt2));
            const double pdf = std::exp(-0.5 * x * x) * std::numbers::inv_sqrtpi / std::numbers::sqrt2;
            return cdf + x * pdf;
        },
        "gelu");
}

Value matmul(const Value& a, const Value& b) {
    const Shape& sa = a.shape();
    const Shape& sb = b.shape();
    if (sa.size() != 2 || sb.size() != 2 || sa[1] != sb[0]) shape_error("matmul", sa, sb);
    const std::size_t m = sa[0], k = sa[1], n = sb[1];
    Tensor out({m, n}, 0.0);
    gemm_acc(a.data().data(), b.data().data(), out.data(), m, k, n);
    return make_result(std::move(out), {a, b}, [m, k, n](Node& self) {
        Node& pa = parent(self, 0);
        Node& pb = parent(self, 1);
        if (pa.requires_grad) gemm_acc_nt(self.grad.data(), pb.data.data(), pa.grad_buffer().data(), m, k, n);
        if (pb.requires_grad) gemm_acc_tn(pa.data.data(), self.grad.data(), pb.grad_buffer().data(), m, k, n);
    }, "matmul");
}

Value dense(const Value& x, const Value& w, const Value& bias) {
    const Shape& sx = x.shape();
    const Shape& sw = w.shape();
    if (sx.empty() || sw.size() != 2 || sx.back() != sw[0]) shape_error("dense", sx, sw);
    const std::size_t in = sw[0], outd = sw[1];
    if (bias.valid() && (bias.shape().size() != 1 || bias.shape()[0] != outd)) shape_error("dense bias", sw, bias.shape());
    const std::size_t rows = x.data().size() / in;
    Shape so = sx;
    so.back() = outd;
    Tensor out(so, 0.0);
    if (bias.valid()) {
        for (std::size_t r = 0; r < rows; ++r)
            std::copy_n(bias.data().data(), outd, out.data() + r * outd);
    }
    gemm_acc(x.data().data(), w.data().data(), out.data(), rows, in, outd);
    std::vector<Value> parents{x, w};
    if (bias.valid()) parents.push_back(bias);
    return make_result(std::move(out), std::move(parents), [rows, in, outd](Node& self) {
        const double* g = self.grad.data();
        Node& px = parent(self, 0);
        Node& pw = parent(self, 1);
        if (px.requires_grad) gemm_acc_nt(g, pw.data.data(), px.grad_buffer().data(), rows, in, outd);
        if (pw.requires_grad) gemm_acc_tn(px.data.data(), g, pw.grad_buffer().data(), rows, in, outd);
        if (wants(self, 2)) {
            double* gb = parent(self, 2).grad_buffer().data();
            for (std::size_t r = 0; r < rows; ++r)
                for (std::size_t j = 0; j < outd; ++j) gb[j] += g[r * outd + j];
        }
    }, "dense");
}

namespace {

struct ConvGeom {
    std::size_t n, c, h, w, o, kh, kw, stride, pad, ho, wo;
    std::size_t ckk() const { return c * kh * kw; }
    std::size_t hw_out() const { return ho * wo; }
    bool pointwise() const { return kh == 1 && kw == 1 && stride == 1 && pad == 0; }
};

// Output columns [lo, hi) read inside the input row for kernel offset j.
std::pair<std::size_t, std::size_t> valid_cols(const ConvGeom& g, std::size_t j) {
    std::size_t lo = 0;
    while (lo < g.wo && lo * g.stride + j < g.pad) ++lo;
    std::size_t hi = lo;
    while (hi < g.wo && hi * g.stride + j - g.pad < g.w) ++hi;
    return {lo, hi};
}

void im2col(const ConvGeom& g, const double* x, double* col) {
    const std::size_t hwo = g.hw_out();
    for (std::size_t c = 0; c < g.c; ++c) {
        for (std::size_t i = 0; i < g.kh; ++i) {
            for (std::size_t j = 0; j < g.kw; ++j) {
                double* row = col + ((c * g.kh + i) * g.kw + j) * hwo;
                const auto [lo, hi] = valid_cols(g, j);
                for (std::size_t oy = 0; oy < g.ho; ++oy) {
                    const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy * g.stride + i) - static_cast<std::ptrdiff_t>(g.pad);
                    double* dst = row + oy * g.wo;
                    if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(g.h)) {
                        std::fill_n(dst, g.wo, 0.0);
                        continue;
                    }
                    const double* src = x + (c * g.h + static_cast<std::size_t>(iy)) * g.w;
                    std::fill_n(dst, lo, 0.0);
                    if (lo < hi) {
                        if (g.stride == 1) {
                            std::copy(src + (lo + j - g.pad), src + (hi + j - g.pad), dst + lo);
                        } else {
                            for (std::size_t ox = lo; ox < hi; ++ox) dst[ox] = src[ox * g.stride + j - g.pad];
                        }
                    }
                    std::fill(dst + hi, dst + g.wo, 0.0);
                }
            }
        }
    }
}

void col2im_acc(const ConvGeom& g, const double* col, double* dx) {
    const std::size_t hwo = g.hw_out();
    for (std::size_t c = 0; c < g.c; ++c) {
        for (std::size_t i = 0; i < g.kh; ++i) {
            for (std::size_t j = 0; j < g.kw; ++j) {
                const double* row = col + ((c * g.kh + i) * g.kw + j) * hwo;
                const auto [lo, hi] = valid_cols(g, j);
                for (std::size_t oy = 0; oy < g.ho; ++oy) {
                    const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy * g.stride + i) - static_cast<std::ptrdiff_t>(g.pad);
                    if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(g.h)) continue;
                    double* dst = dx + (c * g.h + static_cast<std::size_t>(iy)) * g.w;
                    const double* src = row + oy * g.wo;
                    for (std::size_t ox = lo; ox < hi; ++ox) dst[ox * g.stride + j - g.pad] += src[ox];
                }
            }
        }
    }
}

}  // namespace

Value conv2d(const Value& x, const Value& w, const Value& bias, Conv2dOptions opt) {
    const Shape& sx = x.shape();
    const Shape& sw = w.shape();
    check_nchw("conv2d", sx);
    if (sw.size() != 4 || sw[1] != sx[1]) shape_error("conv2d", sx, sw);
    if (opt.stride == 0) fail(ErrorCategory::invalid_argument, "conv2d: stride must be positive");
    ConvGeom g{sx[0], sx[1], sx[2], sx[3], sw[0], sw[2], sw[3], opt.stride, opt.padding, 0, 0};
    if (g.h + 2 * g.pad < g.kh || g.w + 2 * g.pad < g.kw) shape_error("conv2d: kernel larger than padded input", sx, sw);
    g.ho = (g.h + 2 * g.pad - g.kh) / g.stride + 1;
    g.wo = (g.w + 2 * g.pad - g.kw) / g.stride + 1;
    if (bias.valid() && (bias.shape().size() != 1 || bias.shape()[0] != g.o)) shape_error("conv2d bias", sw, bias.shape());

    Tensor out({g.n, g.o, g.ho, g.wo}, 0.0);
    const std::size_t in_stride = g.c * g.h * g.w;
    const std::size_t out_stride = g.o * g.hw_out();
    std::vector<double> col(g.pointwise() ? 0 : g.ckk() * g.hw_out());
    CMapMat wm(w.data().data(), g.o, g.ckk());
    for (std::size_t n = 0; n < g.n; ++n) {
        const double* xs = x.data().data() + n * in_stride;
        if (!g.pointwise()) im2col(g, xs, col.data());
        CMapMat cm(g.pointwise() ? xs : col.data(), g.ckk(), g.hw_out());
        MapMat om(out.data() + n * out_stride, g.o, g.hw_out());
        om.noalias() = wm * cm;
        if (bias.valid()) {
            for (std::size_t o = 0; o < g.o; ++o) om.row(o).array() += bias.data()[o];
        }
    }
    std::vector<Value> parents{x, w};
    if (bias.valid()) parents.push_back(bias);
    return make_result(std::move(out), std::move(parents), [g, in_stride, out_stride](Node& self) {
        Node& px = parent(self, 0);
        Node& pw = parent(self, 1);
        const bool need_b = wants(self, 2);
        std::vector<double> col(g.pointwise() ? 0 : g.ckk() * g.hw_out());
        std::vector<double> dcol(g.pointwise() ? 0 : g.ckk() * g.hw_out());
        CMapMat wm(pw.data.data(), g.o, g.ckk());
        for (std::size_t n = 0; n < g.n; ++n) {
            CMapMat gm(self.grad.data() + n * out_stride, g.o, g.hw_out());
            const double* xs = px.data.data() + n * in_stride;
            if (pw.requires_grad) {
                if (!g.pointwise()) im2col(g, xs, col.data());
                CMapMat cm(g.pointwise() ? xs : col.data(), g.ckk(), g.hw_out());
                MapMat dw(pw.grad_buffer().data(), g.o, g.ckk());
                dw.noalias() += gm * cm.transpose();
            }
            if (px.requires_grad) {
                double* dx = px.grad_buffer().data() + n * in_stride;
                if (g.pointwise()) {
                    MapMat dxm(dx, g.ckk(), g.hw_out());
                    dxm.noalias() += wm.transpose() * gm;
                } else {
                    MapMat dcm(dcol.data(), g.ckk(), g.hw_out());
                    dcm.noalias() = wm.transpose() * gm;
                    col2im_acc(g, dcol.data(), dx);
                }
            }
            if (need_b) {
                double* gb = parent(self, 2).grad_buffer().data();
                // Plain loop: Eigen's vectorized sum peels by address, so its
                // rounding would depend on heap alignment.
                const double* gr = self.grad.data() + n * out_stride;
                for (std::size_t o = 0; o < g.o; ++o) {
                    double s = 0.0;
                    for (std::size_t p = 0; p < g.hw_out(); ++p) s += gr[o * g.hw_out() + p];
                    gb[o] += s;
                }
            }
        }
    }, "conv2d");
}

namespace {

// Shared normalization core: rows of length `len`; the affine parameter
// index for element j of row r is `chan(r, j)`.
struct NormCache {
    std::vector<double> xhat;
    std::vector<double> rstd;
};

NormCache normalize_rows(const double* x, std::size_t rows, std::size_t len, double eps) {
    NormCache c;
    c.xhat.resize(rows * len);
    c.rstd.resize(rows);
    for (std::size_t r = 0; r < rows; ++r) {
        const double* xr = x + r * len;
        double mu = 0.0;
        for (std::size_t j = 0; j < len; ++j) mu += xr[j];
        mu /= static_cast<double>(len);
        double var = 0.0;
        for (std::size_t j = 0; j < len; ++j) var += (xr[j] - mu) * (xr[j] - mu);
        var /= static_cast<double>(len);
        const double rs = 1.0 / std::sqrt(var + eps);
        c.rstd[r] = rs;
        for (std::size_t j = 0; j < len; ++j) c.xhat[r * len + j] = (xr[j] - mu) * rs;
    }
    return c;
}

// dx for y = xhat (before affine), given dxhat per row.
void normalize_rows_backward(const NormCache& c, const double* dxhat, double* dx, std::size_t rows, std::size_t len) {
    for (std::size_t r = 0; r < rows; ++r) {
        const double* dh = dxhat + r * len;
        const double* xh = c.xhat.data() + r * len;
        double m1 = 0.0, m2 = 0.0;
        for (std::size_t j = 0; j < len; ++j) {
            m1 += dh[j];
            m2 += dh[j] * xh[j];
        }
        m1 /= static_cast<double>(len);
        m2 /= static_cast<double>(len);
        for (std::size_t j = 0; j < len; ++j) dx[r * len + j] += c.rstd[r] * (dh[j] - m1 - xh[j] * m2);
    }
}

}  // namespace

Value layer_norm(const Value& x, const Value& gamma, const Value& beta, double eps) {
    const Shape& sx = x.shape();
    if (sx.empty()) shape_error("layer_norm", "expected rank >= 1", sx);
    const std::size_t d = sx.back();
    const bool affine = gamma.valid();
    if (affine && (gamma.shape() != Shape{d} || !beta.valid() || beta.shape() != Shape{d}))
        shape_error("layer_norm", sx, gamma.shape());
    const std::size_t rows = x.data().size() / d;
    auto cache = std::make_shared<NormCache>(normalize_rows(x.data().data(), rows, d, eps));
    Tensor out(sx);
    for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t j = 0; j < d; ++j)
            out[r * d + j] = affine ? cache->xhat[r * d + j] * gamma.data()[j] + beta.data()[j] : cache->xhat[r * d + j];
    std::vector<Value> parents{x};
    if (affine) {
        parents.push_back(gamma);
        parents.push_back(beta);
    }
    return make_result(std::move(out), std::move(parents), [cache, rows, d, affine](Node& self) {
        const double* g = self.grad.data();
        Node& px = parent(self, 0);
        if (affine) {
            const double* gm = parent(self, 1).data.data();
            if (wants(self, 1)) {
                double* dg = parent(self, 1).grad_buffer().data();
                for (std::size_t r = 0; r < rows; ++r)
                    for (std::size_t j = 0; j < d; ++j) dg[j] += g[r * d + j] * cache->xhat[r * d + j];
            }
            if (wants(self, 2)) {
                double* db = parent(self, 2).grad_buffer().data();
                for (std::size_t r = 0; r < rows; ++r)
                    for (std::size_t j = 0; j < d; ++j) db[j] += g[r * d + j];
            }
            if (px.requires_grad) {
                std::vector<double> dxhat(rows * d);
                for (std::size_t r = 0; r < rows; ++r)
                    for (std::size_t j = 0; j < d; ++j) dxhat[r * d + j] = g[r * d + j] * gm[j];
                normalize_rows_backward(*cache, dxhat.data(), px.grad_buffer().data(), rows, d);
            }
        } else if (px.requires_grad) {
            normalize_rows_backward(*cache, g, px.grad_buffer().data(), rows, d);
        }
    }, "layer_norm");
}

Value group_norm(const Value& x, std::size_t groups, const Value& gamma, const Value& beta, double eps) {
    const Shape& sx = x.shape();
    check_nchw("group_norm", sx);
    const std::size_t n = sx[0], c = sx[1], hw = sx[2] * sx[3];
    if (groups == 0 || c % groups != 0)
        fail(ErrorCategory::shape, "group_norm: " + std::to_string(c) + " channels not divisible into " +
                                       std::to_string(groups) + " groups");
    if (gamma.shape() != Shape{c} || beta.shape() != Shape{c}) shape_error("group_norm", sx, gamma.shape());
    const std::size_t rows = n * groups;
    const std::size_t len = (c / groups) * hw;
    auto cache = std::make_shared<NormCache>(normalize_rows(x.data().data(), rows, len, eps));
    Tensor out(sx);
    for (std::size_t b = 0; b < n; ++b)
        for (std::size_t ch = 0; ch < c; ++ch) {
            const double gv = gamma.data()[ch], bv = beta.data()[ch];
            const std::size_t off = (b * c + ch) * hw;
            for (std::size_t p = 0; p < hw; ++p) out[off + p] = cache->xhat[off + p] * gv + bv;
        }
    return make_result(std::move(out), {x, gamma, beta}, [cache, n, c, hw, rows, len](Node& self) {
        const double* g = self.grad.data();
        Node& px = parent(self, 0);
        Node& pg = parent(self, 1);
        Node& pb = parent(self, 2);
        if (pg.requires_grad || pb.requires_grad) {
            for (std::size_t b = 0; b < n; ++b)
                for (std::size_t ch = 0; ch < c; ++ch) {
                    const std::size_t off = (b * c + ch) * hw;
                    double sg = 0.0, sb = 0.0;
                    for (std::size_t p = 0; p < hw; ++p) {
                        sg += g[off + p] * cache->xhat[off + p];
                        sb += g[off + p];
                    }
                    if (pg.requires_grad) pg.grad_buffer()[ch] += sg;
                    if (pb.requires_grad) pb.grad_buffer()[ch] += sb;
                }
        }
        if (px.requires_grad) {
            std::vector<double> dxhat(n * c * hw);
            for (std::size_t b = 0; b < n; ++b)
                for (std::size_t ch = 0; ch < c; ++ch) {
                    const std::size_t off = (b * c + ch) * hw;
                    const double gv = pg.data[ch];
                    for (std::size_t p = 0; p < hw; ++p) dxhat[off + p] = g[off + p] * gv;
                }
            normalize_rows_backward(*cache, dxhat.data(), px.grad_buffer().data(), rows, len);
        }
    }, "group_norm");
}

Value softmax(const Value& x) {
    const Shape& sx = x.shape();
    if (sx.empty()) shape_error("softmax", "expected rank >= 1", sx);
    const std::size_t d = sx.back(), rows = x.data().size() / d;
    Tensor out(sx);
    for (std::size_t r = 0; r < rows; ++r) {
        const double* xr = x.data().data() + r * d;
        double* o = out.data() + r * d;
        const double mx = *std::max_element(xr, xr + d);
        double s = 0.0;
        for (std::size_t j = 0; j < d; ++j) s += (o[j] = std::exp(xr[j] - mx));
        for (std::size_t j = 0; j < d; ++j) o[j] /= s;
    }
    return make_result(std::move(out), {x}, [rows, d](Node& self) {
        double* gx = parent(self, 0).grad_buffer().data();
        for (std::size_t r = 0; r < rows; ++r) {
            const double* y = self.data.data() + r * d;
            const double* g = self.grad.data() + r * d;
            double dot = 0.0;
            for (std::size_t j = 0; j < d; ++j) dot += g[j] * y[j];
            for (std::size_t j = 0; j < d; ++j) gx[r * d + j] += y[j] * (g[j] - dot);
        }
    }, "softmax");
}

Value log_softmax(const Value& x) {
    const Shape& sx = x.shape();
    if (sx.empty()) shape_error("log_softmax", "expected rank >= 1", sx);
    const std::size_t d = sx.back(), rows = x.data().size() / d;
    Tensor out(sx);
    for (std::size_t r = 0; r < rows; ++r) {
        const double* xr = x.data().data() + r * d;
        const double mx = *std::max_element(xr, xr + d);
        double s = 0.0;
        for (std::size_t j = 0; j < d; ++j) s += std::exp(xr[j] - mx);
        const double lse = mx + std::log(s);
        for (std::size_t j = 0; j < d; ++j) out[r * d + j] = xr[j] - lse;
    }
    return make_result(std::move(out), {x}, [rows, d](Node& self) {
        double* gx = parent(self, 0).grad_buffer().data();
        for (std::size_t r = 0; r < rows; ++r) {
            const double* y = self.data.data() + r * d;
            const double* g = self.grad.data() + r * d;
            double gs = 0.0;
            for (std::size_t j = 0; j < d; ++j) gs += g[j];
            for (std::size_t j = 0; j < d; ++j) gx[r * d + j] += g[j] - std::exp(y[j]) * gs;
        }
    }, "log_softmax");
}

Value sum(const Value& x) {
    double s = 0.0;
    for (double v : x.data().values()) s += v;
    return make_result(Tensor::scalar(s), {x}, [](Node& self) {
        Tensor& g = parent(self, 0).grad_buffer();
        const double up = self.grad[0];
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += up;
    }, "sum");
}

Value mean(const Value& x) {
    if (x.data().empty()) shape_error("mean", "empty tensor", x.shape());
    const double n = static_cast<double>(x.data().size());
    double s = 0.0;
    for (double v : x.data().values()) s += v;
    return make_result(Tensor::scalar(s / n), {x}, [n](Node& self) {
        Tensor& g = parent(self, 0).grad_buffer();
        const double up = self.grad[0] / n;
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += up;
    }, "mean");
}

Value mean_axis(const Value& x, std::size_t axis) {
    const Shape& sx = x.shape();
    if (axis >= sx.size()) shape_error("mean_axis", "axis " + std::to_string(axis) + " out of range", sx);
    std::size_t outer = 1, inner = 1;
    for (std::size_t i = 0; i < axis; ++i) outer *= sx[i];
    for (std::size_t i = axis + 1; i < sx.size(); ++i) inner *= sx[i];
    const std::size_t len = sx[axis];
    Shape so;
    for (std::size_t i = 0; i < sx.size(); ++i)
        if (i != axis) so.push_back(sx[i]);
    Tensor out(so, 0.0);
    const double* xd = x.data().data();
    for (std::size_t o = 0; o < outer; ++o)
        for (std::size_t a = 0; a < len; ++a)
            for (std::size_t i = 0; i < inner; ++i) out[o * inner + i] += xd[(o * len + a) * inner + i];
    for (double& v : out.values()) v /= static_cast<double>(len);
    return make_result(std::move(out), {x}, [outer, len, inner](Node& self) {
        double* g = parent(self, 0).grad_buffer().data();
        const double inv = 1.0 / static_cast<double>(len);
        for (std::size_t o = 0; o < outer; ++o)
            for (std::size_t a = 0; a < len; ++a)
                for (std::size_t i = 0; i < inner; ++i) g[(o * len + a) * inner + i] += self.grad[o * inner + i] * inv;
    }, "mean_axis");
}

Value reshape(const Value& x, Shape shape) {
    Tensor out = x.data().reshaped(std::move(shape));
    return make_result(std::move(out), {x}, [](Node& self) {
        Tensor& g = parent(self, 0).grad_buffer();
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
    }, "reshape");
}

Value permute(const Value& x, const std::vector<std::size_t>& perm) {
    const Shape& sx = x.shape();
    const std::size_t r = sx.size();
    std::vector<bool> seen(r, false);
    if (perm.size() != r) shape_error("permute", "permutation rank mismatch", sx);
    for (std::size_t p : perm) {
        if (p >= r || seen[p]) shape_error("permute", "invalid permutation", sx);
        seen[p] = true;
    }
    Shape so(r);
    for (std::size_t i = 0; i < r; ++i) so[i] = sx[perm[i]];
    std::vector<std::size_t> in_strides(r, 1);
    for (std::size_t i = r; i-- > 1;) in_strides[i - 1] = in_strides[i] * sx[i];
    // src_offset[i] maps output flat index i to the input flat index.
    const std::size_t total = x.data().size();
    auto src = std::make_shared<std::vector<std::size_t>>(total);
    std::vector<std::size_t> idx(r, 0);
    for (std::size_t i = 0; i < total; ++i) {
        std::size_t off = 0;
        for (std::size_t a = 0; a < r; ++a) off += idx[a] * in_strides[perm[a]];
        (*src)[i] = off;
        for (std::size_t a = r; a-- > 0;) {
            if (++idx[a] < so[a]) break;
            idx[a] = 0;
        }
    }
    Tensor out(so);
    for (std::size_t i = 0; i < total; ++i) out[i] = x.data()[(*src)[i]];
    return make_result(std::move(out), {x}, [src](Node& self) {
        double* g = parent(self, 0).grad_buffer().data();
        for (std::size_t i = 0; i < src->size(); ++i) g[(*src)[i]] += self.grad[i];
    }, "permute");
}

Value concat(const std::vector<Value>& xs, std::size_t axis) {
    if (xs.empty()) fail(ErrorCategory::shape, "concat: no inputs");
    const Shape& s0 = xs[0].shape();
    if (axis >= s0.size()) shape_error("concat", "axis out of range", s0);
    std::size_t outer = 1, inner = 1, total_len = 0;
    for (std::size_t i = 0; i < axis; ++i) outer *= s0[i];
    for (std::size_t i = axis + 1; i < s0.size(); ++i) inner *= s0[i];
    std::vector<std::size_t> lens;
    for (const auto& v : xs) {
        const Shape& s = v.shape();
        bool ok = s.size() == s0.size();
        for (std::size_t i = 0; ok && i < s.size(); ++i) ok = (i == axis) || s[i] == s0[i];
        if (!ok) shape_error("concat", s0, s);
        lens.push_back(s[axis]);
        total_len += s[axis];
    }
    Shape so = s0;
    so[axis] = total_len;
    Tensor out(so);
    std::size_t start = 0;
    for (std::size_t k = 0; k < xs.size(); ++k) {
        const double* src = xs[k].data().data();
        for (std::size_t o = 0; o < outer; ++o)
            std::copy_n(src + o * lens[k] * inner, lens[k] * inner, out.data() + (o * total_len + start) * inner);
        start += lens[k];
    }
    return make_result(std::move(out), xs, [outer, inner, total_len, lens](Node& self) {
        std::size_t start = 0;
        for (std::size_t k = 0; k < lens.size(); ++k) {
            Node& p = parent(self, k);
            if (p.requires_grad) {
                double* g = p.grad_buffer().data();
                for (std::size_t o = 0; o < outer; ++o)
                    for (std::size_t i = 0; i < lens[k] * inner; ++i)
                        g[o * lens[k] * inner + i] += self.grad[(o * total_len + start) * inner + i];
            }
            start += lens[k];
        }
    }, "concat");
}

Value embedding_lookup(const Value& table, std::span<const std::size_t> indices) {
    const Shape& st = table.shape();
    if (st.size() != 2) shape_error("embedding_lookup", "expected table (V, D)", st);
    const std::size_t d = st[1];
    for (std::size_t i : indices)
        if (i >= st[0]) fail(ErrorCategory::shape, "embedding_lookup: index " + std::to_string(i) + " >= " + std::to_string(st[0]));
    Tensor out({indices.size(), d});
    for (std::size_t r = 0; r < indices.size(); ++r)
        std::copy_n(table.data().data() + indices[r] * d, d, out.data() + r * d);
    std::vector<std::size_t> idx(indices.begin(), indices.end());
    return make_result(std::move(out), {table}, [idx, d](Node& self) {
        double* g = parent(self, 0).grad_buffer().data();
        for (std::size_t r = 0; r < idx.size(); ++r)
            for (std::size_t j = 0; j < d; ++j) g[idx[r] * d + j] += self.grad[r * d + j];
    }, "embedding_lookup");
}

Value multi_head_attention(const Value& q, const Value& k, const Value& v, std::size_t heads) {
    const Shape& sq = q.shape();
    if (sq.size() != 3) shape_error("multi_head_attention", "expected (N, L, D)", sq);
    if (k.shape() != sq) shape_error("multi_head_attention", sq, k.shape());
    if (v.shape() != sq) shape_error("multi_head_attention", sq, v.shape());
    const std::size_t n = sq[0], len = sq[1], d = sq[2];
    if (heads == 0 || d % heads != 0)
        fail(ErrorCategory::shape, "multi_head_attention: dim " + std::to_string(d) + " not divisible by " +
                                       std::to_string(heads) + " heads");
    const std::size_t dh = d / heads;
    const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(dh));
    auto probs = std::make_shared<std::vector<double>>(n * heads * len * len);
    Tensor out(sq, 0.0);
    const double* Q = q.data().data();
    const double* K = k.data().data();
    const double* V = v.data().data();
    for (std::size_t b = 0; b < n; ++b) {
        for (std::size_t h = 0; h < heads; ++h) {
            double* P = probs->data() + (b * heads + h) * len * len;
            for (std::size_t i = 0; i < len; ++i) {
                const double* qi = Q + (b * len + i) * d + h * dh;
                double* pr = P + i * len;
                double mx = -std::numeric_limits<double>::infinity();
                for (std::size_t j = 0; j < len; ++j) {
                    const double* kj = K + (b * len + j) * d + h * dh;
                    double s = 0.0;
                    for (std::size_t c = 0; c < dh; ++c) s += qi[c] * kj[c];
                    pr[j] = s * inv_sqrt;
                    mx = std::max(mx, pr[j]);
                }
                double z = 0.0;
                for (std::size_t j = 0; j < len; ++j) z += (pr[j] = std::exp(pr[j] - mx));
                for (std::size_t j = 0; j < len; ++j) pr[j] /= z;
                double* oi = out.data() + (b * len + i) * d + h * dh;
                for (std::size_t j = 0; j < len; ++j) {
                    const double* vj = V + (b * len + j) * d + h * dh;
                    const double p = pr[j];
                    for (std::size_t c = 0; c < dh; ++c) oi[c] += p * vj[c];
                }
            }
        }
    }
    return make_result(std::move(out), {q, k, v}, [probs, n, len, d, heads, dh, inv_sqrt](Node& self) {
        Node& pq = parent(self, 0);
        Node& pk = parent(self, 1);
        Node& pv = parent(self, 2);
        const double* Q = pq.data.data();
        const double* K = pk.data.data();
        const double* V = pv.data.data();
        const double* G = self.grad.data();
        double* dQ = pq.requires_grad ? pq.grad_buffer().data() : nullptr;
        double* dK = pk.requires_grad ? pk.grad_buffer().data() : nullptr;
        double* dV = pv.requires_grad ? pv.grad_buffer().data() : nullptr;
        std::vector<double> dp(len);
        for (std::size_t b = 0; b < n; ++b) {
            for (std::size_t h = 0; h < heads; ++h) {
                const double* P = probs->data() + (b * heads + h) * len * len;
                for (std::size_t i = 0; i < len; ++i) {
                    const double* gi = G + (b * len + i) * d + h * dh;
                    const double* pr = P + i * len;
                    double dot = 0.0;
                    for (std::size_t j = 0; j < len; ++j) {
                        const double* vj = V + (b * len + j) * d + h * dh;
                        double s = 0.0;
                        for (std::size_t c = 0; c < dh; ++c) s += gi[c] * vj[c];
                        dp[j] = s;
                        dot += s * pr[j];
                        if (dV) {
                            double* dvj = dV + (b * len + j) * d + h * dh;
                            for (std::size_t c = 0; c < dh; ++c) dvj[c] += pr[j] * gi[c];
                        }
                    }
                    const double* qi = Q + (b * len + i) * d + h * dh;
                    double* dqi = dQ ? dQ + (b * len + i) * d + h * dh : nullptr;
                    for (std::size_t j = 0; j < len; ++j) {
                        const double ds = pr[j] * (dp[j] - dot) * inv_sqrt;
                        const double* kj = K + (b * len + j) * d + h * dh;
                        if (dqi)
                            for (std::size_t c = 0; c < dh; ++c) dqi[c] += ds * kj[c];
                        if (dK) {
                            double* dkj = dK + (b * len + j) * d + h * dh;
                            for (std::size_t c = 0; c < dh; ++c) dkj[c] += ds * qi[c];
                        }
                    }
                }
            }
        }
    }, "multi_head_attention");
}

Value upsample_nearest2x(const Value& x) {
    const Shape& sx = x.shape();
    check_nchw("upsample_nearest2x", sx);
    const std::size_t planes = sx[0] * sx[1], h = sx[2], w = sx[3];
    Tensor out({sx[0], sx[1], 2 * h, 2 * w});
    for (std::size_t p = 0; p < planes; ++p)
        for (std::size_t y = 0; y < 2 * h; ++y)
            for (std::size_t xx = 0; xx < 2 * w; ++xx)
                out[(p * 2 * h + y) * 2 * w + xx] = x.data()[(p * h + y / 2) * w + xx / 2];
    return make_result(std::move(out), {x}, [planes, h, w](Node& self) {
        double* g = parent(self, 0).grad_buffer().data();
        for (std::size_t p = 0; p < planes; ++p)
            for (std::size_t y = 0; y < 2 * h; ++y)
                for (std::size_t xx = 0; xx < 2 * w; ++xx)
                    g[(p * h + y / 2) * w + xx / 2] += self.grad[(p * 2 * h + y) * 2 * w + xx];
    }, "upsample_nearest2x");
}

Value add_channel_bias(const Value& x, const Value& b) {
    const Shape& sx = x.shape();
    check_nchw("add_channel_bias", sx);
    if (b.shape() != Shape{sx[0], sx[1]}) shape_error("add_channel_bias", sx, b.shape());
    const std::size_t planes = sx[0] * sx[1], hw = sx[2] * sx[3];
    Tensor out = x.data();
    for (std::size_t p = 0; p < planes; ++p)
        for (std::size_t i = 0; i < hw; ++i) out[p * hw + i] += b.data()[p];
    return make_result(std::move(out), {x, b}, [planes, hw](Node& self) {
        Node& px = parent(self, 0);
        Node& pb = parent(self, 1);
        if (px.requires_grad) {
            double* g = px.grad_buffer().data();
            for (std::size_t i = 0; i < planes * hw; ++i) g[i] += self.grad[i];
        }
        if (pb.requires_grad) {
            double* g = pb.grad_buffer().data();
            for (std::size_t p = 0; p < planes; ++p)
                for (std::size_t i = 0; i < hw; ++i) g[p] += self.grad[p * hw + i];
        }
    }, "add_channel_bias");
}

Value pick(const Value& x, std::span<const std::size_t> idx) {
    const Shape& sx = x.shape();
    if (sx.size() != 2 || sx[0] != idx.size()) shape_error("pick", "expected (N, K) with N indices", sx);
    const std::size_t k = sx[1];
    Tensor out({idx.size()});
    for (std::size_t r = 0; r < idx.size(); ++r) {
        if (idx[r] >= k) fail(ErrorCategory::invalid_argument, "pick: index " + std::to_string(idx[r]) + " out of range for " + std::to_string(k) + " classes");
        out[r] = x.data()[r * k + idx[r]];
    }
    std::vector<std::size_t> id(idx.begin(), idx.end());
    return make_result(std::move(out), {x}, [id, k](Node& self) {
        double* g = parent(self, 0).grad_buffer().data();
        for (std::size_t r = 0; r < id.size(); ++r) g[r * k + id[r]] += self.grad[r];
    }, "pick");
}

Value mse_loss(const Value& a, const Value& b) {
    if (a.shape() != b.shape()) shape_error("mse_loss", a.shape(), b.shape());
    return mean(square(sub(a, b)));
}

}  // namespace skeldiff::ad
