#include "dcp/kernels.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "dcp/error.hpp"
#include "kernels_detail.hpp"

namespace dcp {

namespace {
thread_local std::uint64_t g_macs = 0;
}

std::uint64_t mac_count() { return g_macs; }
void reset_mac_count() { g_macs = 0; }
void add_macs(std::uint64_t n) { g_macs += n; }

namespace detail {

std::vector<LerpTap> lerp_taps(std::size_t in, std::size_t out) {
    std::vector<LerpTap> taps(out);
    const double scale = static_cast<double>(in) / static_cast<double>(out);
    for (std::size_t o = 0; o < out; ++o) {
        double src = (static_cast<double>(o) + 0.5) * scale - 0.5;
        if (src < 0.0) src = 0.0;
        auto lo = static_cast<std::size_t>(src);
        if (lo > in - 1) lo = in - 1;
        const std::size_t hi = std::min(lo + 1, in - 1);
        taps[o] = {lo, hi, hi == lo ? 0.0 : src - static_cast<double>(lo)};
    }
    return taps;
}

Image4 image_dims(const Tensor& x, const char* op) {
    if (x.rank() == 3) return {1, x.dim(0), x.dim(1), x.dim(2)};
    if (x.rank() == 4) return {x.dim(0), x.dim(1), x.dim(2), x.dim(3)};
    throw ShapeError(std::string(op) + " expects [c x h x w] or [B x c x h x w]", x.dims(), {});
}

}  // namespace detail

Tensor matmul(const Tensor& a, const Tensor& b) {
    if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0)) throw ShapeError("matmul", a.dims(), b.dims());
    return matmul_rows(a, b);
}

Tensor matmul_rows(const Tensor& a, const Tensor& b) {
    if (b.rank() != 2 || a.rank() == 0 || a.dims().back() != b.dim(0)) throw ShapeError("matmul", a.dims(), b.dims());
    const std::size_t m = a.rows(), k = b.dim(0), n = b.dim(1);
    Shape out_dims = a.dims();
    out_dims.back() = n;
    Tensor out(out_dims);
    const double* A = a.data().data();
    const double* B = b.data().data();
    double* C = out.data().data();
    for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t j = 0; j < n; ++j) {
            double s = 0.0;
            for (std::size_t p = 0; p < k; ++p) s += A[i * k + p] * B[p * n + j];
            C[i * n + j] = s;
        }
    }
    add_macs(static_cast<std::uint64_t>(m) * k * n);
    return out;
}

Tensor transpose(const Tensor& a) {
    if (a.rank() != 2) throw ShapeError("transpose expects rank 2", a.dims(), {});
    const std::size_t m = a.dim(0), n = a.dim(1);
    Tensor out({n, m});
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) out[j * m + i] = a[i * n + j];
    return out;
}

namespace {

struct AxisView {
    std::size_t outer, extent, inner;
};

AxisView axis_view(const Shape& dims, std::size_t axis, const char* op) {
    if (axis >= dims.size()) throw ShapeError(std::string(op) + ": axis out of range", dims, {axis});
    AxisView v{1, dims[axis], 1};
    for (std::size_t i = 0; i < axis; ++i) v.outer *= dims[i];
    for (std::size_t i = axis + 1; i < dims.size(); ++i) v.inner *= dims[i];
    return v;
}

}  // namespace

Tensor softmax(const Tensor& x, std::size_t axis, double scale) {
    if (!(scale > 0.0)) throw DomainError("softmax scale must be positive");
    const auto v = axis_view(x.dims(), axis, "softmax");
    Tensor out(x.dims());
    for (std::size_t o = 0; o < v.outer; ++o) {
        for (std::size_t in = 0; in < v.inner; ++in) {
            const std::size_t base = o * v.extent * v.inner + in;
            double mx = -INFINITY;
            for (std::size_t e = 0; e < v.extent; ++e) mx = std::max(mx, x[base + e * v.inner]);
            double sum = 0.0;
            for (std::size_t e = 0; e < v.extent; ++e) {
                const double ex = std::exp(scale * (x[base + e * v.inner] - mx));
                out[base + e * v.inner] = ex;
                sum += ex;
            }
            for (std::size_t e = 0; e < v.extent; ++e) out[base + e * v.inner] /= sum;
        }
    }
    return out;
}

Tensor cosine_similarity_matrix(const Tensor& a, const Tensor& b) {
    if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(1) || a.dim(1) == 0)
        throw ShapeError("cosine_similarity_matrix", a.dims(), b.dims());
    const std::size_t m = a.dim(0), n = b.dim(0), d = a.dim(1);
    std::vector<double> na(m), nb(n);
    for (std::size_t i = 0; i < m; ++i) {
        na[i] = l2_norm(a.data().subspan(i * d, d));
        if (na[i] == 0.0) throw DomainError("cosine similarity: row " + std::to_string(i) + " of lhs has zero norm");
    }
    for (std::size_t j = 0; j < n; ++j) {
        nb[j] = l2_norm(b.data().subspan(j * d, d));
        if (nb[j] == 0.0) throw DomainError("cosine similarity: row " + std::to_string(j) + " of rhs has zero norm");
    }
    Tensor out({m, n});
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j)
            out[i * n + j] = dot(a.data().subspan(i * d, d), b.data().subspan(j * d, d)) / (na[i] * nb[j]);
    add_macs(static_cast<std::uint64_t>(m) * n * d);
    return out;
}

Tensor layer_norm(const Tensor& x, std::size_t axis, const Tensor& gain, const Tensor& bias, double eps) {
    if (!(eps > 0.0)) throw DomainError("layer_norm eps must be positive");
    const auto v = axis_view(x.dims(), axis, "layer_norm");
    if (gain.size() != v.extent || bias.size() != v.extent)
        throw ShapeError("layer_norm affine extent", {v.extent}, gain.dims());
    Tensor out(x.dims());
    const double n = static_cast<double>(v.extent);
    for (std::size_t o = 0; o < v.outer; ++o) {
        for (std::size_t in = 0; in < v.inner; ++in) {
            const std::size_t base = o * v.extent * v.inner + in;
            double mean = 0.0;
            for (std::size_t e = 0; e < v.extent; ++e) mean += x[base + e * v.inner];
            mean /= n;
            double var = 0.0;
            for (std::size_t e = 0; e < v.extent; ++e) {
                const double c = x[base + e * v.inner] - mean;
                var += c * c;
            }
            var /= n;
            const double inv = 1.0 / std::sqrt(var + eps);
            for (std::size_t e = 0; e < v.extent; ++e)
                out[base + e * v.inner] = gain[e] * ((x[base + e * v.inner] - mean) * inv) + bias[e];
        }
    }
    return out;
}

Tensor grouped_attention(const Tensor& q, const Tensor& k, const Tensor& v, std::size_t heads, const Tensor* mask,
                         Tensor* weights_out) {
    if (q.rank() != 3 || k.rank() != 3 || v.rank() != 3) throw ShapeError("attention expects rank-3 operands", q.dims(), k.dims());
    const std::size_t G = q.dim(0), m = q.dim(1), d = q.dim(2), n = k.dim(1), e = v.dim(2);
    if (k.dim(0) != G || v.dim(0) != G || k.dim(2) != d || v.dim(1) != n) throw ShapeError("attention q/k/v", q.dims(), k.dims());
    if (heads == 0 || d % heads != 0 || e % heads != 0)
        throw ShapeError("attention: heads must divide the feature width", {d, e}, {heads});
    if (mask && (mask->rank() != 3 || mask->dim(1) != m || mask->dim(2) != n || mask->dim(0) == 0))
        throw ShapeError("attention mask", mask->dims(), {m, n});
    const std::size_t dh = d / heads, eh = e / heads;
    const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
    Tensor out({G, m, e});
    if (weights_out) *weights_out = Tensor({G, heads, m, n});
    std::vector<double> row(n);
    for (std::size_t g = 0; g < G; ++g) {
        const double* Q = q.data().data() + g * m * d;
        const double* K = k.data().data() + g * n * d;
        const double* V = v.data().data() + g * n * e;
        const double* M = mask ? mask->data().data() + (g % mask->dim(0)) * m * n : nullptr;
        double* O = out.data().data() + g * m * e;
        for (std::size_t h = 0; h < heads; ++h) {
            for (std::size_t i = 0; i < m; ++i) {
                double mx = -INFINITY;
                for (std::size_t j = 0; j < n; ++j) {
                    double s = 0.0;
                    for (std::size_t p = 0; p < dh; ++p) s += Q[i * d + h * dh + p] * K[j * d + h * dh + p];
                    s *= scale;
                    if (M) s += M[i * n + j];
                    row[j] = s;
                    mx = std::max(mx, s);
                }
                double sum = 0.0;
                for (std::size_t j = 0; j < n; ++j) {
                    row[j] = std::exp(row[j] - mx);
                    sum += row[j];
                }
                for (std::size_t j = 0; j < n; ++j) row[j] /= sum;
                if (weights_out) {
                    double* W = weights_out->data().data() + ((g * heads + h) * m + i) * n;
                    std::copy(row.begin(), row.end(), W);
                }
                for (std::size_t c = 0; c < eh; ++c) {
                    double s = 0.0;
                    for (std::size_t j = 0; j < n; ++j) s += row[j] * V[j * e + h * eh + c];
                    O[i * e + h * eh + c] = s;
                }
            }
        }
    }
    add_macs(static_cast<std::uint64_t>(G) * m * n * (d + e));
    return out;
}

Tensor scaled_dot_product_attention(const Tensor& q, const Tensor& k, const Tensor& v, std::size_t heads) {
    if (q.rank() != 2 || k.rank() != 2 || v.rank() != 2) throw ShapeError("attention expects rank-2 operands", q.dims(), k.dims());
    if (heads == 0 || q.dim(1) % heads != 0) throw ShapeError("attention: heads must divide d", q.dims(), {heads});
    auto out = grouped_attention(q.reshaped({1, q.dim(0), q.dim(1)}), k.reshaped({1, k.dim(0), k.dim(1)}),
                                 v.reshaped({1, v.dim(0), v.dim(1)}), heads);
    return out.reshaped({q.dim(0), v.dim(1)});
}

Tensor conv2d(const Tensor& x, const Tensor& kernel, std::size_t stride, std::size_t padding) {
    const auto in = detail::image_dims(x, "conv2d");
    if (kernel.rank() != 4 || kernel.dim(1) != in.channels) throw ShapeError("conv2d kernel/input channels", kernel.dims(), x.dims());
    if (stride == 0) throw DomainError("conv2d stride must be positive");
    const std::size_t co = kernel.dim(0), ci = in.channels, kh = kernel.dim(2), kw = kernel.dim(3);
    const long long oh_s = (static_cast<long long>(in.height) + 2 * static_cast<long long>(padding) - static_cast<long long>(kh)) /
                               static_cast<long long>(stride) + 1;
    const long long ow_s = (static_cast<long long>(in.width) + 2 * static_cast<long long>(padding) - static_cast<long long>(kw)) /
                               static_cast<long long>(stride) + 1;
    if (in.height + 2 * padding < kh || in.width + 2 * padding < kw || oh_s < 1 || ow_s < 1)
        throw ShapeError("conv2d output extent < 1", x.dims(), kernel.dims());
    const auto oh = static_cast<std::size_t>(oh_s), ow = static_cast<std::size_t>(ow_s);
    Tensor out = x.rank() == 3 ? Tensor({co, oh, ow}) : Tensor({in.batch, co, oh, ow});
    const double* X = x.data().data();
    const double* K = kernel.data().data();
    double* Y = out.data().data();
    const auto H = static_cast<long long>(in.height), W = static_cast<long long>(in.width);
    for (std::size_t b = 0; b < in.batch; ++b)
        for (std::size_t o = 0; o < co; ++o)
            for (std::size_t y = 0; y < oh; ++y)
                for (std::size_t xo = 0; xo < ow; ++xo) {
                    double s = 0.0;
                    for (std::size_t i = 0; i < ci; ++i)
                        for (std::size_t ky = 0; ky < kh; ++ky) {
                            const long long iy = static_cast<long long>(y * stride + ky) - static_cast<long long>(padding);
                            if (iy < 0 || iy >= H) continue;
                            for (std::size_t kx = 0; kx < kw; ++kx) {
                                const long long ix = static_cast<long long>(xo * stride + kx) - static_cast<long long>(padding);
                                if (ix < 0 || ix >= W) continue;
                                s += K[((o * ci + i) * kh + ky) * kw + kx] *
                                     X[((b * ci + i) * in.height + static_cast<std::size_t>(iy)) * in.width + static_cast<std::size_t>(ix)];
                            }
                        }
                    Y[((b * co + o) * oh + y) * ow + xo] = s;
                }
    add_macs(static_cast<std::uint64_t>(in.batch) * co * oh * ow * ci * kh * kw);
    return out;
}

Tensor transposed_conv2d(const Tensor& x, const Tensor& kernel) {
    const auto in = detail::image_dims(x, "transposed_conv2d");
    if (kernel.rank() != 4 || kernel.dim(0) != in.channels || kernel.dim(2) != 2 || kernel.dim(3) != 2)
        throw ShapeError("transposed_conv2d expects a [c_in x c_out x 2 x 2] kernel", kernel.dims(), x.dims());
    const std::size_t ci = in.channels, co = kernel.dim(1), oh = 2 * in.height, ow = 2 * in.width;
    Tensor out = x.rank() == 3 ? Tensor({co, oh, ow}) : Tensor({in.batch, co, oh, ow});
    const double* X = x.data().data();
    const double* K = kernel.data().data();
    double* Y = out.data().data();
    for (std::size_t b = 0; b < in.batch; ++b)
        for (std::size_t o = 0; o < co; ++o)
            for (std::size_t y = 0; y < oh; ++y)
                for (std::size_t xo = 0; xo < ow; ++xo) {
                    const std::size_t sy = y / 2, sx = xo / 2, ky = y % 2, kx = xo % 2;
                    double s = 0.0;
                    for (std::size_t i = 0; i < ci; ++i)
                        s += X[((b * ci + i) * in.height + sy) * in.width + sx] * K[((i * co + o) * 2 + ky) * 2 + kx];
                    Y[((b * co + o) * oh + y) * ow + xo] = s;
                }
    add_macs(static_cast<std::uint64_t>(in.batch) * co * oh * ow * ci);
    return out;
}

Tensor bilinear_resize(const Tensor& x, std::size_t out_h, std::size_t out_w) {
    const auto in = detail::image_dims(x, "bilinear_resize");
    if (out_h == 0 || out_w == 0 || in.height == 0 || in.width == 0) throw ShapeError("bilinear_resize extent", x.dims(), {out_h, out_w});
    const auto ty = detail::lerp_taps(in.height, out_h);
    const auto tx = detail::lerp_taps(in.width, out_w);
    const std::size_t planes = in.batch * in.channels;
    Tensor out = x.rank() == 3 ? Tensor({in.channels, out_h, out_w}) : Tensor({in.batch, in.channels, out_h, out_w});
    for (std::size_t p = 0; p < planes; ++p) {
        const double* X = x.data().data() + p * in.height * in.width;
        double* Y = out.data().data() + p * out_h * out_w;
        for (std::size_t y = 0; y < out_h; ++y) {
            const auto& r = ty[y];
            for (std::size_t xo = 0; xo < out_w; ++xo) {
                const auto& c = tx[xo];
                const double a = X[r.lo * in.width + c.lo], b = X[r.lo * in.width + c.hi];
                const double cc = X[r.hi * in.width + c.lo], d = X[r.hi * in.width + c.hi];
                const double top = a + c.weight * (b - a);
                const double bot = cc + c.weight * (d - cc);
                Y[y * out_w + xo] = top + r.weight * (bot - top);
            }
        }
    }
    return out;
}

Tensor bilinear_upsample(const Tensor& x, std::size_t factor) {
    if (factor == 0) throw DomainError("upsample factor must be positive");
    const auto in = detail::image_dims(x, "bilinear_upsample");
    return bilinear_resize(x, in.height * factor, in.width * factor);
}

double gelu(double x) { return 0.5 * x * (1.0 + std::erf(x / std::numbers::sqrt2)); }

double gelu_grad(double x) {
    const double pdf = std::exp(-0.5 * x * x) / std::sqrt(2.0 * std::numbers::pi);
    return 0.5 * (1.0 + std::erf(x / std::numbers::sqrt2)) + x * pdf;
}

Tensor finite_difference_gradient(const std::function<double(const Tensor&)>& f, const Tensor& x, double h) {
    if (!(h >= 1e-6 && h <= 1e-4)) throw DomainError("finite difference step must lie in [1e-6, 1e-4]");
    Tensor g(x.dims());
    Tensor probe = x;
    for (std::size_t i = 0; i < x.size(); ++i) {
        const double orig = probe[i];
        probe[i] = orig + h;
        const double fp = f(probe);
        probe[i] = orig - h;
        const double fm = f(probe);
        probe[i] = orig;
        if (!std::isfinite(fp) || !std::isfinite(fm))
            throw NonFiniteError("finite difference: non-finite function value at coordinate " + std::to_string(i));
        g[i] = (fp - fm) / (2.0 * h);
    }
    return g;
}

double relative_error(const Tensor& analytic, const Tensor& numeric) {
    if (analytic.dims() != numeric.dims()) throw ShapeError("relative_error", analytic.dims(), numeric.dims());
    double diff = 0.0, ref = 0.0;
    for (std::size_t i = 0; i < analytic.size(); ++i) {
        const double d = analytic[i] - numeric[i];
        diff += d * d;
        ref += numeric[i] * numeric[i];
    }
    return std::sqrt(diff) / (std::sqrt(ref) + 1e-12);
}

}  // namespace dcp
