#include "dcp/autograd.hpp"

#include <cmath>
#include <numeric>

#include "dcp/error.hpp"
#include "dcp/kernels.hpp"
#include "kernels_detail.hpp"

namespace dcp::ag {

const Tensor& Var::value() const { return tape->value(*this); }

Var Tape::constant(Tensor value) {
    nodes_.push_back(Node{std::move(value), {}, {}, nullptr, false});
    return Var{this, nodes_.size() - 1};
}

Var Tape::param(ParamTensor& p) {
    nodes_.push_back(Node{p.value, {}, {}, &p, record_});
    return Var{this, nodes_.size() - 1};
}

Var Tape::push(Tensor value, std::initializer_list<Var> parents, Backward backward) {
    bool needs = false;
    for (auto p : parents) needs = needs || nodes_[p.id].needs_grad;
    needs = needs && record_;
    nodes_.push_back(Node{std::move(value), {}, needs ? std::move(backward) : Backward{}, nullptr, needs});
    return Var{this, nodes_.size() - 1};
}

Var Tape::push(Tensor value, const std::vector<Var>& parents, Backward backward) {
    bool needs = false;
    for (auto p : parents) needs = needs || nodes_[p.id].needs_grad;
    needs = needs && record_;
    nodes_.push_back(Node{std::move(value), {}, needs ? std::move(backward) : Backward{}, nullptr, needs});
    return Var{this, nodes_.size() - 1};
}

Tensor& Tape::grad_slot(Var v) {
    auto& n = nodes_[v.id];
    if (n.grad.dims() != n.value.dims()) n.grad = Tensor(n.value.dims());
    return n.grad;
}

void Tape::accumulate(Var v, const Tensor& g) {
    if (!nodes_[v.id].needs_grad) return;
    auto& slot = grad_slot(v);
    if (g.size() != slot.size()) throw ShapeError("gradient shape", g.dims(), slot.dims());
    for (std::size_t i = 0; i < g.size(); ++i) slot[i] += g[i];
}

void Tape::backward(Var loss) {
    if (!record_) throw Error("backward on a non-recording tape");
    if (nodes_[loss.id].value.size() != 1) throw ShapeError("backward expects a scalar loss", nodes_[loss.id].value.dims(), {1});
    if (!nodes_[loss.id].needs_grad) return;
    grad_slot(loss)[0] = 1.0;
    for (std::size_t i = loss.id + 1; i-- > 0;) {
        auto& n = nodes_[i];
        if (!n.needs_grad || n.grad.empty()) continue;
        if (n.param) {
            if (n.param->grad.dims() != n.param->value.dims()) n.param->zero_grad();
            for (std::size_t j = 0; j < n.grad.size(); ++j) n.param->grad[j] += n.grad[j];
        }
        if (n.backward) {
            // The closure may grow other nodes' grad slots; keep our own gradient alive.
            const Tensor g = std::move(n.grad);
            n.grad = Tensor();
            n.backward(*this, g);
        }
    }
}

namespace {

void require_same(const Var& a, const Var& b, const char* op) {
    if (a.dims() != b.dims()) throw ShapeError(op, a.dims(), b.dims());
}

}  // namespace

Var matmul(Var a, Var b) {
    Tensor out = dcp::matmul_rows(a.value(), b.value());
    return a.tape->push(std::move(out), {a, b}, [a, b](Tape& t, const Tensor& g) {
        const Tensor& A = a.value();
        const Tensor& B = b.value();
        const std::size_t m = A.rows(), k = B.dim(0), n = B.dim(1);
        if (t.needs_grad(a)) {
            Tensor& ga = t.grad_slot(a);
            for (std::size_t i = 0; i < m; ++i)
                for (std::size_t p = 0; p < k; ++p) {
                    double s = 0.0;
                    for (std::size_t j = 0; j < n; ++j) s += g[i * n + j] * B[p * n + j];
                    ga[i * k + p] += s;
                }
        }
        if (t.needs_grad(b)) {
            Tensor& gb = t.grad_slot(b);
            for (std::size_t i = 0; i < m; ++i)
                for (std::size_t p = 0; p < k; ++p) {
                    const double av = A[i * k + p];
                    for (std::size_t j = 0; j < n; ++j) gb[p * n + j] += av * g[i * n + j];
                }
        }
    });
}

Var add(Var a, Var b) {
    require_same(a, b, "add");
    Tensor out = a.value();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] += b.value()[i];
    return a.tape->push(std::move(out), {a, b}, [a, b](Tape& t, const Tensor& g) {
        t.accumulate(a, g);
        t.accumulate(b, g);
    });
}

Var sub(Var a, Var b) {
    require_same(a, b, "sub");
    Tensor out = a.value();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] -= b.value()[i];
    return a.tape->push(std::move(out), {a, b}, [a, b](Tape& t, const Tensor& g) {
        t.accumulate(a, g);
        if (t.needs_grad(b)) {
            Tensor& gb = t.grad_slot(b);
            for (std::size_t i = 0; i < g.size(); ++i) gb[i] -= g[i];
        }
    });
}

Var mul(Var a, Var b) {
    require_same(a, b, "mul");
    Tensor out = a.value();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] *= b.value()[i];
    return a.tape->push(std::move(out), {a, b}, [a, b](Tape& t, const Tensor& g) {
        if (t.needs_grad(a)) {
            Tensor& ga = t.grad_slot(a);
            for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * b.value()[i];
        }
        if (t.needs_grad(b)) {
            Tensor& gb = t.grad_slot(b);
            for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * a.value()[i];
        }
    });
}

Var scale(Var a, double s) {
    Tensor out = a.value();
    for (auto& x : out.data()) x *= s;
    return a.tape->push(std::move(out), {a}, [a, s](Tape& t, const Tensor& g) {
        Tensor& ga = t.grad_slot(a);
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += s * g[i];
    });
}

Var add_bias(Var a, Var bias) {
    const std::size_t n = a.value().cols();
    if (bias.value().size() != n) throw ShapeError("add_bias", a.dims(), bias.dims());
    Tensor out = a.value();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] += bias.value()[i % n];
    return a.tape->push(std::move(out), {a, bias}, [a, bias, n](Tape& t, const Tensor& g) {
        t.accumulate(a, g);
        if (t.needs_grad(bias)) {
            Tensor& gb = t.grad_slot(bias);
            for (std::size_t i = 0; i < g.size(); ++i) gb[i % n] += g[i];
        }
    });
}

Var gelu(Var a) {
    Tensor out = a.value();
    for (auto& x : out.data()) x = dcp::gelu(x);
    return a.tape->push(std::move(out), {a}, [a](Tape& t, const Tensor& g) {
        Tensor& ga = t.grad_slot(a);
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * gelu_grad(a.value()[i]);
    });
}

Var layer_norm(Var x, Var gain, Var bias, double eps) {
    const Tensor& X = x.value();
    const std::size_t n = X.cols(), rows = X.rows();
    Tensor out = dcp::layer_norm(X, X.rank() - 1, gain.value(), bias.value(), eps);
    // Normalized activations and inverse std per row for the backward pass.
    Tensor xhat(X.dims());
    std::vector<double> inv_std(rows);
    for (std::size_t r = 0; r < rows; ++r) {
        double mean = 0.0;
        for (std::size_t e = 0; e < n; ++e) mean += X[r * n + e];
        mean /= static_cast<double>(n);
        double var = 0.0;
        for (std::size_t e = 0; e < n; ++e) {
            const double c = X[r * n + e] - mean;
            var += c * c;
        }
        var /= static_cast<double>(n);
        inv_std[r] = 1.0 / std::sqrt(var + eps);
        for (std::size_t e = 0; e < n; ++e) xhat[r * n + e] = (X[r * n + e] - mean) * inv_std[r];
    }
    return x.tape->push(std::move(out), {x, gain, bias},
                        [x, gain, bias, xhat = std::move(xhat), inv_std = std::move(inv_std), n, rows](Tape& t, const Tensor& g) {
                            const Tensor& G = gain.value();
                            if (t.needs_grad(gain)) {
                                Tensor& gg = t.grad_slot(gain);
                                for (std::size_t i = 0; i < g.size(); ++i) gg[i % n] += g[i] * xhat[i];
                            }
                            if (t.needs_grad(bias)) {
                                Tensor& gb = t.grad_slot(bias);
                                for (std::size_t i = 0; i < g.size(); ++i) gb[i % n] += g[i];
                            }
                            if (!t.needs_grad(x)) return;
                            Tensor& gx = t.grad_slot(x);
                            const double inv_n = 1.0 / static_cast<double>(n);
                            for (std::size_t r = 0; r < rows; ++r) {
                                double m1 = 0.0, m2 = 0.0;
                                for (std::size_t e = 0; e < n; ++e) {
                                    const double dxh = g[r * n + e] * G[e];
                                    m1 += dxh;
                                    m2 += dxh * xhat[r * n + e];
                                }
                                m1 *= inv_n;
                                m2 *= inv_n;
                                for (std::size_t e = 0; e < n; ++e) {
                                    const double dxh = g[r * n + e] * G[e];
                                    gx[r * n + e] += inv_std[r] * (dxh - m1 - xhat[r * n + e] * m2);
                                }
                            }
                        });
}

Var attention(Var q, Var k, Var v, std::size_t heads, const Tensor* mask) {
    Tensor weights;
    Tensor out = grouped_attention(q.value(), k.value(), v.value(), heads, mask, q.tape->recording() ? &weights : nullptr);
    return q.tape->push(std::move(out), {q, k, v}, [q, k, v, heads, weights = std::move(weights)](Tape& t, const Tensor& g) {
        const Tensor& Q = q.value();
        const Tensor& K = k.value();
        const Tensor& V = v.value();
        const std::size_t G = Q.dim(0), m = Q.dim(1), d = Q.dim(2), n = K.dim(1), e = V.dim(2);
        const std::size_t dh = d / heads, eh = e / heads;
        const double sc = 1.0 / std::sqrt(static_cast<double>(dh));
        Tensor* gq = t.needs_grad(q) ? &t.grad_slot(q) : nullptr;
        Tensor* gk = t.needs_grad(k) ? &t.grad_slot(k) : nullptr;
        Tensor* gv = t.needs_grad(v) ? &t.grad_slot(v) : nullptr;
        std::vector<double> dp(n), ds(n);
        for (std::size_t gi = 0; gi < G; ++gi) {
            for (std::size_t h = 0; h < heads; ++h) {
                for (std::size_t i = 0; i < m; ++i) {
                    const double* P = weights.data().data() + ((gi * heads + h) * m + i) * n;
                    const double* dO = g.data().data() + (gi * m + i) * e + h * eh;
                    double dot_pd = 0.0;
                    for (std::size_t j = 0; j < n; ++j) {
                        double s = 0.0;
                        for (std::size_t c = 0; c < eh; ++c) s += dO[c] * V[(gi * n + j) * e + h * eh + c];
                        dp[j] = s;
                        dot_pd += s * P[j];
                    }
                    for (std::size_t j = 0; j < n; ++j) ds[j] = P[j] * (dp[j] - dot_pd) * sc;
                    if (gv)
                        for (std::size_t j = 0; j < n; ++j)
                            for (std::size_t c = 0; c < eh; ++c) (*gv)[(gi * n + j) * e + h * eh + c] += P[j] * dO[c];
                    if (gq)
                        for (std::size_t p = 0; p < dh; ++p) {
                            double s = 0.0;
                            for (std::size_t j = 0; j < n; ++j) s += ds[j] * K[(gi * n + j) * d + h * dh + p];
                            (*gq)[(gi * m + i) * d + h * dh + p] += s;
                        }
                    if (gk)
                        for (std::size_t j = 0; j < n; ++j)
                            for (std::size_t p = 0; p < dh; ++p)
                                (*gk)[(gi * n + j) * d + h * dh + p] += ds[j] * Q[(gi * m + i) * d + h * dh + p];
                }
            }
        }
    });
}

Var gather_rows(Var x, std::vector<std::size_t> index, Shape out_dims) {
    const Tensor& X = x.value();
    const std::size_t w = X.cols(), rows = X.rows();
    if (out_dims.empty() || out_dims.back() != w || shape_size(out_dims) != index.size() * w)
        throw ShapeError("gather_rows output extents", out_dims, {index.size(), w});
    Tensor out(std::move(out_dims));
    for (std::size_t r = 0; r < index.size(); ++r) {
        if (index[r] >= rows) throw ShapeError("gather_rows index out of range", {index[r]}, {rows});
        std::copy_n(X.data().data() + index[r] * w, w, out.data().data() + r * w);
    }
    return x.tape->push(std::move(out), {x}, [x, index = std::move(index), w](Tape& t, const Tensor& g) {
        Tensor& gx = t.grad_slot(x);
        for (std::size_t r = 0; r < index.size(); ++r)
            for (std::size_t c = 0; c < w; ++c) gx[index[r] * w + c] += g[r * w + c];
    });
}

namespace {

std::vector<std::size_t> strides_of(const Shape& dims) {
    std::vector<std::size_t> s(dims.size(), 1);
    for (std::size_t i = dims.size(); i-- > 1;) s[i - 1] = s[i] * dims[i];
    return s;
}

// Source offset for every destination element of a permutation.
std::vector<std::size_t> permute_map(const Shape& dims, const std::vector<std::size_t>& perm, Shape& out_dims) {
    const std::size_t r = dims.size();
    if (perm.size() != r) throw ShapeError("permute rank", dims, perm);
    out_dims.assign(r, 0);
    std::vector<bool> seen(r, false);
    for (std::size_t i = 0; i < r; ++i) {
        if (perm[i] >= r || seen[perm[i]]) throw ShapeError("permute: not a permutation", dims, perm);
        seen[perm[i]] = true;
        out_dims[i] = dims[perm[i]];
    }
    const auto in_strides = strides_of(dims);
    const std::size_t total = shape_size(dims);
    std::vector<std::size_t> src(total);
    std::vector<std::size_t> idx(r, 0);
    for (std::size_t o = 0; o < total; ++o) {
        std::size_t off = 0;
        for (std::size_t i = 0; i < r; ++i) off += idx[i] * in_strides[perm[i]];
        src[o] = off;
        for (std::size_t i = r; i-- > 0;) {
            if (++idx[i] < out_dims[i]) break;
            idx[i] = 0;
        }
    }
    return src;
}

}  // namespace

Var permute(Var x, const std::vector<std::size_t>& perm) {
    Shape out_dims;
    auto src = permute_map(x.dims(), perm, out_dims);
    Tensor out(out_dims);
    for (std::size_t o = 0; o < src.size(); ++o) out[o] = x.value()[src[o]];
    return x.tape->push(std::move(out), {x}, [x, src = std::move(src)](Tape& t, const Tensor& g) {
        Tensor& gx = t.grad_slot(x);
        for (std::size_t o = 0; o < src.size(); ++o) gx[src[o]] += g[o];
    });
}

Var reshape(Var x, Shape dims) {
    Tensor out = x.value().reshaped(std::move(dims));
    return x.tape->push(std::move(out), {x}, [x](Tape& t, const Tensor& g) {
        Tensor& gx = t.grad_slot(x);
        for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
    });
}

Var concat(const std::vector<Var>& parts, std::size_t axis) {
    if (parts.empty()) throw ShapeError("concat of nothing", {}, {});
    const Shape& d0 = parts[0].dims();
    if (axis >= d0.size()) throw ShapeError("concat axis", d0, {axis});
    std::size_t outer = 1, inner = 1;
    for (std::size_t i = 0; i < axis; ++i) outer *= d0[i];
    for (std::size_t i = axis + 1; i < d0.size(); ++i) inner *= d0[i];
    std::vector<std::size_t> extent;
    std::size_t total = 0;
    for (const auto& p : parts) {
        const Shape& d = p.dims();
        if (d.size() != d0.size()) throw ShapeError("concat rank", d0, d);
        for (std::size_t i = 0; i < d.size(); ++i)
            if (i != axis && d[i] != d0[i]) throw ShapeError("concat extents", d0, d);
        extent.push_back(d[axis]);
        total += d[axis];
    }
    Shape out_dims = d0;
    out_dims[axis] = total;
    Tensor out(out_dims);
    for (std::size_t o = 0; o < outer; ++o) {
        std::size_t offset = 0;
        for (std::size_t p = 0; p < parts.size(); ++p) {
            const std::size_t chunk = extent[p] * inner;
            std::copy_n(parts[p].value().data().data() + o * chunk, chunk, out.data().data() + (o * total + offset) * inner);
            offset += extent[p];
        }
    }
    return parts[0].tape->push(std::move(out), parts, [parts, extent, outer, inner, total](Tape& t, const Tensor& g) {
        std::size_t offset = 0;
        for (std::size_t p = 0; p < parts.size(); ++p) {
            const std::size_t chunk = extent[p] * inner;
            if (t.needs_grad(parts[p])) {
                Tensor& gp = t.grad_slot(parts[p]);
                for (std::size_t o = 0; o < outer; ++o)
                    for (std::size_t i = 0; i < chunk; ++i) gp[o * chunk + i] += g[(o * total + offset) * inner + i];
            }
            offset += extent[p];
        }
    });
}

Var conv2d(Var x, Var kernel, std::size_t stride, std::size_t padding) {
    Tensor out = dcp::conv2d(x.value(), kernel.value(), stride, padding);
    return x.tape->push(std::move(out), {x, kernel}, [x, kernel, stride, padding](Tape& t, const Tensor& g) {
        const Tensor& X = x.value();
        const Tensor& K = kernel.value();
        const auto in = detail::image_dims(X, "conv2d");
        const std::size_t co = K.dim(0), ci = K.dim(1), kh = K.dim(2), kw = K.dim(3);
        const std::size_t oh = g.dims()[g.rank() - 2], ow = g.dims()[g.rank() - 1];
        Tensor* gx = t.needs_grad(x) ? &t.grad_slot(x) : nullptr;
        Tensor* gk = t.needs_grad(kernel) ? &t.grad_slot(kernel) : nullptr;
        const auto H = static_cast<long long>(in.height), W = static_cast<long long>(in.width);
        for (std::size_t b = 0; b < in.batch; ++b)
            for (std::size_t o = 0; o < co; ++o)
                for (std::size_t y = 0; y < oh; ++y)
                    for (std::size_t xo = 0; xo < ow; ++xo) {
                        const double go = g[((b * co + o) * oh + y) * ow + xo];
                        if (go == 0.0) continue;
                        for (std::size_t i = 0; i < ci; ++i)
                            for (std::size_t ky = 0; ky < kh; ++ky) {
                                const long long iy = static_cast<long long>(y * stride + ky) - static_cast<long long>(padding);
                                if (iy < 0 || iy >= H) continue;
                                for (std::size_t kx = 0; kx < kw; ++kx) {
                                    const long long ix = static_cast<long long>(xo * stride + kx) - static_cast<long long>(padding);
                                    if (ix < 0 || ix >= W) continue;
                                    const std::size_t xi =
                                        ((b * ci + i) * in.height + static_cast<std::size_t>(iy)) * in.width + static_cast<std::size_t>(ix);
                                    const std::size_t ki = ((o * ci + i) * kh + ky) * kw + kx;
                                    if (gx) (*gx)[xi] += go * K[ki];
                                    if (gk) (*gk)[ki] += go * X[xi];
                                }
                            }
                    }
    });
}

Var transposed_conv2d(Var x, Var kernel) {
    Tensor out = dcp::transposed_conv2d(x.value(), kernel.value());
    return x.tape->push(std::move(out), {x, kernel}, [x, kernel](Tape& t, const Tensor& g) {
        const Tensor& X = x.value();
        const Tensor& K = kernel.value();
        const auto in = detail::image_dims(X, "transposed_conv2d");
        const std::size_t ci = in.channels, co = K.dim(1), oh = 2 * in.height, ow = 2 * in.width;
        Tensor* gx = t.needs_grad(x) ? &t.grad_slot(x) : nullptr;
        Tensor* gk = t.needs_grad(kernel) ? &t.grad_slot(kernel) : nullptr;
        for (std::size_t b = 0; b < in.batch; ++b)
            for (std::size_t o = 0; o < co; ++o)
                for (std::size_t y = 0; y < oh; ++y)
                    for (std::size_t xo = 0; xo < ow; ++xo) {
                        const double go = g[((b * co + o) * oh + y) * ow + xo];
                        const std::size_t sy = y / 2, sx = xo / 2, ky = y % 2, kx = xo % 2;
                        for (std::size_t i = 0; i < ci; ++i) {
                            const std::size_t xi = ((b * ci + i) * in.height + sy) * in.width + sx;
                            const std::size_t ki = ((i * co + o) * 2 + ky) * 2 + kx;
                            if (gx) (*gx)[xi] += go * K[ki];
                            if (gk) (*gk)[ki] += go * X[xi];
                        }
                    }
    });
}

Var bilinear_resize(Var x, std::size_t out_h, std::size_t out_w) {
    Tensor out = dcp::bilinear_resize(x.value(), out_h, out_w);
    return x.tape->push(std::move(out), {x}, [x, out_h, out_w](Tape& t, const Tensor& g) {
        const auto in = detail::image_dims(x.value(), "bilinear_resize");
        const auto ty = detail::lerp_taps(in.height, out_h);
        const auto tx = detail::lerp_taps(in.width, out_w);
        Tensor& gx = t.grad_slot(x);
        for (std::size_t p = 0; p < in.batch * in.channels; ++p) {
            double* GX = gx.data().data() + p * in.height * in.width;
            const double* GY = g.data().data() + p * out_h * out_w;
            for (std::size_t y = 0; y < out_h; ++y) {
                const auto& r = ty[y];
                for (std::size_t xo = 0; xo < out_w; ++xo) {
                    const auto& c = tx[xo];
                    const double go = GY[y * out_w + xo];
                    const double top = go * (1.0 - r.weight), bot = go * r.weight;
                    GX[r.lo * in.width + c.lo] += top * (1.0 - c.weight);
                    GX[r.lo * in.width + c.hi] += top * c.weight;
                    GX[r.hi * in.width + c.lo] += bot * (1.0 - c.weight);
                    GX[r.hi * in.width + c.hi] += bot * c.weight;
                }
            }
        }
    });
}

Var sum(Var x) {
    double s = 0.0;
    for (double v : x.value().data()) s += v;
    return x.tape->push(Tensor({1}, {s}), {x}, [x](Tape& t, const Tensor& g) {
        Tensor& gx = t.grad_slot(x);
        for (auto& v : gx.data()) v += g[0];
    });
}

Var weighted_sum(Var x, const Tensor& w) {
    if (w.size() != x.value().size()) throw ShapeError("weighted_sum", x.dims(), w.dims());
    double s = 0.0;
    for (std::size_t i = 0; i < w.size(); ++i) s += x.value()[i] * w[i];
    return x.tape->push(Tensor({1}, {s}), {x}, [x, w](Tape& t, const Tensor& g) {
        Tensor& gx = t.grad_slot(x);
        for (std::size_t i = 0; i < w.size(); ++i) gx[i] += g[0] * w[i];
    });
}

Var bce_with_logits(Var logits, const Tensor& targets, const Tensor& weights) {
    const Tensor& Z = logits.value();
    if (targets.size() != Z.size() || weights.size() != Z.size()) throw ShapeError("bce_with_logits", Z.dims(), targets.dims());
    double s = 0.0;
    for (std::size_t i = 0; i < Z.size(); ++i) {
        if (weights[i] == 0.0) continue;
        const double z = Z[i];
        // max(z, 0) - z t + log(1 + exp(-|z|))
        s += weights[i] * (std::max(z, 0.0) - z * targets[i] + std::log1p(std::exp(-std::abs(z))));
    }
    return logits.tape->push(Tensor({1}, {s}), {logits}, [logits, targets, weights](Tape& t, const Tensor& g) {
        const Tensor& Z = logits.value();
        Tensor& gz = t.grad_slot(logits);
        for (std::size_t i = 0; i < Z.size(); ++i) {
            if (weights[i] == 0.0) continue;
            const double sig = 1.0 / (1.0 + std::exp(-Z[i]));
            gz[i] += g[0] * weights[i] * (sig - targets[i]);
        }
    });
}

}  // namespace dcp::ag
