#include "dcp/decoder.hpp"

#include <string>

#include "dcp/error.hpp"
#include "dcp/kernels.hpp"

namespace dcp {

void SEDConfig::validate() const {
    if (n_s == 0) throw ConfigError("decoder needs n_s >= 1");
    if (n_s >= 63 || dim_c % (std::size_t{1} << n_s) != 0)
        throw ConfigError("D_c = " + std::to_string(dim_c) + " cannot halve " + std::to_string(n_s) + " times");
    if (window == 0) throw ConfigError("window must be positive");
    for (std::size_t l = 0; l <= n_s; ++l)
        if (heads == 0 || level_dim(l) % heads != 0)
            throw ConfigError("decoder heads must divide the channel count of every level");
}

SEDParams SEDParams::init(const SEDConfig& config, Rng& rng) {
    config.validate();
    const std::size_t cv = config.fv_channels, N = config.num_patches;
    SEDParams p;
    p.config = config;
    for (std::size_t l = 0; l <= config.n_s; ++l) {
        const std::size_t d = config.level_dim(l);
        const std::string n = "sed.enhance" + std::to_string(l);
        EnhanceParams e;
        e.fv_kernel = init_param(n + ".fv_kernel", {d, cv, 3, 3}, rng, cv * 9);
        e.aclip_kernel = init_param(n + ".aclip_kernel", {d, N, 1, 1}, rng, N);
        e.w_q = init_param(n + ".w_q", {3 * d, d}, rng, 3 * d);
        e.w_k = init_param(n + ".w_k", {3 * d, d}, rng, 3 * d);
        e.w_v = init_param(n + ".w_v", {d, d}, rng, d);
        e.ln1 = LayerNormParams(n + ".ln1", d);
        e.mlp = MlpParams(n + ".mlp", d, rng);
        e.ln2 = LayerNormParams(n + ".ln2", d);
        p.enhance.push_back(std::move(e));
    }
    for (std::size_t l = 0; l < config.n_s; ++l) {
        const std::size_t d = config.level_dim(l), h = d / 2;
        const std::string n = "sed.up" + std::to_string(l);
        UpsampleParams u;
        u.transconv = init_param(n + ".transconv", {d, h, 2, 2}, rng, d);
        u.fv_kernel = init_param(n + ".fv_kernel", {h, cv, 3, 3}, rng, cv * 9);
        u.skip_fuse = init_param(n + ".skip_fuse", {h, d + 1, 3, 3}, rng, (d + 1) * 9);
        p.upsample.push_back(std::move(u));
    }
    const std::size_t d_last = config.level_dim(config.n_s);
    p.head = init_param("head", {d_last, 1}, rng, d_last);
    return p;
}

std::vector<ParamTensor*> SEDParams::parameters() {
    std::vector<ParamTensor*> out;
    for (auto& e : enhance) {
        out.insert(out.end(), {&e.fv_kernel, &e.aclip_kernel, &e.w_q, &e.w_k, &e.w_v});
        e.ln1.collect(out);
        e.mlp.collect(out);
        e.ln2.collect(out);
    }
    for (auto& u : upsample) out.insert(out.end(), {&u.transconv, &u.fv_kernel, &u.skip_fuse});
    out.push_back(&head);
    return out;
}

WindowLayout window_layout(std::size_t h, std::size_t w, std::size_t window, bool shifted) {
    WindowLayout L;
    L.win_h = std::min(window, h);
    L.win_w = std::min(window, w);
    if (L.win_h == 0 || L.win_w == 0 || h % L.win_h != 0 || w % L.win_w != 0)
        throw ShapeError("spatial extent not divisible by the attention window", {h, w}, {window, window});
    // A window spanning a whole axis has nothing to exchange across that axis.
    if (shifted) {
        L.shift_h = L.win_h < h ? L.win_h / 2 : 0;
        L.shift_w = L.win_w < w ? L.win_w / 2 : 0;
    }
    const std::size_t nwh = h / L.win_h, nww = w / L.win_w, m = L.win_h * L.win_w;
    auto band = [](std::size_t pos, std::size_t extent, std::size_t win, std::size_t shift) -> std::size_t {
        if (shift == 0 || pos < extent - win) return 0;
        return pos < extent - shift ? 1 : 2;
    };
    L.order.resize(h * w);
    std::vector<std::size_t> label(h * w);
    for (std::size_t wy = 0; wy < nwh; ++wy)
        for (std::size_t wx = 0; wx < nww; ++wx)
            for (std::size_t iy = 0; iy < L.win_h; ++iy)
                for (std::size_t ix = 0; ix < L.win_w; ++ix) {
                    const std::size_t ry = wy * L.win_h + iy, rx = wx * L.win_w + ix;
                    const std::size_t slot = (wy * nww + wx) * m + iy * L.win_w + ix;
                    L.order[slot] = ((ry + L.shift_h) % h) * w + (rx + L.shift_w) % w;
                    label[slot] = band(ry, h, L.win_h, L.shift_h) * 3 + band(rx, w, L.win_w, L.shift_w);
                }
    if (L.shift_h || L.shift_w) {
        L.mask = Tensor({nwh * nww, m, m});
        for (std::size_t g = 0; g < nwh * nww; ++g)
            for (std::size_t a = 0; a < m; ++a)
                for (std::size_t b = 0; b < m; ++b)
                    if (label[g * m + a] != label[g * m + b]) L.mask[(g * m + a) * m + b] = -1e9;
    }
    return L;
}

namespace {

void check_level_inputs(const DecoderContext& ctx, std::size_t level) {
    if (!ctx.f_v || !ctx.a_clip) throw Error("decoder context is missing F_v or A_CLIP");
    if (ctx.f_v->size() <= level) throw ShapeError("F_v has too few levels", {ctx.f_v->size()}, {level + 1});
}

/// Broadcasts a channels-first [c x h x w] map to channels-last [C_s x h x w x c].
ag::Var to_class_layout(ag::Var map, std::size_t cs) { return broadcast_leading(ag::permute(map, {1, 2, 0}), cs); }

}  // namespace

ag::Var spatial_enhance(ag::Tape& t, ag::Var feat, std::size_t level, bool shifted, const DecoderContext& ctx, SEDParams& p) {
    check_level_inputs(ctx, level);
    const Shape dims = feat.dims();
    const std::size_t cs = dims[0], h = dims[1], w = dims[2], d = dims[3];
    if (d != p.config.level_dim(level)) throw ShapeError("spatial_enhance channels", dims, {p.config.level_dim(level)});
    auto& e = p.enhance.at(level);

    ag::Var fv = t.constant(Tensor({cs, h, w, d}));
    if (ctx.flags.fuse_fv) {
        const Tensor& src = (*ctx.f_v)[level];
        if (src.dim(1) != h || src.dim(2) != w) throw ShapeError("F_v level extent", src.dims(), {h, w});
        fv = to_class_layout(ag::conv2d(t.constant(src), t.param(e.fv_kernel), 1, 1), cs);
    }
    ag::Var ac = t.constant(Tensor({cs, h, w, d}));
    if (ctx.flags.fuse_aclip) {
        const Tensor& A = *ctx.a_clip;
        const std::size_t N = ctx.grid_h * ctx.grid_w;
        if (A.rank() != 2 || A.dim(0) != N || A.dim(1) != N) throw ShapeError("A_CLIP vs patch grid", A.dims(), {N, N});
        // Row i of A_CLIP becomes the channel vector at patch i.
        auto map = ag::conv2d(t.constant(transpose(A).reshaped({N, ctx.grid_h, ctx.grid_w})), t.param(e.aclip_kernel));
        if (ctx.grid_h != h || ctx.grid_w != w) map = ag::bilinear_resize(map, h, w);
        ac = to_class_layout(map, cs);
    }
    auto fm = ag::concat({feat, fv, ac}, 3);
    auto q = ag::matmul(fm, t.param(e.w_q));
    auto k = ag::matmul(fm, t.param(e.w_k));
    auto v = ag::matmul(feat, t.param(e.w_v));

    const auto L = window_layout(h, w, p.config.window, shifted);
    const std::size_t hw = h * w, m = L.win_h * L.win_w, nw = hw / m;
    std::vector<std::size_t> fwd(cs * hw), inv(cs * hw);
    for (std::size_t c = 0; c < cs; ++c)
        for (std::size_t r = 0; r < hw; ++r) {
            fwd[c * hw + r] = c * hw + L.order[r];
            inv[c * hw + L.order[r]] = c * hw + r;
        }
    const Shape win{cs * nw, m, d};
    auto z = ag::attention(ag::gather_rows(q, fwd, win), ag::gather_rows(k, fwd, win), ag::gather_rows(v, fwd, win), p.config.heads,
                           L.mask.size() ? &L.mask : nullptr);
    z = ag::gather_rows(z, inv, dims);
    return residual_block(t, z, feat, e.ln1, e.mlp, e.ln2);
}

ag::Var upsample_fuse(ag::Tape& t, ag::Var feat, ag::Var raw, std::size_t level, const DecoderContext& ctx, SEDParams& p) {
    check_level_inputs(ctx, level);
    if (level >= p.config.n_s) throw DomainError("upsample_fuse past the last level");
    const Shape dims = feat.dims();
    const std::size_t cs = dims[0], h = dims[1], w = dims[2], d = dims[3], half = d / 2;
    auto& u = p.upsample.at(level);
    auto fh = ag::transposed_conv2d(ag::permute(feat, {0, 3, 1, 2}), t.param(u.transconv));
    auto cost = ag::reshape(ag::bilinear_resize(raw, 2 * h, 2 * w), {cs, 1, 2 * h, 2 * w});
    ag::Var fv = t.constant(Tensor({cs, half, 2 * h, 2 * w}));
    if (ctx.flags.fuse_fv) {
        const Tensor& src = (*ctx.f_v)[level];
        if (src.dim(1) != h || src.dim(2) != w) throw ShapeError("F_v level extent", src.dims(), {h, w});
        auto map = ag::bilinear_resize(ag::conv2d(t.constant(src), t.param(u.fv_kernel), 1, 1), 2 * h, 2 * w);
        fv = broadcast_leading(map, cs);
    }
    auto fused = ag::gelu(ag::conv2d(ag::concat({fh, cost, fv}, 1), t.param(u.skip_fuse), 1, 1));
    return ag::permute(fused, {0, 2, 3, 1});
}

ag::Var decode(ag::Tape& t, ag::Var f_cv_ref, ag::Var raw, const DecoderContext& ctx, SEDParams& p) {
    const Shape in = f_cv_ref.dims();
    if (in.size() != 4 || in[1] != ctx.grid_h || in[2] != ctx.grid_w || in[3] != p.config.dim_c)
        throw ShapeError("decode input", in, {ctx.grid_h, ctx.grid_w, p.config.dim_c});
    auto f = f_cv_ref;
    std::size_t uses = 0;
    for (std::size_t l = 0; l < p.config.n_s; ++l) {
        if (ctx.flags.spatial_enhance) f = spatial_enhance(t, f, l, uses++ % 2 == 1, ctx, p);
        f = upsample_fuse(t, f, raw, l, ctx, p);
    }
    if (ctx.flags.spatial_enhance) f = spatial_enhance(t, f, p.config.n_s, uses % 2 == 1, ctx, p);
    const Shape out = f.dims();
    return ag::reshape(f, {out[0], out[1] * out[2], out[3]});
}

ag::Var predict_logits(ag::Tape& t, ag::Var f_last, std::size_t h, std::size_t w, std::size_t out_h, std::size_t out_w,
                       ParamTensor& head) {
    const std::size_t cs = f_last.dims()[0];
    if (f_last.dims()[1] != h * w) throw ShapeError("predict_logits grid", f_last.dims(), {h, w});
    auto logits = ag::reshape(ag::matmul(f_last, t.param(head)), {cs, h, w});
    if (h != out_h || w != out_w) logits = ag::bilinear_resize(logits, out_h, out_w);
    return logits;
}

Tensor decode(const Tensor& f_cv_ref, const Tensor& raw, const VisualFeatures& vis, SEDParams& p, SEDFlags flags) {
    ag::Tape t(false);
    DecoderContext ctx{&vis.f_v, &vis.a_clip, vis.grid_h, vis.grid_w, flags};
    return decode(t, t.constant(f_cv_ref), t.constant(raw), ctx, p).value();
}

}  // namespace dcp
