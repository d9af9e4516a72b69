#include "fedmeta/network.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include <Eigen/Core>

#include "fedmeta/rng.hpp"

namespace fedmeta {

void NetworkSpec::validate() const {
    require(height > 0 && width > 0 && channels > 0, ErrorKind::InvalidArgument,
            "network input dimensions must be positive");
    require(modules > 0 && filters > 0, ErrorKind::InvalidArgument,
            "network needs at least one module with at least one filter");
    require(kernel % 2 == 1, ErrorKind::InvalidArgument, "kernel size must be odd for same padding");
    require(pool >= 1, ErrorKind::InvalidArgument, "pool size must be positive");
    require(head == HeadKind::Embedding || num_classes >= 2, ErrorKind::InvalidArgument,
            "classifier head needs at least two classes");
    std::size_t h = height, w = width;
    for (std::size_t m = 0; m < modules; ++m) {
        h /= pool;
        w /= pool;
        require(h >= 1 && w >= 1, ErrorKind::InvalidArgument,
                "input " + std::to_string(height) + "x" + std::to_string(width) + " pools below 1x1 after module " +
                    std::to_string(m + 1));
    }
}

std::size_t NetworkSpec::final_height() const {
    std::size_t h = height;
    for (std::size_t m = 0; m < modules; ++m) h /= pool;
    return h;
}

std::size_t NetworkSpec::final_width() const {
    std::size_t w = width;
    for (std::size_t m = 0; m < modules; ++m) w /= pool;
    return w;
}

Layout NetworkSpec::layout() const {
    std::vector<Segment> segs;
    std::size_t in_c = channels;
    for (std::size_t m = 0; m < modules; ++m) {
        const std::string idx = std::to_string(m);
        segs.push_back({"conv" + idx + ".weight", {filters, in_c, kernel, kernel}});
        segs.push_back({"conv" + idx + ".bias", {filters}});
        segs.push_back({"bn" + idx + ".gamma", {filters}});
        segs.push_back({"bn" + idx + ".beta", {filters}});
        in_c = filters;
    }
    if (head == HeadKind::Classifier) {
        segs.push_back({"fc.weight", {num_classes, embedding_dim()}});
        segs.push_back({"fc.bias", {num_classes}});
    }
    return Layout(std::move(segs));
}

LayoutPtr NetworkSpec::make_layout() const { return std::make_shared<Layout>(layout()); }

NetworkSpec NetworkSpec::as_embedding() const {
    NetworkSpec out = *this;
    out.head = HeadKind::Embedding;
    return out;
}

namespace {

// Offsets of one module's segments inside the flat parameter array.
struct ModuleOffsets {
    std::size_t weight, bias, gamma, beta;
};

std::vector<ModuleOffsets> module_offsets(const NetworkSpec& spec, std::size_t* fc_offset,
                                          std::size_t* total) {
    std::vector<ModuleOffsets> out;
    std::size_t off = 0;
    std::size_t in_c = spec.channels;
    const std::size_t kk = spec.kernel * spec.kernel;
    for (std::size_t m = 0; m < spec.modules; ++m) {
        ModuleOffsets mo{};
        mo.weight = off;
        off += spec.filters * in_c * kk;
        mo.bias = off;
        off += spec.filters;
        mo.gamma = off;
        off += spec.filters;
        mo.beta = off;
        off += spec.filters;
        out.push_back(mo);
        in_c = spec.filters;
    }
    if (fc_offset) *fc_offset = off;
    if (spec.head == HeadKind::Classifier) {
        off += spec.num_classes * spec.embedding_dim() + spec.num_classes;
    }
    if (total) *total = off;
    return out;
}

template <class T>
void check_params(const BasicParamVector<T>& params, const NetworkSpec& spec, std::size_t expected) {
    const std::size_t expected_segments = spec.modules * 4 + (spec.head == HeadKind::Classifier ? 2 : 0);
    require(params.size() == expected && params.layout().segments().size() == expected_segments,
            ErrorKind::LayoutMismatch,
            "parameter vector of size " + std::to_string(params.size()) +
                " does not match network layout of size " + std::to_string(expected));
}

// cols[k][p] for one image: k = (c, ky, kx), p = (y, x). Zero padding.
template <class T>
void im2col(const T* image, std::size_t c, std::size_t h, std::size_t w, std::size_t ksize, T* cols) {
    const std::ptrdiff_t pad = static_cast<std::ptrdiff_t>(ksize / 2);
    const std::size_t hw = h * w;
    std::size_t row = 0;
    for (std::size_t ch = 0; ch < c; ++ch) {
        const T* plane = image + ch * hw;
        for (std::size_t ky = 0; ky < ksize; ++ky) {
            for (std::size_t kx = 0; kx < ksize; ++kx, ++row) {
                T* dst = cols + row * hw;
                const std::ptrdiff_t dy = static_cast<std::ptrdiff_t>(ky) - pad;
                const std::ptrdiff_t dx = static_cast<std::ptrdiff_t>(kx) - pad;
                for (std::size_t y = 0; y < h; ++y) {
                    const std::ptrdiff_t sy = static_cast<std::ptrdiff_t>(y) + dy;
                    T* out = dst + y * w;
                    if (sy < 0 || sy >= static_cast<std::ptrdiff_t>(h)) {
                        std::fill(out, out + w, T{0});
                        continue;
                    }
                    const T* src = plane + sy * static_cast<std::ptrdiff_t>(w);
                    for (std::size_t x = 0; x < w; ++x) {
                        const std::ptrdiff_t sx = static_cast<std::ptrdiff_t>(x) + dx;
                        out[x] = (sx < 0 || sx >= static_cast<std::ptrdiff_t>(w)) ? T{0} : src[sx];
                    }
                }
            }
        }
    }
}

template <class T>
void col2im_add(const T* cols, std::size_t c, std::size_t h, std::size_t w, std::size_t ksize, T* image) {
    const std::ptrdiff_t pad = static_cast<std::ptrdiff_t>(ksize / 2);
    const std::size_t hw = h * w;
    std::size_t row = 0;
    for (std::size_t ch = 0; ch < c; ++ch) {
        T* plane = image + ch * hw;
        for (std::size_t ky = 0; ky < ksize; ++ky) {
            for (std::size_t kx = 0; kx < ksize; ++kx, ++row) {
                const T* src = cols + row * hw;
                const std::ptrdiff_t dy = static_cast<std::ptrdiff_t>(ky) - pad;
                const std::ptrdiff_t dx = static_cast<std::ptrdiff_t>(kx) - pad;
                for (std::size_t y = 0; y < h; ++y) {
                    const std::ptrdiff_t sy = static_cast<std::ptrdiff_t>(y) + dy;
                    if (sy < 0 || sy >= static_cast<std::ptrdiff_t>(h)) continue;
                    T* dst = plane + sy * static_cast<std::ptrdiff_t>(w);
                    const T* in = src + y * w;
                    for (std::size_t x = 0; x < w; ++x) {
                        const std::ptrdiff_t sx = static_cast<std::ptrdiff_t>(x) + dx;
                        if (sx >= 0 && sx < static_cast<std::ptrdiff_t>(w)) dst[sx] += in[x];
                    }
                }
            }
        }
    }
}

template <class T>
T dot(const T* a, const T* b, std::size_t n) {
    T s0{0}, s1{0}, s2{0}, s3{0};
    std::size_t i = 0;
    for (; i + 4 <= n; i += 4) {
        s0 += a[i] * b[i];
        s1 += a[i + 1] * b[i + 1];
        s2 += a[i + 2] * b[i + 2];
        s3 += a[i + 3] * b[i + 3];
    }
    for (; i < n; ++i) s0 += a[i] * b[i];
    return (s0 + s1) + (s2 + s3);
}

template <class T>
using RowMatrix = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <class T>
using MatrixMap = Eigen::Map<RowMatrix<T>>;
template <class T>
using ConstMatrixMap = Eigen::Map<const RowMatrix<T>>;
template <class T>
using ConstVectorMap = Eigen::Map<const Eigen::Matrix<T, Eigen::Dynamic, 1>>;

}  // namespace

template <class T>
ForwardResult<T> forward(const BasicParamVector<T>& params, const NetworkSpec& spec, const Tensor<T>& batch,
                         Mode mode, const NormStats* eval_stats) {
    spec.validate();
    std::size_t fc_off = 0, total = 0;
    const auto offsets = module_offsets(spec, &fc_off, &total);
    check_params(params, spec, total);
    require(batch.rank() == 4 && batch.dim(1) == spec.channels && batch.dim(2) == spec.height &&
                batch.dim(3) == spec.width && batch.dim(0) > 0,
            ErrorKind::ShapeMismatch,
            "batch shape " + shape_string(batch.shape) + " does not match network input (n," +
                std::to_string(spec.channels) + "," + std::to_string(spec.height) + "," +
                std::to_string(spec.width) + ")");
    for (T v : batch.data) {
        require(std::isfinite(v), ErrorKind::NonFinite, "network input contains non-finite values");
    }
    if (mode == Mode::Eval) {
        require(eval_stats != nullptr && eval_stats->mean.size() == spec.modules &&
                    eval_stats->var.size() == spec.modules,
                ErrorKind::InvalidArgument, "eval mode requires normalization statistics for every module");
    }

    const std::size_t n = batch.dim(0);
    const std::size_t kk = spec.kernel * spec.kernel;
    const std::size_t F = spec.filters;
    const auto p = params.values();

    ForwardResult<T> result;
    auto& cache = result.cache;
    cache.mode = mode;
    cache.batch = n;
    cache.param_count = total;
    cache.modules.resize(spec.modules);

    std::vector<T> current = batch.data;
    std::size_t c = spec.channels, h = spec.height, w = spec.width;

    for (std::size_t m = 0; m < spec.modules; ++m) {
        auto& mc = cache.modules[m];
        const auto& off = offsets[m];
        const std::size_t hw = h * w;
        const std::size_t ck = c * kk;
        mc.in_channels = c;
        mc.in_h = h;
        mc.in_w = w;
        mc.out_h = h / spec.pool;
        mc.out_w = w / spec.pool;

        mc.cols.resize(n * ck * hw);
        std::vector<T> z(n * F * hw);
        const ConstMatrixMap<T> weight(p.data() + off.weight, F, ck);
        const ConstVectorMap<T> bias(p.data() + off.bias, F);
        for (std::size_t i = 0; i < n; ++i) {
            T* cols = mc.cols.data() + i * ck * hw;
            im2col(current.data() + i * c * hw, c, h, w, spec.kernel, cols);
            MatrixMap<T> out(z.data() + i * F * hw, F, hw);
            out.noalias() = weight * ConstMatrixMap<T>(cols, ck, hw);
            out.colwise() += bias;
        }

        // Batch normalization.
        std::vector<double> mean(F), var(F);
        if (mode == Mode::Train) {
            const double count = static_cast<double>(n * hw);
            for (std::size_t f = 0; f < F; ++f) {
                double s = 0.0;
                for (std::size_t i = 0; i < n; ++i) {
                    const T* zp = z.data() + (i * F + f) * hw;
                    for (std::size_t q = 0; q < hw; ++q) s += zp[q];
                }
                const double mu = s / count;
                double ss = 0.0;
                for (std::size_t i = 0; i < n; ++i) {
                    const T* zp = z.data() + (i * F + f) * hw;
                    for (std::size_t q = 0; q < hw; ++q) {
                        const double d = zp[q] - mu;
                        ss += d * d;
                    }
                }
                mean[f] = mu;
                var[f] = ss / count;
            }
        } else {
            require(eval_stats->mean[m].size() == F && eval_stats->var[m].size() == F,
                    ErrorKind::InvalidArgument, "normalization statistics have the wrong channel count");
            mean = eval_stats->mean[m];
            var = eval_stats->var[m];
        }
        mc.inv_std.resize(F);
        for (std::size_t f = 0; f < F; ++f) mc.inv_std[f] = 1.0 / std::sqrt(var[f] + spec.bn_epsilon);
        result.stats.mean.push_back(mean);
        result.stats.var.push_back(var);

        mc.xhat.resize(n * F * hw);
        mc.active.resize(n * F * hw);
        const T* gamma = p.data() + off.gamma;
        const T* beta = p.data() + off.beta;
        std::vector<T> act(n * F * hw);
        for (std::size_t i = 0; i < n; ++i) {
            for (std::size_t f = 0; f < F; ++f) {
                const std::size_t base = (i * F + f) * hw;
                const T mu = static_cast<T>(mean[f]);
                const T is = static_cast<T>(mc.inv_std[f]);
                for (std::size_t q = 0; q < hw; ++q) {
                    const T xh = (z[base + q] - mu) * is;
                    mc.xhat[base + q] = xh;
                    const T y = gamma[f] * xh + beta[f];
                    const bool on = y > T{0};
                    mc.active[base + q] = on;
                    act[base + q] = on ? y : T{0};
                }
            }
        }

        // Max pooling; ties resolve to the first position in scan order.
        const std::size_t oh = mc.out_h, ow = mc.out_w, ohw = oh * ow;
        std::vector<T> pooled(n * F * ohw);
        mc.argmax.resize(n * F * ohw);
        for (std::size_t i = 0; i < n; ++i) {
            for (std::size_t f = 0; f < F; ++f) {
                const T* plane = act.data() + (i * F + f) * hw;
                for (std::size_t oy = 0; oy < oh; ++oy) {
                    for (std::size_t ox = 0; ox < ow; ++ox) {
                        std::uint32_t best = static_cast<std::uint32_t>(oy * spec.pool * w + ox * spec.pool);
                        T best_v = plane[best];
                        for (std::size_t py = 0; py < spec.pool; ++py) {
                            for (std::size_t px = 0; px < spec.pool; ++px) {
                                const auto idx =
                                    static_cast<std::uint32_t>((oy * spec.pool + py) * w + ox * spec.pool + px);
                                if (plane[idx] > best_v) {
                                    best_v = plane[idx];
                                    best = idx;
                                }
                            }
                        }
                        const std::size_t o = (i * F + f) * ohw + oy * ow + ox;
                        pooled[o] = best_v;
                        mc.argmax[o] = best;
                    }
                }
            }
        }
        current = std::move(pooled);
        c = F;
        h = oh;
        w = ow;
    }

    const std::size_t dim = c * h * w;
    cache.features = Tensor<T>({n, dim}, std::move(current));

    if (spec.head == HeadKind::Classifier) {
        const std::size_t N = spec.num_classes;
        const T* fw = p.data() + fc_off;
        const T* fb = fw + N * dim;
        result.output = Tensor<T>({n, N});
        for (std::size_t i = 0; i < n; ++i) {
            const T* feat = cache.features.data.data() + i * dim;
            for (std::size_t j = 0; j < N; ++j) {
                result.output.data[i * N + j] = fb[j] + dot(fw + j * dim, feat, dim);
            }
        }
    } else {
        result.output = cache.features;
    }
    return result;
}

template <class T>
BasicParamVector<T> backward(const BasicParamVector<T>& params, const NetworkSpec& spec,
                             const ForwardCache<T>& cache, const Tensor<T>& upstream) {
    std::size_t fc_off = 0, total = 0;
    const auto offsets = module_offsets(spec, &fc_off, &total);
    check_params(params, spec, total);
    require(cache.param_count == total && cache.modules.size() == spec.modules, ErrorKind::LayoutMismatch,
            "forward cache was produced for a different network layout");
    const std::size_t n = cache.batch;
    const std::size_t dim = cache.features.dim(1);
    require(upstream.rank() == 2 && upstream.dim(0) == n && upstream.dim(1) == spec.output_dim(),
            ErrorKind::ShapeMismatch, "upstream gradient shape " + shape_string(upstream.shape) + " does not match output");

    BasicParamVector<T> grads(params.layout_ptr());
    auto g = grads.values();
    const auto p = params.values();
    const std::size_t kk = spec.kernel * spec.kernel;
    const std::size_t F = spec.filters;

    std::vector<T> dfeat(n * dim, T{0});
    if (spec.head == HeadKind::Classifier) {
        const std::size_t N = spec.num_classes;
        const T* fw = p.data() + fc_off;
        T* gw = g.data() + fc_off;
        T* gb = gw + N * dim;
        for (std::size_t i = 0; i < n; ++i) {
            const T* feat = cache.features.data.data() + i * dim;
            for (std::size_t j = 0; j < N; ++j) {
                const T u = upstream.data[i * N + j];
                if (u == T{0}) continue;
                gb[j] += u;
                T* gwr = gw + j * dim;
                const T* fwr = fw + j * dim;
                T* df = dfeat.data() + i * dim;
                for (std::size_t d = 0; d < dim; ++d) {
                    gwr[d] += u * feat[d];
                    df[d] += u * fwr[d];
                }
            }
        }
    } else {
        std::copy(upstream.data.begin(), upstream.data.end(), dfeat.begin());
    }

    std::vector<T> dpooled = std::move(dfeat);
    for (std::size_t mi = spec.modules; mi-- > 0;) {
        const auto& mc = cache.modules[mi];
        const auto& off = offsets[mi];
        const std::size_t hw = mc.in_h * mc.in_w;
        const std::size_t ohw = mc.out_h * mc.out_w;
        const std::size_t c = mc.in_channels;
        const std::size_t ck = c * kk;

        // Unpool and ReLU mask.
        std::vector<T> dy(n * F * hw, T{0});
        for (std::size_t i = 0; i < n; ++i) {
            for (std::size_t f = 0; f < F; ++f) {
                const std::size_t pbase = (i * F + f) * ohw;
                const std::size_t base = (i * F + f) * hw;
                for (std::size_t o = 0; o < ohw; ++o) {
                    const std::size_t idx = base + mc.argmax[pbase + o];
                    if (mc.active[idx]) dy[idx] += dpooled[pbase + o];
                }
            }
        }

        // Batch norm.
        const T* gamma = p.data() + off.gamma;
        T* ggamma = g.data() + off.gamma;
        T* gbeta = g.data() + off.beta;
        std::vector<T> dz(n * F * hw);
        const double count = static_cast<double>(n * hw);
        for (std::size_t f = 0; f < F; ++f) {
            double sum_dy = 0.0, sum_dy_xhat = 0.0;
            for (std::size_t i = 0; i < n; ++i) {
                const std::size_t base = (i * F + f) * hw;
                for (std::size_t q = 0; q < hw; ++q) {
                    sum_dy += dy[base + q];
                    sum_dy_xhat += static_cast<double>(dy[base + q]) * mc.xhat[base + q];
                }
            }
            ggamma[f] += static_cast<T>(sum_dy_xhat);
            gbeta[f] += static_cast<T>(sum_dy);
            const double gf = gamma[f];
            const double is = mc.inv_std[f];
            for (std::size_t i = 0; i < n; ++i) {
                const std::size_t base = (i * F + f) * hw;
                for (std::size_t q = 0; q < hw; ++q) {
                    const double dxhat = gf * dy[base + q];
                    double v;
                    if (cache.mode == Mode::Train) {
                        v = is * (dxhat - gf * (sum_dy + mc.xhat[base + q] * sum_dy_xhat) / count);
                    } else {
                        v = is * dxhat;
                    }
                    dz[base + q] = static_cast<T>(v);
                }
            }
        }

        // Convolution.
        const ConstMatrixMap<T> weight(p.data() + off.weight, F, ck);
        MatrixMap<T> gweight(g.data() + off.weight, F, ck);
        T* gbias = g.data() + off.bias;
        const bool need_input_grad = mi > 0;
        std::vector<T> dinput(need_input_grad ? n * c * hw : 0, T{0});
        std::vector<T> dcols(need_input_grad ? ck * hw : 0);
        for (std::size_t i = 0; i < n; ++i) {
            const ConstMatrixMap<T> cols(mc.cols.data() + i * ck * hw, ck, hw);
            const ConstMatrixMap<T> dzi(dz.data() + i * F * hw, F, hw);
            for (std::size_t f = 0; f < F; ++f) gbias[f] += dzi.row(static_cast<Eigen::Index>(f)).sum();
            gweight.noalias() += dzi * cols.transpose();
            if (need_input_grad) {
                MatrixMap<T>(dcols.data(), ck, hw).noalias() = weight.transpose() * dzi;
                col2im_add(dcols.data(), c, mc.in_h, mc.in_w, spec.kernel, dinput.data() + i * c * hw);
            }
        }
        dpooled = std::move(dinput);
    }
    return grads;
}

double glorot_bound(const NetworkSpec& spec, const Segment& segment) {
    const auto& name = segment.name;
    if (name.ends_with(".weight")) {
        if (name.starts_with("conv")) {
            const double kk = static_cast<double>(spec.kernel * spec.kernel);
            const double fan_in = static_cast<double>(segment.shape[1]) * kk;
            const double fan_out = static_cast<double>(segment.shape[0]) * kk;
            return std::sqrt(6.0 / (fan_in + fan_out));
        }
        const double fan_in = static_cast<double>(segment.shape[1]);
        const double fan_out = static_cast<double>(segment.shape[0]);
        return std::sqrt(6.0 / (fan_in + fan_out));
    }
    return 0.0;
}

ParamVector glorot_init(const NetworkSpec& spec, std::uint64_t seed) {
    spec.validate();
    ParamVector params(spec.make_layout());
    Rng rng(seed);
    const auto& segs = params.layout().segments();
    for (std::size_t s = 0; s < segs.size(); ++s) {
        auto values = params.segment(s);
        const double bound = glorot_bound(spec, segs[s]);
        if (bound > 0.0) {
            for (auto& v : values) v = static_cast<float>(rng.uniform(-bound, bound));
        } else if (segs[s].name.ends_with(".gamma")) {
            std::fill(values.begin(), values.end(), 1.0f);
        } else {
            std::fill(values.begin(), values.end(), 0.0f);
        }
    }
    return params;
}

template ForwardResult<float> forward(const BasicParamVector<float>&, const NetworkSpec&, const Tensor<float>&,
                                      Mode, const NormStats*);
template ForwardResult<double> forward(const BasicParamVector<double>&, const NetworkSpec&, const Tensor<double>&,
                                       Mode, const NormStats*);
template BasicParamVector<float> backward(const BasicParamVector<float>&, const NetworkSpec&,
                                          const ForwardCache<float>&, const Tensor<float>&);
template BasicParamVector<double> backward(const BasicParamVector<double>&, const NetworkSpec&,
                                           const ForwardCache<double>&, const Tensor<double>&);

}  // namespace fedmeta
