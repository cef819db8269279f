#include "metanerv/tensor.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstring>
#include <unordered_set>

namespace metanerv {

namespace {

std::atomic<uint64_t> g_tape_epoch{0};

void require_positive_dims(const std::vector<int>& shape) {
    if (shape.empty()) throw InvalidShape("tensor shape must have at least one dimension");
    for (int d : shape) {
        if (d <= 0) throw InvalidShape("tensor dimensions must be positive");
    }
}

} // namespace

int64_t shape_numel(const std::vector<int>& shape) {
    int64_t n = 1;
    for (int d : shape) n *= d;
    return n;
}

void check_finite(const std::vector<double>& v, const char* what) {
    for (double x : v) {
        if (!std::isfinite(x)) {
            throw NonFiniteValue(std::string("non-finite value in ") + (what ? what : "tensor"));
        }
    }
}

// -- Tensor ------------------------------------------------------------------

Tensor Tensor::zeros(std::vector<int> shape, bool requires_grad) {
    require_positive_dims(shape);
    auto d = std::make_shared<TensorData>();
    d->data.assign(static_cast<size_t>(shape_numel(shape)), 0.0);
    d->shape = std::move(shape);
    d->requires_grad = requires_grad;
    return Tensor(std::move(d));
}

Tensor Tensor::full(std::vector<int> shape, double value, bool requires_grad) {
    Tensor t = zeros(std::move(shape), requires_grad);
    std::fill(t.data().begin(), t.data().end(), value);
    return t;
}

Tensor Tensor::from_data(std::vector<int> shape, std::vector<double> data, bool requires_grad) {
    require_positive_dims(shape);
    if (shape_numel(shape) != static_cast<int64_t>(data.size())) {
        throw ShapeMismatch("data length does not match shape");
    }
    auto d = std::make_shared<TensorData>();
    d->shape = std::move(shape);
    d->data = std::move(data);
    d->requires_grad = requires_grad;
    return Tensor(std::move(d));
}

Tensor Tensor::scalar(double value, bool requires_grad) {
    return from_data({1}, {value}, requires_grad);
}

Tensor Tensor::uniform(std::vector<int> shape, Rng& rng, double lo, double hi,
                       bool requires_grad) {
    Tensor t = zeros(std::move(shape), requires_grad);
    for (double& x : t.data()) x = rng.uniform(lo, hi);
    return t;
}

std::vector<double>& Tensor::grad() {
    if (d_->grad.size() != d_->data.size()) d_->grad.assign(d_->data.size(), 0.0);
    return d_->grad;
}

const std::vector<double>& Tensor::grad() const {
    if (d_->grad.size() != d_->data.size()) {
        throw DomainError("gradient not materialized; run backward first");
    }
    return d_->grad;
}

void Tensor::zero_grad() {
    if (!d_->grad.empty()) std::fill(d_->grad.begin(), d_->grad.end(), 0.0);
}

double Tensor::item() const {
    if (d_->data.size() != 1) throw NotScalar("item() requires a one-element tensor");
    return d_->data[0];
}

Tensor Tensor::clone() const {
    auto d = std::make_shared<TensorData>();
    d->shape = d_->shape;
    d->data = d_->data;
    d->requires_grad = d_->requires_grad;
    return Tensor(std::move(d));
}

// -- Tape --------------------------------------------------------------------

Tape::Tape() : epoch_(++g_tape_epoch) {}

bool Tape::tracked(const Tensor& t) const {
    const auto& d = *t.impl();
    return d.requires_grad || (d.tape_epoch == epoch_ && d.node_id >= 0);
}

void Tape::record(Tensor& out, std::initializer_list<Tensor> ins, std::function<void()> fn) {
    auto od = out.impl();
    od->tape_epoch = epoch_;
    od->node_id = next_id_++;
    Node n;
    n.out_id = od->node_id;
    n.out = od;
    for (const Tensor& t : ins) {
        n.ins.push_back(t.impl());
        n.in_ids.push_back(t.impl()->node_id);
    }
    n.backprop = std::move(fn);
    nodes_.push_back(std::move(n));
}

Tensor Tape::matmul(const Tensor& a, const Tensor& b) {
    const auto& sa = a.shape();
    const auto& sb = b.shape();
    if (sa.size() != 2 || sb.size() != 2) throw ShapeMismatch("matmul expects rank-2 tensors");
    if (sa[1] != sb[0]) throw ShapeMismatch("matmul inner dimensions differ");
    const int m = sa[0], k = sa[1], n = sb[1];
    Tensor out = Tensor::zeros({m, n});
    {
        const double* pa = a.data().data();
        const double* pb = b.data().data();
        double* po = out.data().data();
        for (int i = 0; i < m; ++i) {
            for (int t = 0; t < k; ++t) {
                const double av = pa[i * k + t];
                const double* brow = pb + static_cast<size_t>(t) * n;
                double* orow = po + static_cast<size_t>(i) * n;
                for (int j = 0; j < n; ++j) orow[j] += av * brow[j];
            }
        }
    }
    check_finite(out.data(), "matmul");
    if (tracked(a) || tracked(b)) {
        auto ad = a.impl(), bd = b.impl(), od = out.impl();
        record(out, {a, b}, [ad, bd, od, m, k, n] {
            const double* g = od->grad.data();
            // d a = g . b^T
            {
                double* ga = ad->grad.data();
                const double* pb = bd->data.data();
                for (int i = 0; i < m; ++i) {
                    for (int t = 0; t < k; ++t) {
                        const double* grow = g + static_cast<size_t>(i) * n;
                        const double* brow = pb + static_cast<size_t>(t) * n;
                        double acc = 0.0;
                        for (int j = 0; j < n; ++j) acc += grow[j] * brow[j];
                        ga[i * k + t] += acc;
                    }
                }
            }
            // d b = a^T . g
            {
                double* gb = bd->grad.data();
                const double* pa = ad->data.data();
                for (int t = 0; t < k; ++t) {
                    for (int i = 0; i < m; ++i) {
                        const double av = pa[i * k + t];
                        const double* grow = g + static_cast<size_t>(i) * n;
                        double* brow = gb + static_cast<size_t>(t) * n;
                        for (int j = 0; j < n; ++j) brow[j] += av * grow[j];
                    }
                }
            }
        });
    }
    return out;
}

namespace {

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
    if (a.shape() != b.shape()) throw ShapeMismatch(std::string(op) + ": shapes differ");
}

} // namespace

Tensor Tape::add(const Tensor& a, const Tensor& b) {
    require_same_shape(a, b, "add");
    Tensor out = Tensor::zeros(a.shape());
    const size_t n = a.data().size();
    for (size_t i = 0; i < n; ++i) out.data()[i] = a.data()[i] + b.data()[i];
    check_finite(out.data(), "add");
    if (tracked(a) || tracked(b)) {
        auto ad = a.impl(), bd = b.impl(), od = out.impl();
        record(out, {a, b}, [ad, bd, od, n] {
            for (size_t i = 0; i < n; ++i) {
                ad->grad[i] += od->grad[i];
                bd->grad[i] += od->grad[i];
            }
        });
    }
    return out;
}

Tensor Tape::sub(const Tensor& a, const Tensor& b) {
    require_same_shape(a, b, "sub");
    Tensor out = Tensor::zeros(a.shape());
    const size_t n = a.data().size();
    for (size_t i = 0; i < n; ++i) out.data()[i] = a.data()[i] - b.data()[i];
    check_finite(out.data(), "sub");
    if (tracked(a) || tracked(b)) {
        auto ad = a.impl(), bd = b.impl(), od = out.impl();
        record(out, {a, b}, [ad, bd, od, n] {
            for (size_t i = 0; i < n; ++i) {
                ad->grad[i] += od->grad[i];
                bd->grad[i] -= od->grad[i];
            }
        });
    }
    return out;
}

Tensor Tape::mul(const Tensor& a, const Tensor& b) {
    require_same_shape(a, b, "mul");
    Tensor out = Tensor::zeros(a.shape());
    const size_t n = a.data().size();
    for (size_t i = 0; i < n; ++i) out.data()[i] = a.data()[i] * b.data()[i];
    check_finite(out.data(), "mul");
    if (tracked(a) || tracked(b)) {
        auto ad = a.impl(), bd = b.impl(), od = out.impl();
        record(out, {a, b}, [ad, bd, od, n] {
            for (size_t i = 0; i < n; ++i) {
                ad->grad[i] += od->grad[i] * bd->data[i];
                bd->grad[i] += od->grad[i] * ad->data[i];
            }
        });
    }
    return out;
}

Tensor Tape::div(const Tensor& a, const Tensor& b) {
    require_same_shape(a, b, "div");
    Tensor out = Tensor::zeros(a.shape());
    const size_t n = a.data().size();
    for (size_t i = 0; i < n; ++i) out.data()[i] = a.data()[i] / b.data()[i];
    check_finite(out.data(), "div");
    if (tracked(a) || tracked(b)) {
        auto ad = a.impl(), bd = b.impl(), od = out.impl();
        record(out, {a, b}, [ad, bd, od, n] {
            for (size_t i = 0; i < n; ++i) {
                const double inv = 1.0 / bd->data[i];
                ad->grad[i] += od->grad[i] * inv;
                bd->grad[i] -= od->grad[i] * ad->data[i] * inv * inv;
            }
        });
    }
    return out;
}

Tensor Tape::scale(const Tensor& a, double s) {
    Tensor out = Tensor::zeros(a.shape());
    const size_t n = a.data().size();
    for (size_t i = 0; i < n; ++i) out.data()[i] = a.data()[i] * s;
    check_finite(out.data(), "scale");
    if (tracked(a)) {
        auto ad = a.impl(), od = out.impl();
        record(out, {a}, [ad, od, n, s] {
            for (size_t i = 0; i < n; ++i) ad->grad[i] += od->grad[i] * s;
        });
    }
    return out;
}

Tensor Tape::offset(const Tensor& a, double c) {
    Tensor out = Tensor::zeros(a.shape());
    const size_t n = a.data().size();
    for (size_t i = 0; i < n; ++i) out.data()[i] = a.data()[i] + c;
    check_finite(out.data(), "offset");
    if (tracked(a)) {
        auto ad = a.impl(), od = out.impl();
        record(out, {a}, [ad, od, n] {
            for (size_t i = 0; i < n; ++i) ad->grad[i] += od->grad[i];
        });
    }
    return out;
}

Tensor Tape::abs(const Tensor& a) {
    Tensor out = Tensor::zeros(a.shape());
    const size_t n = a.data().size();
    for (size_t i = 0; i < n; ++i) out.data()[i] = std::fabs(a.data()[i]);
    check_finite(out.data(), "abs");
    if (tracked(a)) {
        auto ad = a.impl(), od = out.impl();
        record(out, {a}, [ad, od, n] {
            for (size_t i = 0; i < n; ++i) {
                const double x = ad->data[i];
                const double s = (x > 0.0) ? 1.0 : (x < 0.0 ? -1.0 : 0.0);
                ad->grad[i] += od->grad[i] * s;
            }
        });
    }
    return out;
}

namespace {

constexpr double kGeluC0 = 0.7978845608; // sqrt(2/pi)
constexpr double kGeluC1 = 0.044715;

} // namespace

Tensor Tape::gelu(const Tensor& a) {
    Tensor out = Tensor::zeros(a.shape());
    const size_t n = a.data().size();
    for (size_t i = 0; i < n; ++i) {
        const double x = a.data()[i];
        const double u = kGeluC0 * (x + kGeluC1 * x * x * x);
        out.data()[i] = 0.5 * x * (1.0 + std::tanh(u));
    }
    check_finite(out.data(), "gelu");
    if (tracked(a)) {
        auto ad = a.impl(), od = out.impl();
        record(out, {a}, [ad, od, n] {
            for (size_t i = 0; i < n; ++i) {
                const double x = ad->data[i];
                const double u = kGeluC0 * (x + kGeluC1 * x * x * x);
                const double t = std::tanh(u);
                const double du = kGeluC0 * (1.0 + 3.0 * kGeluC1 * x * x);
                const double dy = 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * du;
                ad->grad[i] += od->grad[i] * dy;
            }
        });
    }
    return out;
}

Tensor Tape::sigmoid(const Tensor& a) {
    Tensor out = Tensor::zeros(a.shape());
    const size_t n = a.data().size();
    for (size_t i = 0; i < n; ++i) {
        const double x = a.data()[i];
        out.data()[i] = (x >= 0.0) ? 1.0 / (1.0 + std::exp(-x))
                                   : std::exp(x) / (1.0 + std::exp(x));
    }
    check_finite(out.data(), "sigmoid");
    if (tracked(a)) {
        auto ad = a.impl(), od = out.impl();
        record(out, {a}, [ad, od, n] {
            for (size_t i = 0; i < n; ++i) {
                const double y = od->data[i];
                ad->grad[i] += od->grad[i] * y * (1.0 - y);
            }
        });
    }
    return out;
}

Tensor Tape::sum(const Tensor& a) {
    double acc = 0.0;
    for (double x : a.data()) acc += x;
    Tensor out = Tensor::scalar(acc);
    check_finite(out.data(), "sum");
    if (tracked(a)) {
        auto ad = a.impl(), od = out.impl();
        const size_t n = a.data().size();
        record(out, {a}, [ad, od, n] {
            const double g = od->grad[0];
            for (size_t i = 0; i < n; ++i) ad->grad[i] += g;
        });
    }
    return out;
}

Tensor Tape::mean(const Tensor& a) {
    const size_t n = a.data().size();
    double acc = 0.0;
    for (double x : a.data()) acc += x;
    Tensor out = Tensor::scalar(acc / static_cast<double>(n));
    check_finite(out.data(), "mean");
    if (tracked(a)) {
        auto ad = a.impl(), od = out.impl();
        record(out, {a}, [ad, od, n] {
            const double g = od->grad[0] / static_cast<double>(n);
            for (size_t i = 0; i < n; ++i) ad->grad[i] += g;
        });
    }
    return out;
}

Tensor Tape::reshape(const Tensor& a, std::vector<int> shape) {
    require_positive_dims(shape);
    if (shape_numel(shape) != static_cast<int64_t>(a.data().size())) {
        throw InvalidShape("reshape changes element count");
    }
    Tensor out = Tensor::from_data(std::move(shape), a.data());
    if (tracked(a)) {
        auto ad = a.impl(), od = out.impl();
        const size_t n = a.data().size();
        record(out, {a}, [ad, od, n] {
            for (size_t i = 0; i < n; ++i) ad->grad[i] += od->grad[i];
        });
    }
    return out;
}

Tensor Tape::conv2d(const Tensor& x, const Tensor& w, const Tensor& b, int padding) {
    const auto& sx = x.shape();
    const auto& sw = w.shape();
    const auto& sb = b.shape();
    if (sx.size() != 3) throw ShapeMismatch("conv2d input must be C x H x W");
    if (sw.size() != 4) throw ShapeMismatch("conv2d weight must be Cout x Cin x k x k");
    if (sw[2] != sw[3]) throw InvalidKernel("conv2d kernel must be square");
    const int cin = sx[0], h = sx[1], wd = sx[2];
    const int cout = sw[0], k = sw[2];
    if (k % 2 == 0) throw InvalidKernel("conv2d kernel size must be odd");
    if (padding != (k - 1) / 2) throw InvalidKernel("conv2d supports same-padding only");
    if (sw[1] != cin) throw ShapeMismatch("conv2d channel count disagrees with weight");
    if (sb.size() != 1 || sb[0] != cout) throw ShapeMismatch("conv2d bias must have Cout entries");

    Tensor out = Tensor::zeros({cout, h, wd});
    const int p = padding;
    const size_t plane = static_cast<size_t>(h) * wd;
    const double* px = x.data().data();
    const double* pw = w.data().data();
    double* po = out.data().data();
    for (int co = 0; co < cout; ++co) {
        double* oplane = po + co * plane;
        const double bv = b.data()[co];
        for (size_t i = 0; i < plane; ++i) oplane[i] = bv;
        for (int ci = 0; ci < cin; ++ci) {
            const double* xplane = px + ci * plane;
            const double* wk = pw + (static_cast<size_t>(co) * cin + ci) * k * k;
            for (int ky = 0; ky < k; ++ky) {
                const int dy = ky - p;
                const int y0 = std::max(0, -dy), y1 = h - std::max(0, dy);
                for (int kx = 0; kx < k; ++kx) {
                    const int dx = kx - p;
                    const double wv = wk[ky * k + kx];
                    if (wv == 0.0) continue;
                    const int x0 = std::max(0, -dx), x1 = wd - std::max(0, dx);
                    for (int y = y0; y < y1; ++y) {
                        double* orow = oplane + static_cast<size_t>(y) * wd;
                        const double* xrow = xplane + static_cast<size_t>(y + dy) * wd + dx;
                        for (int xi = x0; xi < x1; ++xi) orow[xi] += wv * xrow[xi];
                    }
                }
            }
        }
    }
    check_finite(out.data(), "conv2d");
    if (tracked(x) || tracked(w) || tracked(b)) {
        auto xd = x.impl(), wdp = w.impl(), bd = b.impl(), od = out.impl();
        record(out, {x, w, b}, [xd, wdp, bd, od, cin, cout, h, wd, k, p, plane] {
            const double* g = od->grad.data();
            // d b
            for (int co = 0; co < cout; ++co) {
                const double* gplane = g + co * plane;
                double acc = 0.0;
                for (size_t i = 0; i < plane; ++i) acc += gplane[i];
                bd->grad[co] += acc;
            }
            // d x: correlate upstream grad with kernel flipped in effect
            // (shift signs inverted relative to forward).
            double* gx = xd->grad.data();
            const double* pw = wdp->data.data();
            for (int co = 0; co < cout; ++co) {
                const double* gplane = g + co * plane;
                for (int ci = 0; ci < cin; ++ci) {
                    double* gxplane = gx + ci * plane;
                    const double* wk = pw + (static_cast<size_t>(co) * cin + ci) * k * k;
                    for (int ky = 0; ky < k; ++ky) {
                        const int dy = ky - p;
                        const int y0 = std::max(0, -dy), y1 = h - std::max(0, dy);
                        for (int kx = 0; kx < k; ++kx) {
                            const int dx = kx - p;
                            const double wv = wk[ky * k + kx];
                            if (wv == 0.0) continue;
                            const int x0 = std::max(0, -dx), x1 = wd - std::max(0, dx);
                            for (int y = y0; y < y1; ++y) {
                                const double* grow = gplane + static_cast<size_t>(y) * wd;
                                double* gxrow = gxplane + static_cast<size_t>(y + dy) * wd + dx;
                                for (int xi = x0; xi < x1; ++xi) gxrow[xi] += wv * grow[xi];
                            }
                        }
                    }
                }
            }
            // d w: per-offset dot product of upstream grad and shifted input.
            double* gw = wdp->grad.data();
            const double* px = xd->data.data();
            for (int co = 0; co < cout; ++co) {
                const double* gplane = g + co * plane;
                for (int ci = 0; ci < cin; ++ci) {
                    const double* xplane = px + ci * plane;
                    double* gwk = gw + (static_cast<size_t>(co) * cin + ci) * k * k;
                    for (int ky = 0; ky < k; ++ky) {
                        const int dy = ky - p;
                        const int y0 = std::max(0, -dy), y1 = h - std::max(0, dy);
                        for (int kx = 0; kx < k; ++kx) {
                            const int dx = kx - p;
                            const int x0 = std::max(0, -dx), x1 = wd - std::max(0, dx);
                            double acc = 0.0;
                            for (int y = y0; y < y1; ++y) {
                                const double* grow = gplane + static_cast<size_t>(y) * wd;
                                const double* xrow =
                                    xplane + static_cast<size_t>(y + dy) * wd + dx;
                                for (int xi = x0; xi < x1; ++xi) acc += grow[xi] * xrow[xi];
                            }
                            gwk[ky * k + kx] += acc;
                        }
                    }
                }
            }
        });
    }
    return out;
}

Tensor Tape::pixel_shuffle(const Tensor& x, int s) {
    const auto& sx = x.shape();
    if (sx.size() != 3) throw ShapeMismatch("pixel_shuffle input must be C x H x W");
    if (s < 1) throw InvalidShape("pixel_shuffle factor must be >= 1");
    const int cs = sx[0], h = sx[1], w = sx[2];
    if (cs % (s * s) != 0) throw InvalidShape("pixel_shuffle channel count not divisible by s^2");
    const int c = cs / (s * s);
    Tensor out = Tensor::zeros({c, s * h, s * w});
    const int oh = s * h, ow = s * w;
    const double* px = x.data().data();
    double* po = out.data().data();
    for (int cc = 0; cc < c; ++cc) {
        for (int pp = 0; pp < s; ++pp) {
            for (int q = 0; q < s; ++q) {
                const double* xplane =
                    px + (static_cast<size_t>(cc) * s * s + pp * s + q) * h * w;
                for (int i = 0; i < h; ++i) {
                    const double* xrow = xplane + static_cast<size_t>(i) * w;
                    double* orow = po + (static_cast<size_t>(cc) * oh + (s * i + pp)) * ow + q;
                    for (int j = 0; j < w; ++j) orow[static_cast<size_t>(j) * s] = xrow[j];
                }
            }
        }
    }
    if (tracked(x)) {
        auto xd = x.impl(), od = out.impl();
        record(out, {x}, [xd, od, c, s, h, w, oh, ow] {
            double* gx = xd->grad.data();
            const double* g = od->grad.data();
            for (int cc = 0; cc < c; ++cc) {
                for (int pp = 0; pp < s; ++pp) {
                    for (int q = 0; q < s; ++q) {
                        double* gxplane =
                            gx + (static_cast<size_t>(cc) * s * s + pp * s + q) * h * w;
                        for (int i = 0; i < h; ++i) {
                            double* gxrow = gxplane + static_cast<size_t>(i) * w;
                            const double* grow =
                                g + (static_cast<size_t>(cc) * oh + (s * i + pp)) * ow + q;
                            for (int j = 0; j < w; ++j)
                                gxrow[j] += grow[static_cast<size_t>(j) * s];
                        }
                    }
                }
            }
        });
    }
    return out;
}

Tensor Tape::avg_pool2d(const Tensor& x, int f) {
    const auto& sx = x.shape();
    if (sx.size() != 3) throw ShapeMismatch("avg_pool2d input must be C x H x W");
    if (f < 1) throw InvalidShape("avg_pool2d factor must be >= 1");
    const int c = sx[0], h = sx[1], w = sx[2];
    if (h % f != 0 || w % f != 0) throw InvalidShape("avg_pool2d factor must divide H and W");
    const int oh = h / f, ow = w / f;
    Tensor out = Tensor::zeros({c, oh, ow});
    const double inv = 1.0 / (static_cast<double>(f) * f);
    const double* px = x.data().data();
    double* po = out.data().data();
    for (int cc = 0; cc < c; ++cc) {
        const double* xplane = px + static_cast<size_t>(cc) * h * w;
        double* oplane = po + static_cast<size_t>(cc) * oh * ow;
        for (int i = 0; i < oh; ++i) {
            for (int j = 0; j < ow; ++j) {
                double acc = 0.0;
                for (int di = 0; di < f; ++di) {
                    const double* xrow =
                        xplane + (static_cast<size_t>(i) * f + di) * w + static_cast<size_t>(j) * f;
                    for (int dj = 0; dj < f; ++dj) acc += xrow[dj];
                }
                oplane[static_cast<size_t>(i) * ow + j] = acc * inv;
            }
        }
    }
    check_finite(out.data(), "avg_pool2d");
    if (tracked(x)) {
        auto xd = x.impl(), od = out.impl();
        record(out, {x}, [xd, od, c, h, w, f, oh, ow, inv] {
            double* gx = xd->grad.data();
            const double* g = od->grad.data();
            for (int cc = 0; cc < c; ++cc) {
                double* gxplane = gx + static_cast<size_t>(cc) * h * w;
                const double* gplane = g + static_cast<size_t>(cc) * oh * ow;
                for (int i = 0; i < oh; ++i) {
                    for (int j = 0; j < ow; ++j) {
                        const double gv = gplane[static_cast<size_t>(i) * ow + j] * inv;
                        for (int di = 0; di < f; ++di) {
                            double* gxrow = gxplane + (static_cast<size_t>(i) * f + di) * w +
                                            static_cast<size_t>(j) * f;
                            for (int dj = 0; dj < f; ++dj) gxrow[dj] += gv;
                        }
                    }
                }
            }
        });
    }
    return out;
}

Tensor Tape::affine_channels(const Tensor& x, const Tensor& gamma, const Tensor& beta) {
    const auto& sx = x.shape();
    if (sx.size() != 3) throw ShapeMismatch("affine_channels input must be C x H x W");
    const int c = sx[0];
    if (gamma.shape() != std::vector<int>{c} || beta.shape() != std::vector<int>{c}) {
        throw ShapeMismatch("affine_channels gamma/beta must have one entry per channel");
    }
    const size_t plane = static_cast<size_t>(sx[1]) * sx[2];
    Tensor out = Tensor::zeros(sx);
    for (int cc = 0; cc < c; ++cc) {
        const double gv = gamma.data()[cc], bv = beta.data()[cc];
        const double* xp = x.data().data() + cc * plane;
        double* op = out.data().data() + cc * plane;
        for (size_t i = 0; i < plane; ++i) op[i] = gv * xp[i] + bv;
    }
    check_finite(out.data(), "affine_channels");
    if (tracked(x) || tracked(gamma) || tracked(beta)) {
        auto xd = x.impl(), gd = gamma.impl(), bd = beta.impl(), od = out.impl();
        record(out, {x, gamma, beta}, [xd, gd, bd, od, c, plane] {
            const double* g = od->grad.data();
            for (int cc = 0; cc < c; ++cc) {
                const double* gp = g + cc * plane;
                const double* xp = xd->data.data() + cc * plane;
                double* gxp = xd->grad.data() + cc * plane;
                const double gv = gd->data[cc];
                double dgamma = 0.0, dbeta = 0.0;
                for (size_t i = 0; i < plane; ++i) {
                    dgamma += gp[i] * xp[i];
                    dbeta += gp[i];
                    gxp[i] += gp[i] * gv;
                }
                gd->grad[cc] += dgamma;
                bd->grad[cc] += dbeta;
            }
        });
    }
    return out;
}

Tensor Tape::filter_rows(const Tensor& x, const std::vector<double>& kernel) {
    const auto& sx = x.shape();
    if (sx.size() != 3) throw ShapeMismatch("filter_rows input must be C x H x W");
    const int c = sx[0], h = sx[1], w = sx[2];
    const int kn = static_cast<int>(kernel.size());
    if (kn < 1 || kn > w) throw InvalidShape("filter_rows kernel longer than row");
    const int ow = w - kn + 1;
    Tensor out = Tensor::zeros({c, h, ow});
    const double* px = x.data().data();
    double* po = out.data().data();
    for (int cc = 0; cc < c; ++cc) {
        for (int y = 0; y < h; ++y) {
            const double* xrow = px + (static_cast<size_t>(cc) * h + y) * w;
            double* orow = po + (static_cast<size_t>(cc) * h + y) * ow;
            for (int j = 0; j < ow; ++j) {
                double acc = 0.0;
                for (int t = 0; t < kn; ++t) acc += kernel[t] * xrow[j + t];
                orow[j] = acc;
            }
        }
    }
    check_finite(out.data(), "filter_rows");
    if (tracked(x)) {
        auto xd = x.impl(), od = out.impl();
        std::vector<double> k = kernel;
        record(out, {x}, [xd, od, k = std::move(k), c, h, w, ow, kn] {
            double* gx = xd->grad.data();
            const double* g = od->grad.data();
            for (int cc = 0; cc < c; ++cc) {
                for (int y = 0; y < h; ++y) {
                    double* gxrow = gx + (static_cast<size_t>(cc) * h + y) * w;
                    const double* grow = g + (static_cast<size_t>(cc) * h + y) * ow;
                    for (int j = 0; j < ow; ++j) {
                        const double gv = grow[j];
                        for (int t = 0; t < kn; ++t) gxrow[j + t] += gv * k[t];
                    }
                }
            }
        });
    }
    return out;
}

Tensor Tape::filter_cols(const Tensor& x, const std::vector<double>& kernel) {
    const auto& sx = x.shape();
    if (sx.size() != 3) throw ShapeMismatch("filter_cols input must be C x H x W");
    const int c = sx[0], h = sx[1], w = sx[2];
    const int kn = static_cast<int>(kernel.size());
    if (kn < 1 || kn > h) throw InvalidShape("filter_cols kernel longer than column");
    const int oh = h - kn + 1;
    Tensor out = Tensor::zeros({c, oh, w});
    const double* px = x.data().data();
    double* po = out.data().data();
    for (int cc = 0; cc < c; ++cc) {
        const double* xplane = px + static_cast<size_t>(cc) * h * w;
        double* oplane = po + static_cast<size_t>(cc) * oh * w;
        for (int i = 0; i < oh; ++i) {
            double* orow = oplane + static_cast<size_t>(i) * w;
            for (int t = 0; t < kn; ++t) {
                const double kv = kernel[t];
                const double* xrow = xplane + (static_cast<size_t>(i) + t) * w;
                if (t == 0) {
                    for (int j = 0; j < w; ++j) orow[j] = kv * xrow[j];
                } else {
                    for (int j = 0; j < w; ++j) orow[j] += kv * xrow[j];
                }
            }
        }
    }
    check_finite(out.data(), "filter_cols");
    if (tracked(x)) {
        auto xd = x.impl(), od = out.impl();
        std::vector<double> k = kernel;
        record(out, {x}, [xd, od, k = std::move(k), c, h, w, oh, kn] {
            double* gx = xd->grad.data();
            const double* g = od->grad.data();
            for (int cc = 0; cc < c; ++cc) {
                double* gxplane = gx + static_cast<size_t>(cc) * h * w;
                const double* gplane = g + static_cast<size_t>(cc) * oh * w;
                for (int i = 0; i < oh; ++i) {
                    const double* grow = gplane + static_cast<size_t>(i) * w;
                    for (int t = 0; t < kn; ++t) {
                        const double kv = k[t];
                        double* gxrow = gxplane + (static_cast<size_t>(i) + t) * w;
                        for (int j = 0; j < w; ++j) gxrow[j] += kv * grow[j];
                    }
                }
            }
        });
    }
    return out;
}

void Tape::backward(const Tensor& loss) {
    if (!loss.valid() || loss.size() != 1) throw NotScalar("backward requires a scalar loss");
    const auto& ld = *loss.impl();
    if (ld.tape_epoch != epoch_ || ld.node_id < 0) {
        throw DetachedTensor("loss was not produced through this tape");
    }
    // Per-pass semantics: zero every tensor touched by this tape, then
    // accumulate. Fan-out still sums within the pass.
    std::unordered_set<TensorData*> touched;
    for (const Node& n : nodes_) {
        touched.insert(n.out.get());
        for (const auto& in : n.ins) touched.insert(in.get());
    }
    for (TensorData* t : touched) {
        t->grad.assign(t->data.size(), 0.0);
    }
    loss.impl()->grad[0] = 1.0;
    for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) {
        it->backprop();
    }
}

// -- Adam ----------------------------------------------------------------

void adam_step(std::vector<double>& params, const std::vector<double>& grads, AdamState& state,
               double lr) {
    const size_t n = params.size();
    if (grads.size() != n) throw ShapeMismatch("adam_step: gradient length differs from params");
    if (state.m.empty()) state.m.assign(n, 0.0);
    if (state.v.empty()) state.v.assign(n, 0.0);
    if (state.m.size() != n || state.v.size() != n) {
        throw ShapeMismatch("adam_step: state length differs from params");
    }
    constexpr double b1 = 0.9, b2 = 0.999, eps = 1e-8;
    state.step += 1;
    const double bc1 = 1.0 - std::pow(b1, static_cast<double>(state.step));
    const double bc2 = 1.0 - std::pow(b2, static_cast<double>(state.step));
    for (size_t i = 0; i < n; ++i) {
        const double g = grads[i];
        state.m[i] = b1 * state.m[i] + (1.0 - b1) * g;
        state.v[i] = b2 * state.v[i] + (1.0 - b2) * g * g;
        const double mhat = state.m[i] / bc1;
        const double vhat = state.v[i] / bc2;
        params[i] -= lr * mhat / (std::sqrt(vhat) + eps);
    }
    check_finite(params, "adam_step");
}

} // namespace metanerv
