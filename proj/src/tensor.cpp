#include "refbridge/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <unordered_set>

namespace refbridge {

namespace detail {

namespace {
thread_local bool g_grad_enabled = true;
}

bool grad_enabled() { return g_grad_enabled; }

namespace {

std::size_t shape_numel(const std::vector<int>& shape) {
    std::size_t n = 1;
    for (int e : shape) {
        if (e < 0) throw ShapeError("negative extent in shape " + shape_str(shape));
        n *= static_cast<std::size_t>(e);
    }
    return n;
}

std::shared_ptr<Node> make_node(std::vector<int> shape, std::vector<float> value) {
    auto n = std::make_shared<Node>();
    n->shape = std::move(shape);
    n->value = std::move(value);
    return n;
}

// Wires parents/backward only while recording and when some parent needs grad.
Tensor make_op(std::vector<int> shape, std::vector<float> value,
               std::vector<std::shared_ptr<Node>> parents,
               std::function<void(Node&)> backward) {
    auto n = make_node(std::move(shape), std::move(value));
    if (g_grad_enabled) {
        bool any = false;
        for (const auto& p : parents)
            if (p->requires_grad || !p->parents.empty()) any = true;
        if (any) {
            n->parents = std::move(parents);
            n->backward = std::move(backward);
        }
    }
    return Tensor(n);
}

void check_same_shape(const Tensor& a, const Tensor& b, const char* op) {
    if (a.shape() != b.shape())
        throw ShapeError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) +
                         " vs " + shape_str(b.shape()));
}

}  // namespace

}  // namespace detail

using detail::Node;
using detail::make_node;
using detail::make_op;
using detail::check_same_shape;

NoGradGuard::NoGradGuard() : prev_(detail::grad_enabled()) {
    detail::g_grad_enabled = false;
}
NoGradGuard::~NoGradGuard() { detail::g_grad_enabled = prev_; }

std::string shape_str(const std::vector<int>& s) {
    std::ostringstream os;
    os << "[";
    for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "x" : "") << s[i];
    os << "]";
    return os.str();
}

Tensor Tensor::zeros(std::vector<int> shape) {
    std::size_t n = 1;
    for (int e : shape) n *= static_cast<std::size_t>(std::max(e, 0));
    return Tensor(make_node(std::move(shape), std::vector<float>(n, 0.0f)));
}

Tensor Tensor::full(std::vector<int> shape, float v) {
    std::size_t n = 1;
    for (int e : shape) n *= static_cast<std::size_t>(std::max(e, 0));
    return Tensor(make_node(std::move(shape), std::vector<float>(n, v)));
}

Tensor Tensor::from_data(std::vector<int> shape, std::vector<float> data) {
    std::size_t n = 1;
    for (int e : shape) n *= static_cast<std::size_t>(std::max(e, 0));
    if (n != data.size())
        throw ShapeError("from_data: " + shape_str(shape) + " wants " + std::to_string(n) +
                         " values, got " + std::to_string(data.size()));
    return Tensor(make_node(std::move(shape), std::move(data)));
}

Tensor Tensor::param(std::vector<int> shape, std::vector<float> data) {
    Tensor t = from_data(std::move(shape), std::move(data));
    t.node_->requires_grad = true;
    return t;
}

float Tensor::item() const {
    if (numel() != 1) throw ShapeError("item: tensor has " + std::to_string(numel()) + " elements");
    return node_->value[0];
}

const std::vector<float>& Tensor::grad() const {
    node_->ensure_grad();
    return node_->grad;
}

void Tensor::zero_grad() {
    node_->grad.assign(node_->value.size(), 0.0f);
}

void Tensor::backward() {
    if (numel() != 1) throw ShapeError("backward: root must be scalar");
    // iterative post-order topo sort
    std::vector<Node*> topo;
    std::unordered_set<Node*> visited;
    struct Frame {
        Node* n;
        std::size_t next;
    };
    std::vector<Frame> stack;
    stack.push_back({node_.get(), 0});
    visited.insert(node_.get());
    while (!stack.empty()) {
        Frame& f = stack.back();
        if (f.next < f.n->parents.size()) {
            Node* p = f.n->parents[f.next++].get();
            if (!visited.count(p)) {
                visited.insert(p);
                stack.push_back({p, 0});
            }
        } else {
            topo.push_back(f.n);
            stack.pop_back();
        }
    }
    node_->ensure_grad();
    node_->grad[0] = 1.0f;
    for (auto it = topo.rbegin(); it != topo.rend(); ++it) {
        Node* n = *it;
        if (n->backward) {
            for (auto& p : n->parents) p->ensure_grad();
            n->backward(*n);
        }
    }
}

// ---------------------------------------------------------------- elementwise

Tensor add(const Tensor& a, const Tensor& b) {
    check_same_shape(a, b, "add");
    std::vector<float> out(a.numel());
    const auto &av = a.data(), &bv = b.data();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] + bv[i];
    auto pa = a.node(), pb = b.node();
    return make_op(a.shape(), std::move(out), {pa, pb}, [pa, pb](Node& n) {
        for (std::size_t i = 0; i < n.grad.size(); ++i) {
            pa->grad[i] += n.grad[i];
            pb->grad[i] += n.grad[i];
        }
    });
}

Tensor sub(const Tensor& a, const Tensor& b) {
    check_same_shape(a, b, "sub");
    std::vector<float> out(a.numel());
    const auto &av = a.data(), &bv = b.data();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] - bv[i];
    auto pa = a.node(), pb = b.node();
    return make_op(a.shape(), std::move(out), {pa, pb}, [pa, pb](Node& n) {
        for (std::size_t i = 0; i < n.grad.size(); ++i) {
            pa->grad[i] += n.grad[i];
            pb->grad[i] -= n.grad[i];
        }
    });
}

Tensor mul(const Tensor& a, const Tensor& b) {
    check_same_shape(a, b, "mul");
    std::vector<float> out(a.numel());
    const auto &av = a.data(), &bv = b.data();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] * bv[i];
    auto pa = a.node(), pb = b.node();
    return make_op(a.shape(), std::move(out), {pa, pb}, [pa, pb](Node& n) {
        for (std::size_t i = 0; i < n.grad.size(); ++i) {
            pa->grad[i] += n.grad[i] * pb->value[i];
            pb->grad[i] += n.grad[i] * pa->value[i];
        }
    });
}

Tensor scale(const Tensor& a, float s) {
    std::vector<float> out(a.numel());
    const auto& av = a.data();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] * s;
    auto pa = a.node();
    return make_op(a.shape(), std::move(out), {pa}, [pa, s](Node& n) {
        for (std::size_t i = 0; i < n.grad.size(); ++i) pa->grad[i] += n.grad[i] * s;
    });
}

// -------------------------------------------------------------------- matmul

Tensor matmul(const Tensor& a, const Tensor& b) {
    if (a.ndim() != 2 || b.ndim() != 2)
        throw ShapeError("matmul: need 2-D operands, got " + shape_str(a.shape()) + " and " +
                         shape_str(b.shape()));
    const int m = a.dim(0), k = a.dim(1), k2 = b.dim(0), n = b.dim(1);
    if (k != k2)
        throw ShapeError("matmul: inner extents differ, " + shape_str(a.shape()) + " x " +
                         shape_str(b.shape()));
    std::vector<float> out(static_cast<std::size_t>(m) * n, 0.0f);
    const auto &av = a.data(), &bv = b.data();
    for (int i = 0; i < m; ++i) {
        for (int p = 0; p < k; ++p) {
            const float aip = av[static_cast<std::size_t>(i) * k + p];
            const float* brow = &bv[static_cast<std::size_t>(p) * n];
            float* orow = &out[static_cast<std::size_t>(i) * n];
            for (int j = 0; j < n; ++j) orow[j] += aip * brow[j];
        }
    }
    auto pa = a.node(), pb = b.node();
    return make_op({m, n}, std::move(out), {pa, pb}, [pa, pb, m, k, n](Node& nd) {
        // dA += dC * B^T ; dB += A^T * dC
        for (int i = 0; i < m; ++i) {
            const float* grow = &nd.grad[static_cast<std::size_t>(i) * n];
            for (int p = 0; p < k; ++p) {
                const float* brow = &pb->value[static_cast<std::size_t>(p) * n];
                float acc = 0.0f;
                for (int j = 0; j < n; ++j) acc += grow[j] * brow[j];
                pa->grad[static_cast<std::size_t>(i) * k + p] += acc;
            }
        }
        for (int p = 0; p < k; ++p) {
            float* bgrow = &pb->grad[static_cast<std::size_t>(p) * n];
            for (int i = 0; i < m; ++i) {
                const float aip = pa->value[static_cast<std::size_t>(i) * k + p];
                const float* grow = &nd.grad[static_cast<std::size_t>(i) * n];
                for (int j = 0; j < n; ++j) bgrow[j] += aip * grow[j];
            }
        }
    });
}

Tensor transpose(const Tensor& a) {
    if (a.ndim() != 2) throw ShapeError("transpose: need 2-D, got " + shape_str(a.shape()));
    const int m = a.dim(0), n = a.dim(1);
    std::vector<float> out(a.numel());
    const auto& av = a.data();
    for (int i = 0; i < m; ++i)
        for (int j = 0; j < n; ++j)
            out[static_cast<std::size_t>(j) * m + i] = av[static_cast<std::size_t>(i) * n + j];
    auto pa = a.node();
    return make_op({n, m}, std::move(out), {pa}, [pa, m, n](Node& nd) {
        for (int j = 0; j < n; ++j)
            for (int i = 0; i < m; ++i)
                pa->grad[static_cast<std::size_t>(i) * n + j] +=
                    nd.grad[static_cast<std::size_t>(j) * m + i];
    });
}

// ------------------------------------------------------------------- softmax

Tensor softmax_rows(const Tensor& x) {
    if (x.ndim() != 2) throw ShapeError("softmax_rows: need 2-D, got " + shape_str(x.shape()));
    const int m = x.dim(0), n = x.dim(1);
    std::vector<float> out(x.numel());
    const auto& xv = x.data();
    for (int i = 0; i < m; ++i) {
        const float* row = &xv[static_cast<std::size_t>(i) * n];
        float* orow = &out[static_cast<std::size_t>(i) * n];
        float mx = row[0];
        for (int j = 1; j < n; ++j) mx = std::max(mx, row[j]);
        double s = 0.0;
        for (int j = 0; j < n; ++j) {
            orow[j] = std::exp(row[j] - mx);
            s += orow[j];
        }
        const float inv = static_cast<float>(1.0 / s);
        for (int j = 0; j < n; ++j) orow[j] *= inv;
    }
    auto px = x.node();
    return make_op({m, n}, std::move(out), {px}, [px, m, n](Node& nd) {
        for (int i = 0; i < m; ++i) {
            const float* y = &nd.value[static_cast<std::size_t>(i) * n];
            const float* gy = &nd.grad[static_cast<std::size_t>(i) * n];
            double dot = 0.0;
            for (int j = 0; j < n; ++j) dot += static_cast<double>(gy[j]) * y[j];
            float* gx = &px->grad[static_cast<std::size_t>(i) * n];
            for (int j = 0; j < n; ++j)
                gx[j] += y[j] * (gy[j] - static_cast<float>(dot));
        }
    });
}

// -------------------------------------------------------------------- conv2d

Tensor conv2d(const Tensor& x, const Tensor& kernels) {
    if (x.ndim() != 3) throw ShapeError("conv2d: input must be [c,h,w], got " + shape_str(x.shape()));
    if (kernels.ndim() != 4 || kernels.dim(2) != 3 || kernels.dim(3) != 3)
        throw ShapeError("conv2d: kernels must be [cout,cin,3,3], got " + shape_str(kernels.shape()));
    const int cin = x.dim(0), h = x.dim(1), w = x.dim(2);
    const int cout = kernels.dim(0);
    if (kernels.dim(1) != cin)
        throw ShapeError("conv2d: channel mismatch, input cin=" + std::to_string(cin) +
                         " kernel cin=" + std::to_string(kernels.dim(1)));
    std::vector<float> out(static_cast<std::size_t>(cout) * h * w, 0.0f);
    const auto &xv = x.data(), &kv = kernels.data();
    auto xat = [&](int c, int y, int xx) -> float {
        if (y < 0 || y >= h || xx < 0 || xx >= w) return 0.0f;
        return xv[(static_cast<std::size_t>(c) * h + y) * w + xx];
    };
    for (int oc = 0; oc < cout; ++oc)
        for (int ic = 0; ic < cin; ++ic) {
            const float* k9 = &kv[(static_cast<std::size_t>(oc) * cin + ic) * 9];
            for (int y = 0; y < h; ++y)
                for (int xx = 0; xx < w; ++xx) {
                    float acc = 0.0f;
                    for (int ky = 0; ky < 3; ++ky)
                        for (int kx = 0; kx < 3; ++kx)
                            acc += xat(ic, y + ky - 1, xx + kx - 1) * k9[ky * 3 + kx];
                    out[(static_cast<std::size_t>(oc) * h + y) * w + xx] += acc;
                }
        }
    auto px = x.node(), pk = kernels.node();
    return make_op({cout, h, w}, std::move(out), {px, pk}, [px, pk, cin, cout, h, w](Node& nd) {
        auto xat = [&](int c, int y, int xx) -> float {
            if (y < 0 || y >= h || xx < 0 || xx >= w) return 0.0f;
            return px->value[(static_cast<std::size_t>(c) * h + y) * w + xx];
        };
        for (int oc = 0; oc < cout; ++oc)
            for (int ic = 0; ic < cin; ++ic) {
                const float* k9 = &pk->value[(static_cast<std::size_t>(oc) * cin + ic) * 9];
                float* gk9 = &pk->grad[(static_cast<std::size_t>(oc) * cin + ic) * 9];
                for (int y = 0; y < h; ++y)
                    for (int xx = 0; xx < w; ++xx) {
                        const float g = nd.grad[(static_cast<std::size_t>(oc) * h + y) * w + xx];
                        if (g == 0.0f) continue;
                        for (int ky = 0; ky < 3; ++ky)
                            for (int kx = 0; kx < 3; ++kx) {
                                const int iy = y + ky - 1, ix = xx + kx - 1;
                                gk9[ky * 3 + kx] += g * xat(ic, iy, ix);
                                if (iy >= 0 && iy < h && ix >= 0 && ix < w)
                                    px->grad[(static_cast<std::size_t>(ic) * h + iy) * w + ix] +=
                                        g * k9[ky * 3 + kx];
                            }
                    }
            }
    });
}

// ---------------------------------------------------------------- activations

Tensor silu(const Tensor& x) {
    std::vector<float> out(x.numel());
    const auto& xv = x.data();
    for (std::size_t i = 0; i < out.size(); ++i) {
        const float s = 1.0f / (1.0f + std::exp(-xv[i]));
        out[i] = xv[i] * s;
    }
    auto px = x.node();
    return make_op(x.shape(), std::move(out), {px}, [px](Node& nd) {
        for (std::size_t i = 0; i < nd.grad.size(); ++i) {
            const float v = px->value[i];
            const float s = 1.0f / (1.0f + std::exp(-v));
            px->grad[i] += nd.grad[i] * s * (1.0f + v * (1.0f - s));
        }
    });
}

Tensor layer_norm(const Tensor& x, float eps) {
    if (x.ndim() < 1) throw ShapeError("layer_norm: empty shape");
    const int n = x.dim(x.ndim() - 1);
    if (n == 0) throw ShapeError("layer_norm: empty last axis");
    const std::size_t rows = x.numel() / static_cast<std::size_t>(n);
    std::vector<float> out(x.numel());
    const auto& xv = x.data();
    for (std::size_t r = 0; r < rows; ++r) {
        const float* row = &xv[r * n];
        float* orow = &out[r * n];
        double mu = 0.0;
        for (int j = 0; j < n; ++j) mu += row[j];
        mu /= n;
        double var = 0.0;
        for (int j = 0; j < n; ++j) {
            const double d = row[j] - mu;
            var += d * d;
        }
        var /= n;
        const float inv = static_cast<float>(1.0 / std::sqrt(var + eps));
        for (int j = 0; j < n; ++j) orow[j] = static_cast<float>(row[j] - mu) * inv;
    }
    auto px = x.node();
    return make_op(x.shape(), std::move(out), {px}, [px, n, rows, eps](Node& nd) {
        for (std::size_t r = 0; r < rows; ++r) {
            const float* row = &px->value[r * n];
            const float* y = &nd.value[r * n];
            const float* gy = &nd.grad[r * n];
            double mu = 0.0;
            for (int j = 0; j < n; ++j) mu += row[j];
            mu /= n;
            double var = 0.0;
            for (int j = 0; j < n; ++j) {
                const double d = row[j] - mu;
                var += d * d;
            }
            var /= n;
            const float inv = static_cast<float>(1.0 / std::sqrt(var + eps));
            double gmean = 0.0, gy_dot_y = 0.0;
            for (int j = 0; j < n; ++j) {
                gmean += gy[j];
                gy_dot_y += static_cast<double>(gy[j]) * y[j];
            }
            gmean /= n;
            gy_dot_y /= n;
            float* gx = &px->grad[r * n];
            for (int j = 0; j < n; ++j)
                gx[j] += inv * (gy[j] - static_cast<float>(gmean) -
                                y[j] * static_cast<float>(gy_dot_y));
        }
    });
}

// -------------------------------------------------------------------- concat

Tensor concat(const Tensor& a, const Tensor& b, int axis) {
    if (a.ndim() != b.ndim())
        throw ShapeError("concat: rank mismatch " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));
    if (axis < 0 || axis >= a.ndim()) throw ShapeError("concat: bad axis " + std::to_string(axis));
    for (int i = 0; i < a.ndim(); ++i)
        if (i != axis && a.dim(i) != b.dim(i))
            throw ShapeError("concat: extent mismatch off axis " + std::to_string(axis) + ": " +
                             shape_str(a.shape()) + " vs " + shape_str(b.shape()));
    std::vector<int> oshape = a.shape();
    oshape[axis] += b.dim(axis);

    // views as [outer, axis_extent, inner]
    std::size_t outer = 1, inner = 1;
    for (int i = 0; i < axis; ++i) outer *= static_cast<std::size_t>(a.dim(i));
    for (int i = axis + 1; i < a.ndim(); ++i) inner *= static_cast<std::size_t>(a.dim(i));
    const std::size_t na = static_cast<std::size_t>(a.dim(axis)) * inner;
    const std::size_t nb = static_cast<std::size_t>(b.dim(axis)) * inner;

    std::vector<float> out(a.numel() + b.numel());
    const auto &av = a.data(), &bv = b.data();
    for (std::size_t o = 0; o < outer; ++o) {
        std::copy(av.begin() + o * na, av.begin() + (o + 1) * na, out.begin() + o * (na + nb));
        std::copy(bv.begin() + o * nb, bv.begin() + (o + 1) * nb,
                  out.begin() + o * (na + nb) + na);
    }
    auto pa = a.node(), pb = b.node();
    return make_op(std::move(oshape), std::move(out), {pa, pb}, [pa, pb, outer, na, nb](Node& nd) {
        for (std::size_t o = 0; o < outer; ++o) {
            const float* g = &nd.grad[o * (na + nb)];
            for (std::size_t i = 0; i < na; ++i) pa->grad[o * na + i] += g[i];
            for (std::size_t i = 0; i < nb; ++i) pb->grad[o * nb + i] += g[na + i];
        }
    });
}

// ---------------------------------------------------------------- reductions

Tensor mse(const Tensor& a, const Tensor& b) {
    check_same_shape(a, b, "mse");
    const auto &av = a.data(), &bv = b.data();
    double acc = 0.0;
    for (std::size_t i = 0; i < av.size(); ++i) {
        const double d = static_cast<double>(av[i]) - bv[i];
        acc += d * d;
    }
    const std::size_t cnt = av.size();
    const float val = cnt ? static_cast<float>(acc / static_cast<double>(cnt)) : 0.0f;
    auto pa = a.node(), pb = b.node();
    return make_op({1}, {val}, {pa, pb}, [pa, pb, cnt](Node& nd) {
        const float g = nd.grad[0] * 2.0f / static_cast<float>(cnt);
        for (std::size_t i = 0; i < cnt; ++i) {
            const float d = pa->value[i] - pb->value[i];
            pa->grad[i] += g * d;
            pb->grad[i] -= g * d;
        }
    });
}

Tensor sum(const Tensor& x) {
    const auto& xv = x.data();
    double acc = 0.0;
    for (float v : xv) acc += v;
    auto px = x.node();
    return make_op({1}, {static_cast<float>(acc)}, {px}, [px](Node& nd) {
        const float g = nd.grad[0];
        for (std::size_t i = 0; i < px->grad.size(); ++i) px->grad[i] += g;
    });
}

// ------------------------------------------------------------ bias / reshape

Tensor add_row_bias(const Tensor& x, const Tensor& b) {
    if (x.ndim() != 2 || b.ndim() != 1 || b.dim(0) != x.dim(1))
        throw ShapeError("add_row_bias: " + shape_str(x.shape()) + " + " + shape_str(b.shape()));
    const int m = x.dim(0), n = x.dim(1);
    std::vector<float> out(x.numel());
    const auto &xv = x.data(), &bv = b.data();
    for (int i = 0; i < m; ++i)
        for (int j = 0; j < n; ++j)
            out[static_cast<std::size_t>(i) * n + j] = xv[static_cast<std::size_t>(i) * n + j] + bv[j];
    auto px = x.node(), pb = b.node();
    return make_op({m, n}, std::move(out), {px, pb}, [px, pb, m, n](Node& nd) {
        for (int i = 0; i < m; ++i)
            for (int j = 0; j < n; ++j) {
                const float g = nd.grad[static_cast<std::size_t>(i) * n + j];
                px->grad[static_cast<std::size_t>(i) * n + j] += g;
                pb->grad[j] += g;
            }
    });
}

Tensor add_channel_bias(const Tensor& x, const Tensor& b) {
    if (x.ndim() != 3 || b.ndim() != 1 || b.dim(0) != x.dim(0))
        throw ShapeError("add_channel_bias: " + shape_str(x.shape()) + " + " + shape_str(b.shape()));
    const int c = x.dim(0);
    const std::size_t hw = static_cast<std::size_t>(x.dim(1)) * x.dim(2);
    std::vector<float> out(x.numel());
    const auto &xv = x.data(), &bv = b.data();
    for (int ch = 0; ch < c; ++ch)
        for (std::size_t i = 0; i < hw; ++i) out[ch * hw + i] = xv[ch * hw + i] + bv[ch];
    auto px = x.node(), pb = b.node();
    return make_op(x.shape(), std::move(out), {px, pb}, [px, pb, c, hw](Node& nd) {
        for (int ch = 0; ch < c; ++ch)
            for (std::size_t i = 0; i < hw; ++i) {
                const float g = nd.grad[ch * hw + i];
                px->grad[ch * hw + i] += g;
                pb->grad[ch] += g;
            }
    });
}

Tensor slice_cols(const Tensor& x, int start, int len) {
    if (x.ndim() != 2) throw ShapeError("slice_cols: need 2-D, got " + shape_str(x.shape()));
    const int m = x.dim(0), n = x.dim(1);
    if (start < 0 || len < 0 || start + len > n)
        throw ShapeError("slice_cols: [" + std::to_string(start) + "," +
                         std::to_string(start + len) + ") out of " + std::to_string(n));
    std::vector<float> out(static_cast<std::size_t>(m) * len);
    const auto& xv = x.data();
    for (int i = 0; i < m; ++i)
        std::copy(&xv[static_cast<std::size_t>(i) * n + start],
                  &xv[static_cast<std::size_t>(i) * n + start + len],
                  &out[static_cast<std::size_t>(i) * len]);
    auto px = x.node();
    return make_op({m, len}, std::move(out), {px, }, [px, m, n, start, len](Node& nd) {
        for (int i = 0; i < m; ++i)
            for (int j = 0; j < len; ++j)
                px->grad[static_cast<std::size_t>(i) * n + start + j] +=
                    nd.grad[static_cast<std::size_t>(i) * len + j];
    });
}

Tensor reshape(const Tensor& x, std::vector<int> shape) {
    std::size_t n = 1;
    for (int e : shape) n *= static_cast<std::size_t>(std::max(e, 0));
    if (n != x.numel())
        throw ShapeError("reshape: " + shape_str(x.shape()) + " -> " + shape_str(shape));
    auto px = x.node();
    return make_op(std::move(shape), x.data(), {px}, [px](Node& nd) {
        for (std::size_t i = 0; i < nd.grad.size(); ++i) px->grad[i] += nd.grad[i];
    });
}

}  // namespace refbridge
