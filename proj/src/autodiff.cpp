#include "emopriv/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <unordered_map>
#include <unordered_set>

namespace emopriv::ad {

namespace {

void check_finite(const Tensor& t, const char* who) {
    for (double v : t.data)
        if (!std::isfinite(v))
            throw std::runtime_error(std::string(who) + ": non-finite value");
}

double act_apply(Activation a, double z) {
    switch (a) {
        case Activation::relu: return z > 0 ? z : 0.0;
        case Activation::tanh: return std::tanh(z);
        case Activation::sigmoid: return 1.0 / (1.0 + std::exp(-z));
        case Activation::identity: return z;
    }
    return z;
}

// Derivative expressed through the activation output.
double act_deriv_from_y(Activation a, double y) {
    switch (a) {
        case Activation::relu: return y > 0 ? 1.0 : 0.0;
        case Activation::tanh: return 1.0 - y * y;
        case Activation::sigmoid: return y * (1.0 - y);
        case Activation::identity: return 1.0;
    }
    return 1.0;
}

ValuePtr make_node(Tensor out, std::vector<ValuePtr> parents, const char* op) {
    auto node = std::make_shared<Value>(std::move(out));
    node->parents = std::move(parents);
    node->op = op;
    return node;
}

ValuePtr elementwise(const ValuePtr& a, const char* op,
                     const std::function<double(double)>& f,
                     const std::function<double(double, double)>& dfdx_from_xy) {
    Tensor out(a->val.shape);
    for (size_t i = 0; i < out.size(); ++i) out.data[i] = f(a->val.data[i]);
    auto node = make_node(std::move(out), {a}, op);
    Value* n = node.get();
    Value* pa = a.get();
    node->backprop = [n, pa, dfdx_from_xy] {
        for (size_t i = 0; i < n->grad.size(); ++i)
            pa->grad.data[i] +=
                n->grad.data[i] * dfdx_from_xy(pa->val.data[i], n->val.data[i]);
    };
    return node;
}

}  // namespace

ValuePtr leaf(Tensor t) { return std::make_shared<Value>(std::move(t)); }
ValuePtr leaf(std::vector<double> v) {
    size_t n = v.size();
    return leaf(Tensor({n}, std::move(v)));
}

ValuePtr dense(const ValuePtr& x, const ValuePtr& W, const ValuePtr& b,
               Activation act) {
    if (W->val.shape.size() != 2 || x->val.size() != W->val.cols() ||
        b->val.size() != W->val.rows())
        throw std::invalid_argument("dense: shape mismatch");
    const size_t m = W->val.rows(), n = W->val.cols();
    Tensor out({m});
    for (size_t i = 0; i < m; ++i) {
        double z = b->val.data[i];
        const double* wrow = &W->val.data[i * n];
        for (size_t j = 0; j < n; ++j) z += wrow[j] * x->val.data[j];
        out.data[i] = act_apply(act, z);
    }
    auto node = make_node(std::move(out), {x, W, b}, "dense");
    Value* nd = node.get();
    Value *px = x.get(), *pW = W.get(), *pb = b.get();
    node->backprop = [nd, px, pW, pb, act, m, n] {
        for (size_t i = 0; i < m; ++i) {
            const double dz = nd->grad.data[i] * act_deriv_from_y(act, nd->val.data[i]);
            if (dz == 0.0) continue;
            pb->grad.data[i] += dz;
            const double* wrow = &pW->val.data[i * n];
            double* dwrow = &pW->grad.data[i * n];
            for (size_t j = 0; j < n; ++j) {
                dwrow[j] += dz * px->val.data[j];
                px->grad.data[j] += dz * wrow[j];
            }
        }
    };
    return node;
}

ValuePtr conv1d(const ValuePtr& x, const ValuePtr& kernels) {
    if (x->val.shape.size() != 2 || kernels->val.shape.size() != 3)
        throw std::invalid_argument("conv1d: expects [T x Cin] input, [Cout x w x Cin] kernels");
    const size_t T = x->val.shape[0], cin = x->val.shape[1];
    const size_t cout = kernels->val.shape[0], width = kernels->val.shape[1];
    if (kernels->val.shape[2] != cin)
        throw std::invalid_argument("conv1d: channel mismatch");
    if (T < width)
        throw std::invalid_argument("conv1d: sequence shorter than kernel width");
    const size_t tout = T - width + 1;
    Tensor out({tout, cout});
    for (size_t t = 0; t < tout; ++t)
        for (size_t o = 0; o < cout; ++o) {
            double z = 0.0;
            for (size_t w = 0; w < width; ++w) {
                const double* xrow = &x->val.data[(t + w) * cin];
                const double* krow = &kernels->val.data[(o * width + w) * cin];
                for (size_t c = 0; c < cin; ++c) z += krow[c] * xrow[c];
            }
            out.data[t * cout + o] = z > 0 ? z : 0.0;  // relu
        }
    auto node = make_node(std::move(out), {x, kernels}, "conv1d");
    Value* nd = node.get();
    Value *px = x.get(), *pk = kernels.get();
    node->backprop = [nd, px, pk, tout, cout, width, cin] {
        for (size_t t = 0; t < tout; ++t)
            for (size_t o = 0; o < cout; ++o) {
                const double y = nd->val.data[t * cout + o];
                const double dz = y > 0 ? nd->grad.data[t * cout + o] : 0.0;
                if (dz == 0.0) continue;
                for (size_t w = 0; w < width; ++w) {
                    const double* xrow = &px->val.data[(t + w) * cin];
                    double* dxrow = &px->grad.data[(t + w) * cin];
                    const double* krow = &pk->val.data[(o * width + w) * cin];
                    double* dkrow = &pk->grad.data[(o * width + w) * cin];
                    for (size_t c = 0; c < cin; ++c) {
                        dkrow[c] += dz * xrow[c];
                        dxrow[c] += dz * krow[c];
                    }
                }
            }
    };
    return node;
}

GruParams init_gru(size_t input_dim, size_t hidden_dim, Rng& rng) {
    GruParams p;
    p.Wz = init_matrix(hidden_dim, input_dim, rng);
    p.Uz = init_matrix(hidden_dim, hidden_dim, rng);
    p.bz = init_bias(hidden_dim);
    p.Wr = init_matrix(hidden_dim, input_dim, rng);
    p.Ur = init_matrix(hidden_dim, hidden_dim, rng);
    p.br = init_bias(hidden_dim);
    p.Wh = init_matrix(hidden_dim, input_dim, rng);
    p.Uh = init_matrix(hidden_dim, hidden_dim, rng);
    p.bh = init_bias(hidden_dim);
    return p;
}

ValuePtr gru_sequence(const ValuePtr& x, const GruParams& p, const ValuePtr& h0) {
    if (x->val.shape.size() != 2)
        throw std::invalid_argument("gru_sequence: expects [T x d] input");
    const size_t T = x->val.shape[0];
    if (T == 0) throw std::invalid_argument("gru_sequence: empty sequence");
    const size_t w = p.bz->val.size();
    ValuePtr h = h0 ? h0 : leaf(Tensor({w}, 0.0));
    std::vector<ValuePtr> states;
    states.reserve(T);
    for (size_t t = 0; t < T; ++t) {
        ValuePtr xt = row(x, t);
        // z = sig(Wz x + Uz h + bz); r = sig(Wr x + Ur h + br)
        ValuePtr z = sigmoid(add(add(matvec(p.Wz, xt), matvec(p.Uz, h)), p.bz));
        ValuePtr r = sigmoid(add(add(matvec(p.Wr, xt), matvec(p.Ur, h)), p.br));
        // hcand = tanh(Wh x + Uh (r*h) + bh); h' = (1-z)*h + z*hcand
        ValuePtr hc = tanh_v(add(add(matvec(p.Wh, xt), matvec(p.Uh, mul(r, h))), p.bh));
        h = add(mul(one_minus(z), h), mul(z, hc));
        states.push_back(h);
    }
    return stack_rows(states);
}

ValuePtr mean_pool_time(const ValuePtr& x) {
    if (x->val.shape.size() != 2 || x->val.shape[0] == 0)
        throw std::invalid_argument("mean_pool_time: expects non-empty [T x d]");
    const size_t T = x->val.shape[0], d = x->val.shape[1];
    Tensor out({d});
    for (size_t t = 0; t < T; ++t)
        for (size_t j = 0; j < d; ++j) out.data[j] += x->val.data[t * d + j];
    for (size_t j = 0; j < d; ++j) out.data[j] /= static_cast<double>(T);
    auto node = make_node(std::move(out), {x}, "mean_pool_time");
    Value* nd = node.get();
    Value* px = x.get();
    node->backprop = [nd, px, T, d] {
        const double inv = 1.0 / static_cast<double>(T);
        for (size_t t = 0; t < T; ++t)
            for (size_t j = 0; j < d; ++j)
                px->grad.data[t * d + j] += nd->grad.data[j] * inv;
    };
    return node;
}

ValuePtr grl(const ValuePtr& x, double lambda) {
    if (lambda < 0) throw std::invalid_argument("grl: lambda must be >= 0");
    auto node = make_node(x->val, {x}, "grl");
    Value* nd = node.get();
    Value* px = x.get();
    node->backprop = [nd, px, lambda] {
        for (size_t i = 0; i < nd->grad.size(); ++i)
            px->grad.data[i] += -lambda * nd->grad.data[i];
    };
    return node;
}

ValuePtr weighted_cross_entropy(const ValuePtr& logits, size_t label,
                                const std::vector<double>& class_weights) {
    const size_t k = logits->val.size();
    if (k < 2 || class_weights.size() != k)
        throw std::invalid_argument("weighted_cross_entropy: bad class count");
    if (label >= k) throw std::out_of_range("weighted_cross_entropy: label out of range");
    const double w = class_weights[label];
    const double zmax = *std::max_element(logits->val.data.begin(), logits->val.data.end());
    double denom = 0.0;
    for (double z : logits->val.data) denom += std::exp(z - zmax);
    const double logsumexp = zmax + std::log(denom);
    Tensor out({1}, {-w * (logits->val.data[label] - logsumexp)});
    auto node = make_node(std::move(out), {logits}, "weighted_ce");
    Value* nd = node.get();
    Value* pl = logits.get();
    node->backprop = [nd, pl, label, w, zmax, logsumexp] {
        const double g = nd->grad.data[0];
        for (size_t j = 0; j < pl->val.size(); ++j) {
            const double p = std::exp(pl->val.data[j] - logsumexp);
            pl->grad.data[j] += g * w * (p - (j == label ? 1.0 : 0.0));
        }
    };
    return node;
}

ValuePtr add(const ValuePtr& a, const ValuePtr& b) {
    if (!a->val.same_shape(b->val)) throw std::invalid_argument("add: shape mismatch");
    Tensor out(a->val.shape);
    for (size_t i = 0; i < out.size(); ++i)
        out.data[i] = a->val.data[i] + b->val.data[i];
    auto node = make_node(std::move(out), {a, b}, "add");
    Value* nd = node.get();
    Value *pa = a.get(), *pb = b.get();
    node->backprop = [nd, pa, pb] {
        for (size_t i = 0; i < nd->grad.size(); ++i) {
            pa->grad.data[i] += nd->grad.data[i];
            pb->grad.data[i] += nd->grad.data[i];
        }
    };
    return node;
}

ValuePtr mul(const ValuePtr& a, const ValuePtr& b) {
    if (!a->val.same_shape(b->val)) throw std::invalid_argument("mul: shape mismatch");
    Tensor out(a->val.shape);
    for (size_t i = 0; i < out.size(); ++i)
        out.data[i] = a->val.data[i] * b->val.data[i];
    auto node = make_node(std::move(out), {a, b}, "mul");
    Value* nd = node.get();
    Value *pa = a.get(), *pb = b.get();
    node->backprop = [nd, pa, pb] {
        for (size_t i = 0; i < nd->grad.size(); ++i) {
            pa->grad.data[i] += nd->grad.data[i] * pb->val.data[i];
            pb->grad.data[i] += nd->grad.data[i] * pa->val.data[i];
        }
    };
    return node;
}

ValuePtr one_minus(const ValuePtr& a) {
    return elementwise(a, "one_minus", [](double x) { return 1.0 - x; },
                       [](double, double) { return -1.0; });
}

ValuePtr sigmoid(const ValuePtr& a) {
    return elementwise(a, "sigmoid",
                       [](double x) { return 1.0 / (1.0 + std::exp(-x)); },
                       [](double, double y) { return y * (1.0 - y); });
}

ValuePtr tanh_v(const ValuePtr& a) {
    return elementwise(a, "tanh", [](double x) { return std::tanh(x); },
                       [](double, double y) { return 1.0 - y * y; });
}

ValuePtr relu(const ValuePtr& a) {
    return elementwise(a, "relu", [](double x) { return x > 0 ? x : 0.0; },
                       [](double, double y) { return y > 0 ? 1.0 : 0.0; });
}

ValuePtr matvec(const ValuePtr& W, const ValuePtr& x) {
    if (W->val.shape.size() != 2 || x->val.size() != W->val.cols())
        throw std::invalid_argument("matvec: shape mismatch");
    const size_t m = W->val.rows(), n = W->val.cols();
    Tensor out({m});
    for (size_t i = 0; i < m; ++i) {
        double acc = 0.0;
        const double* wrow = &W->val.data[i * n];
        for (size_t j = 0; j < n; ++j) acc += wrow[j] * x->val.data[j];
        out.data[i] = acc;
    }
    auto node = make_node(std::move(out), {W, x}, "matvec");
    Value* nd = node.get();
    Value *pW = W.get(), *px = x.get();
    node->backprop = [nd, pW, px, m, n] {
        for (size_t i = 0; i < m; ++i) {
            const double g = nd->grad.data[i];
            if (g == 0.0) continue;
            const double* wrow = &pW->val.data[i * n];
            double* dwrow = &pW->grad.data[i * n];
            for (size_t j = 0; j < n; ++j) {
                dwrow[j] += g * px->val.data[j];
                px->grad.data[j] += g * wrow[j];
            }
        }
    };
    return node;
}

ValuePtr concat(const ValuePtr& a, const ValuePtr& b) {
    Tensor out({a->val.size() + b->val.size()});
    std::copy(a->val.data.begin(), a->val.data.end(), out.data.begin());
    std::copy(b->val.data.begin(), b->val.data.end(), out.data.begin() + a->val.size());
    auto node = make_node(std::move(out), {a, b}, "concat");
    Value* nd = node.get();
    Value *pa = a.get(), *pb = b.get();
    const size_t na = a->val.size();
    node->backprop = [nd, pa, pb, na] {
        for (size_t i = 0; i < na; ++i) pa->grad.data[i] += nd->grad.data[i];
        for (size_t i = 0; i < pb->grad.size(); ++i)
            pb->grad.data[i] += nd->grad.data[na + i];
    };
    return node;
}

ValuePtr row(const ValuePtr& x, size_t r) {
    if (x->val.shape.size() != 2 || r >= x->val.rows())
        throw std::invalid_argument("row: index out of range");
    const size_t d = x->val.cols();
    Tensor out({d});
    std::copy_n(&x->val.data[r * d], d, out.data.begin());
    auto node = make_node(std::move(out), {x}, "row");
    Value* nd = node.get();
    Value* px = x.get();
    node->backprop = [nd, px, r, d] {
        for (size_t j = 0; j < d; ++j) px->grad.data[r * d + j] += nd->grad.data[j];
    };
    return node;
}

ValuePtr stack_rows(const std::vector<ValuePtr>& rows) {
    if (rows.empty()) throw std::invalid_argument("stack_rows: empty");
    const size_t d = rows[0]->val.size();
    Tensor out({rows.size(), d});
    for (size_t t = 0; t < rows.size(); ++t) {
        if (rows[t]->val.size() != d)
            throw std::invalid_argument("stack_rows: ragged rows");
        std::copy(rows[t]->val.data.begin(), rows[t]->val.data.end(),
                  out.data.begin() + t * d);
    }
    auto node = make_node(std::move(out), rows, "stack_rows");
    Value* nd = node.get();
    std::vector<Value*> ps;
    for (auto& r : rows) ps.push_back(r.get());
    node->backprop = [nd, ps, d] {
        for (size_t t = 0; t < ps.size(); ++t)
            for (size_t j = 0; j < d; ++j)
                ps[t]->grad.data[j] += nd->grad.data[t * d + j];
    };
    return node;
}

ValuePtr sum(const ValuePtr& x) {
    double s = 0.0;
    for (double v : x->val.data) s += v;
    auto node = make_node(Tensor({1}, {s}), {x}, "sum");
    Value* nd = node.get();
    Value* px = x.get();
    node->backprop = [nd, px] {
        for (size_t i = 0; i < px->grad.size(); ++i)
            px->grad.data[i] += nd->grad.data[0];
    };
    return node;
}

ValuePtr scale(const ValuePtr& x, double c) {
    return elementwise(x, "scale", [c](double v) { return c * v; },
                       [c](double, double) { return c; });
}

ValuePtr mean_of(const std::vector<ValuePtr>& scalars) {
    if (scalars.empty()) throw std::invalid_argument("mean_of: empty");
    double s = 0.0;
    for (auto& v : scalars) s += v->val.data.at(0);
    auto node = make_node(Tensor({1}, {s / scalars.size()}), scalars, "mean_of");
    Value* nd = node.get();
    std::vector<Value*> ps;
    for (auto& v : scalars) ps.push_back(v.get());
    node->backprop = [nd, ps] {
        const double g = nd->grad.data[0] / ps.size();
        for (Value* p : ps) p->grad.data[0] += g;
    };
    return node;
}

std::vector<double> softmax(const Tensor& logits) {
    const double zmax = *std::max_element(logits.data.begin(), logits.data.end());
    std::vector<double> p(logits.size());
    double denom = 0.0;
    for (size_t i = 0; i < p.size(); ++i) denom += (p[i] = std::exp(logits.data[i] - zmax));
    for (double& v : p) v /= denom;
    return p;
}

void backward(const ValuePtr& loss) {
    if (loss->val.size() != 1)
        throw std::invalid_argument("backward: loss must be scalar");
    check_finite(loss->val, "backward");
    // Iterative DFS with tri-color marking; a grey revisit means a cycle.
    std::vector<Value*> order;
    std::unordered_map<Value*, int> state;  // 0 absent / 1 grey / 2 black
    std::vector<std::pair<Value*, size_t>> stack{{loss.get(), 0}};
    state[loss.get()] = 1;
    while (!stack.empty()) {
        auto& [node, idx] = stack.back();
        if (idx < node->parents.size()) {
            Value* p = node->parents[idx++].get();
            const int s = state[p];
            if (s == 1) throw std::runtime_error("backward: cycle detected in graph");
            if (s == 0) {
                state[p] = 1;
                stack.push_back({p, 0});
            }
        } else {
            state[node] = 2;
            order.push_back(node);
            stack.pop_back();
        }
    }
    loss->grad.data[0] = 1.0;
    for (auto it = order.rbegin(); it != order.rend(); ++it)
        if ((*it)->backprop) (*it)->backprop();
}

double finite_diff_check(const std::function<ValuePtr()>& build,
                         const std::vector<ValuePtr>& params, double eps) {
    for (auto& p : params) p->zero_grad();
    ValuePtr loss = build();
    if (!std::isfinite(loss->val.data[0]))
        throw std::runtime_error("finite_diff_check: non-finite loss");
    backward(loss);
    std::vector<Tensor> analytic;
    for (auto& p : params) analytic.push_back(p->grad);

    double max_err = 0.0;
    for (size_t pi = 0; pi < params.size(); ++pi) {
        for (size_t i = 0; i < params[pi]->val.size(); ++i) {
            double& theta = params[pi]->val.data[i];
            const double orig = theta;
            theta = orig + eps;
            const double fp = build()->val.data[0];
            theta = orig - eps;
            const double fm = build()->val.data[0];
            theta = orig;
            if (!std::isfinite(fp) || !std::isfinite(fm))
                throw std::runtime_error("finite_diff_check: non-finite loss");
            const double numeric = (fp - fm) / (2.0 * eps);
            const double a = analytic[pi].data[i];
            const double denom = std::max({std::fabs(a), std::fabs(numeric), 1e-8});
            max_err = std::max(max_err, std::fabs(a - numeric) / denom);
        }
    }
    return max_err;
}

ValuePtr init_matrix(size_t rows, size_t cols, Rng& rng) {
    const double limit = std::sqrt(6.0 / static_cast<double>(rows + cols));
    Tensor t({rows, cols});
    for (double& v : t.data) v = rng.uniform(-limit, limit);
    return leaf(std::move(t));
}

ValuePtr init_bias(size_t n) { return leaf(Tensor({n}, 0.0)); }

ValuePtr init_conv(size_t c_out, size_t width, size_t c_in, Rng& rng) {
    const double fan_in = static_cast<double>(width * c_in);
    const double fan_out = static_cast<double>(width * c_out);
    const double limit = std::sqrt(6.0 / (fan_in + fan_out));
    Tensor t({c_out, width, c_in});
    for (double& v : t.data) v = rng.uniform(-limit, limit);
    return leaf(std::move(t));
}

}  // namespace emopriv::ad
