#include "mipl/tape.hpp"

#include <algorithm>
#include <cmath>

#include "mipl/errors.hpp"
#include "mipl/kernels.hpp"

namespace mipl::ad {

namespace {

void require_scalar(const NodePtr& n, const char* op) {
    if (n->value.rows != 1 || n->value.cols != 1)
        throw dim_error(std::string(op) + ": expected 1x1 scalar, got " +
                        n->value.shape_str());
}

} // namespace

NodePtr Tape::record(Matrix value, std::vector<NodePtr> parents,
                     std::function<void(const Node&)> back, const char* op) {
    auto n = std::make_shared<Node>();
    n->grad = Matrix(value.rows, value.cols, 0.0);
    n->value = std::move(value);
    n->parents = std::move(parents);
    n->backward_fn = std::move(back);
    n->op = op;
    order_.push_back(n);
    return n;
}

NodePtr Tape::leaf(Matrix value) {
    if (value.empty()) throw dim_error("leaf: empty matrix");
    return record(std::move(value), {}, nullptr, "leaf");
}

NodePtr Tape::constant(Matrix value) {
    if (value.empty()) throw dim_error("constant: empty matrix");
    return record(std::move(value), {}, nullptr, "constant");
}

NodePtr Tape::matmul(const NodePtr& a, const NodePtr& b) {
    if (a->value.cols != b->value.rows)
        throw dim_error("matmul: inner dimensions disagree, lhs " +
                        a->value.shape_str() + " rhs " + b->value.shape_str());
    const int m = a->value.rows, k = a->value.cols, n = b->value.cols;
    Matrix out(m, n);
    kernels::gemm_nn(a->value.data.data(), b->value.data.data(), out.data.data(), m, k, n, false);
    return record(std::move(out), {a, b}, [a, b, m, k, n](const Node& self) {
        // dA += g * B^T, dB += A^T * g
        kernels::gemm_nt(self.grad.data.data(), b->value.data.data(),
                         a->grad.data.data(), m, n, k, true);
        kernels::gemm_tn(a->value.data.data(), self.grad.data.data(),
                         b->grad.data.data(), k, m, n, true);
    }, "matmul");
}

NodePtr Tape::transpose(const NodePtr& x) {
    const int r = x->value.rows, c = x->value.cols;
    Matrix out(c, r);
    for (int i = 0; i < r; ++i)
        for (int j = 0; j < c; ++j) out.at(j, i) = x->value.at(i, j);
    return record(std::move(out), {x}, [x, r, c](const Node& self) {
        for (int i = 0; i < r; ++i)
            for (int j = 0; j < c; ++j) x->grad.at(i, j) += self.grad.at(j, i);
    }, "transpose");
}

NodePtr Tape::add(const NodePtr& a, const NodePtr& b) {
    require_same_shape(a->value, b->value, "add");
    Matrix out = a->value;
    for (std::size_t i = 0; i < out.size(); ++i) out.data[i] += b->value.data[i];
    return record(std::move(out), {a, b}, [a, b](const Node& self) {
        for (std::size_t i = 0; i < self.grad.size(); ++i) {
            a->grad.data[i] += self.grad.data[i];
            b->grad.data[i] += self.grad.data[i];
        }
    }, "add");
}

NodePtr Tape::sub(const NodePtr& a, const NodePtr& b) {
    require_same_shape(a->value, b->value, "sub");
    Matrix out = a->value;
    for (std::size_t i = 0; i < out.size(); ++i) out.data[i] -= b->value.data[i];
    return record(std::move(out), {a, b}, [a, b](const Node& self) {
        for (std::size_t i = 0; i < self.grad.size(); ++i) {
            a->grad.data[i] += self.grad.data[i];
            b->grad.data[i] -= self.grad.data[i];
        }
    }, "sub");
}

NodePtr Tape::mul(const NodePtr& a, const NodePtr& b) {
    require_same_shape(a->value, b->value, "mul");
    Matrix out = a->value;
    for (std::size_t i = 0; i < out.size(); ++i) out.data[i] *= b->value.data[i];
    return record(std::move(out), {a, b}, [a, b](const Node& self) {
        for (std::size_t i = 0; i < self.grad.size(); ++i) {
            a->grad.data[i] += self.grad.data[i] * b->value.data[i];
            b->grad.data[i] += self.grad.data[i] * a->value.data[i];
        }
    }, "mul");
}

NodePtr Tape::tanh(const NodePtr& x) {
    Matrix out = x->value;
    for (double& v : out.data) v = std::tanh(v);
    return record(std::move(out), {x}, [x](const Node& self) {
        for (std::size_t i = 0; i < self.grad.size(); ++i) {
            const double y = self.value.data[i];
            x->grad.data[i] += self.grad.data[i] * (1.0 - y * y);
        }
    }, "tanh");
}

NodePtr Tape::sigmoid(const NodePtr& x) {
    Matrix out = x->value;
    // Branch keeps exp() off large positive arguments.
    for (double& v : out.data)
        v = v >= 0.0 ? 1.0 / (1.0 + std::exp(-v))
                     : std::exp(v) / (1.0 + std::exp(v));
    return record(std::move(out), {x}, [x](const Node& self) {
        for (std::size_t i = 0; i < self.grad.size(); ++i) {
            const double y = self.value.data[i];
            x->grad.data[i] += self.grad.data[i] * y * (1.0 - y);
        }
    }, "sigmoid");
}

NodePtr Tape::relu(const NodePtr& x) {
    Matrix out = x->value;
    for (double& v : out.data) v = v > 0.0 ? v : 0.0;
    return record(std::move(out), {x}, [x](const Node& self) {
        for (std::size_t i = 0; i < self.grad.size(); ++i)
            if (x->value.data[i] > 0.0) x->grad.data[i] += self.grad.data[i];
    }, "relu");
}

NodePtr Tape::log(const NodePtr& x) {
    Matrix out = x->value;
    for (std::size_t i = 0; i < out.size(); ++i) {
        if (!(out.data[i] > 0.0))
            throw domain_error("log: non-positive entry at flat index " +
                               std::to_string(i) + " (value " +
                               std::to_string(out.data[i]) + ")");
        out.data[i] = std::log(out.data[i]);
    }
    return record(std::move(out), {x}, [x](const Node& self) {
        for (std::size_t i = 0; i < self.grad.size(); ++i)
            x->grad.data[i] += self.grad.data[i] / x->value.data[i];
    }, "log");
}

NodePtr Tape::sqrt(const NodePtr& x) {
    Matrix out = x->value;
    for (std::size_t i = 0; i < out.size(); ++i) {
        if (out.data[i] < 0.0)
            throw domain_error("sqrt: negative entry at flat index " +
                               std::to_string(i));
        out.data[i] = std::sqrt(out.data[i]);
    }
    return record(std::move(out), {x}, [x](const Node& self) {
        // Guarded denominator: at x exactly 0 the chain partner is an exact
        // zero in every use here, and clamping turns 0*inf into 0.
        for (std::size_t i = 0; i < self.grad.size(); ++i)
            x->grad.data[i] +=
                self.grad.data[i] / (2.0 * std::max(self.value.data[i], 1e-150));
    }, "sqrt");
}

NodePtr Tape::scale(const NodePtr& x, double c) {
    Matrix out = x->value;
    for (double& v : out.data) v *= c;
    return record(std::move(out), {x}, [x, c](const Node& self) {
        for (std::size_t i = 0; i < self.grad.size(); ++i)
            x->grad.data[i] += self.grad.data[i] * c;
    }, "scale");
}

NodePtr Tape::add_const(const NodePtr& x, double c) {
    Matrix out = x->value;
    for (double& v : out.data) v += c;
    return record(std::move(out), {x}, [x](const Node& self) {
        for (std::size_t i = 0; i < self.grad.size(); ++i)
            x->grad.data[i] += self.grad.data[i];
    }, "add_const");
}

NodePtr Tape::clamp_min(const NodePtr& x, double c) {
    Matrix out = x->value;
    for (double& v : out.data) v = std::max(v, c);
    return record(std::move(out), {x}, [x, c](const Node& self) {
        for (std::size_t i = 0; i < self.grad.size(); ++i)
            if (x->value.data[i] > c) x->grad.data[i] += self.grad.data[i];
    }, "clamp_min");
}

NodePtr Tape::add_colvec(const NodePtr& m, const NodePtr& b) {
    if (b->value.cols != 1 || b->value.rows != m->value.rows)
        throw dim_error("add_colvec: bias " + b->value.shape_str() +
                        " does not broadcast over " + m->value.shape_str());
    Matrix out = m->value;
    for (int i = 0; i < out.rows; ++i)
        for (int j = 0; j < out.cols; ++j) out.at(i, j) += b->value.at(i, 0);
    return record(std::move(out), {m, b}, [m, b](const Node& self) {
        for (int i = 0; i < self.grad.rows; ++i) {
            double rowsum = 0.0;
            for (int j = 0; j < self.grad.cols; ++j) {
                m->grad.at(i, j) += self.grad.at(i, j);
                rowsum += self.grad.at(i, j);
            }
            b->grad.at(i, 0) += rowsum;
        }
    }, "add_colvec");
}

NodePtr Tape::sub_scalar(const NodePtr& x, const NodePtr& s) {
    require_scalar(s, "sub_scalar");
    Matrix out = x->value;
    const double sv = s->value.data[0];
    for (double& v : out.data) v -= sv;
    return record(std::move(out), {x, s}, [x, s](const Node& self) {
        double gsum = 0.0;
        for (std::size_t i = 0; i < self.grad.size(); ++i) {
            x->grad.data[i] += self.grad.data[i];
            gsum += self.grad.data[i];
        }
        s->grad.data[0] -= gsum;
    }, "sub_scalar");
}

NodePtr Tape::div_scalar(const NodePtr& x, const NodePtr& s) {
    require_scalar(s, "div_scalar");
    const double sv = s->value.data[0];
    if (sv == 0.0) throw domain_error("div_scalar: division by zero");
    Matrix out = x->value;
    for (double& v : out.data) v /= sv;
    return record(std::move(out), {x, s}, [x, s, sv](const Node& self) {
        double acc = 0.0;
        for (std::size_t i = 0; i < self.grad.size(); ++i) {
            x->grad.data[i] += self.grad.data[i] / sv;
            acc += self.grad.data[i] * x->value.data[i];
        }
        s->grad.data[0] -= acc / (sv * sv);
    }, "div_scalar");
}

NodePtr Tape::softmax_t(const NodePtr& scores, double tau) {
    if (scores->value.rows != 1)
        throw dim_error("softmax_t: expected a 1xN row of scores, got " +
                        scores->value.shape_str());
    if (!(tau > 0.0))
        throw config_error("softmax_t: temperature must be positive, got " +
                           std::to_string(tau));
    const int n = scores->value.cols;
    Matrix out(1, n);
    double hi = scores->value.data[0];
    for (int j = 1; j < n; ++j) hi = std::max(hi, scores->value.data[j]);
    double z = 0.0;
    for (int j = 0; j < n; ++j) {
        out.data[j] = std::exp((scores->value.data[j] - hi) / tau);
        z += out.data[j];
    }
    for (int j = 0; j < n; ++j) out.data[j] /= z;
    return record(std::move(out), {scores}, [scores, tau, n](const Node& self) {
        double dot = 0.0;
        for (int j = 0; j < n; ++j) dot += self.grad.data[j] * self.value.data[j];
        for (int j = 0; j < n; ++j)
            scores->grad.data[j] +=
                self.value.data[j] * (self.grad.data[j] - dot) / tau;
    }, "softmax_t");
}

NodePtr Tape::sum(const NodePtr& x) {
    double s = 0.0;
    for (double v : x->value.data) s += v;
    return record(Matrix::from(1, 1, {s}), {x}, [x](const Node& self) {
        const double g = self.grad.data[0];
        for (double& gv : x->grad.data) gv += g;
    }, "sum");
}

NodePtr Tape::mean(const NodePtr& x) {
    const double n = static_cast<double>(x->value.size());
    double s = 0.0;
    for (double v : x->value.data) s += v;
    return record(Matrix::from(1, 1, {s / n}), {x}, [x, n](const Node& self) {
        const double g = self.grad.data[0] / n;
        for (double& gv : x->grad.data) gv += g;
    }, "mean");
}

NodePtr Tape::max_over(const NodePtr& x, const std::vector<int>& idx) {
    if (idx.empty()) throw contract_error("max_over: empty index set");
    const int total = static_cast<int>(x->value.size());
    int best = -1;
    double best_v = 0.0, second_v = 0.0;
    bool have_second = false;
    for (int i : idx) {
        if (i < 0 || i >= total)
            throw contract_error("max_over: index " + std::to_string(i) +
                                 " out of range for " + x->value.shape_str());
        const double v = x->value.data[i];
        if (best < 0 || v > best_v) {
            if (best >= 0) { second_v = best_v; have_second = true; }
            best = i;
            best_v = v;
        } else if (!have_second || v > second_v) {
            second_v = v;
            have_second = true;
        }
    }
    if (have_second)
        min_max_margin_ = std::min(min_max_margin_, best_v - second_v);
    return record(Matrix::from(1, 1, {best_v}), {x}, [x, best](const Node& self) {
        x->grad.data[best] += self.grad.data[0];
    }, "max_over");
}

NodePtr Tape::concat_scalars(const std::vector<NodePtr>& xs) {
    if (xs.empty()) throw contract_error("concat_scalars: empty input list");
    const int n = static_cast<int>(xs.size());
    Matrix out(1, n);
    for (int i = 0; i < n; ++i) {
        require_scalar(xs[i], "concat_scalars");
        out.data[i] = xs[i]->value.data[0];
    }
    std::vector<NodePtr> parents(xs.begin(), xs.end());
    return record(std::move(out), std::move(parents), [xs, n](const Node& self) {
        for (int i = 0; i < n; ++i) xs[i]->grad.data[0] += self.grad.data[i];
    }, "concat_scalars");
}

void Tape::backward(const NodePtr& root) {
    if (backward_done_)
        throw contract_error(
            "tape: backward already ran; rebuild the graph before "
            "differentiating again");
    require_scalar(root, "backward");
    backward_done_ = true;
    root->grad.data[0] = 1.0;
    for (auto it = order_.rbegin(); it != order_.rend(); ++it)
        if ((*it)->backward_fn) (*it)->backward_fn(**it);
}

} // namespace mipl::ad
