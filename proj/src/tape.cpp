#include "msrg/tape.hpp"

#include <cmath>
#include <utility>

#include "msrg/errors.hpp"
#include "msrg/kernels.hpp"

namespace msrg {

LossKind loss_kind_from_string(const std::string& name) {
    if (name == "l1") return LossKind::l1;
    if (name == "mse") return LossKind::mse;
    if (name == "smoothl1" || name == "smooth_l1") return LossKind::smooth_l1;
    if (name == "negcos" || name == "neg_cosine") return LossKind::neg_cosine;
    throw UsageError("unknown loss kind '" + name + "' (expected l1|mse|smoothl1|negcos)");
}

const char* loss_kind_name(LossKind kind) {
    switch (kind) {
        case LossKind::l1: return "l1";
        case LossKind::mse: return "mse";
        case LossKind::smooth_l1: return "smoothl1";
        case LossKind::neg_cosine: return "negcos";
    }
    return "?";
}

namespace {

Tensor transpose_2d(const Tensor& x) {
    const int64_t r = x.rows(), c = x.cols();
    Tensor out({c, r});
    for (int64_t i = 0; i < r; ++i) {
        for (int64_t j = 0; j < c; ++j) out.at(j, i) = x.at(i, j);
    }
    return out;
}

// Row softmax in float64. Returns probabilities for one row.
std::vector<double> softmax_row(const float* logits, int64_t k) {
    double mx = -1e300;
    for (int64_t j = 0; j < k; ++j) mx = std::max(mx, static_cast<double>(logits[j]));
    std::vector<double> p(static_cast<size_t>(k));
    double z = 0.0;
    for (int64_t j = 0; j < k; ++j) {
        p[static_cast<size_t>(j)] = std::exp(static_cast<double>(logits[j]) - mx);
        z += p[static_cast<size_t>(j)];
    }
    for (auto& v : p) v /= z;
    return p;
}

}  // namespace

Tape::Value Tape::push(Node node, const char* context) {
    ensure_finite(node.value, context);
    nodes_.push_back(std::move(node));
    return Value{static_cast<int32_t>(nodes_.size() - 1)};
}

const Tape::Node& Tape::node(Value v) const {
    if (!v.valid() || static_cast<size_t>(v.id) >= nodes_.size()) {
        throw UsageError("tape: invalid node handle");
    }
    return nodes_[static_cast<size_t>(v.id)];
}

const Tensor& Tape::value(Value v) const { return node(v).value; }

double Tape::scalar(Value v) const {
    const Node& n = node(v);
    if (n.value.size() != 1) {
        throw UsageError("tape: scalar() on non-scalar node of shape " + n.value.shape_str());
    }
    switch (n.op) {
        case Op::loss_l1:
        case Op::loss_mse:
        case Op::loss_smooth_l1:
        case Op::loss_neg_cosine:
        case Op::cross_entropy:
        case Op::softmax_entropy:
        case Op::add:
        case Op::sub:
        case Op::scale:
            return n.scalar;
        default:
            return static_cast<double>(n.value[0]);
    }
}

Tape::Value Tape::leaf(Tensor t) {
    Node n;
    n.op = Op::leaf;
    n.value = std::move(t);
    n.requires_grad = true;
    return push(std::move(n), "leaf");
}

Tape::Value Tape::constant(Tensor t) {
    Node n;
    n.op = Op::constant;
    n.value = std::move(t);
    return push(std::move(n), "constant");
}

Tape::Value Tape::matmul(Value a, Value b) {
    const Node& na = node(a);
    const Node& nb = node(b);
    const Tensor& ta = na.value;
    const Tensor& tb = nb.value;
    if (ta.ndim() != 2 || tb.ndim() != 2 || ta.cols() != tb.rows()) {
        throw DimensionError("matmul: incompatible shapes " + ta.shape_str() + " and " +
                             tb.shape_str());
    }
    Node n;
    n.op = Op::matmul;
    n.inputs = {a.id, b.id};
    n.requires_grad = na.requires_grad || nb.requires_grad;
    n.value = Tensor({ta.rows(), tb.cols()});
    kernels::matmul_nn(ta.data(), tb.data(), n.value.data(), ta.rows(), ta.cols(), tb.cols());
    return push(std::move(n), "matmul");
}

Tape::Value Tape::transpose(Value a) {
    const Node& na = node(a);
    Node n;
    n.op = Op::transpose;
    n.inputs = {a.id};
    n.requires_grad = na.requires_grad;
    n.value = transpose_2d(na.value);
    return push(std::move(n), "transpose");
}

Tape::Value Tape::add(Value a, Value b) {
    const Node& na = node(a);
    const Node& nb = node(b);
    ensure_same_shape(na.value, nb.value, "add");
    Node n;
    n.op = Op::add;
    n.inputs = {a.id, b.id};
    n.requires_grad = na.requires_grad || nb.requires_grad;
    n.value = Tensor(na.value.shape());
    kernels::add(na.value.data(), nb.value.data(), n.value.data(), n.value.size());
    if (n.value.size() == 1) n.scalar = scalar(a) + scalar(b);
    return push(std::move(n), "add");
}

Tape::Value Tape::sub(Value a, Value b) {
    const Node& na = node(a);
    const Node& nb = node(b);
    ensure_same_shape(na.value, nb.value, "sub");
    Node n;
    n.op = Op::sub;
    n.inputs = {a.id, b.id};
    n.requires_grad = na.requires_grad || nb.requires_grad;
    n.value = Tensor(na.value.shape());
    kernels::sub(na.value.data(), nb.value.data(), n.value.data(), n.value.size());
    if (n.value.size() == 1) n.scalar = scalar(a) - scalar(b);
    return push(std::move(n), "sub");
}

Tape::Value Tape::add_bias(Value x, Value bias) {
    const Node& nx = node(x);
    const Node& nb = node(bias);
    if (nx.value.ndim() != 2 || nb.value.ndim() != 1 || nb.value.dim(0) != nx.value.cols()) {
        throw DimensionError("add_bias: shapes " + nx.value.shape_str() + " and " +
                             nb.value.shape_str());
    }
    Node n;
    n.op = Op::add_bias;
    n.inputs = {x.id, bias.id};
    n.requires_grad = nx.requires_grad || nb.requires_grad;
    n.value = Tensor(nx.value.shape());
    const int64_t rows = nx.value.rows(), cols = nx.value.cols();
    for (int64_t i = 0; i < rows; ++i) {
        kernels::add(nx.value.data() + i * cols, nb.value.data(), n.value.data() + i * cols, cols);
    }
    return push(std::move(n), "add_bias");
}

Tape::Value Tape::scale(Value a, double c) {
    if (!std::isfinite(c)) throw NumericalError("scale: non-finite factor");
    const Node& na = node(a);
    Node n;
    n.op = Op::scale;
    n.inputs = {a.id};
    n.requires_grad = na.requires_grad;
    n.c0 = c;
    n.value = Tensor(na.value.shape());
    kernels::scale(na.value.data(), c, n.value.data(), n.value.size());
    if (n.value.size() == 1) n.scalar = c * scalar(a);
    return push(std::move(n), "scale");
}

Tape::Value Tape::relu(Value a) {
    const Node& na = node(a);
    Node n;
    n.op = Op::relu;
    n.inputs = {a.id};
    n.requires_grad = na.requires_grad;
    n.value = Tensor(na.value.shape());
    kernels::relu(na.value.data(), n.value.data(), n.value.size());
    return push(std::move(n), "relu");
}

Tape::Value Tape::combine(Value coeffs, Tensor base, std::vector<Tensor> deltas,
                          std::vector<int32_t> coeff_index) {
    const Node& nc = node(coeffs);
    if (nc.value.ndim() != 1) {
        throw DimensionError("combine: coefficients must be 1-d, got " + nc.value.shape_str());
    }
    if (deltas.size() != coeff_index.size()) {
        throw DimensionError("combine: one coefficient index per delta required");
    }
    for (const Tensor& d : deltas) ensure_same_shape(base, d, "combine");
    for (int32_t idx : coeff_index) {
        if (idx < 0 || idx >= nc.value.size()) {
            throw DimensionError("combine: coefficient index out of range");
        }
    }
    Node n;
    n.op = Op::combine;
    n.inputs = {coeffs.id};
    n.requires_grad = nc.requires_grad;
    n.value = base;
    for (size_t t = 0; t < deltas.size(); ++t) {
        const double lam = static_cast<double>(nc.value[coeff_index[t]]);
        kernels::axpy(lam, deltas[t].data(), n.value.data(), n.value.size());
    }
    n.aux = std::move(base);
    n.aux_list = std::move(deltas);
    n.aux_idx = std::move(coeff_index);
    return push(std::move(n), "combine");
}

Tape::Value Tape::loss(LossKind kind, Value pred, Tensor target, double smooth_l1_delta) {
    const Node& np = node(pred);
    ensure_same_shape(np.value, target, "loss");
    ensure_finite(target, "loss target");
    const Tensor& p = np.value;
    const int64_t numel = p.size();
    if (numel == 0) throw DimensionError("loss: empty tensors");

    Node n;
    n.inputs = {pred.id};
    n.requires_grad = np.requires_grad;
    n.c0 = smooth_l1_delta;
    double result = 0.0;

    switch (kind) {
        case LossKind::l1:
            n.op = Op::loss_l1;
            result = kernels::sum_abs_diff(p.data(), target.data(), numel) /
                     static_cast<double>(numel);
            break;
        case LossKind::mse: {
            n.op = Op::loss_mse;
            Tensor diff(p.shape());
            kernels::sub(p.data(), target.data(), diff.data(), numel);
            result = kernels::sum_sq(diff.data(), numel) / static_cast<double>(numel);
            break;
        }
        case LossKind::smooth_l1: {
            n.op = Op::loss_smooth_l1;
            if (!(smooth_l1_delta > 0.0)) throw UsageError("smooth_l1: delta must be positive");
            double acc = 0.0;
            for (int64_t i = 0; i < numel; ++i) {
                const double d = static_cast<double>(p[i]) - static_cast<double>(target[i]);
                const double a = std::fabs(d);
                acc += a < smooth_l1_delta ? 0.5 * d * d / smooth_l1_delta
                                           : a - 0.5 * smooth_l1_delta;
            }
            result = acc / static_cast<double>(numel);
            break;
        }
        case LossKind::neg_cosine: {
            n.op = Op::loss_neg_cosine;
            if (p.ndim() != 2) {
                throw DimensionError("neg_cosine: expected 2-d batch, got " + p.shape_str());
            }
            const int64_t rows = p.rows(), cols = p.cols();
            double acc = 0.0;
            for (int64_t i = 0; i < rows; ++i) {
                const float* pr = p.data() + i * cols;
                const float* qr = target.data() + i * cols;
                const double npr = std::sqrt(kernels::sum_sq(pr, cols));
                const double nqr = std::sqrt(kernels::sum_sq(qr, cols));
                if (npr == 0.0 || nqr == 0.0) {
                    throw DegenerateInputError("neg_cosine: zero-norm row " + std::to_string(i));
                }
                acc += -kernels::dot(pr, qr, cols) / (npr * nqr);
            }
            result = acc / static_cast<double>(rows);
            break;
        }
    }
    if (!std::isfinite(result)) throw NumericalError("loss: non-finite value");
    n.scalar = result;
    n.value = Tensor({1}, {static_cast<float>(result)});
    n.aux = std::move(target);
    return push(std::move(n), "loss");
}

Tape::Value Tape::mean_cross_entropy(Value logits, std::vector<int32_t> labels) {
    const Node& nl = node(logits);
    const Tensor& z = nl.value;
    if (z.ndim() != 2) throw DimensionError("cross_entropy: expected 2-d logits");
    const int64_t rows = z.rows(), cols = z.cols();
    if (static_cast<int64_t>(labels.size()) != rows) {
        throw DimensionError("cross_entropy: label count != batch rows");
    }
    if (rows == 0) throw DimensionError("cross_entropy: empty batch");
    for (int32_t y : labels) {
        if (y < 0 || y >= cols) throw DimensionError("cross_entropy: label out of range");
    }

    double acc = 0.0;
    for (int64_t i = 0; i < rows; ++i) {
        const float* row = z.data() + i * cols;
        double mx = -1e300;
        for (int64_t j = 0; j < cols; ++j) mx = std::max(mx, static_cast<double>(row[j]));
        double lse = 0.0;
        for (int64_t j = 0; j < cols; ++j) lse += std::exp(static_cast<double>(row[j]) - mx);
        lse = mx + std::log(lse);
        acc += lse - static_cast<double>(row[labels[static_cast<size_t>(i)]]);
    }
    const double result = acc / static_cast<double>(rows);
    if (!std::isfinite(result)) throw NumericalError("cross_entropy: non-finite value");

    Node n;
    n.op = Op::cross_entropy;
    n.inputs = {logits.id};
    n.requires_grad = nl.requires_grad;
    n.scalar = result;
    n.value = Tensor({1}, {static_cast<float>(result)});
    n.aux_idx = std::move(labels);
    return push(std::move(n), "cross_entropy");
}

Tape::Value Tape::mean_softmax_entropy(Value logits) {
    const Node& nl = node(logits);
    const Tensor& z = nl.value;
    if (z.ndim() != 2) throw DimensionError("softmax_entropy: expected 2-d logits");
    const int64_t rows = z.rows(), cols = z.cols();
    if (rows == 0) throw DimensionError("softmax_entropy: empty batch");

    double acc = 0.0;
    for (int64_t i = 0; i < rows; ++i) {
        const std::vector<double> p = softmax_row(z.data() + i * cols, cols);
        double h = 0.0;
        for (double v : p) h -= v * std::log(v);
        acc += h;
    }
    const double result = acc / static_cast<double>(rows);
    if (!std::isfinite(result)) throw NumericalError("softmax_entropy: non-finite value");

    Node n;
    n.op = Op::softmax_entropy;
    n.inputs = {logits.id};
    n.requires_grad = nl.requires_grad;
    n.scalar = result;
    n.value = Tensor({1}, {static_cast<float>(result)});
    return push(std::move(n), "softmax_entropy");
}

void Tape::accumulate(Tensor& slot, const Tensor& g) {
    if (slot.size() == 0) {
        slot = g;
        return;
    }
    kernels::add(slot.data(), g.data(), slot.data(), slot.size());
}

std::vector<Tensor> Tape::gradients(Value root, const std::vector<Value>& leaves) const {
    const Node& r = node(root);
    if (r.value.size() != 1) {
        throw UsageError("backward: root must be scalar, got shape " + r.value.shape_str());
    }

    std::vector<Tensor> grad(nodes_.size());
    grad[static_cast<size_t>(root.id)] = Tensor({1}, {1.0f});

    for (int32_t id = root.id; id >= 0; --id) {
        const Node& n = nodes_[static_cast<size_t>(id)];
        Tensor& g = grad[static_cast<size_t>(id)];
        if (g.size() == 0 || !n.requires_grad) continue;

        auto in_node = [&](size_t i) -> const Node& {
            return nodes_[static_cast<size_t>(n.inputs[i])];
        };
        auto in_grad = [&](size_t i) -> Tensor& {
            return grad[static_cast<size_t>(n.inputs[i])];
        };
        auto wants = [&](size_t i) { return in_node(i).requires_grad; };

        switch (n.op) {
            case Op::leaf:
            case Op::constant:
                break;
            case Op::matmul: {
                const Tensor& a = in_node(0).value;
                const Tensor& b = in_node(1).value;
                if (wants(0)) {
                    Tensor ga({a.rows(), a.cols()});
                    kernels::matmul_nt(g.data(), b.data(), ga.data(), a.rows(), b.cols(), a.cols());
                    accumulate(in_grad(0), ga);
                }
                if (wants(1)) {
                    Tensor gb({b.rows(), b.cols()});
                    kernels::matmul_tn(a.data(), g.data(), gb.data(), a.rows(), a.cols(), b.cols());
                    accumulate(in_grad(1), gb);
                }
                break;
            }
            case Op::transpose:
                if (wants(0)) accumulate(in_grad(0), transpose_2d(g));
                break;
            case Op::add:
                if (wants(0)) accumulate(in_grad(0), g);
                if (wants(1)) accumulate(in_grad(1), g);
                break;
            case Op::sub: {
                if (wants(0)) accumulate(in_grad(0), g);
                if (wants(1)) {
                    Tensor neg(g.shape());
                    kernels::scale(g.data(), -1.0, neg.data(), g.size());
                    accumulate(in_grad(1), neg);
                }
                break;
            }
            case Op::add_bias: {
                if (wants(0)) accumulate(in_grad(0), g);
                if (wants(1)) {
                    const int64_t rows = g.rows(), cols = g.cols();
                    Tensor gb({cols});
                    for (int64_t j = 0; j < cols; ++j) {
                        double acc = 0.0;
                        for (int64_t i = 0; i < rows; ++i) {
                            acc += static_cast<double>(g.at(i, j));
                        }
                        gb[j] = static_cast<float>(acc);
                    }
                    accumulate(in_grad(1), gb);
                }
                break;
            }
            case Op::scale:
                if (wants(0)) {
                    Tensor ga(g.shape());
                    kernels::scale(g.data(), n.c0, ga.data(), g.size());
                    accumulate(in_grad(0), ga);
                }
                break;
            case Op::relu:
                if (wants(0)) {
                    Tensor& slot = in_grad(0);
                    const Tensor& x = in_node(0).value;
                    if (slot.size() == 0) slot = Tensor(x.shape());
                    kernels::relu_backward(x.data(), g.data(), slot.data(), x.size());
                }
                break;
            case Op::combine:
                if (wants(0)) {
                    Tensor gc(in_node(0).value.shape());
                    for (size_t t = 0; t < n.aux_list.size(); ++t) {
                        const double d = kernels::dot(g.data(), n.aux_list[t].data(), g.size());
                        const int32_t idx = n.aux_idx[t];
                        gc[idx] = static_cast<float>(static_cast<double>(gc[idx]) + d);
                    }
                    accumulate(in_grad(0), gc);
                }
                break;
            case Op::loss_l1:
            case Op::loss_mse:
            case Op::loss_smooth_l1: {
                if (!wants(0)) break;
                const Tensor& p = in_node(0).value;
                const Tensor& t = n.aux;
                const double gs = static_cast<double>(g[0]);
                const double inv = 1.0 / static_cast<double>(p.size());
                Tensor gp(p.shape());
                for (int64_t i = 0; i < p.size(); ++i) {
                    const double d = static_cast<double>(p[i]) - static_cast<double>(t[i]);
                    double e = 0.0;
                    if (n.op == Op::loss_l1) {
                        e = d > 0.0 ? 1.0 : (d < 0.0 ? -1.0 : 0.0);
                    } else if (n.op == Op::loss_mse) {
                        e = 2.0 * d;
                    } else {
                        e = std::fabs(d) < n.c0 ? d / n.c0 : (d > 0.0 ? 1.0 : -1.0);
                    }
                    gp[i] = static_cast<float>(gs * e * inv);
                }
                accumulate(in_grad(0), gp);
                break;
            }
            case Op::loss_neg_cosine: {
                if (!wants(0)) break;
                const Tensor& p = in_node(0).value;
                const Tensor& t = n.aux;
                const int64_t rows = p.rows(), cols = p.cols();
                const double gs = static_cast<double>(g[0]) / static_cast<double>(rows);
                Tensor gp(p.shape());
                for (int64_t i = 0; i < rows; ++i) {
                    const float* pr = p.data() + i * cols;
                    const float* qr = t.data() + i * cols;
                    const double np2 = kernels::sum_sq(pr, cols);
                    const double npr = std::sqrt(np2);
                    const double nqr = std::sqrt(kernels::sum_sq(qr, cols));
                    const double cosv = kernels::dot(pr, qr, cols) / (npr * nqr);
                    for (int64_t j = 0; j < cols; ++j) {
                        const double dj = -static_cast<double>(qr[j]) / (npr * nqr) +
                                          cosv * static_cast<double>(pr[j]) / np2;
                        gp.at(i, j) = static_cast<float>(gs * dj);
                    }
                }
                accumulate(in_grad(0), gp);
                break;
            }
            case Op::cross_entropy: {
                if (!wants(0)) break;
                const Tensor& z = in_node(0).value;
                const int64_t rows = z.rows(), cols = z.cols();
                const double gs = static_cast<double>(g[0]) / static_cast<double>(rows);
                Tensor gz(z.shape());
                for (int64_t i = 0; i < rows; ++i) {
                    const std::vector<double> p = softmax_row(z.data() + i * cols, cols);
                    const int32_t y = n.aux_idx[static_cast<size_t>(i)];
                    for (int64_t j = 0; j < cols; ++j) {
                        const double e = p[static_cast<size_t>(j)] - (j == y ? 1.0 : 0.0);
                        gz.at(i, j) = static_cast<float>(gs * e);
                    }
                }
                accumulate(in_grad(0), gz);
                break;
            }
            case Op::softmax_entropy: {
                if (!wants(0)) break;
                const Tensor& z = in_node(0).value;
                const int64_t rows = z.rows(), cols = z.cols();
                const double gs = static_cast<double>(g[0]) / static_cast<double>(rows);
                Tensor gz(z.shape());
                for (int64_t i = 0; i < rows; ++i) {
                    const std::vector<double> p = softmax_row(z.data() + i * cols, cols);
                    double h = 0.0;
                    for (double v : p) h -= v * std::log(v);
                    for (int64_t j = 0; j < cols; ++j) {
                        const double pj = p[static_cast<size_t>(j)];
                        gz.at(i, j) = static_cast<float>(gs * (-pj * (std::log(pj) + h)));
                    }
                }
                accumulate(in_grad(0), gz);
                break;
            }
        }
    }

    std::vector<Tensor> out;
    out.reserve(leaves.size());
    for (Value leaf_v : leaves) {
        const Node& ln = node(leaf_v);
        if (ln.op != Op::leaf) throw UsageError("gradients: handle is not a leaf");
        Tensor& g = grad[static_cast<size_t>(leaf_v.id)];
        if (g.size() == 0) g = Tensor(ln.value.shape());
        ensure_finite(g, "gradient");
        out.push_back(g);
    }
    return out;
}

}  // namespace msrg
