#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "msrg/tensor.hpp"

namespace msrg {

enum class LossKind { l1, mse, smooth_l1, neg_cosine };

LossKind loss_kind_from_string(const std::string& name);
const char* loss_kind_name(LossKind kind);

// Reverse-mode autodiff over an append-only tape. Nodes are recorded in
// topological order; backward() walks them once in reverse. Node values are
// float32; scalar-valued nodes (losses, entropy) additionally keep the
// float64 reduction result, which callers should prefer for numerics.
class Tape {
public:
    struct Value {
        int32_t id = -1;
        bool valid() const { return id >= 0; }
    };

    Value leaf(Tensor t);
    Value constant(Tensor t);

    Value matmul(Value a, Value b);
    Value transpose(Value a);
    Value add(Value a, Value b);
    Value sub(Value a, Value b);
    // x: [n,k], bias: [k]; adds bias to every row
    Value add_bias(Value x, Value bias);
    Value scale(Value a, double c);
    Value relu(Value a);

    // base + sum_t coeffs[coeff_index[t]] * deltas[t]; base and deltas are
    // captured as constants, only `coeffs` (a 1-d node) is differentiated.
    Value combine(Value coeffs, Tensor base, std::vector<Tensor> deltas,
                  std::vector<int32_t> coeff_index);

    // Scalar losses, mean-reduced per element (l1/mse/smooth_l1) or per row
    // (neg_cosine). Differentiable w.r.t. pred; target is captured constant.
    Value loss(LossKind kind, Value pred, Tensor target, double smooth_l1_delta = 1.0);

    // Mean over rows of -log softmax(logits)[label].
    Value mean_cross_entropy(Value logits, std::vector<int32_t> labels);
    // Mean over rows of the Shannon entropy of softmax(logits).
    Value mean_softmax_entropy(Value logits);

    const Tensor& value(Value v) const;
    double scalar(Value v) const;
    size_t size() const { return nodes_.size(); }

    // Gradients of a scalar root w.r.t. the given leaves; disconnected leaves
    // get exact zeros. Deterministic for identical tapes.
    std::vector<Tensor> gradients(Value root, const std::vector<Value>& leaves) const;

private:
    enum class Op : uint8_t {
        leaf,
        constant,
        matmul,
        transpose,
        add,
        sub,
        add_bias,
        scale,
        relu,
        combine,
        loss_l1,
        loss_mse,
        loss_smooth_l1,
        loss_neg_cosine,
        cross_entropy,
        softmax_entropy,
    };

    struct Node {
        Op op;
        std::vector<int32_t> inputs;
        Tensor value;
        double scalar = 0.0;
        bool requires_grad = false;
        // op context
        Tensor aux;                    // loss target / combine base
        std::vector<Tensor> aux_list;  // combine deltas
        std::vector<int32_t> aux_idx;  // combine coeff indices / labels
        double c0 = 0.0;               // scale factor / smooth_l1 delta
    };

    Value push(Node node, const char* context);
    const Node& node(Value v) const;
    static void accumulate(Tensor& slot, const Tensor& g);

    std::vector<Node> nodes_;
};

using Value = Tape::Value;

}  // namespace msrg
