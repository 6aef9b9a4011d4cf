#pragma once

#include <cstddef>
#include <functional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "smoe/numkernel/params.hpp"
#include "smoe/numkernel/tensor.hpp"

namespace smoe {

class Tape;

/// Handle to a value recorded on a Tape.
struct Var {
    Tape* tape = nullptr;
    std::size_t id = 0;

    const Tensor& value() const;
    const Shape& shape() const { return value().shape(); }
};

/// Computation record for reverse-mode differentiation.
///
/// Leaves (constants and parameters) and primitive applications are stored in
/// creation order. Only primitive applications count as recorded operations;
/// backward() replays them in reverse, each exactly once.
class Tape {
public:
    using Backward = std::function<void(Tape&, const Tensor& grad_out)>;

    Tape() = default;
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    Var constant(Tensor value) {
        nodes_.push_back(Node{std::move(value), {}, false, false, {}, "constant", Kind::Constant, {}, {}});
        return Var{this, nodes_.size() - 1};
    }

    /// Leaf bound to a named parameter; its gradient flows into that
    /// parameter's buffer when backward() runs.
    Var param(const ParamSet& params, const std::string& name) {
        nodes_.push_back(Node{params.value(name), {}, false, params.trainable(name), {}, "param", Kind::Param, name, {}});
        return Var{this, nodes_.size() - 1};
    }

    Var record(Tensor value, std::initializer_list<Var> inputs, Backward backward, const char* op) {
        bool needs = false;
        std::vector<std::size_t> ids;
        ids.reserve(inputs.size());
        for (const Var& v : inputs) {
            needs = needs || nodes_[v.id].requires_grad;
            ids.push_back(v.id);
        }
        nodes_.push_back(Node{std::move(value), {}, false, needs, needs ? std::move(backward) : Backward{}, op,
                              Kind::Op, {}, std::move(ids)});
        ++op_count_;
        return Var{this, nodes_.size() - 1};
    }

    const Tensor& value(std::size_t id) const { return nodes_.at(id).value; }
    bool requires_grad(std::size_t id) const { return nodes_.at(id).requires_grad; }

    /// Gradient buffer of a node, allocated on first use.
    Tensor& grad_ref(std::size_t id) {
        Node& n = nodes_[id];
        if (!n.has_grad) {
            n.grad = Tensor(n.value.shape());
            n.has_grad = true;
        }
        return n.grad;
    }

    void accumulate(std::size_t id, const Tensor& g) {
        if (!nodes_[id].requires_grad) return;
        grad_ref(id) += g;
    }

    /// Gradient of the last backward pass w.r.t. any node, zeros if none reached it.
    Tensor grad_of(Var v) const {
        const Node& n = nodes_.at(v.id);
        return n.has_grad ? n.grad : Tensor(n.value.shape());
    }

    std::size_t op_count() const noexcept { return op_count_; }
    std::size_t node_count() const noexcept { return nodes_.size(); }

    std::vector<std::string_view> op_names() const {
        std::vector<std::string_view> out;
        for (const Node& n : nodes_)
            if (n.kind == Kind::Op) out.emplace_back(n.op);
        return out;
    }

    /// Ids of the recorded operations named `op`, in creation order.
    std::vector<std::size_t> ops_named(std::string_view op) const {
        std::vector<std::size_t> out;
        for (std::size_t i = 0; i < nodes_.size(); ++i)
            if (nodes_[i].kind == Kind::Op && op == nodes_[i].op) out.push_back(i);
        return out;
    }

    const std::vector<std::size_t>& inputs(std::size_t id) const { return nodes_.at(id).inputs; }

    /// Reverse sweep from a scalar loss. Parameter gradients are added to
    /// `params` (accumulating across calls until ParamSet::zero_grad()).
    /// Returns the number of recorded operations visited.
    std::size_t backward(Var loss, ParamSet& params) {
        if (loss.tape != this) throw std::invalid_argument("loss was not recorded on this tape");
        if (!value(loss.id).is_scalar())
            throw DimensionError("backward requires a scalar loss, got shape " + to_string(value(loss.id).shape()));
        for (Node& n : nodes_) {
            n.has_grad = false;
            n.grad = Tensor();
        }
        if (nodes_[loss.id].requires_grad) grad_ref(loss.id).fill(1.0);

        std::size_t visited = 0;
        for (std::size_t i = nodes_.size(); i-- > 0;) {
            Node& n = nodes_[i];
            if (n.kind == Kind::Op) {
                ++visited;
                if (n.has_grad && n.backward) n.backward(*this, n.grad);
            } else if (n.kind == Kind::Param && n.has_grad) {
                params.grad(n.param_name) += n.grad;
            }
        }
        return visited;
    }

private:
    enum class Kind { Constant, Param, Op };

    struct Node {
        Tensor value;
        Tensor grad;
        bool has_grad = false;
        bool requires_grad = false;
        Backward backward;
        const char* op = "";
        Kind kind = Kind::Constant;
        std::string param_name;
        std::vector<std::size_t> inputs;
    };

    std::vector<Node> nodes_;
    std::size_t op_count_ = 0;
};

inline const Tensor& Var::value() const { return tape->value(id); }

/// Runs the reverse sweep of `record` from `loss` into `params`.
inline std::size_t backward(Var loss, Tape& record, ParamSet& params) {
    if (loss.tape != &record) throw std::invalid_argument("loss was not recorded on the given tape");
    return record.backward(loss, params);
}

}  // namespace smoe
