#pragma once

#include <functional>
#include <memory>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

#include "sadm/tensor/array.hpp"

namespace sadm {

namespace detail {
inline bool& grad_mode_flag() {
    thread_local bool enabled = true;
    return enabled;
}
}  // namespace detail

inline bool grad_enabled() { return detail::grad_mode_flag(); }

// Disables graph recording on the current thread for its lifetime.
class NoGradGuard {
public:
    NoGradGuard() : previous_(detail::grad_mode_flag()) { detail::grad_mode_flag() = false; }
    ~NoGradGuard() { detail::grad_mode_flag() = previous_; }
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;

private:
    bool previous_;
};

struct Node {
    Array value;
    Array grad;  // allocated on first accumulation
    bool requires_grad = false;
    std::vector<std::shared_ptr<Node>> parents;
    // Reads this->grad and accumulates into parents' grads.
    std::function<void(Node&)> backward_fn;

    Array& grad_buffer() {
        if (grad.empty()) grad = Array(value.shape(), 0.0);
        return grad;
    }
    bool has_grad() const noexcept { return !grad.empty(); }
};

// Handle to a node in the differentiation graph. Copies share the node.
class Value {
public:
    Value() = default;
    explicit Value(Array a, bool requires_grad = false) : node_(std::make_shared<Node>()) {
        node_->value = std::move(a);
        node_->requires_grad = requires_grad;
    }

    static Value constant(Array a) { return Value(std::move(a), false); }
    static Value parameter(Array a) { return Value(std::move(a), true); }

    bool defined() const noexcept { return static_cast<bool>(node_); }
    const Array& value() const { return node_->value; }
    Array& mutable_value() { return node_->value; }
    const Shape& shape() const { return node_->value.shape(); }
    bool requires_grad() const { return node_->requires_grad; }
    double item() const { return node_->value.item(); }

    bool has_grad() const { return node_->has_grad(); }
    const Array& grad() const { return node_->grad_buffer(); }
    void zero_grad() { node_->grad = Array(); }

    const std::shared_ptr<Node>& node() const noexcept { return node_; }

private:
    std::shared_ptr<Node> node_;
};

// Builds the result of an operation. The backward closure and parent links are
// only recorded when grad mode is on and some parent requires a gradient.
inline Value make_result(Array out, std::vector<Value> parents, std::function<void(Node&)> backward_fn) {
    Value result(std::move(out));
    if (!grad_enabled()) return result;
    bool any = false;
    for (const auto& p : parents) any = any || p.requires_grad();
    if (!any) return result;
    auto& node = *result.node();
    node.requires_grad = true;
    node.parents.reserve(parents.size());
    for (auto& p : parents) node.parents.push_back(p.node());
    node.backward_fn = std::move(backward_fn);
    return result;
}

// Reverse-mode sweep from a scalar loss. Gradients accumulate into every
// reachable node that requires them; each node is processed once.
inline void backward(const Value& loss) {
    if (loss.value().size() != 1) {
        throw ContractError("backward() requires a scalar loss, got shape " + shape_string(loss.shape()));
    }
    if (!loss.requires_grad()) return;

    std::vector<Node*> order;
    std::unordered_set<Node*> seen;
    // Iterative post-order DFS.
    std::vector<std::pair<Node*, std::size_t>> stack;
    stack.emplace_back(loss.node().get(), 0);
    seen.insert(loss.node().get());
    while (!stack.empty()) {
        auto& [node, next] = stack.back();
        if (next < node->parents.size()) {
            Node* parent = node->parents[next++].get();
            if (parent->requires_grad && seen.insert(parent).second) stack.emplace_back(parent, 0);
        } else {
            order.push_back(node);
            stack.pop_back();
        }
    }

    loss.node()->grad_buffer().fill(1.0);
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        Node* node = *it;
        if (node->backward_fn && node->has_grad()) node->backward_fn(*node);
    }
}

}  // namespace sadm
