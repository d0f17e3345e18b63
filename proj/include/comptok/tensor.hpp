#pragma once

#include <atomic>
#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <random>
#include <sstream>
#include <stdexcept>
#include <string>
#include <unordered_set>
#include <vector>

namespace comptok {

using Shape = std::vector<int64_t>;

inline int64_t shape_numel(const Shape& s) {
    int64_t n = 1;
    for (int64_t d : s) n *= d;
    return n;
}

inline std::string shape_str(const Shape& s) {
    std::ostringstream os;
    os << "[";
    for (size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
    os << "]";
    return os.str();
}

class TensorError : public std::runtime_error {
public:
    explicit TensorError(const std::string& msg) : std::runtime_error(msg) {}
};

// Thread-local autograd switch. Ops executed while disabled produce
// constant results detached from the graph.
namespace detail {
inline thread_local int no_grad_depth = 0;
}

inline bool grad_enabled() { return detail::no_grad_depth == 0; }

struct NoGradGuard {
    NoGradGuard() { ++detail::no_grad_depth; }
    ~NoGradGuard() { --detail::no_grad_depth; }
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;
};

// One node of the dynamic define-by-run graph. Nodes are created in
// execution order and carry a monotonically increasing id, so sorting
// reachable nodes by id descending yields a valid reverse topological
// order; backward() replays VJPs in that order, which makes gradient
// accumulation deterministic in a single-threaded setting.
template <typename T>
struct TensorNode {
    Shape shape;
    std::vector<T> value;
    std::vector<T> grad;  // allocated lazily, same length as value
    bool requires_grad = false;
    uint64_t id = 0;
    std::vector<std::shared_ptr<TensorNode>> parents;
    std::function<void(TensorNode&)> backward_fn;  // accumulates into parents' grads

    void ensure_grad() {
        if (grad.empty()) grad.assign(value.size(), T(0));
    }

    static uint64_t next_id() {
        static std::atomic<uint64_t> counter{0};
        return ++counter;
    }
};

// Value-semantic handle to a shared graph node.
template <typename T>
class Tensor {
public:
    using Node = TensorNode<T>;

    Tensor() = default;

    static Tensor zeros(Shape shape, bool requires_grad = false) {
        return make(std::move(shape), {}, requires_grad, T(0));
    }

    static Tensor full(Shape shape, T fill, bool requires_grad = false) {
        return make(std::move(shape), {}, requires_grad, fill);
    }

    static Tensor from(Shape shape, std::vector<T> data, bool requires_grad = false) {
        if (shape_numel(shape) != static_cast<int64_t>(data.size())) {
            throw TensorError("tensor data length " + std::to_string(data.size()) +
                              " does not match shape " + shape_str(shape));
        }
        Tensor t;
        t.node_ = std::make_shared<Node>();
        t.node_->shape = std::move(shape);
        t.node_->value = std::move(data);
        t.node_->requires_grad = requires_grad && grad_enabled();
        t.node_->id = Node::next_id();
        return t;
    }

    static Tensor scalar(T v, bool requires_grad = false) {
        return from({1}, {v}, requires_grad);
    }

    static Tensor randn(Shape shape, std::mt19937_64& rng, T stddev, bool requires_grad = false) {
        std::normal_distribution<double> dist(0.0, 1.0);
        std::vector<T> data(static_cast<size_t>(shape_numel(shape)));
        for (auto& x : data) x = static_cast<T>(dist(rng)) * stddev;
        return from(std::move(shape), std::move(data), requires_grad);
    }

    bool defined() const { return node_ != nullptr; }
    const Shape& shape() const { return node_->shape; }
    int64_t numel() const { return static_cast<int64_t>(node_->value.size()); }
    int64_t dim(size_t i) const { return node_->shape[i]; }
    size_t ndim() const { return node_->shape.size(); }
    bool requires_grad() const { return node_->requires_grad; }

    std::vector<T>& value() { return node_->value; }
    const std::vector<T>& value() const { return node_->value; }
    std::vector<T>& grad() {
        node_->ensure_grad();
        return node_->grad;
    }
    bool has_grad() const { return !node_->grad.empty(); }

    T item() const {
        if (numel() != 1) throw TensorError("item() on non-scalar tensor of shape " + shape_str(shape()));
        return node_->value[0];
    }

    void zero_grad() { node_->grad.assign(node_->value.size(), T(0)); }

    // Reverse-mode sweep from a scalar root. Deterministic: nodes run in
    // strictly decreasing creation order.
    void backward() {
        if (numel() != 1) throw TensorError("backward() requires a scalar root, got " + shape_str(shape()));
        if (!node_->requires_grad) throw TensorError("backward() on a tensor that does not require grad");
        std::vector<Node*> order;
        std::unordered_set<Node*> seen;
        std::vector<Node*> stack{node_.get()};
        seen.insert(node_.get());
        while (!stack.empty()) {
            Node* n = stack.back();
            stack.pop_back();
            order.push_back(n);
            for (auto& p : n->parents) {
                if (p->requires_grad && seen.insert(p.get()).second) stack.push_back(p.get());
            }
        }
        std::sort(order.begin(), order.end(), [](Node* a, Node* b) { return a->id > b->id; });
        node_->ensure_grad();
        node_->grad[0] += T(1);
        for (Node* n : order) {
            if (n->backward_fn) n->backward_fn(*n);
        }
    }

    std::shared_ptr<Node> node() const { return node_; }

    // Result-node constructor used by ops: records parents and the VJP
    // closure only when some input needs gradients and autograd is on.
    static Tensor result(Shape shape, std::vector<T> value,
                         std::vector<Tensor> inputs,
                         std::function<void(Node&)> backward_fn) {
        Tensor t = from(std::move(shape), std::move(value), false);
        bool track = grad_enabled();
        if (track) {
            bool any = false;
            for (const auto& in : inputs) any = any || in.requires_grad();
            track = any;
        }
        if (track) {
            t.node_->requires_grad = true;
            for (auto& in : inputs) t.node_->parents.push_back(in.node_);
            t.node_->backward_fn = std::move(backward_fn);
        }
        return t;
    }

private:
    static Tensor make(Shape shape, std::vector<T> data, bool requires_grad, T fill) {
        std::vector<T> v(static_cast<size_t>(shape_numel(shape)), fill);
        return from(std::move(shape), std::move(v), requires_grad);
    }

    std::shared_ptr<Node> node_;
};

using TensorF = Tensor<float>;
using TensorD = Tensor<double>;

}  // namespace comptok
