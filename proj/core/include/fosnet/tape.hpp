#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <initializer_list>
#include <vector>

#include "fosnet/tensor.hpp"

namespace fosnet {

// Trainable parameter: value plus gradient and optimizer state. Gradients
// accumulate across backward passes until zero_grad().
template <typename T>
struct ParamT {
    TensorT<T> value;
    TensorT<T> grad;      // empty until a backward pass reaches it
    TensorT<T> velocity;  // momentum buffer, managed by the optimizer
    bool trainable = true;

    void zero_grad() { grad = TensorT<T>(); }
    bool has_grad() const { return !grad.empty(); }
};

template <typename T>
class TapeT;

// Handle to a node on a tape. Cheap to copy; dangling once the tape is gone.
template <typename T>
struct ValueT {
    TapeT<T>* tape = nullptr;
    std::uint32_t id = 0;

    bool valid() const { return tape != nullptr; }
    const TensorT<T>& value() const;
    const TensorT<T>& grad() const;
    const Shape& shape() const { return value().shape(); }
};

// Define-by-run op recording, rebuilt every forward pass. Nodes are appended
// in execution order, so walking the records backwards is a valid reverse
// topological order; backward() visits each node exactly once.
template <typename T>
class TapeT {
public:
    using BackwardFn = std::function<void(TapeT&, std::uint32_t)>;

    struct Node {
        TensorT<T> value;
        TensorT<T> grad;  // allocated lazily during backward
        std::array<std::uint32_t, 3> inputs{};
        std::uint8_t num_inputs = 0;
        BackwardFn backward;  // null for leaves
        ParamT<T>* slot = nullptr;
        bool needs_grad = false;
        const char* op = "leaf";
    };

    ValueT<T> leaf(TensorT<T> v, bool requires_grad = false);
    // Leaf bound to an external parameter; grads land in p.grad after backward.
    ValueT<T> param(ParamT<T>& p, bool frozen = false);
    ValueT<T> constant(TensorT<T> v) { return leaf(std::move(v), false); }

    ValueT<T> record(const char* op, TensorT<T> out, std::initializer_list<ValueT<T>> inputs,
                     BackwardFn backward);

    // Reverse-mode sweep from a scalar output. Each requires_grad leaf ends up
    // with grad = d(output)/d(leaf); parameter slots accumulate.
    void backward(ValueT<T> output);

    const TensorT<T>& value_of(std::uint32_t id) const { return nodes_[id].value; }
    const TensorT<T>& grad_of(std::uint32_t id) const { return nodes_[id].grad; }
    TensorT<T>& grad_buffer(std::uint32_t id);
    bool wants_grad(std::uint32_t id) const { return nodes_[id].needs_grad; }

    std::size_t size() const { return nodes_.size(); }
    const Node& node(std::uint32_t id) const { return nodes_[id]; }

private:
    std::vector<Node> nodes_;
};

template <typename T>
inline const TensorT<T>& ValueT<T>::value() const {
    return tape->value_of(id);
}
template <typename T>
inline const TensorT<T>& ValueT<T>::grad() const {
    return tape->grad_of(id);
}

using Value = ValueT<double>;
using Tape = TapeT<double>;

}  // namespace fosnet
