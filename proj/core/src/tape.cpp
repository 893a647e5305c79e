#include "fosnet/tape.hpp"

namespace fosnet {

template <typename T>
ValueT<T> TapeT<T>::leaf(TensorT<T> v, bool requires_grad) {
    Node n;
    n.value = std::move(v);
    n.needs_grad = requires_grad;
    nodes_.push_back(std::move(n));
    return {this, static_cast<std::uint32_t>(nodes_.size() - 1)};
}

template <typename T>
ValueT<T> TapeT<T>::param(ParamT<T>& p, bool frozen) {
    Node n;
    n.value = p.value;
    n.needs_grad = p.trainable && !frozen;
    n.slot = &p;
    nodes_.push_back(std::move(n));
    return {this, static_cast<std::uint32_t>(nodes_.size() - 1)};
}

template <typename T>
ValueT<T> TapeT<T>::record(const char* op, TensorT<T> out,
                           std::initializer_list<ValueT<T>> inputs, BackwardFn backward) {
    ensure_finite(out, op);
    Node n;
    n.value = std::move(out);
    n.op = op;
    n.backward = std::move(backward);
    for (const ValueT<T>& in : inputs) {
        if (in.tape != this)
            throw ShapeError(std::string(op) + ": input from a different tape");
        n.inputs[n.num_inputs++] = in.id;
        n.needs_grad = n.needs_grad || nodes_[in.id].needs_grad;
    }
    nodes_.push_back(std::move(n));
    return {this, static_cast<std::uint32_t>(nodes_.size() - 1)};
}

template <typename T>
TensorT<T>& TapeT<T>::grad_buffer(std::uint32_t id) {
    Node& n = nodes_[id];
    if (n.grad.empty()) n.grad = TensorT<T>(n.value.shape());
    return n.grad;
}

template <typename T>
void TapeT<T>::backward(ValueT<T> output) {
    if (nodes_.empty()) throw ShapeError("backward: tape is empty");
    if (output.tape != this) throw ShapeError("backward: output not on this tape");
    const Node& out = nodes_[output.id];
    if (out.value.numel() != 1)
        throw ShapeError("backward: output must be scalar, got shape " +
                         shape_str(out.value.shape()));

    grad_buffer(output.id)[0] += T(1);
    for (std::uint32_t id = output.id + 1; id-- > 0;) {
        Node& n = nodes_[id];
        if (!n.needs_grad || n.grad.empty()) continue;
        if (n.backward) n.backward(*this, id);
        if (n.slot) {
            ensure_finite(n.grad, n.op);
            if (n.slot->grad.empty()) {
                n.slot->grad = n.grad;
            } else {
                T* dst = n.slot->grad.data();
                const T* src = n.grad.data();
                for (std::size_t i = 0; i < n.grad.numel(); ++i) dst[i] += src[i];
            }
        }
    }
}

template class TapeT<float>;
template class TapeT<double>;

}  // namespace fosnet
