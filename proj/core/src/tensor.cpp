#include "fosnet/tensor.hpp"

#include <cmath>

namespace fosnet {

std::string shape_str(const Shape& s) {
    std::string out = "[";
    for (std::size_t i = 0; i < s.size(); ++i) {
        if (i) out += ",";
        out += std::to_string(s[i]);
    }
    return out + "]";
}

std::size_t shape_numel(const Shape& s) {
    std::size_t n = 1;
    for (auto e : s) n *= e;
    return n;
}

template <typename T>
bool TensorT<T>::all_finite() const {
    for (const T& x : data_)
        if (!std::isfinite(x)) return false;
    return true;
}

template <typename T>
void ensure_finite(const TensorT<T>& t, const char* what) {
    if (!t.all_finite())
        throw NumericError(std::string(what) + ": non-finite value in tensor of shape " +
                           shape_str(t.shape()));
}

template class TensorT<float>;
template class TensorT<double>;
template void ensure_finite<float>(const TensorT<float>&, const char*);
template void ensure_finite<double>(const TensorT<double>&, const char*);

}  // namespace fosnet
