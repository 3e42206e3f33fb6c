#include "apl/tensor.hpp"

#include <cmath>
#include <numeric>
#include <sstream>
#include <stdexcept>

namespace apl {

template <typename T>
Tensor<T>::Tensor(std::vector<std::size_t> dims, T fill) : shape(std::move(dims)) {
    if (shape.empty() || shape.size() > 2) {
        throw std::invalid_argument("tensor rank must be 1 or 2");
    }
    const std::size_t n = std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
    data.assign(n, fill);
}

template <typename T>
void Tensor<T>::fill(T value) {
    std::fill(data.begin(), data.end(), value);
}

template <typename T>
bool Tensor<T>::all_finite() const {
    for (T v : data) {
        if (!std::isfinite(v)) return false;
    }
    return true;
}

template <typename T>
std::string Tensor<T>::shape_string() const {
    std::ostringstream os;
    os << "[";
    for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "x" : "") << shape[i];
    os << "]";
    return os.str();
}

double init_stddev(std::size_t d_in, double gamma) {
    if (d_in == 0) {
        throw std::invalid_argument("d_in must be at least 1");
    }
    return std::pow(1.0 / static_cast<double>(d_in), gamma);
}

template <typename T>
Tensor<T> init_normal(std::vector<std::size_t> shape, std::size_t d_in, double gamma, Rng& rng) {
    Tensor<T> t(std::move(shape));
    std::normal_distribution<double> dist(0.0, init_stddev(d_in, gamma));
    for (auto& v : t.data) v = static_cast<T>(dist(rng));
    return t;
}

template struct Tensor<float>;
template struct Tensor<double>;
template Tensor<float> init_normal<float>(std::vector<std::size_t>, std::size_t, double, Rng&);
template Tensor<double> init_normal<double>(std::vector<std::size_t>, std::size_t, double, Rng&);

}  // namespace apl
