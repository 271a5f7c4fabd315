#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <cstring>
#include <stdexcept>
#include <string>
#include <vector>

namespace physgen::nn {

// Dense 4D tensor in (N, C, H, W) layout. The scalar type is a template
// parameter: training runs in float for memory-bandwidth reasons, while the
// finite-difference gradient checks instantiate the same code in double.
template <class T>
struct TensorT {
    int n = 0, c = 0, h = 0, w = 0;
    std::vector<T> v;

    TensorT() = default;
    TensorT(int n_, int c_, int h_, int w_)
        : n(n_), c(c_), h(h_), w(w_), v(static_cast<size_t>(n_) * c_ * h_ * w_, T(0)) {}

    size_t size() const { return v.size(); }
    int spatial() const { return h * w; }

    T* plane(int ni, int ci) { return v.data() + (static_cast<size_t>(ni) * c + ci) * spatial(); }
    const T* plane(int ni, int ci) const {
        return v.data() + (static_cast<size_t>(ni) * c + ci) * spatial();
    }
    T* sample(int ni) { return v.data() + static_cast<size_t>(ni) * c * spatial(); }
    const T* sample(int ni) const { return v.data() + static_cast<size_t>(ni) * c * spatial(); }

    bool same_shape(const TensorT& o) const {
        return n == o.n && c == o.c && h == o.h && w == o.w;
    }

    void zero() { std::fill(v.begin(), v.end(), T(0)); }
    void release() {
        v.clear();
        v.shrink_to_fit();
        n = c = h = w = 0;
    }
};

template <class T>
using MatT = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic>; // column-major
template <class T>
using RowMatT = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

struct ParamInfo {
    std::string name;
    std::vector<int> shape;
    size_t offset = 0;
    size_t count = 0;
};

// Flat parameter vector with a named layout; layers hold slices into it, and
// the gradient buffer mirrors the layout exactly.
template <class T>
class ParamStoreT {
public:
    size_t add(const std::string& name, std::vector<int> shape) {
        size_t count = 1;
        for (int d : shape) count *= static_cast<size_t>(d);
        infos_.push_back(ParamInfo{name, std::move(shape), total_, count});
        total_ += count;
        return infos_.size() - 1;
    }

    void allocate() {
        data_.assign(total_, T(0));
        grad_.assign(total_, T(0));
    }

    size_t total() const { return total_; }
    const std::vector<ParamInfo>& infos() const { return infos_; }

    T* data(size_t idx) { return data_.data() + infos_[idx].offset; }
    const T* data(size_t idx) const { return data_.data() + infos_[idx].offset; }
    T* grad(size_t idx) { return grad_.data() + infos_[idx].offset; }

    std::vector<T>& flat() { return data_; }
    const std::vector<T>& flat() const { return data_; }
    std::vector<T>& flat_grad() { return grad_; }
    const std::vector<T>& flat_grad() const { return grad_; }

    void zero_grad() { std::fill(grad_.begin(), grad_.end(), T(0)); }

private:
    std::vector<ParamInfo> infos_;
    size_t total_ = 0;
    std::vector<T> data_;
    std::vector<T> grad_;
};

} // namespace physgen::nn
