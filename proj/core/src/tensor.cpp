#include "saicl/tensor.hpp"

#include <Eigen/Dense>
#include <cmath>
#include <sstream>

#include "saicl/error.hpp"

namespace saicl {

int64_t shape_numel(const std::vector<int64_t>& shape) {
    int64_t n = 1;
    for (int64_t d : shape) n *= d;
    return n;
}

Tensor::Tensor(std::vector<int64_t> shape)
    : shape_(std::move(shape)), data_(static_cast<size_t>(shape_numel(shape_)), 0.0) {}

Tensor::Tensor(std::vector<int64_t> shape, double fill)
    : shape_(std::move(shape)), data_(static_cast<size_t>(shape_numel(shape_)), fill) {}

Tensor::Tensor(std::vector<int64_t> shape, std::vector<double> data)
    : shape_(std::move(shape)), data_(std::move(data)) {
    if (static_cast<int64_t>(data_.size()) != shape_numel(shape_))
        throw Error("shape_mismatch", "tensor data size does not match shape " + shape_str());
}

bool Tensor::all_finite() const {
    for (double v : data_)
        if (!std::isfinite(v)) return false;
    return true;
}

std::string Tensor::shape_str() const {
    std::ostringstream os;
    os << '(';
    for (size_t i = 0; i < shape_.size(); ++i) os << (i ? "," : "") << shape_[i];
    os << ')';
    return os.str();
}

void Tensor::fill(double v) { std::fill(data_.begin(), data_.end(), v); }

void Tensor::add_(const Tensor& o) {
    for (size_t i = 0; i < data_.size(); ++i) data_[i] += o.data_[i];
}

void Tensor::scale_(double c) {
    for (double& v : data_) v *= c;
}

using MatMap = Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>,
                          Eigen::Unaligned, Eigen::OuterStride<>>;
using MatMapMut = Eigen::Map<Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>,
                             Eigen::Unaligned, Eigen::OuterStride<>>;

void gemm(bool trans_a, bool trans_b, int64_t m, int64_t n, int64_t k,
          const double* a, int64_t lda, const double* b, int64_t ldb,
          double* c, int64_t ldc, double beta) {
    MatMapMut C(c, m, n, Eigen::OuterStride<>(ldc));
    MatMap A(a, trans_a ? k : m, trans_a ? m : k, Eigen::OuterStride<>(lda));
    MatMap B(b, trans_b ? n : k, trans_b ? k : n, Eigen::OuterStride<>(ldb));
    if (beta == 0.0) {
        if (!trans_a && !trans_b)
            C.noalias() = A * B;
        else if (trans_a && !trans_b)
            C.noalias() = A.transpose() * B;
        else if (!trans_a && trans_b)
            C.noalias() = A * B.transpose();
        else
            C.noalias() = A.transpose() * B.transpose();
    } else {
        if (!trans_a && !trans_b)
            C.noalias() += A * B;
        else if (trans_a && !trans_b)
            C.noalias() += A.transpose() * B;
        else if (!trans_a && trans_b)
            C.noalias() += A * B.transpose();
        else
            C.noalias() += A.transpose() * B.transpose();
    }
}

} // namespace saicl
