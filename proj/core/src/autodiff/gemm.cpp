#include "gemm.hpp"

#include <Eigen/Core>

namespace fedda::ad::detail {

namespace {

using RowMajor = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstMap = Eigen::Map<const RowMajor>;
using Map = Eigen::Map<RowMajor>;

}  // namespace

void gemm(bool trans_a, bool trans_b, std::size_t m, std::size_t n, std::size_t k,
          double alpha, const double* a, const double* b, double beta, double* c) {
  const auto em = static_cast<Eigen::Index>(m);
  const auto en = static_cast<Eigen::Index>(n);
  const auto ek = static_cast<Eigen::Index>(k);
  Map out(c, em, en);
  if (beta == 0.0) {
    out.setZero();
  } else if (beta != 1.0) {
    out *= beta;
  }

  // Stored shapes: A is [m,k] or [k,m]; B is [k,n] or [n,k].
  if (!trans_a && !trans_b) {
    out.noalias() += alpha * ConstMap(a, em, ek) * ConstMap(b, ek, en);
  } else if (!trans_a && trans_b) {
    out.noalias() += alpha * ConstMap(a, em, ek) * ConstMap(b, en, ek).transpose();
  } else if (trans_a && !trans_b) {
    out.noalias() += alpha * ConstMap(a, ek, em).transpose() * ConstMap(b, ek, en);
  } else {
    out.noalias() +=
        alpha * ConstMap(a, ek, em).transpose() * ConstMap(b, en, ek).transpose();
  }
}

}  // namespace fedda::ad::detail
