#pragma once

#include <cstddef>

namespace fedda::ad::detail {

// C[m,n] = alpha * op(A) * op(B) + beta * C, all row-major and contiguous.
// op(A) is [m,k]; op(B) is [k,n].
void gemm(bool trans_a, bool trans_b, std::size_t m, std::size_t n, std::size_t k,
          double alpha, const double* a, const double* b, double beta, double* c);

}  // namespace fedda::ad::detail
