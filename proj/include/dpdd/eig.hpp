#pragma once

#include "dpdd/common.hpp"

namespace dpdd {

struct SymEig {
  Vector eigenvalues;   // descending
  Matrix eigenvectors;  // columns, orthonormal, matching order
};

// Full eigendecomposition of a symmetric matrix. The input must be symmetric
// to 1e-10 relative tolerance. Ordering is by descending eigenvalue; each
// eigenvector is sign-normalized so its largest-magnitude entry (first such
// entry on ties) is positive, making the output reproducible bit for bit.
SymEig sym_eig(const Eigen::Ref<const Matrix>& m);

// Applies the same deterministic sign convention to an arbitrary column set.
void fix_column_signs(Matrix& columns);

}  // namespace dpdd
