#include "dpdd/eig.hpp"

#include <Eigen/Eigenvalues>

namespace dpdd {

void fix_column_signs(Matrix& columns) {
  for (Index c = 0; c < columns.cols(); ++c) {
    Index pivot = 0;
    double best = -1.0;
    for (Index r = 0; r < columns.rows(); ++r) {
      const double a = std::abs(columns(r, c));
      if (a > best) {
        best = a;
        pivot = r;
      }
    }
    if (columns(pivot, c) < 0.0) columns.col(c) = -columns.col(c);
  }
}

SymEig sym_eig(const Eigen::Ref<const Matrix>& m) {
  require(m.rows() == m.cols(), "sym_eig requires a square matrix");
  require(m.rows() > 0, "sym_eig requires a nonempty matrix");
  check_finite(m, "sym_eig input");
  const double scale = std::max(1.0, m.cwiseAbs().maxCoeff());
  const double asym = (m - m.transpose()).cwiseAbs().maxCoeff();
  if (asym > 1e-10 * scale)
    throw ValidationError("sym_eig input is not symmetric (relative asymmetry " +
                          std::to_string(asym / scale) + ")");

  Eigen::SelfAdjointEigenSolver<Matrix> solver(m);
  if (solver.info() != Eigen::Success)
    throw NumericalError("eigendecomposition failed to converge");

  const Index n = m.rows();
  SymEig out;
  out.eigenvalues.resize(n);
  out.eigenvectors.resize(n, n);
  // Eigen returns ascending order; flip to descending.
  for (Index i = 0; i < n; ++i) {
    out.eigenvalues[i] = solver.eigenvalues()[n - 1 - i];
    out.eigenvectors.col(i) = solver.eigenvectors().col(n - 1 - i);
  }
  fix_column_signs(out.eigenvectors);
  return out;
}

}  // namespace dpdd
