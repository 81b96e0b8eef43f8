#include "dpdd/ser.hpp"

#include "dpdd/eig.hpp"

namespace dpdd {

Projection::Projection(Matrix basis) : basis_(std::move(basis)) {
  require(basis_.rows() > 0 && basis_.cols() > 0, "projection basis is empty");
  require(basis_.cols() <= basis_.rows(), "subspace dimension exceeds ambient dimension");
  check_finite(basis_, "projection basis");
  const Matrix gram = basis_.transpose() * basis_;
  const double err =
      (gram - Matrix::Identity(basis_.cols(), basis_.cols())).cwiseAbs().maxCoeff();
  if (err > 1e-8)
    throw NumericalError("projection basis is not orthonormal (deviation " +
                         std::to_string(err) + ")");
}

Vector project(const Projection& p, const Eigen::Ref<const Vector>& v) {
  require(v.size() == p.ambient_dim(), "vector does not match ambient dimension");
  return p.basis().transpose() * v;
}

Vector reconstruct(const Projection& p, const Eigen::Ref<const Vector>& u) {
  require(u.size() == p.subspace_dim(), "vector does not match subspace dimension");
  return p.basis() * u;
}

Projection discover_subspace(const Eigen::Ref<const Matrix>& features, Index subspace_dim) {
  require(features.rows() > 0, "no feature rows to learn a subspace from");
  require(subspace_dim > 0, "subspace dimension must be positive");
  require(subspace_dim <= features.cols(),
          "subspace dimension exceeds feature dimension");
  check_finite(features, "aux features");

  const Index n = features.rows();
  Matrix second = features.transpose() * features / static_cast<double>(n);
  second = ((second + second.transpose()) * 0.5).eval();
  const SymEig eig = sym_eig(second);

  const double lead = eig.eigenvalues[0];
  Index rank = 0;
  for (Index i = 0; i < eig.eigenvalues.size(); ++i)
    if (eig.eigenvalues[i] > lead * 1e-10 && eig.eigenvalues[i] > 0.0) ++rank;
  if (rank < subspace_dim)
    throw NumericalError("aux features span rank " + std::to_string(rank) +
                         ", below the requested subspace dimension " +
                         std::to_string(subspace_dim));

  return Projection(eig.eigenvectors.leftCols(subspace_dim));
}

AuxiliarySet synth_aux(const MixtureSpec& spec, Index per_class, RngStream stream) {
  require(per_class > 0, "aux set needs at least one image per class");
  AuxiliarySet aux;
  aux.provenance = AuxiliarySet::Provenance::kSyntheticGenerator;
  aux.data = sample_mixture_dataset(spec, per_class, stream);
  return aux;
}

AuxiliarySet load_aux(const std::filesystem::path& path) {
  AuxiliarySet aux;
  aux.provenance = AuxiliarySet::Provenance::kExternalFile;
  aux.data = read_dataset(path);
  return aux;
}

Matrix aux_features(const AuxiliarySet& aux, const ExtractorSpec& spec,
                    const ExtractorWeights& weights, double clip_bound) {
  require(aux.data.shape == spec.input, "aux image shape does not match extractor input");
  const Index d = spec.feature_dim();
  Matrix out(aux.data.total_images(), d);
  Index row = 0;
  for (const Matrix& batch : aux.data.class_images) {
    for (Index i = 0; i < batch.rows(); ++i) {
      const Vector f = extract_features(spec, weights, batch.row(i).transpose());
      out.row(row++) = clip_to_norm(f, clip_bound).transpose();
    }
  }
  return out;
}

}  // namespace dpdd
