#pragma once

#include <optional>
#include <vector>

#include "dpdd/common.hpp"
#include "dpdd/extractor.hpp"
#include "dpdd/mixture.hpp"
#include "dpdd/privacy.hpp"
#include "dpdd/tensor.hpp"

namespace dpdd {

// Column-orthonormal D x d basis. Construction checks orthonormality to
// 1e-8, so downstream code can rely on P^T P = I.
class Projection {
 public:
  explicit Projection(Matrix basis);

  const Matrix& basis() const { return basis_; }
  Index ambient_dim() const { return basis_.rows(); }
  Index subspace_dim() const { return basis_.cols(); }

 private:
  Matrix basis_;
};

Vector project(const Projection& p, const Eigen::Ref<const Vector>& v);      // P^T v
Vector reconstruct(const Projection& p, const Eigen::Ref<const Vector>& u);  // P u

// Top-d eigenvectors of the uncentered second moment F^T F / n of the given
// feature rows. Throws when d exceeds the feature dimension (validation) or
// the attained numerical rank (degenerate data).
Projection discover_subspace(const Eigen::Ref<const Matrix>& features, Index subspace_dim);

// Side data the subspace is learned from. Either loaded from disk (public
// or privatized elsewhere) or drawn from a synthetic generator; provenance
// and any budget share spent on it are recorded for the audit trail.
struct AuxiliarySet {
  enum class Provenance { kExternalFile, kSyntheticGenerator };
  Provenance provenance = Provenance::kSyntheticGenerator;
  Dataset data;
  std::optional<PrivacyBudget> budget_share;
};

AuxiliarySet synth_aux(const MixtureSpec& spec, Index per_class, RngStream stream);
AuxiliarySet load_aux(const std::filesystem::path& path);

// Pooled (all classes stacked) aux features under one extractor draw, with
// the same clipping the aggregation stage applies. Rows are images.
Matrix aux_features(const AuxiliarySet& aux, const ExtractorSpec& spec,
                    const ExtractorWeights& weights, double clip_bound);

}  // namespace dpdd
