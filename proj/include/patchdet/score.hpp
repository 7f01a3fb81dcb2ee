#pragma once

#include <Eigen/Dense>
#include <filesystem>
#include <vector>

#include "patchdet/model.hpp"

namespace patchdet {

/// Anomaly scores are negated Gaussian log-densities up to an additive
/// constant: 0.5 * squared Mahalanobis distance. Higher means more anomalous.
using AnomalyScore = double;

/// Gaussian density estimator fit on normal-data embeddings: sample mean,
/// regularized sample covariance, and a cached Cholesky factor of the
/// covariance (the precision path used for scoring).
struct GdeModel {
  Eigen::VectorXd mean;
  Eigen::MatrixXd covariance;
  Eigen::MatrixXd chol_lower; // L with L * L^T == covariance
  double epsilon = 0.0;       // applied ridge

  int dim() const { return static_cast<int>(mean.size()); }
};

/// mean = sample mean, covariance = sample covariance (N-1 denominator)
/// plus eps * I with eps = eps_rel * trace(S)/d, floored at eps_floor so a
/// zero-variance fit still yields a positive-definite model.
GdeModel fit_gde(const Eigen::MatrixXd& embeddings, double eps_rel = 1e-3,
                 double eps_floor = 1e-6);
GdeModel fit_gde(const EmbeddingBatch& embeddings, double eps_rel = 1e-3,
                 double eps_floor = 1e-6);

AnomalyScore score_gde(const GdeModel& m, const Eigen::VectorXd& e);
std::vector<AnomalyScore> score_gde(const GdeModel& m, const EmbeddingBatch& batch);

/// One GDE per spatial location (aligned-object categories). Input is
/// indexed [location][sample]. Throws FitError naming the offending
/// location when any slot has fewer than two samples.
std::vector<GdeModel> fit_per_location_gde(const std::vector<Eigen::MatrixXd>& per_location,
                                           double eps_rel = 1e-3, double eps_floor = 1e-6);

/// Gaussian-kernel density estimator; score is the negative log of the mean
/// kernel value. bandwidth <= 0 selects the median pairwise distance.
struct KdeModel {
  Eigen::MatrixXd points; // one row per training embedding
  double bandwidth = 1.0;
};

KdeModel fit_kde(const Eigen::MatrixXd& embeddings, double bandwidth = 0.0);
KdeModel fit_kde(const EmbeddingBatch& embeddings, double bandwidth = 0.0);
AnomalyScore score_kde(const KdeModel& m, const Eigen::VectorXd& e);

/// Combine per-model score vectors over one evaluation set: each model's
/// scores are z-normalized, then averaged per example.
std::vector<AnomalyScore> ensemble_scores(
    const std::vector<std::vector<AnomalyScore>>& per_model_scores);

Eigen::MatrixXd to_matrix(const EmbeddingBatch& batch);

// --- file formats ---------------------------------------------------------

/// Binary embedding file: magic, row count, dimension, row-major
/// little-endian float32 rows.
void write_embeddings(const std::filesystem::path& path, const EmbeddingBatch& batch);
EmbeddingBatch read_embeddings(const std::filesystem::path& path);
void write_embeddings_csv(const std::filesystem::path& path, const EmbeddingBatch& batch);

void write_gde(const std::filesystem::path& path, const GdeModel& m);
GdeModel read_gde(const std::filesystem::path& path);

} // namespace patchdet
