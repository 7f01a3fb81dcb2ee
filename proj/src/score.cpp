#include "patchdet/score.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>

#include "patchdet/errors.hpp"

namespace patchdet {

Eigen::MatrixXd to_matrix(const EmbeddingBatch& batch) {
  Eigen::MatrixXd m(batch.n, batch.d);
  for (int i = 0; i < batch.n; ++i)
    for (int j = 0; j < batch.d; ++j) m(i, j) = batch.at(i, j);
  return m;
}

GdeModel fit_gde(const Eigen::MatrixXd& embeddings, double eps_rel, double eps_floor) {
  const auto n = embeddings.rows();
  const auto d = embeddings.cols();
  if (n < 2) throw FitError("fit_gde needs at least 2 embeddings");
  if (!embeddings.allFinite()) throw IntegrityError("fit_gde: non-finite embedding values");

  GdeModel m;
  m.mean = embeddings.colwise().mean();
  Eigen::MatrixXd centered = embeddings.rowwise() - m.mean.transpose();
  Eigen::MatrixXd s = (centered.transpose() * centered) / static_cast<double>(n - 1);
  s = ((s + s.transpose()) / 2.0).eval(); // enforce symmetry

  m.epsilon = std::max(eps_rel * s.trace() / static_cast<double>(d), eps_floor);
  m.covariance = s + m.epsilon * Eigen::MatrixXd::Identity(d, d);

  Eigen::LLT<Eigen::MatrixXd> llt(m.covariance);
  if (llt.info() != Eigen::Success)
    throw FitError("covariance factorization failed despite regularization");
  m.chol_lower = llt.matrixL();
  return m;
}

GdeModel fit_gde(const EmbeddingBatch& embeddings, double eps_rel, double eps_floor) {
  return fit_gde(to_matrix(embeddings), eps_rel, eps_floor);
}

AnomalyScore score_gde(const GdeModel& m, const Eigen::VectorXd& e) {
  if (e.size() != m.mean.size())
    throw ArgumentError("score_gde: embedding dimension mismatch");
  Eigen::VectorXd y = m.chol_lower.triangularView<Eigen::Lower>().solve(e - m.mean);
  return 0.5 * y.squaredNorm();
}

std::vector<AnomalyScore> score_gde(const GdeModel& m, const EmbeddingBatch& batch) {
  if (batch.d != m.dim()) throw ArgumentError("score_gde: embedding dimension mismatch");
  std::vector<AnomalyScore> out(batch.n);
  Eigen::VectorXd e(batch.d);
  for (int i = 0; i < batch.n; ++i) {
    for (int j = 0; j < batch.d; ++j) e(j) = batch.at(i, j);
    out[i] = score_gde(m, e);
  }
  return out;
}

std::vector<GdeModel> fit_per_location_gde(const std::vector<Eigen::MatrixXd>& per_location,
                                           double eps_rel, double eps_floor) {
  std::vector<GdeModel> models;
  models.reserve(per_location.size());
  for (size_t loc = 0; loc < per_location.size(); ++loc) {
    try {
      models.push_back(fit_gde(per_location[loc], eps_rel, eps_floor));
    } catch (const FitError& err) {
      throw FitError("location " + std::to_string(loc) + ": " + err.what());
    }
  }
  return models;
}

KdeModel fit_kde(const Eigen::MatrixXd& embeddings, double bandwidth) {
  if (embeddings.rows() < 1) throw FitError("fit_kde needs at least 1 embedding");
  if (!embeddings.allFinite()) throw IntegrityError("fit_kde: non-finite embedding values");
  KdeModel m;
  m.points = embeddings;
  if (bandwidth > 0.0) {
    m.bandwidth = bandwidth;
    return m;
  }
  // Median pairwise distance heuristic.
  const auto n = embeddings.rows();
  std::vector<double> dists;
  dists.reserve(static_cast<size_t>(n) * (n - 1) / 2);
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index j = i + 1; j < n; ++j)
      dists.push_back((embeddings.row(i) - embeddings.row(j)).norm());
  if (dists.empty()) {
    m.bandwidth = 1.0;
    return m;
  }
  std::nth_element(dists.begin(), dists.begin() + dists.size() / 2, dists.end());
  double median = dists[dists.size() / 2];
  m.bandwidth = median > 0.0 ? median : 1.0;
  return m;
}

KdeModel fit_kde(const EmbeddingBatch& embeddings, double bandwidth) {
  return fit_kde(to_matrix(embeddings), bandwidth);
}

AnomalyScore score_kde(const KdeModel& m, const Eigen::VectorXd& e) {
  if (e.size() != m.points.cols()) throw ArgumentError("score_kde: dimension mismatch");
  const auto n = m.points.rows();
  const double inv_2h2 = 1.0 / (2.0 * m.bandwidth * m.bandwidth);
  // log-mean-exp of the kernel values, stabilized by the max exponent.
  double max_exp = -std::numeric_limits<double>::infinity();
  std::vector<double> exps(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    exps[i] = -(m.points.row(i).transpose() - e).squaredNorm() * inv_2h2;
    max_exp = std::max(max_exp, exps[i]);
  }
  double acc = 0.0;
  for (double v : exps) acc += std::exp(v - max_exp);
  return -(max_exp + std::log(acc / static_cast<double>(n)));
}

std::vector<AnomalyScore> ensemble_scores(
    const std::vector<std::vector<AnomalyScore>>& per_model_scores) {
  if (per_model_scores.empty()) throw ArgumentError("ensemble_scores: no models");
  const size_t n = per_model_scores.front().size();
  for (const auto& scores : per_model_scores)
    if (scores.size() != n) throw ArgumentError("ensemble_scores: ragged score lists");
  if (n == 0) return {};

  std::vector<AnomalyScore> out(n, 0.0);
  for (const auto& scores : per_model_scores) {
    double mean = 0.0;
    for (double s : scores) mean += s;
    mean /= static_cast<double>(n);
    double var = 0.0;
    for (double s : scores) var += (s - mean) * (s - mean);
    double std_dev = n > 1 ? std::sqrt(var / static_cast<double>(n - 1)) : 0.0;
    if (std_dev > 0.0)
      for (size_t i = 0; i < n; ++i) out[i] += (scores[i] - mean) / std_dev;
    // A constant score vector carries no ranking information; its z-scores
    // are all zero and contribute nothing.
  }
  for (double& v : out) v /= static_cast<double>(per_model_scores.size());
  return out;
}

// --- file formats ---------------------------------------------------------

namespace {
constexpr char kEmbMagic[8] = {'P', 'D', 'E', 'M', 'B', '0', '0', '1'};
constexpr char kGdeMagic[8] = {'P', 'D', 'G', 'D', 'E', '0', '0', '1'};

template <typename T>
void write_pod(std::ostream& os, T v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(v));
}
template <typename T>
T read_pod(std::istream& is, const char* what) {
  T v{};
  is.read(reinterpret_cast<char*>(&v), sizeof(v));
  if (!is) throw LoadError(std::string("truncated ") + what);
  return v;
}
} // namespace

void write_embeddings(const std::filesystem::path& path, const EmbeddingBatch& batch) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw LoadError("cannot write embeddings: " + path.string());
  os.write(kEmbMagic, sizeof(kEmbMagic));
  write_pod<std::uint32_t>(os, static_cast<std::uint32_t>(batch.n));
  write_pod<std::uint32_t>(os, static_cast<std::uint32_t>(batch.d));
  os.write(reinterpret_cast<const char*>(batch.data.data()),
           static_cast<std::streamsize>(batch.data.size() * sizeof(float)));
  if (!os) throw LoadError("failed writing embeddings: " + path.string());
}

EmbeddingBatch read_embeddings(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw LoadError("cannot open embeddings: " + path.string());
  char magic[8];
  is.read(magic, sizeof(magic));
  if (!is || std::memcmp(magic, kEmbMagic, sizeof(kEmbMagic)) != 0)
    throw LoadError("not an embedding file: " + path.string());
  EmbeddingBatch batch;
  batch.n = static_cast<int>(read_pod<std::uint32_t>(is, "embedding header"));
  batch.d = static_cast<int>(read_pod<std::uint32_t>(is, "embedding header"));
  batch.data.resize(static_cast<size_t>(batch.n) * batch.d);
  is.read(reinterpret_cast<char*>(batch.data.data()),
          static_cast<std::streamsize>(batch.data.size() * sizeof(float)));
  if (!is) throw LoadError("truncated embedding file: " + path.string());
  return batch;
}

void write_embeddings_csv(const std::filesystem::path& path, const EmbeddingBatch& batch) {
  std::ofstream os(path);
  if (!os) throw LoadError("cannot write embeddings csv: " + path.string());
  for (int i = 0; i < batch.n; ++i) {
    for (int j = 0; j < batch.d; ++j) {
      char buf[32];
      std::snprintf(buf, sizeof(buf), "%.9g", batch.at(i, j));
      os << buf << (j + 1 == batch.d ? '\n' : ',');
    }
  }
}

void write_gde(const std::filesystem::path& path, const GdeModel& m) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw LoadError("cannot write gde model: " + path.string());
  os.write(kGdeMagic, sizeof(kGdeMagic));
  write_pod<std::uint32_t>(os, static_cast<std::uint32_t>(m.dim()));
  write_pod<double>(os, m.epsilon);
  os.write(reinterpret_cast<const char*>(m.mean.data()),
           static_cast<std::streamsize>(m.mean.size() * sizeof(double)));
  os.write(reinterpret_cast<const char*>(m.covariance.data()),
           static_cast<std::streamsize>(m.covariance.size() * sizeof(double)));
  if (!os) throw LoadError("failed writing gde model: " + path.string());
}

GdeModel read_gde(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw LoadError("cannot open gde model: " + path.string());
  char magic[8];
  is.read(magic, sizeof(magic));
  if (!is || std::memcmp(magic, kGdeMagic, sizeof(kGdeMagic)) != 0)
    throw LoadError("not a gde model file: " + path.string());
  GdeModel m;
  auto d = read_pod<std::uint32_t>(is, "gde header");
  m.epsilon = read_pod<double>(is, "gde header");
  m.mean.resize(d);
  m.covariance.resize(d, d);
  is.read(reinterpret_cast<char*>(m.mean.data()),
          static_cast<std::streamsize>(m.mean.size() * sizeof(double)));
  is.read(reinterpret_cast<char*>(m.covariance.data()),
          static_cast<std::streamsize>(m.covariance.size() * sizeof(double)));
  if (!is) throw LoadError("truncated gde model: " + path.string());
  Eigen::LLT<Eigen::MatrixXd> llt(m.covariance);
  if (llt.info() != Eigen::Success) throw LoadError("gde covariance is not positive definite");
  m.chol_lower = llt.matrixL();
  return m;
}

} // namespace patchdet
