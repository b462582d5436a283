#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <Eigen/Dense>

namespace fwerk {

enum class Family { normal, logistic };

std::string family_name(Family f);
Family parse_family(const std::string& name);

struct MarkerPosition {
  int chrom = 1;
  std::int64_t bp = 0;
};

struct ImputationReport {
  std::vector<std::int64_t> missing_per_marker;
  std::vector<double> imputed_value;  // mean of the observed entries, per marker
  std::int64_t total_missing = 0;
  std::int64_t markers_affected = 0;
};

// Phenotype, environmental covariates (intercept always present as the first
// column) and the genotype matrix, rows = individuals, columns = markers.
// Missing genotypes are stored as NaN until impute_missing replaces them.
// The family is not part of the data; it is chosen when fitting.
class Dataset {
 public:
  // covariates are passed WITHOUT the intercept; it is prepended here so no
  // caller can forget it.  Validates dimensions, token domains and rank.
  static Dataset from_parts(Eigen::VectorXd phenotype, Eigen::MatrixXd covariates,
                            Eigen::MatrixXd genotypes, std::vector<std::string> marker_ids,
                            std::vector<MarkerPosition> positions,
                            bool coded_genotypes = false);

  const Eigen::VectorXd& phenotype() const { return y_; }
  const Eigen::MatrixXd& covariates() const { return x_env_; }
  const Eigen::MatrixXd& genotypes() const { return geno_; }
  Eigen::MatrixXd& mutable_genotypes() { return geno_; }
  const std::vector<std::string>& marker_ids() const { return ids_; }
  const std::vector<MarkerPosition>& positions() const { return pos_; }
  bool coded_genotypes() const { return coded_; }
  std::int64_t n() const { return y_.size(); }
  std::int64_t m() const { return geno_.cols(); }
  int d() const { return static_cast<int>(x_env_.cols()); }
  bool has_missing() const;

 private:
  Dataset() = default;
  Eigen::VectorXd y_;
  Eigen::MatrixXd x_env_;   // n x d, first column is the intercept
  Eigen::MatrixXd geno_;    // n x m
  std::vector<std::string> ids_;
  std::vector<MarkerPosition> pos_;
  bool coded_ = false;
};

// Mean imputation per marker over the observed entries.  Idempotent.
ImputationReport impute_missing(Dataset& data);

// Phenotype file: one value per line.  Covariate file (optional, pass ""):
// whitespace-separated columns, no intercept column, lines starting with '#'
// ignored.  Genotype file: one row per individual, tokens 0/1/2/NA (any
// finite value when coded_genotypes); an optional first line
//   # id chrom:bp id chrom:bp ...
// names the markers.
Dataset load_dataset(const std::string& phenotype_path, const std::string& covariates_path,
                     const std::string& genotype_path, bool coded_genotypes = false);

// Inverse of load_dataset; numbers are written with shortest round-trip
// precision so a save/load cycle is lossless.
void save_dataset(const Dataset& data, const std::string& phenotype_path,
                  const std::string& covariates_path, const std::string& genotype_path);

}  // namespace fwerk
