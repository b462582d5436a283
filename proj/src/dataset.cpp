#include "fwerk/dataset.hpp"

#include <cmath>
#include <fstream>
#include <limits>
#include <sstream>

#include "fwerk/errors.hpp"
#include "fwerk/numerics.hpp"

namespace fwerk {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

std::vector<std::string> read_lines(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw io_error("cannot open " + path);
  std::vector<std::string> lines;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    lines.push_back(line);
  }
  return lines;
}

bool blank(const std::string& line) {
  for (char c : line)
    if (c != ' ' && c != '\t') return false;
  return true;
}

MarkerPosition parse_position(std::string_view tok, const std::string& context) {
  const auto colon = tok.find(':');
  if (colon == std::string_view::npos || colon == 0 || colon + 1 >= tok.size()) {
    throw validation_error("position '" + std::string(tok) + "' is not chrom:bp in " + context);
  }
  MarkerPosition p;
  p.chrom = static_cast<int>(parse_int(tok.substr(0, colon), context));
  p.bp = parse_int(tok.substr(colon + 1), context);
  return p;
}

}  // namespace

std::string family_name(Family f) {
  return f == Family::normal ? "normal" : "logistic";
}

Family parse_family(const std::string& name) {
  if (name == "normal" || name == "gaussian") return Family::normal;
  if (name == "logistic" || name == "binomial") return Family::logistic;
  throw validation_error("unknown family '" + name + "' (expected normal or logistic)");
}

Dataset Dataset::from_parts(Eigen::VectorXd phenotype, Eigen::MatrixXd covariates,
                            Eigen::MatrixXd genotypes, std::vector<std::string> marker_ids,
                            std::vector<MarkerPosition> positions, bool coded_genotypes) {
  const std::int64_t n = phenotype.size();
  const std::int64_t m = genotypes.cols();
  if (n < 1) throw validation_error("empty phenotype");
  if (m < 1) throw validation_error("no markers");
  if (genotypes.rows() != n) {
    throw validation_error("genotype rows (" + std::to_string(genotypes.rows()) +
                           ") do not match phenotype length (" + std::to_string(n) + ")");
  }
  if (covariates.size() > 0 && covariates.rows() != n) {
    throw validation_error("covariate rows do not match phenotype length");
  }
  if (marker_ids.empty()) {
    marker_ids.resize(m);
    positions.resize(m);
    for (std::int64_t j = 0; j < m; ++j) {
      marker_ids[j] = "m" + std::to_string(j + 1);
      positions[j] = {1, j + 1};
    }
  }
  if (static_cast<std::int64_t>(marker_ids.size()) != m ||
      static_cast<std::int64_t>(positions.size()) != m) {
    throw validation_error("marker ids/positions do not match marker count");
  }

  for (std::int64_t i = 0; i < n; ++i) {
    if (!std::isfinite(phenotype(i))) throw validation_error("non-finite phenotype value");
  }
  for (std::int64_t j = 1; j < m; ++j) {
    if (positions[j].chrom == positions[j - 1].chrom && positions[j].bp < positions[j - 1].bp) {
      throw validation_error("marker positions must be non-decreasing within a chromosome (" +
                             marker_ids[j] + ")");
    }
  }

  Dataset d;
  d.x_env_.resize(n, 1 + covariates.cols());
  d.x_env_.col(0).setOnes();
  if (covariates.cols() > 0) {
    if (!covariates.allFinite()) throw validation_error("non-finite covariate value");
    d.x_env_.rightCols(covariates.cols()) = covariates;
  }
  if (n <= d.x_env_.cols()) {
    throw validation_error("need more individuals than covariates");
  }
  Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(d.x_env_);
  if (qr.rank() < d.x_env_.cols()) {
    throw validation_error("covariate matrix is rank deficient (collinear columns)");
  }

  for (std::int64_t j = 0; j < m; ++j) {
    std::int64_t observed = 0;
    double lo = std::numeric_limits<double>::infinity(), hi = -lo;
    for (std::int64_t i = 0; i < n; ++i) {
      const double g = genotypes(i, j);
      if (std::isnan(g)) continue;
      if (!std::isfinite(g)) throw validation_error("infinite genotype value");
      if (!coded_genotypes && g != 0.0 && g != 1.0 && g != 2.0) {
        throw validation_error("genotype for marker " + marker_ids[j] +
                               " outside {0,1,2}; use coded mode for dosages");
      }
      ++observed;
      lo = std::min(lo, g);
      hi = std::max(hi, g);
    }
    if (observed == 0) {
      throw validation_error("marker " + marker_ids[j] + " has no observed genotypes");
    }
    if (lo == hi) {
      throw validation_error("marker " + marker_ids[j] +
                             " has no variation among observed genotypes");
    }
  }

  d.y_ = std::move(phenotype);
  d.geno_ = std::move(genotypes);
  d.ids_ = std::move(marker_ids);
  d.pos_ = std::move(positions);
  d.coded_ = coded_genotypes;
  return d;
}

bool Dataset::has_missing() const { return geno_.hasNaN(); }

ImputationReport impute_missing(Dataset& data) {
  Eigen::MatrixXd& g = data.mutable_genotypes();
  ImputationReport report;
  report.missing_per_marker.assign(g.cols(), 0);
  report.imputed_value.assign(g.cols(), 0.0);
  for (Eigen::Index j = 0; j < g.cols(); ++j) {
    double sum = 0.0;
    std::int64_t observed = 0;
    for (Eigen::Index i = 0; i < g.rows(); ++i) {
      if (std::isnan(g(i, j))) continue;
      sum += g(i, j);
      ++observed;
    }
    const double mean = sum / static_cast<double>(observed);
    report.imputed_value[j] = mean;
    std::int64_t filled = 0;
    for (Eigen::Index i = 0; i < g.rows(); ++i) {
      if (std::isnan(g(i, j))) {
        g(i, j) = mean;
        ++filled;
      }
    }
    report.missing_per_marker[j] = filled;
    report.total_missing += filled;
    if (filled > 0) ++report.markers_affected;
  }
  return report;
}

Dataset load_dataset(const std::string& phenotype_path, const std::string& covariates_path,
                     const std::string& genotype_path, bool coded_genotypes) {
  // Phenotype: one value per line.
  std::vector<double> y;
  for (const auto& line : read_lines(phenotype_path)) {
    if (blank(line) || line[0] == '#') continue;
    const auto toks = split_ws(line);
    if (toks.size() != 1) {
      throw validation_error("expected one value per line in " + phenotype_path);
    }
    y.push_back(parse_double(toks[0], phenotype_path));
  }
  const std::int64_t n = static_cast<std::int64_t>(y.size());

  // Covariates (optional).
  Eigen::MatrixXd cov(0, 0);
  if (!covariates_path.empty()) {
    std::vector<std::vector<double>> rows;
    for (const auto& line : read_lines(covariates_path)) {
      if (blank(line) || line[0] == '#') continue;
      const auto toks = split_ws(line);
      std::vector<double> row;
      row.reserve(toks.size());
      for (auto t : toks) row.push_back(parse_double(t, covariates_path));
      if (!rows.empty() && row.size() != rows.front().size()) {
        throw validation_error("ragged covariate rows in " + covariates_path);
      }
      rows.push_back(std::move(row));
    }
    if (!rows.empty() && !rows.front().empty()) {
      cov.resize(rows.size(), rows.front().size());
      for (std::size_t i = 0; i < rows.size(); ++i)
        for (std::size_t j = 0; j < rows.front().size(); ++j) cov(i, j) = rows[i][j];
    }
  }

  // Genotypes, with an optional "# id chrom:bp ..." header.
  const auto glines = read_lines(genotype_path);
  std::vector<std::string> ids;
  std::vector<MarkerPosition> positions;
  std::size_t first_row = 0;
  while (first_row < glines.size() && blank(glines[first_row])) ++first_row;
  if (first_row < glines.size() && !glines[first_row].empty() && glines[first_row][0] == '#') {
    const auto toks = split_ws(std::string_view(glines[first_row]).substr(1));
    if (toks.size() % 2 != 0 || toks.empty()) {
      throw validation_error("genotype header must list id position pairs in " + genotype_path);
    }
    for (std::size_t t = 0; t < toks.size(); t += 2) {
      ids.emplace_back(toks[t]);
      positions.push_back(parse_position(toks[t + 1], genotype_path));
    }
    ++first_row;
  }

  std::vector<std::vector<double>> grows;
  for (std::size_t li = first_row; li < glines.size(); ++li) {
    const auto& line = glines[li];
    if (blank(line) || line[0] == '#') continue;
    const auto toks = split_ws(line);
    std::vector<double> row;
    row.reserve(toks.size());
    for (auto t : toks) {
      if (t == "NA") {
        row.push_back(kNaN);
      } else {
        row.push_back(parse_double(t, genotype_path));
      }
    }
    if (!grows.empty() && row.size() != grows.front().size()) {
      throw validation_error("ragged genotype rows in " + genotype_path);
    }
    grows.push_back(std::move(row));
  }
  if (grows.empty()) throw validation_error("no genotype rows in " + genotype_path);
  const std::int64_t m = static_cast<std::int64_t>(grows.front().size());
  if (!ids.empty() && static_cast<std::int64_t>(ids.size()) != m) {
    throw validation_error("genotype header names " + std::to_string(ids.size()) +
                           " markers but rows have " + std::to_string(m));
  }
  if (static_cast<std::int64_t>(grows.size()) != n) {
    throw validation_error("genotype rows (" + std::to_string(grows.size()) +
                           ") do not match phenotype length (" + std::to_string(n) + ")");
  }

  Eigen::MatrixXd geno(n, m);
  for (std::int64_t i = 0; i < n; ++i)
    for (std::int64_t j = 0; j < m; ++j) geno(i, j) = grows[i][j];

  return Dataset::from_parts(Eigen::Map<Eigen::VectorXd>(y.data(), n), std::move(cov),
                             std::move(geno), std::move(ids), std::move(positions),
                             coded_genotypes);
}

void save_dataset(const Dataset& data, const std::string& phenotype_path,
                  const std::string& covariates_path, const std::string& genotype_path) {
  {
    std::ofstream out(phenotype_path);
    if (!out) throw io_error("cannot write " + phenotype_path);
    for (Eigen::Index i = 0; i < data.n(); ++i) {
      out << format_double(data.phenotype()(i)) << '\n';
    }
  }
  if (data.d() > 1) {
    if (covariates_path.empty()) {
      throw validation_error("dataset has covariates but no covariate path given");
    }
    std::ofstream out(covariates_path);
    if (!out) throw io_error("cannot write " + covariates_path);
    for (Eigen::Index i = 0; i < data.n(); ++i) {
      for (int j = 1; j < data.d(); ++j) {
        if (j > 1) out << '\t';
        out << format_double(data.covariates()(i, j));
      }
      out << '\n';
    }
  }
  {
    std::ofstream out(genotype_path);
    if (!out) throw io_error("cannot write " + genotype_path);
    out << '#';
    for (Eigen::Index j = 0; j < data.m(); ++j) {
      out << ' ' << data.marker_ids()[j] << ' ' << data.positions()[j].chrom << ':'
          << data.positions()[j].bp;
    }
    out << '\n';
    for (Eigen::Index i = 0; i < data.n(); ++i) {
      for (Eigen::Index j = 0; j < data.m(); ++j) {
        if (j > 0) out << '\t';
        const double g = data.genotypes()(i, j);
        if (std::isnan(g)) {
          out << "NA";
        } else {
          out << format_double(g);
        }
      }
      out << '\n';
    }
  }
}

}  // namespace fwerk
