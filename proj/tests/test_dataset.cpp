#include "fwerk/dataset.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <string>

#include <doctest.h>

#include "fwerk/errors.hpp"

using namespace fwerk;

namespace {

const double kNaN = std::numeric_limits<double>::quiet_NaN();

void write_file(const std::string& path, const std::string& content) {
  std::ofstream out(path);
  REQUIRE(out.good());
  out << content;
}

Eigen::MatrixXd small_geno() {
  Eigen::MatrixXd g(5, 2);
  g << 0, 1, 1, 2, 2, 0, 0, 1, 1, 0;
  return g;
}

Eigen::VectorXd small_pheno() {
  Eigen::VectorXd y(5);
  y << 0.1, -0.4, 1.2, 0.7, -0.2;
  return y;
}

}  // namespace

TEST_SUITE("dataset") {

TEST_CASE("from_parts fills default ids and positions") {
  auto d = Dataset::from_parts(small_pheno(), Eigen::MatrixXd(), small_geno(), {}, {});
  CHECK(d.n() == 5);
  CHECK(d.m() == 2);
  CHECK(d.d() == 1);  // intercept only
  CHECK(d.marker_ids()[0] == "m1");
  CHECK(d.marker_ids()[1] == "m2");
  CHECK(d.positions()[1].chrom == 1);
  CHECK(d.positions()[1].bp == 2);
  CHECK(d.covariates().col(0).isOnes());
  CHECK_FALSE(d.has_missing());
}

TEST_CASE("from_parts validation") {
  auto y = small_pheno();
  auto g = small_geno();

  SUBCASE("genotype outside 0/1/2 rejected unless coded") {
    g(0, 0) = 0.5;
    CHECK_THROWS_AS(Dataset::from_parts(y, Eigen::MatrixXd(), g, {}, {}), validation_error);
    CHECK_NOTHROW(Dataset::from_parts(y, Eigen::MatrixXd(), g, {}, {}, true));
  }
  SUBCASE("constant marker rejected") {
    g.col(1).setOnes();
    CHECK_THROWS_WITH_AS(Dataset::from_parts(y, Eigen::MatrixXd(), g, {}, {}),
                         doctest::Contains("m2"), validation_error);
  }
  SUBCASE("all-missing marker rejected") {
    g.col(0).setConstant(kNaN);
    CHECK_THROWS_AS(Dataset::from_parts(y, Eigen::MatrixXd(), g, {}, {}), validation_error);
  }
  SUBCASE("non-finite phenotype rejected") {
    y(2) = kNaN;
    CHECK_THROWS_AS(Dataset::from_parts(y, Eigen::MatrixXd(), g, {}, {}), validation_error);
  }
  SUBCASE("collinear covariates rejected") {
    Eigen::MatrixXd cov(5, 2);
    cov.col(0) << 1, 2, 3, 4, 5;
    cov.col(1) = 2.0 * cov.col(0);
    CHECK_THROWS_AS(Dataset::from_parts(y, cov, g, {}, {}), validation_error);
  }
  SUBCASE("need n > d") {
    Eigen::MatrixXd cov(5, 4);
    cov << 1, 0, 0, 0, 0, 1, 0, 0, 0, 0, 1, 0, 0, 0, 0, 1, 1, 1, 2, 3;
    CHECK_THROWS_AS(Dataset::from_parts(y, cov, g, {}, {}), validation_error);
  }
  SUBCASE("positions must be sorted within a chromosome") {
    std::vector<MarkerPosition> pos{{1, 100}, {1, 50}};
    CHECK_THROWS_AS(Dataset::from_parts(y, Eigen::MatrixXd(), g, {"a", "b"}, pos),
                    validation_error);
    // A new chromosome may restart at a smaller coordinate.
    pos[1] = {2, 50};
    CHECK_NOTHROW(Dataset::from_parts(y, Eigen::MatrixXd(), g, {"a", "b"}, pos));
  }
}

TEST_CASE("mean imputation fills missing entries and reports them") {
  auto g = small_geno();
  g(1, 0) = kNaN;
  g(4, 0) = kNaN;
  auto d = Dataset::from_parts(small_pheno(), Eigen::MatrixXd(), g, {}, {});
  CHECK(d.has_missing());
  const auto report = impute_missing(d);
  CHECK(report.total_missing == 2);
  CHECK(report.markers_affected == 1);
  CHECK(report.missing_per_marker[0] == 2);
  CHECK(report.missing_per_marker[1] == 0);
  // Observed values of marker 1 are 0, 2, 0 -> mean 2/3.
  CHECK(report.imputed_value[0] == doctest::Approx(2.0 / 3.0).epsilon(1e-15));
  CHECK(d.genotypes()(1, 0) == doctest::Approx(2.0 / 3.0).epsilon(1e-15));
  CHECK_FALSE(d.has_missing());
}

TEST_CASE("load_dataset parses the three files") {
  write_file("tmp_ds_y.txt", "# phenotype\n0.5\n1.5\n-0.5\n2.5\n0.0\n");
  write_file("tmp_ds_cov.txt", "0.1\t1\n-0.2\t0\n0.3\t1\n0.0\t0\n0.4\t1\n");
  write_file("tmp_ds_g.txt",
             "# rs1 1:100 rs2 1:250 rs3 2:90\n"
             "0\t1\t2\n1\tNA\t1\n2\t0\t0\n0\t1\t1\n1\t2\tNA\n");
  const auto d = load_dataset("tmp_ds_y.txt", "tmp_ds_cov.txt", "tmp_ds_g.txt");
  CHECK(d.n() == 5);
  CHECK(d.m() == 3);
  CHECK(d.d() == 3);
  CHECK(d.phenotype()(3) == 2.5);
  CHECK(d.covariates()(2, 1) == 0.3);
  CHECK(d.covariates()(2, 2) == 1.0);
  CHECK(d.marker_ids()[1] == "rs2");
  CHECK(d.positions()[2].chrom == 2);
  CHECK(d.positions()[2].bp == 90);
  CHECK(std::isnan(d.genotypes()(1, 1)));
  CHECK(d.genotypes()(4, 1) == 2.0);
  CHECK(d.has_missing());
}

TEST_CASE("load_dataset error reporting") {
  write_file("tmp_ds_y.txt", "0.5\n1.5\n-0.5\n");
  SUBCASE("missing file") {
    CHECK_THROWS_AS(load_dataset("tmp_ds_nope.txt", "", "tmp_ds_g.txt"), io_error);
  }
  SUBCASE("ragged genotype rows") {
    write_file("tmp_ds_g.txt", "0\t1\n1\t0\t2\n2\t1\n");
    CHECK_THROWS_AS(load_dataset("tmp_ds_y.txt", "", "tmp_ds_g.txt"), validation_error);
  }
  SUBCASE("row count mismatch") {
    write_file("tmp_ds_g.txt", "0\t1\n1\t0\n");
    CHECK_THROWS_AS(load_dataset("tmp_ds_y.txt", "", "tmp_ds_g.txt"), validation_error);
  }
  SUBCASE("header arity mismatch") {
    write_file("tmp_ds_g.txt", "# rs1 1:100 rs2\n0\t1\n1\t0\n2\t1\n");
    CHECK_THROWS_AS(load_dataset("tmp_ds_y.txt", "", "tmp_ds_g.txt"), validation_error);
  }
  SUBCASE("malformed position") {
    write_file("tmp_ds_g.txt", "# rs1 1-100 rs2 1:200\n0\t1\n1\t0\n2\t1\n");
    CHECK_THROWS_AS(load_dataset("tmp_ds_y.txt", "", "tmp_ds_g.txt"), validation_error);
  }
  SUBCASE("garbage numeric field") {
    write_file("tmp_ds_g.txt", "0\t1\n1\tx\n2\t1\n");
    CHECK_THROWS_AS(load_dataset("tmp_ds_y.txt", "", "tmp_ds_g.txt"), validation_error);
  }
}

TEST_CASE("save and reload round trip") {
  Eigen::MatrixXd g(5, 2);
  g << 0, 1, 1, 2, 2, kNaN, 0, 1, 1, 0;
  Eigen::MatrixXd cov(5, 1);
  cov << 0.25, -1.5, 0.125, 3.0, -0.75;
  std::vector<MarkerPosition> pos{{1, 1000}, {2, 42}};
  auto d = Dataset::from_parts(small_pheno(), cov, g, {"rsA", "rsB"}, pos);
  save_dataset(d, "tmp_ds_y2.txt", "tmp_ds_cov2.txt", "tmp_ds_g2.txt");
  const auto r = load_dataset("tmp_ds_y2.txt", "tmp_ds_cov2.txt", "tmp_ds_g2.txt");
  CHECK(r.n() == d.n());
  CHECK(r.m() == d.m());
  CHECK((r.phenotype().array() == d.phenotype().array()).all());
  CHECK((r.covariates().array() == d.covariates().array()).all());
  CHECK(r.marker_ids() == d.marker_ids());
  CHECK(r.positions()[1].chrom == 2);
  CHECK(r.positions()[1].bp == 42);
  CHECK(std::isnan(r.genotypes()(2, 1)));
  for (int i = 0; i < 5; ++i) {
    if (i != 2) CHECK(r.genotypes()(i, 1) == d.genotypes()(i, 1));
    CHECK(r.genotypes()(i, 0) == d.genotypes()(i, 0));
  }
}

TEST_CASE("family names parse both ways") {
  CHECK(parse_family("normal") == Family::normal);
  CHECK(parse_family("gaussian") == Family::normal);
  CHECK(parse_family("logistic") == Family::logistic);
  CHECK(parse_family("binomial") == Family::logistic);
  CHECK(family_name(Family::logistic) == "logistic");
  CHECK_THROWS_AS(parse_family("poisson"), validation_error);
}

}  // TEST_SUITE
