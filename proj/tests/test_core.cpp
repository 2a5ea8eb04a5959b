#include <catch2/catch_amalgamated.hpp>

#include "medrobust/core.hpp"

using namespace medrobust;

namespace {

SubjectRecord make_subject(const std::string& id, int a, int q, int p, int v, int t) {
  SubjectRecord s;
  s.id = id;
  s.treatment = a;
  s.confounders = Eigen::VectorXd::Zero(q);
  s.mediator = 0.5;
  s.response = Eigen::MatrixXd::Zero(v, t);
  s.nuisance = Eigen::MatrixXd::Zero(p, t);
  return s;
}

}  // namespace

TEST_CASE("pair index enumerates the upper triangle") {
  const auto p3 = pair_index(3);
  REQUIRE(p3.size() == 3);
  CHECK(p3[0].v == 0); CHECK(p3[0].v_prime == 1); CHECK(p3[0].j == 0);
  CHECK(p3[1].v == 0); CHECK(p3[1].v_prime == 2); CHECK(p3[1].j == 1);
  CHECK(p3[2].v == 1); CHECK(p3[2].v_prime == 2); CHECK(p3[2].j == 2);

  CHECK(pair_index(2).size() == 1);
  CHECK(pair_count(100) == 4950);
  CHECK_THROWS_AS(pair_index(1), std::invalid_argument);
}

TEST_CASE("pair_to_flat is the inverse of pair_index") {
  for (int v_count : {2, 3, 7, 25, 50}) {
    const auto pairs = pair_index(v_count);
    for (const auto& p : pairs)
      CHECK(pair_to_flat(p.v, p.v_prime, v_count) == p.j);
  }
  CHECK_THROWS_AS(pair_to_flat(2, 1, 5), std::invalid_argument);
  CHECK_THROWS_AS(pair_to_flat(0, 5, 5), std::invalid_argument);
}

TEST_CASE("pair labels use 1-based region numbers") {
  CHECK(pair_label({0, 0, 1}) == "z(1,2)");
  CHECK(pair_label({2, 1, 2}) == "z(2,3)");
}

TEST_CASE("validate_cohort passes a well-formed cohort") {
  CohortDataset data;
  data.subjects.push_back(make_subject("s1", 1, 3, 3, 3, 50));
  data.subjects.push_back(make_subject("s2", 0, 3, 3, 3, 60));
  CHECK(validate_cohort(data).empty());
  const auto d = data.dims();
  CHECK(d.n == 2);
  CHECK(d.q == 3);
  CHECK(d.p == 3);
  CHECK(d.v == 3);
  CHECK(d.t_min == 50);
  CHECK(d.t_max == 60);
}

TEST_CASE("validate_cohort reports each structural problem") {
  CohortDataset data;
  data.subjects.push_back(make_subject("s1", 1, 3, 3, 3, 50));
  data.subjects.push_back(make_subject("s2", 1, 3, 3, 3, 50));
  auto problems = validate_cohort(data);
  REQUIRE(problems.size() == 1);
  CHECK(problems[0] == "control arm is empty");

  data.subjects[1].treatment = 0;
  data.subjects[1].mediator = std::nan("");
  problems = validate_cohort(data);
  REQUIRE(problems.size() == 1);
  CHECK(problems[0].find("s2") != std::string::npos);
  CHECK(problems[0].find("mediator") != std::string::npos);

  data.subjects[1].mediator = 0.0;
  data.subjects[1].response = Eigen::MatrixXd::Zero(3, 49);  // != nuisance length
  problems = validate_cohort(data);
  REQUIRE(problems.size() == 1);
  CHECK(problems[0].find("lengths differ") != std::string::npos);

  CohortDataset tiny;
  tiny.subjects.push_back(make_subject("s1", 1, 3, 3, 3, 50));
  problems = validate_cohort(tiny);
  REQUIRE(problems.size() == 1);
  CHECK(problems[0].find("fewer than 2 subjects") != std::string::npos);
}

TEST_CASE("validation is idempotent") {
  CohortDataset data;
  data.subjects.push_back(make_subject("s1", 1, 2, 3, 4, 30));
  data.subjects.push_back(make_subject("s2", 0, 2, 3, 4, 30));
  const auto once = validate_cohort(data);
  const auto twice = validate_cohort(data);
  CHECK(once == twice);
}
