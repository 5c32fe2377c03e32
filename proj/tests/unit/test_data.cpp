#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>

#include "doctest.h"

#include "steel/data.hpp"

using namespace steel;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / "steel_test_data";
  fs::create_directories(dir);
  return dir / name;
}

void write(const fs::path& p, const std::string& text) {
  std::ofstream out(p);
  out << text;
}

CsvSchema schema_1d() {
  CsvSchema s;
  s.state_columns = {"s"};
  s.action_columns = {"a"};
  return s;
}

LoanRecord loan(double payment, int term, double prime, double amount, bool accepted) {
  LoanRecord r;
  r.fico = 700;
  r.loan_amount_approved = amount;
  r.prime_rate = prime;
  r.competitor_rate = 0.01;
  r.term = term;
  r.monthly_payment = payment;
  r.accepted = accepted;
  return r;
}

}  // namespace

TEST_CASE("load_transitions builds successors per trajectory") {
  const auto p = scratch("two_traj.csv");
  write(p,
        "traj_id,t,s,a,r\n"
        "1,0,0.5,1,10\n"
        "0,2,2.0,0,3\n"
        "0,0,0.0,1,1\n"
        "1,1,1.5,0,20\n"
        "0,1,1.0,0,2\n"
        "1,2,2.5,1,30\n");
  const TransitionDataset d = load_transitions(p.string(), schema_1d());
  CHECK(d.num_trajectories() == 2);
  CHECK(d.size() == 4);
  CHECK(d.trajectory_offsets == std::vector<Index>{0, 2, 4});
  // Trajectory 0 sorted by t, last row dropped.
  CHECK(d.states(0, 0) == 0.0);
  CHECK(d.next_states(0, 0) == 1.0);
  CHECK(d.rewards(1) == 2.0);
  CHECK(d.next_states(1, 0) == 2.0);
  CHECK(d.states(2, 0) == 0.5);
  CHECK(d.rewards(3) == 20.0);
  CHECK_NOTHROW(d.validate());
}

TEST_CASE("load_transitions errors") {
  const auto empty = scratch("empty.csv");
  write(empty, "");
  CHECK_THROWS_AS(load_transitions(empty.string(), schema_1d()), Error);

  const auto nan = scratch("nan.csv");
  write(nan, "traj_id,t,s,a,r\n0,0,0,0,1\n0,1,1,0,NaN\n0,2,2,0,1\n");
  CHECK_THROWS_WITH_AS(load_transitions(nan.string(), schema_1d()), doctest::Contains("row 3"),
                       Error);

  const auto missing = scratch("missing.csv");
  write(missing, "traj_id,t,s,r\n0,0,0,1\n");
  CHECK_THROWS_AS(load_transitions(missing.string(), schema_1d()), Error);

  CHECK_THROWS_AS(load_transitions(scratch("nope.csv").string(), schema_1d()), Error);
}

TEST_CASE("save then load is the identity") {
  std::mt19937_64 rng(4);
  std::normal_distribution<double> g;
  TransitionDataset d;
  const Index n_traj = 3, len = 4;
  d.states.resize(n_traj * len, 2);
  d.actions.resize(n_traj * len, 1);
  d.rewards.resize(n_traj * len);
  d.next_states.resize(n_traj * len, 2);
  d.trajectory_offsets = {0};
  for (Index i = 0; i < n_traj; ++i) {
    Vector s(2);
    s << g(rng), g(rng);
    for (Index t = 0; t < len; ++t) {
      const Index r = i * len + t;
      d.states.row(r) = s.transpose();
      d.actions(r, 0) = g(rng) / 3.0;
      d.rewards(r) = g(rng) * 1e-7 + 1.0 / 3.0;
      s << g(rng), g(rng);
      d.next_states.row(r) = s.transpose();
    }
    d.trajectory_offsets.push_back((i + 1) * len);
  }
  CsvSchema schema;
  schema.state_columns = {"x", "y"};
  schema.action_columns = {"u"};
  const auto p = scratch("roundtrip.csv");
  save_transitions(d, p.string(), schema);
  const TransitionDataset back = load_transitions(p.string(), schema);
  CHECK(back.states == d.states);
  CHECK(back.actions == d.actions);
  CHECK(back.rewards == d.rewards);
  CHECK(back.next_states == d.next_states);
  CHECK(back.trajectory_offsets == d.trajectory_offsets);
}

TEST_CASE("dataset invariants") {
  TransitionDataset d;
  d.states = Points::Zero(2, 1);
  d.actions = Points::Zero(2, 1);
  d.rewards = Vector::Zero(2);
  d.next_states = Points::Zero(2, 1);
  d.trajectory_offsets = {0, 2};
  d.next_states(0, 0) = 1.0;  // breaks contiguity with row 1
  CHECK_THROWS_AS(d.validate(), Error);
  d.next_states(0, 0) = 0.0;
  CHECK_NOTHROW(d.validate());
  d.reward_bound = 0.5;
  d.rewards(1) = 0.7;
  CHECK_THROWS_AS(d.validate(), Error);
  d.rewards(1) = std::nan("");
  d.reward_bound.reset();
  CHECK_THROWS_AS(d.validate(), Error);
}

TEST_CASE("select_rows gives one-step trajectories") {
  BanditDataset b;
  b.states = Points::Random(5, 2);
  b.actions = Points::Random(5, 1);
  b.rewards = Vector::Random(5);
  const TransitionDataset t = b.as_transitions();
  CHECK(t.num_trajectories() == 5);
  const TransitionDataset s = t.select_rows({1, 3});
  CHECK(s.size() == 2);
  CHECK(s.rewards(1) == b.rewards(3));
  CHECK(s.num_trajectories() == 2);
}

TEST_CASE("compute_loan_price") {
  CHECK(compute_loan_price(300, 2, 0.0, 250) == doctest::Approx(350.0));
  const double oracle = 500 * (1 / 1.01 + 1 / (1.01 * 1.01) + 1 / (1.01 * 1.01 * 1.01)) - 1000;
  CHECK(compute_loan_price(500, 3, 0.01, 1000) == doctest::Approx(oracle).epsilon(1e-14));
  CHECK(compute_loan_price(500, 3, 0.01, 1000) == doctest::Approx(470.4926).epsilon(1e-7));
  CHECK(compute_loan_price(0, 12, 0.02, 800) == -800.0);
  CHECK_THROWS_AS(compute_loan_price(100, 3, -1.0, 0), Error);
  CHECK_THROWS_AS(compute_loan_price(100, 0, 0.01, 0), Error);
}

TEST_CASE("build_pricing_dataset") {
  {
    const PricingDataset d = build_pricing_dataset({loan(50, 2, 0.0, 0.0, true)});
    CHECK(d.data.actions(0, 0) == doctest::Approx(100.0));
    CHECK(d.data.rewards(0) == doctest::Approx(100.0));
  }
  {
    const PricingDataset d = build_pricing_dataset({loan(50, 2, 0.0, 0.0, false)});
    CHECK(d.data.rewards(0) == 0.0);
  }
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::vector<LoanRecord> recs;
  for (int i = 0; i < 40; ++i) {
    LoanRecord r = loan(250 + 50 * u(rng), 24 + (i % 3) * 12, 0.003 * u(rng), 6000 + 3000 * u(rng),
                        u(rng) < 0.5);
    r.fico = 600 + 200 * u(rng);
    r.competitor_rate = 0.01 * u(rng);
    recs.push_back(r);
  }
  recs.push_back(loan(5000, 60, 0.0, 0.0, true));  // price 300000: outlier
  const PricingDataset d = build_pricing_dataset(recs);
  CHECK(d.input_records == 41);
  CHECK(d.retained_records == 40);
  CHECK(d.data.states.cols() == 6);
  for (Index c = 0; c < 5; ++c) {
    const Vector col = d.data.states.col(c);
    const double mean = col.mean();
    const double var = (col.array() - mean).square().sum() / static_cast<double>(col.size());
    CHECK(std::abs(mean) <= 1e-10);
    CHECK(std::abs(var - 1.0) <= 1e-10);
  }
  CHECK((d.data.states.col(5).array() == 1.0).all());
  // The stored statistics reproduce the standardized rows.
  const Vector again = d.standardizer.apply(pricing_features(recs[7]));
  CHECK((again - d.data.states.row(7).head(5).transpose()).norm() <= 1e-12);

  CHECK_THROWS_AS(build_pricing_dataset({loan(5000, 60, 0.0, 0.0, true)}), Error);
  CHECK_THROWS_AS(build_pricing_dataset({}), Error);
}

TEST_CASE("loan CSV round trip") {
  std::vector<LoanRecord> recs = {loan(312.25, 36, 0.004, 9000, true),
                                  loan(199.5, 48, 0.001, 7000.5, false)};
  const auto p = scratch("loans.csv");
  save_loan_records(recs, p.string());
  const auto back = load_loan_records(p.string());
  REQUIRE(back.size() == 2);
  CHECK(back[0].monthly_payment == recs[0].monthly_payment);
  CHECK(back[1].loan_amount_approved == recs[1].loan_amount_approved);
  CHECK(back[1].term == 48);
  CHECK(back[0].accepted);
  CHECK_FALSE(back[1].accepted);
}
