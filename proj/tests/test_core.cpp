#include <random>

#include "pfa/core.hpp"

#include <doctest.h>

using namespace pfa;

TEST_CASE("group_of on the default partition") {
  AgeGroupPartition p;
  CHECK(p.group_count() == 4);
  CHECK(p.group_of(25) == 1);
  CHECK(p.group_of(31) == 2);
  CHECK(p.group_of(70) == 4);
  // cut ages belong to the lower group
  CHECK(p.group_of(30) == 1);
  CHECK(p.group_of(40) == 2);
  CHECK(p.group_of(41) == 3);
  CHECK(p.group_of(50) == 3);
  CHECK(p.group_of(51) == 4);
  CHECK(p.group_of(0) == 1);
  CHECK_THROWS_AS(p.group_of(-1), std::invalid_argument);
}

TEST_CASE("fractional ages round half-up before binning") {
  AgeGroupPartition p;
  CHECK(p.group_of(30.49) == 1);
  CHECK(p.group_of(30.5) == 2);
  CHECK(p.group_of(40.5) == 3);
  CHECK_THROWS_AS(p.group_of(-0.2), std::invalid_argument);
}

TEST_CASE("partition validation and labels") {
  CHECK_THROWS_AS(AgeGroupPartition(std::vector<int>{}), std::invalid_argument);
  CHECK_THROWS_AS(AgeGroupPartition({30, 30}), std::invalid_argument);
  CHECK_THROWS_AS(AgeGroupPartition({40, 30}), std::invalid_argument);
  AgeGroupPartition p;
  CHECK(p.label(1) == "30-");
  CHECK(p.label(2) == "31-40");
  CHECK(p.label(4) == "51+");
  CHECK(p.lower_age(3) == 41);
  CHECK(p.upper_age(4) == -1);
}

TEST_CASE("group_of is total and monotone") {
  AgeGroupPartition p({12, 19, 33, 47, 60});
  int previous = 1;
  for (int age = 0; age <= 120; ++age) {
    const int g = p.group_of(age);
    CHECK(g >= previous);
    CHECK(g >= 1);
    CHECK(g <= p.group_count());
    CHECK(age >= p.lower_age(g));
    if (p.upper_age(g) >= 0) CHECK(age <= p.upper_age(g));
    previous = g;
  }
}

TEST_CASE("build_gates examples") {
  using Gates = std::vector<std::uint8_t>;
  CHECK(build_gates(2, 3, 4).values() == Gates({0, 1, 0}));
  CHECK(build_gates(1, 4, 4).values() == Gates({1, 1, 1}));
  CHECK(build_gates(3, 3, 4).values() == Gates({0, 0, 0}));
  CHECK_THROWS_AS(build_gates(3, 2, 4), std::invalid_argument);
  CHECK_THROWS_AS(build_gates(0, 2, 4), std::invalid_argument);
  CHECK_THROWS_AS(build_gates(1, 5, 4), std::invalid_argument);
}

TEST_CASE("build_gates has t-s contiguous ones for every valid pair") {
  for (int n = 2; n <= 8; ++n) {
    for (int s = 1; s <= n; ++s) {
      for (int t = s; t <= n; ++t) {
        auto g = build_gates(s, t, n);
        CHECK(g.size() == static_cast<std::size_t>(n - 1));
        CHECK(g.engaged() == t - s);
        CHECK(g.contiguous());
        for (int i = 1; i < n; ++i) CHECK((g[static_cast<std::size_t>(i - 1)] == 1) == (s <= i && i < t));
      }
    }
  }
}

TEST_CASE("gate vectors reject non-binary values; contiguity is checkable") {
  CHECK_THROWS_AS(GateVector({0, 2, 0}), std::invalid_argument);
  CHECK_FALSE(GateVector({1, 0, 1}).contiguous());
  CHECK(GateVector({0, 0, 0}).contiguous());
  CHECK(GateVector({0, 1, 1}).contiguous());
}

TEST_CASE("build_condition is one-hot over channels") {
  auto c = build_condition(1, 4, 8, 8);
  CHECK(c.sizes() == torch::IntArrayRef({4, 8, 8}));
  CHECK(torch::equal(c[0], torch::ones({8, 8})));
  CHECK(torch::equal(c.slice(0, 1), torch::zeros({3, 8, 8})));
  CHECK(torch::equal(build_condition(4, 4, 8, 8)[3], torch::ones({8, 8})));
  CHECK_THROWS_AS(build_condition(0, 4, 8, 8), std::invalid_argument);
  CHECK_THROWS_AS(build_condition(5, 4, 8, 8), std::invalid_argument);

  std::mt19937 rng(7);
  for (int trial = 0; trial < 50; ++trial) {
    const int n = std::uniform_int_distribution<int>(2, 7)(rng);
    const int t = std::uniform_int_distribution<int>(1, n)(rng);
    const int h = std::uniform_int_distribution<int>(1, 9)(rng);
    const int w = std::uniform_int_distribution<int>(1, 9)(rng);
    auto cond = build_condition(t, n, h, w);
    CHECK(torch::equal(cond.sum(0), torch::ones({h, w})));
    CHECK(torch::equal(cond[t - 1], torch::ones({h, w})));
  }
}

TEST_CASE("direction mapping reverses group order for rejuvenation") {
  CHECK(model_group(1, 4, Direction::aging) == 1);
  CHECK(model_group(1, 4, Direction::rejuvenation) == 4);
  CHECK(model_group(3, 4, Direction::rejuvenation) == 2);
  for (int g = 1; g <= 5; ++g) CHECK(natural_group(model_group(g, 5, Direction::rejuvenation), 5, Direction::rejuvenation) == g);
  CHECK(parse_direction("rejuvenation") == Direction::rejuvenation);
  CHECK_THROWS_AS(parse_direction("sideways"), ConfigError);
}
