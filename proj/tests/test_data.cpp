#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdio>
#include <fstream>

#include "smartdtr/data.hpp"
#include "smartdtr/simulation.hpp"

using namespace smartdtr;

TEST_CASE("schema validates and rejects broken declarations") {
  NodeSchema s = dgp1_schema();
  CHECK_NOTHROW(s.validate());
  CHECK(s.all_columns().size() == 6);
  CHECK(s.find("s2") != nullptr);
  CHECK(s.find("nope") == nullptr);

  NodeSchema bad = s;
  bad.response_column = "missing_col";
  CHECK_THROWS(bad.validate());
}

TEST_CASE("dataset storage, codes and missingness") {
  TrialDataset d(dgp1_schema(), 3);
  d.set_numeric("x1", 0, 1.5);
  d.set_code("a1", 0, 1);
  d.set_label("a2", 0, "3");
  CHECK(d.numeric("x1", 0) == 1.5);
  CHECK(d.a1(0) == 1);
  CHECK(d.code("a2", 0) == 2);
  CHECK(d.label("a2", 0) == "3");
  CHECK(d.missing("x1", 1));
  CHECK(d.y_missing(2));
  d.set_missing("a2", 0);
  CHECK(d.code("a2", 0) == -1);
  CHECK_THROWS(d.set_label("a2", 0, "99"));
  CHECK_THROWS(d.numeric("a1", 0));  // categorical accessed as numeric
}

TEST_CASE("allowable rules: matching, probabilities, determinism") {
  auto rules = dgp1_rules();
  Stratum lapse{{"l2", "1"}}, nolapse{{"l2", "0"}};
  CHECK(allowable_set(rules, 2, lapse) == std::vector<std::string>{"1", "2"});
  CHECK(allowable_set(rules, 2, nolapse) == std::vector<std::string>{"3", "4"});
  CHECK(matching_rule(rules, 2, lapse).probability_of("1") == 0.5);
  CHECK_THROWS(matching_rule(rules, 2, Stratum{{"l2", "7"}}));

  auto arules = dgp2_style_rules();
  Stratum soc{{"l2", "0"}, {"a1", "SOC"}};
  CHECK(matching_rule(arules, 2, soc).deterministic());
  CHECK(matching_rule(arules, 2, soc).probability_of("Continue") == 1.0);
}

TEST_CASE("regime enumeration: 8 regimes in odometer order for the simple design") {
  auto regimes = enumerate_embedded_regimes(dgp1_rules(), dgp1_schema());
  REQUIRE(regimes.size() == 8);
  // stage-1 digit fastest, then lapse choice, then no-lapse choice
  const char* expected[8][3] = {{"0", "1", "3"}, {"1", "1", "3"}, {"0", "2", "3"},
                                {"1", "2", "3"}, {"0", "1", "4"}, {"1", "1", "4"},
                                {"0", "2", "4"}, {"1", "2", "4"}};
  for (std::size_t k = 0; k < 8; ++k) {
    CHECK(regimes[k].id == "regime_" + std::to_string(k + 1));
    CHECK(regimes[k].rule1.decide(Stratum{}) == expected[k][0]);
    CHECK(regimes[k].rule2.decide(Stratum{{"l2", "1"}}) == expected[k][1]);
    CHECK(regimes[k].rule2.decide(Stratum{{"l2", "0"}}) == expected[k][2]);
  }
}

TEST_CASE("regime enumeration collapses unreachable-branch duplicates") {
  // three-arm first stage, deterministic SOC continuation: 18 raw combinations
  // identify down to 15 distinct regimes
  auto regimes = enumerate_embedded_regimes(dgp2_style_rules(), dgp2_style_schema());
  CHECK(regimes.size() == 15);
}

TEST_CASE("follows_regime tracks both stages and voids absorbed stage 2") {
  Dgp1Config cfg;
  cfg.n = 200;
  cfg.seed = 99;
  TrialDataset d = dgp1_sample(cfg);
  auto regimes = enumerate_embedded_regimes(dgp1_rules(), dgp1_schema());
  for (std::size_t i = 0; i < d.size(); ++i) {
    std::size_t followed = 0;
    for (const auto& reg : regimes)
      if (follows_regime(d, i, reg, 2)) ++followed;
    // each record's path is consistent with exactly 2 regimes (the unused
    // branch of the stage-2 rule is free)
    CHECK(followed == 2);
  }

  Dgp2StyleConfig acfg;
  acfg.n = 400;
  acfg.seed = 5;
  acfg.p_death = 0.5;
  TrialDataset a = dgp2_style_sample(acfg);
  auto aregimes = enumerate_embedded_regimes(dgp2_style_rules(), dgp2_style_schema());
  bool saw_absorbed = false;
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (!a.absorbed(i)) continue;
    saw_absorbed = true;
    for (const auto& reg : aregimes) {
      // stage-2 requirement is vacuous once absorbed
      CHECK(follows_regime(a, i, reg, 2) == follows_regime(a, i, reg, 1));
    }
  }
  CHECK(saw_absorbed);
}

TEST_CASE("csv round trip preserves values and missingness") {
  Dgp1Config cfg;
  cfg.n = 50;
  cfg.seed = 3;
  TrialDataset d = dgp1_sample(cfg);
  d.set_missing("y", 7);
  const std::string path = "roundtrip_test.csv";
  write_csv(d, path);
  LoadReport rep;
  TrialDataset back = load_csv(path, dgp1_schema(), &rep);
  CHECK(rep.rows == 50);
  CHECK(rep.missing_outcomes == 1);
  for (std::size_t i = 0; i < d.size(); ++i) {
    CHECK(back.numeric("x1", i) == doctest::Approx(d.numeric("x1", i)).epsilon(1e-14));
    CHECK(back.code("a2", i) == d.code("a2", i));
    CHECK(back.y_missing(i) == d.y_missing(i));
  }
  std::remove(path.c_str());
}

TEST_CASE("complete-case filter drops missing outcomes and reports counts") {
  Dgp1Config cfg;
  cfg.n = 30;
  cfg.seed = 4;
  TrialDataset d = dgp1_sample(cfg);
  d.set_missing("y", 0);
  d.set_missing("y", 29);
  FilterReport rep;
  TrialDataset f = complete_case_filter(d, &rep);
  CHECK(rep.dropped == 2);
  CHECK(f.size() == 28);
  for (std::size_t i = 0; i < f.size(); ++i) CHECK_FALSE(f.y_missing(i));
}

TEST_CASE("check_allowability flags a record outside its allowable set") {
  Dgp1Config cfg;
  cfg.n = 20;
  cfg.seed = 8;
  TrialDataset d = dgp1_sample(cfg);
  CHECK_NOTHROW(check_allowability(d, dgp1_rules()));
  // force a lapse record onto a no-lapse treatment
  for (std::size_t i = 0; i < d.size(); ++i)
    if (d.response(i) == 1) {
      d.set_label("a2", i, "3");
      break;
    }
  CHECK_THROWS(check_allowability(d, dgp1_rules()));
}

TEST_CASE("record stratum honours the stage-1 override") {
  Dgp1Config cfg;
  cfg.n = 5;
  cfg.seed = 12;
  TrialDataset d = dgp1_sample(cfg);
  Stratum s = record_stratum(d, 0, {"a1", "l2"}, std::string{"0"});
  CHECK(s.at("a1") == "0");
  Stratum t = record_stratum(d, 0, {"a1", "l2"});
  CHECK(t.at("a1") == d.label("a1", 0));
}
