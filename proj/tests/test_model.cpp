#include <gtest/gtest.h>

#include <algorithm>

#include "powerlik/io.hpp"
#include "powerlik/model.hpp"
#include "powerlik/synth.hpp"

using namespace powerlik;

namespace {

Dataset small(std::vector<double> t, Source s = Source::Experimental) {
  const auto n = static_cast<Eigen::Index>(t.size());
  Eigen::MatrixXd v(n, 3);
  for (Eigen::Index i = 0; i < n; ++i) v.row(i) << 0.1 * static_cast<double>(i), t[static_cast<std::size_t>(i)], 1.0 + static_cast<double>(i);
  return Dataset({"C", "T", "Y"}, {Role::EffectModifier, Role::Treatment, Role::Outcome}, v, s);
}

bool has_rule(const std::vector<Violation>& v, const std::string& prefix) {
  return std::any_of(v.begin(), v.end(), [&](const Violation& x) { return x.rule.rfind(prefix, 0) == 0; });
}

}  // namespace

TEST(Formula, ParsesInterceptAndInteractions) {
  const auto f = Formula::parse("1 + C + T + C:T");
  ASSERT_EQ(f.size(), 4u);
  EXPECT_EQ(f.terms()[0].name(), "(Intercept)");
  EXPECT_EQ(f.terms()[3].name(), "C:T");
  EXPECT_GE(f.find({"T"}), 0);
  EXPECT_LT(f.find({"Z"}), 0);
}

TEST(Formula, InterceptIsImplicitUnlessRemoved) {
  EXPECT_EQ(Formula::parse("C").size(), 2u);
  EXPECT_EQ(Formula::parse("0 + C").size(), 1u);
  EXPECT_EQ(Formula::parse("C - 1").size(), 1u);
}

TEST(Formula, StarExpandsToMainEffectsAndInteraction) {
  const auto f = Formula::parse("C * T");
  EXPECT_EQ(f.size(), 4u);
  EXPECT_GE(f.find({"C", "T"}), 0);
}

TEST(Formula, RoundTripsThroughText) {
  const auto f = Formula::parse("1 + C1 + Z1 + C5:Z1");
  EXPECT_EQ(Formula::parse(f.to_string()).to_string(), f.to_string());
}

TEST(DatasetValidation, WellFormedHasNoViolations) {
  ScenarioConfig c;
  c.n = 250;
  c.randomized = true;
  EXPECT_TRUE(validate_dataset(gen_scenario_a(c)).empty());
}

TEST(DatasetValidation, OnlyTreatedExperimentalRowsViolatePositivity) {
  const auto v = validate_dataset(small({1, 1, 1}));
  EXPECT_TRUE(has_rule(v, "positivity: no control units"));
}

TEST(DatasetValidation, NonBinaryTreatmentIsReported) {
  const auto v = validate_dataset(small({0, 2, 1}));
  ASSERT_TRUE(has_rule(v, "treatment not binary"));
  const auto it = std::find_if(v.begin(), v.end(), [](const Violation& x) { return x.rule == "treatment not binary"; });
  EXPECT_EQ(it->column, "T");
  EXPECT_EQ(*it->row, 1u);
}

TEST(DatasetValidation, MissingValuesAreRejected) {
  auto d = small({0, 1, 0});
  Eigen::MatrixXd v = d.values();
  v(2, 2) = std::numeric_limits<double>::quiet_NaN();
  const Dataset bad(d.names(), d.roles(), v, d.source());
  EXPECT_TRUE(has_rule(validate_dataset(bad), "missing value"));
  EXPECT_THROW(require_valid(bad, "test"), InvalidDataset);
}

TEST(DatasetValidation, NoEffectModifiersIsOnlyAWarning) {
  Eigen::MatrixXd v(2, 2);
  v << 0, 1, 1, 2;
  const Dataset d({"T", "Y"}, {Role::Treatment, Role::Outcome}, v, Source::Experimental);
  EXPECT_TRUE(validate_dataset(d).empty());
  EXPECT_EQ(dataset_warnings(d).size(), 1u);
}

TEST(DatasetIo, CsvRoundTripIsBitIdentical) {
  ScenarioConfig c;
  c.scenario = Scenario::B;
  c.n = 50;
  c.psi = 0.7;
  const Dataset d = gen_scenario_b(c);
  const Dataset back = parse_csv(to_csv(d), parse_roles(roles_json(d)), d.source());
  EXPECT_EQ(back.names(), d.names());
  EXPECT_EQ(back.roles(), d.roles());
  EXPECT_TRUE((back.values().array() == d.values().array()).all());
}

TEST(DatasetIo, UnmappedColumnsAreDroppedAndMissingOnesRejected) {
  const std::string csv = "id,C,T,Y\n1,0.5,1,2\n2,-0.5,0,1\n";
  const auto d = parse_csv(csv, {{"C", Role::EffectModifier}, {"T", Role::Treatment}, {"Y", Role::Outcome}},
                           Source::Experimental);
  EXPECT_EQ(d.cols(), 3u);
  EXPECT_FALSE(d.has("id"));
  EXPECT_THROW(parse_csv(csv, {{"Q", Role::Outcome}}, Source::Experimental), InvalidDataset);
  EXPECT_THROW(parse_csv("C,T,Y\n1,abc,2\n", {{"C", Role::EffectModifier}, {"T", Role::Treatment}}, Source::Experimental),
               InvalidDataset);
}

TEST(DatasetIo, NaIsParsedAsMissing) {
  const auto d = parse_csv("C,T,Y\n1,NA,2\n", {{"C", Role::EffectModifier}, {"T", Role::Treatment}, {"Y", Role::Outcome}},
                           Source::Experimental);
  EXPECT_TRUE(has_rule(validate_dataset(d), "missing value"));
}

TEST(ParamLayout, NameIndexNameIsIdentity) {
  for (auto s : {Scenario::A, Scenario::B}) {
    for (auto src : {Source::Experimental, Source::Observational}) {
      const auto layout = make_layout(default_spec(s, src));
      for (std::size_t i = 0; i < layout->size(); ++i) EXPECT_EQ(layout->require(layout->name(i)), i);
    }
  }
}

TEST(ParamLayout, ThetaBlockLeadsAndEndsWithLogSigma) {
  const auto layout = make_layout(default_spec(Scenario::A, Source::Experimental));
  EXPECT_EQ(layout->theta_size(), 5u);
  EXPECT_EQ(layout->name(4), kCausalLogSigma);
  EXPECT_EQ(layout->name(3), "causal:C:T");
}

TEST(ModelSpec, SpecJsonRoundTrip) {
  const auto spec = default_spec(Scenario::B, Source::Observational);
  const auto back = parse_spec(spec_json(spec));
  EXPECT_EQ(spec_json(back), spec_json(spec));
}

TEST(ModelSpec, ValidateSpecRejectsCausalReferenceToZ) {
  ScenarioConfig c;
  const Dataset d = gen_scenario_a(c);
  auto spec = default_spec(Scenario::A, Source::Observational);
  EXPECT_NO_THROW(validate_spec(spec, d));
  spec.causal = Formula::parse("1 + C + T + Z");
  EXPECT_THROW(validate_spec(spec, d), ConfigError);
}
