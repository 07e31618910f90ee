#include <gtest/gtest.h>

#include "ctsurv/dataio.hpp"
#include "ctsurv/random.hpp"
#include "oracles.hpp"
#include "test_util.hpp"

using namespace ctsurv;

TEST(FeatureTable, ParsesBatchColumnAndFeatures) {
  oracle::TempDir dir("dataio");
  oracle::write_text(dir / "f.csv", "id,b,f1,f2\nP1,A,1,2\nP2,B,3,4\nP3,A,5,6\n");
  TableSchema schema;
  schema.batch_column = "b";
  const auto t = load_feature_table(dir / "f.csv", schema);
  EXPECT_EQ(t.n_subjects(), 3u);
  EXPECT_EQ(t.n_features(), 2u);
  EXPECT_EQ(t.batch, (std::vector<std::string>{"A", "B", "A"}));
  EXPECT_EQ(t.values(2, 1), 6.0);
}

TEST(FeatureTable, DuplicateIdRejected) {
  oracle::TempDir dir("dataio");
  oracle::write_text(dir / "f.csv", "id,f1\nP1,1\nP1,2\n");
  EXPECT_EQ(code_of([&] { load_feature_table(dir / "f.csv"); }), Errc::duplicate_id);
}

TEST(FeatureTable, BlankCellIsMissingNotZero) {
  oracle::TempDir dir("dataio");
  oracle::write_text(dir / "f.csv", "id,f1,f2\nP1,,2\nP2,3,4\n");
  const auto t = load_feature_table(dir / "f.csv");
  EXPECT_EQ(t.missing_count(), 1u);
  EXPECT_TRUE(is_missing(t.values(0, 0)));
}

TEST(FeatureTable, NonNumericAndEmpty) {
  oracle::TempDir dir("dataio");
  oracle::write_text(dir / "a.csv", "id,f1\nP1,abc\n");
  oracle::write_text(dir / "b.csv", "id,f1\n");
  EXPECT_EQ(code_of([&] { load_feature_table(dir / "a.csv"); }), Errc::non_numeric);
  EXPECT_EQ(code_of([&] { load_feature_table(dir / "b.csv"); }), Errc::empty_table);
}

TEST(FeatureTable, CovariatesAndIgnoredColumns) {
  oracle::TempDir dir("dataio");
  oracle::write_text(dir / "f.csv", "id,site,age,note,f1\nP1,A,60,1,0.5\nP2,A,70,2,0.7\n");
  TableSchema schema;
  schema.batch_column = "site";
  schema.covariate_columns = {"age"};
  schema.ignore_columns = {"note"};
  const auto t = load_feature_table(dir / "f.csv", schema);
  EXPECT_EQ(t.feature_names, std::vector<std::string>{"f1"});
  EXPECT_EQ(t.covariates(1, 0), 70.0);

  save_feature_table(t, dir / "g.csv", "site");
  const auto u = load_feature_table(dir / "g.csv", {"id", "site", {"age"}, {}});
  EXPECT_EQ(u.values, t.values);
  EXPECT_EQ(u.covariates, t.covariates);
  EXPECT_EQ(u.batch, t.batch);
}

TEST(Outcomes, ValidRows) {
  oracle::TempDir dir("dataio");
  oracle::write_text(dir / "o.csv", "id,time_months,event\nA,12.0,1\nB,30.5,0\n");
  const auto o = load_outcomes(dir / "o.csv");
  ASSERT_EQ(o.size(), 2u);
  EXPECT_EQ(o.time_months[1], 30.5);
  EXPECT_EQ(o.event[0], 1);
}

TEST(Outcomes, DomainErrors) {
  oracle::TempDir dir("dataio");
  oracle::write_text(dir / "a.csv", "id,time_months,event\nC,-1,1\n");
  oracle::write_text(dir / "b.csv", "id,time_months,event\nD,5,2\n");
  oracle::write_text(dir / "c.csv", "id,time,event\nD,5,1\n");
  EXPECT_EQ(code_of([&] { load_outcomes(dir / "a.csv"); }), Errc::domain);
  EXPECT_EQ(code_of([&] { load_outcomes(dir / "b.csv"); }), Errc::domain);
  EXPECT_EQ(code_of([&] { load_outcomes(dir / "c.csv"); }), Errc::missing_column);
}

TEST(Volume, RoundTripIsExact) {
  oracle::TempDir dir("vol");
  Volume v({2, 2, 1}, {0.7, 0.7, 1.0}, 0.0, DType::i16);
  v.voxels = {0, 100, -50, 130};
  save_volume(v, dir / "v.json");
  const auto w = load_volume(dir / "v.json");
  EXPECT_EQ(w.dims, v.dims);
  EXPECT_EQ(w.spacing_mm, v.spacing_mm);
  EXPECT_EQ(w.voxels, v.voxels);
  EXPECT_EQ(w.dtype, DType::i16);

  Volume f({3, 1, 1}, {0.1, 0.2, 0.3}, 0.0, DType::f32);
  f.voxels = {0.25, -1e3, 129.9f};
  save_volume(f, dir / "f.json");
  EXPECT_EQ(load_volume(dir / "f.json").voxels, f.voxels);
}

TEST(Volume, PayloadSizeMismatch) {
  oracle::TempDir dir("vol");
  Volume v({2, 2, 1}, {1, 1, 1}, 0.0, DType::i16);
  save_volume(v, dir / "v.json");
  oracle::write_text(dir / "v.json",
                     R"({"dims":[2,2,2],"spacing_mm":[1,1,1],"dtype":"i16","data":"v.raw"})");
  EXPECT_EQ(code_of([&] { load_volume(dir / "v.json"); }), Errc::size_mismatch);
  oracle::write_text(dir / "v.json",
                     R"({"dims":[2,2,1],"spacing_mm":[1,1,1],"dtype":"u8","data":"v.raw"})");
  EXPECT_EQ(code_of([&] { load_volume(dir / "v.json"); }), Errc::unsupported_dtype);
}

namespace {

FeatureTable ids_table(std::vector<std::string> ids) {
  FeatureTable t;
  t.subject_ids = ids;
  t.feature_names = {"f"};
  t.values = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(ids.size()), 1);
  for (Eigen::Index i = 0; i < t.values.rows(); ++i) t.values(i, 0) = static_cast<double>(i);
  return t;
}

OutcomeTable ids_outcomes(std::vector<std::string> ids) {
  OutcomeTable o;
  for (const auto& id : ids) {
    o.time_months.push_back(1.0 + static_cast<double>(o.subject_ids.size()));
    o.subject_ids.push_back(id);
    o.event.push_back(1);
  }
  return o;
}

}  // namespace

TEST(Align, IntersectionAndDrops) {
  const auto a = align_cohort(ids_table({"A", "B", "C"}), ids_outcomes({"B", "C", "D"}));
  EXPECT_EQ(a.features.subject_ids, (std::vector<std::string>{"B", "C"}));
  EXPECT_EQ(a.outcomes.subject_ids, a.features.subject_ids);
  EXPECT_EQ(a.dropped_from_features, std::vector<std::string>{"A"});
  EXPECT_EQ(a.dropped_from_outcomes, std::vector<std::string>{"D"});
}

TEST(Align, SameIdsDifferentOrder) {
  const auto a = align_cohort(ids_table({"A", "B", "C"}), ids_outcomes({"C", "A", "B"}));
  EXPECT_EQ(a.outcomes.subject_ids, a.features.subject_ids);
  EXPECT_TRUE(a.dropped_from_features.empty());
  EXPECT_TRUE(a.dropped_from_outcomes.empty());
  EXPECT_EQ(a.outcomes.time_months[0], 2.0);  // A was second in the outcome file
}

TEST(Align, Disjoint) {
  EXPECT_EQ(code_of([] { align_cohort(ids_table({"A"}), ids_outcomes({"B"})); }), Errc::empty_intersection);
}

TEST(Spacing, IdenticalSpacingsKeepEveryone) {
  std::vector<Spacing> s(5, Spacing{0.7, 0.7, 1.0});
  std::vector<std::string> ids{"a", "b", "c", "d", "e"};
  const auto r = spacing_filter(ids, s, spacing_stats(s));
  EXPECT_EQ(r.kept.size(), 5u);
  EXPECT_EQ(r.thresholds[2], 1.0);
}

TEST(Spacing, OutlierAboveMeanPlusTwoSd) {
  std::vector<Spacing> s;
  std::vector<std::string> ids;
  for (int i = 0; i < 10; ++i) {
    s.push_back({0.7, 0.7, i == 9 ? 5.0 : 1.0});
    ids.push_back("s" + std::to_string(i));
  }
  // mean 1.4; population variance (9 * 0.16 + 12.96) / 10 = 1.44
  const auto stats = spacing_stats(s);
  EXPECT_NEAR(stats.mean[2], 1.4, 1e-12);
  EXPECT_NEAR(stats.sd[2], 1.2, 1e-12);
  const auto r = spacing_filter(ids, s, stats);
  EXPECT_NEAR(r.thresholds[2], 3.8, 1e-12);
  EXPECT_EQ(r.excluded, std::vector<std::string>{"s9"});
}

TEST(Spacing, EqualToThresholdIsKept) {
  SpacingStats stats;
  stats.mean = {1.0, 1.0, 1.0};
  stats.sd = {0.25, 0.25, 0.25};
  std::vector<Spacing> s{{1.5, 1.0, 1.0}, {1.5000001, 1.0, 1.0}};
  std::vector<std::string> ids{"on", "over"};
  const auto r = spacing_filter(ids, s, stats);
  EXPECT_EQ(r.kept, std::vector<std::string>{"on"});
  EXPECT_EQ(r.excluded, std::vector<std::string>{"over"});
}

TEST(Spacing, MonotoneInOtherSubjects) {
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> u(0.5, 3.0);
  std::vector<Spacing> train(30);
  for (auto& s : train) s = {u(rng), u(rng), u(rng)};
  const auto stats = spacing_stats(train);
  std::vector<Spacing> eval(20);
  std::vector<std::string> ids;
  for (std::size_t i = 0; i < eval.size(); ++i) {
    eval[i] = {u(rng), u(rng), u(rng)};
    ids.push_back(std::to_string(i));
  }
  const auto before = spacing_filter(ids, eval, stats);
  eval[3][2] += 10.0;
  auto after = spacing_filter(ids, eval, stats);
  auto drop3 = [](std::vector<std::string> v) {
    v.erase(std::remove(v.begin(), v.end(), "3"), v.end());
    return v;
  };
  EXPECT_EQ(drop3(before.kept), drop3(after.kept));
  EXPECT_EQ(drop3(before.excluded), drop3(after.excluded));
}

TEST(Folds, StratifiedAndDeterministic) {
  std::vector<int> ev(40, 0);
  for (int i = 0; i < 15; ++i) ev[static_cast<std::size_t>(i * 2)] = 1;
  const auto a = stratified_folds(ev, 5, 9);
  EXPECT_EQ(a, stratified_folds(ev, 5, 9));
  for (int f = 0; f < 5; ++f) {
    int events = 0, total = 0;
    for (std::size_t i = 0; i < ev.size(); ++i) if (a[i] == f) { ++total; events += ev[i]; }
    EXPECT_EQ(events, 3);
    EXPECT_EQ(total, 8);
  }
  std::vector<int> few(10, 0);
  few[0] = 1;
  EXPECT_EQ(code_of([&] { stratified_folds(few, 5, 1); }), Errc::too_few_per_stratum);
}

TEST(Random, DerivedStreamsDiffer) {
  EXPECT_NE(derive_seed(1, 2, 3), derive_seed(1, 3, 2));
  EXPECT_EQ(derive_seed(7, 1), derive_seed(7, 1));
  Rng a(derive_seed(1)), b(derive_seed(1));
  for (int i = 0; i < 10; ++i) EXPECT_EQ(a.normal(), b.normal());
}
