#include <cmath>
#include <set>
#include <string>
#include <vector>

#include "doctest.h"
#include "feature_pipeline.hpp"
#include "test_helpers.hpp"
#include "util/errors.hpp"
#include "util/tensor_file.hpp"

using namespace codex;
using doctest::Approx;

namespace {

double max_abs_diff(const Eigen::VectorXf& a, const Eigen::VectorXf& b) {
  if (a.size() != b.size()) return 1e30;
  return a.size() == 0 ? 0.0 : (a - b).cwiseAbs().maxCoeff();
}

EpisodeRecord bare_episode(const std::string& id) {
  EpisodeRecord e;
  e.episode_id = id;
  e.codes = {"A00.1"};
  e.admission.gender = "f";
  e.admission.birth_date = Date{1960, 5, 1};
  e.admission.admit_date = Date{2015, 6, 15};
  e.admission.discharge_date = Date{2015, 6, 25};
  return e;
}

}  // namespace

TEST_CASE("lab encoding normalizes against train statistics") {
  const Lexicons lex = Lexicons::defaults();
  std::vector<EpisodeRecord> train;
  auto ep1 = bare_episode("t1");
  ep1.labs = {{"glu", "3", ""}, {"glu", "7", ""}};
  auto ep2 = bare_episode("t2");
  ep2.labs = {{"glu", "1", ""}, {"hb", "range 2-4", ""}, {"wbc", "neg", ""}};
  train = {ep1, ep2};

  const LabNormStats stats = fit_lab_stats(train, lex);
  REQUIRE(stats.per_test.size() == 2);  // categorical-only "wbc" has no numeric support
  CHECK(stats.per_test.at("glu").log_min == Approx(std::log1p(1.0)));
  CHECK(stats.per_test.at("glu").log_max == Approx(std::log1p(7.0)));
  CHECK(stats.per_test.at("glu").count_log_max == Approx(std::log1p(2.0)));
  CHECK(stats.per_test.at("hb").log_min == Approx(std::log1p(2.0)));  // range endpoints
  CHECK(stats.per_test.at("hb").log_max == Approx(std::log1p(4.0)));

  auto probe = bare_episode("p");
  probe.labs = {{"glu", "7", ""}, {"glu", "-2", ""}, {"hb", "neg", ""}, {"xx", "5", ""}};
  const ModalityVector v = encode_lab(probe, stats, lex);
  REQUIRE(v.values.size() == 6);  // (count, min, max) per universe test, "xx" ignored
  CHECK(v.present);
  CHECK(v.values[0] == Approx(1.0f));  // two glu values, train max count 2
  CHECK(v.values[1] == Approx(0.0f));  // negative clamps to the log floor, below train min
  CHECK(v.values[2] == Approx(1.0f));
  CHECK(v.values[3] == Approx(1.0f));          // one hb row vs train max 1
  CHECK(v.values[4] == Approx(0.0f));          // categorical value: no numeric channels
  CHECK(v.values[5] == Approx(0.0f));

  // Counts above the train maximum overflow channel bounds by design.
  auto heavy = bare_episode("h");
  heavy.labs = {{"hb", "2", ""}, {"hb", "3", ""}, {"hb", "4", ""}};
  const ModalityVector hv = encode_lab(heavy, stats, lex);
  CHECK(hv.values[3] == Approx(std::log1p(3.0) / std::log1p(1.0)));
  CHECK(hv.values[3] > 1.0f);
  CHECK(hv.values[4] == Approx(0.0f));
  CHECK(hv.values[5] == Approx(1.0f));

  // A single distinct train value gives a width-zero range: everything 0.5.
  auto solo = bare_episode("s");
  solo.labs = {{"na", "140", ""}};
  const LabNormStats solo_stats = fit_lab_stats({solo}, lex);
  auto probe2 = bare_episode("p2");
  probe2.labs = {{"na", "9", ""}};
  const ModalityVector sv = encode_lab(probe2, solo_stats, lex);
  CHECK(sv.values[1] == Approx(0.5f));
  CHECK(sv.values[2] == Approx(0.5f));

  auto empty = bare_episode("e");
  CHECK_FALSE(encode_lab(empty, stats, lex).present);

  IngestCounts counts;
  auto noisy = bare_episode("n");
  noisy.labs = {{"glu", "", ""}, {"glu", "???", ""}, {"glu", "4", ""}};
  (void)encode_lab(noisy, stats, lex, &counts);
  CHECK(counts.lab_values_total == 3);
  CHECK(counts.lab_values_empty == 1);
  CHECK(counts.lab_values_unparseable == 1);

  auto hopeless = bare_episode("x");
  hopeless.labs = {{"glu", "neg", ""}};
  CHECK_THROWS_AS((void)fit_lab_stats({hopeless}, lex), Error);  // NoNumericValues
}

TEST_CASE("report embedding normalizes sentence blocks and appends tag one-hots") {
  Lexicons lex;
  lex.locations = {"chest", "spine"};
  lex.positions = {"ap", "lateral"};

  CleanedReport rep;
  rep.sentences = {{"effusion", "apex", "apex"}, {"fracture"}, {}, {}, {}};
  rep.location_tags = {"chest"};
  rep.position_tags = {"lateral"};

  const int dim = 8;
  const ModalityVector v = embed_report(rep, dim, 1, lex);
  REQUIRE(v.values.size() == 5 * dim + 4);
  CHECK(v.present);
  CHECK(v.values.segment(0, dim).norm() == Approx(1.0).epsilon(1e-6));
  CHECK(v.values.segment(dim, dim).norm() == Approx(1.0).epsilon(1e-6));
  for (int s = 2; s < 5; ++s) CHECK(v.values.segment(s * dim, dim).norm() == Approx(0.0));
  // Tag order follows the lexicographic lexicon sets: chest, spine, ap, lateral.
  CHECK(v.values[5 * dim + 0] == 1.0f);
  CHECK(v.values[5 * dim + 1] == 0.0f);
  CHECK(v.values[5 * dim + 2] == 0.0f);
  CHECK(v.values[5 * dim + 3] == 1.0f);

  const ModalityVector v_same = embed_report(rep, dim, 1, lex);
  CHECK(max_abs_diff(v.values, v_same.values) == 0.0);
  const ModalityVector v_other = embed_report(rep, dim, 2, lex);
  CHECK(max_abs_diff(v.values, v_other.values) > 0.0);

  CleanedReport blank;
  blank.sentences.assign(5, {});
  const ModalityVector bv = embed_report(blank, dim, 1, lex);
  CHECK_FALSE(bv.present);
  CHECK(bv.values.norm() == Approx(0.0));

  CHECK_THROWS_AS((void)embed_report(rep, 0, 1, lex), Error);
  CleanedReport bad;
  bad.sentences.assign(3, {});
  CHECK_THROWS_AS((void)embed_report(bad, dim, 1, lex), Error);
}

TEST_CASE("medication encoding is a multi-hot over the train vocabulary") {
  const Lexicons lex = Lexicons::defaults();
  auto ep1 = bare_episode("m1");
  ep1.medications = {{"d0002", "active"}, {"D0001", "active"}, {"D0003", "cancelled"}};
  auto ep2 = bare_episode("m2");
  ep2.medications = {{" d0002 ", "held"}};
  const DrugVocabulary vocab = build_drug_vocab({ep1, ep2}, lex);
  CHECK(vocab.drugs == std::vector<std::string>{"D0001", "D0002"});  // cancelled rows excluded

  const ModalityVector v = encode_medications({"D0002", "D9999"}, vocab);
  REQUIRE(v.values.size() == 2);
  CHECK(v.values[0] == 0.0f);
  CHECK(v.values[1] == 1.0f);  // out-of-vocab drug ignored
  CHECK(v.present);
  const ModalityVector none = encode_medications({}, vocab);
  CHECK_FALSE(none.present);
  CHECK(none.values.norm() == Approx(0.0));
}

TEST_CASE("admission encoding keeps every channel inside the unit interval") {
  auto e1 = bare_episode("a1");  // LOS 10, year 2015
  auto e2 = bare_episode("a2");
  e2.admission.admit_date = Date{2014, 1, 5};
  e2.admission.discharge_date = Date{2014, 1, 6};
  auto e3 = bare_episode("a3");
  e3.admission.admit_date = Date{2016, 12, 31};
  e3.admission.discharge_date = std::nullopt;  // outpatient, LOS 0
  const AdmissionStats stats = fit_admission_stats({e1, e2, e3});
  CHECK(stats.los_log_max == Approx(std::log1p(10.0)));
  CHECK(stats.year_min == 2014);
  CHECK(stats.year_max == 2016);

  FeatureConfig config;  // edges {1,5,18,40,65,80} -> 7 bins
  AdmissionFields f;
  f.gender = 1;
  f.age_bin = 3;
  f.length_of_stay_days = 4;
  f.admit_day = 15;
  f.admit_month = 6;
  f.admit_year = 2015;
  const ModalityVector v = encode_admission(f, stats, config);
  REQUIRE(v.values.size() == 7 + 7);
  CHECK(v.present);
  CHECK(v.values[0] == 1.0f);
  for (int b = 0; b < 7; ++b) CHECK(v.values[1 + b] == (b == 3 ? 1.0f : 0.0f));
  CHECK(v.values[8] == Approx(std::log1p(4.0) / std::log1p(10.0)));
  CHECK(v.values[11] == Approx(0.5).epsilon(1e-6));   // sin(pi) rescaled
  CHECK(v.values[12] == Approx(0.0).epsilon(1e-6));   // cos(pi) rescaled
  CHECK(v.values[13] == Approx(0.5f));                // midpoint of the train year range
  for (Eigen::Index i = 0; i < v.values.size(); ++i) {
    CHECK(v.values[i] >= -1e-6f);
    CHECK(v.values[i] <= 1.0f + 1e-6f);
  }

  AdmissionFields old = f;
  old.age_bin = 99;  // unseen bin index clamps to the last bin
  const ModalityVector ov = encode_admission(old, stats, config);
  CHECK(ov.values[7] == 1.0f);

  CHECK_THROWS_AS((void)fit_admission_stats({}), Error);
}

TEST_CASE("episode encoder round trips through its save file") {
  const Lexicons lex = Lexicons::defaults();
  std::vector<EpisodeRecord> train;
  for (int i = 0; i < 4; ++i) {
    auto e = bare_episode("tr" + std::to_string(i));
    e.labs = {{"glu", std::to_string(3 + i), ""}, {"hb", "1" + std::to_string(i) + " g/dl", ""}};
    e.medications = {{"D000" + std::to_string(i), "active"}};
    e.reports = {{"Chest film is clear. No fracture seen.", "chest", "pa"}};
    train.push_back(e);
  }
  FeatureConfig config;
  config.dim_per_sentence = 12;
  const EpisodeEncoder enc = EpisodeEncoder::fit(train, config, lex);

  CHECK(enc.dim(Modality::Lab) == 6);
  CHECK(enc.dim(Modality::Medications) == 4);
  CHECK(enc.dim(Modality::Radiology) ==
        5 * 12 + static_cast<int>(lex.locations.size() + lex.positions.size()));
  CHECK(enc.dim(Modality::Admission) == 14);

  auto probe = bare_episode("probe");
  probe.labs = {{"glu", "5", ""}};
  probe.medications = {{"d0002", "active"}};
  probe.reports = {{"Impression normal; chest unremarkable.", "", "Lateral"}};
  const auto encoded = enc.encode(probe);
  for (int m = 0; m < 4; ++m) {
    CHECK(encoded[static_cast<std::size_t>(m)].values.size() ==
          enc.dim(kAllModalities[static_cast<std::size_t>(m)]));
  }
  CHECK(encoded[0].present);
  CHECK(encoded[1].present);
  CHECK(encoded[2].present);
  CHECK(encoded[3].present);

  // The explicit exam fields feed the tag one-hots even when case differs.
  const Eigen::VectorXf rad = encoded[2].values;
  long pos = 5 * 12;
  for (const auto& loc : lex.locations) {
    CHECK(rad[pos] == (loc == "chest" ? 1.0f : 0.0f));
    ++pos;
  }
  for (const auto& view : lex.positions) {
    CHECK(rad[pos] == (view == "lateral" ? 1.0f : 0.0f));
    ++pos;
  }

  auto nothing = bare_episode("none");
  const auto empty_encoded = enc.encode(nothing);
  CHECK_FALSE(empty_encoded[0].present);
  CHECK_FALSE(empty_encoded[1].present);
  CHECK_FALSE(empty_encoded[2].present);
  CHECK(empty_encoded[3].present);  // admission always exists

  testutil::TempDir tmp("encoder");
  const auto path = tmp.file("encoder.json");
  enc.save(path);
  const EpisodeEncoder back = EpisodeEncoder::load(path);
  const auto encoded2 = back.encode(probe);
  for (int m = 0; m < 4; ++m) {
    CHECK(max_abs_diff(encoded[static_cast<std::size_t>(m)].values,
                       encoded2[static_cast<std::size_t>(m)].values) == 0.0);
  }
  CHECK_THROWS_AS((void)EpisodeEncoder::load(tmp.file("absent.json")), Error);
}

TEST_CASE("feature matrix files round trip bit for bit") {
  testutil::TempDir tmp("featmat");
  FeatureMatrix m;
  m.modality = Modality::Radiology;
  m.config_hash = "0123456789abcdef";
  m.values.resize(3, 4);
  float x = 0.0f;
  for (Eigen::Index r = 0; r < 3; ++r)
    for (Eigen::Index c = 0; c < 4; ++c) m.values(r, c) = (x += 0.37f);
  m.present.resize(3);
  m.present << 1.0f, 0.0f, 1.0f;

  const auto path = tmp.file("rad.cdxt");
  save_feature_matrix(path, m);
  const FeatureMatrix back = load_feature_matrix(path);
  CHECK(back.modality == Modality::Radiology);
  CHECK(back.config_hash == m.config_hash);
  CHECK((back.values - m.values).cwiseAbs().maxCoeff() == 0.0f);
  CHECK(max_abs_diff(back.present, m.present) == 0.0);

  FeatureMatrix bad = m;
  bad.present.resize(2);
  bad.present << 1.0f, 0.0f;
  CHECK_THROWS_AS(save_feature_matrix(tmp.file("bad.cdxt"), bad), Error);

  TensorFile other;
  other.set_meta("kind", "weights");
  Tensor t;
  t.name = "w";
  t.shape = {1};
  t.data = {1.0f};
  other.add(std::move(t));
  other.save(tmp.file("other.cdxt"));
  CHECK_THROWS_AS((void)load_feature_matrix(tmp.file("other.cdxt")), Error);
}

TEST_CASE("modality names round trip") {
  for (Modality m : kAllModalities) CHECK(modality_from_name(modality_name(m)) == m);
  CHECK_THROWS_AS((void)modality_from_name("imaging"), Error);
}
