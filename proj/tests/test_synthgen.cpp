#include <algorithm>
#include <cmath>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "doctest.h"
#include "synthgen.hpp"
#include "test_helpers.hpp"
#include "util/errors.hpp"

using namespace codex;
using namespace codex::synth;
using doctest::Approx;

namespace {

GeneratorSpec desk_spec(std::uint64_t seed = 21) {
  GeneratorSpec spec;
  spec.n_episodes = 1200;
  spec.n_categories = 12;
  spec.n_rare = 1;
  // With only 12 categories the default code budget would push the top
  // category's secondary probability past the generator's cap.
  spec.mean_codes = 2.4;
  spec.seed = seed;
  return spec;
}

std::string corpus_digest(const std::vector<EpisodeRecord>& episodes) {
  testutil::TempDir tmp("digest");
  const auto path = tmp.file("c.jsonl");
  save_corpus(path, episodes);
  return testutil::slurp(path);
}

}  // namespace

TEST_CASE("generator spec validation") {
  GeneratorSpec spec;
  spec.validate();
  spec.mean_codes = 0.5;  // below the single principal code
  CHECK_THROWS_AS(spec.validate(), Error);
  spec = GeneratorSpec{};
  spec.modality_dropout[3] = 0.1;  // admission fields always exist
  CHECK_THROWS_AS(spec.validate(), Error);
  spec = GeneratorSpec{};
  spec.strength[0] = 1.5;
  CHECK_THROWS_AS(spec.validate(), Error);
  spec = GeneratorSpec{};
  spec.n_episodes = 0;
  CHECK_THROWS_AS(spec.validate(), Error);
  spec = GeneratorSpec{};
  spec.age_bin_edges = {5, 5};
  CHECK_THROWS_AS(spec.validate(), Error);
}

TEST_CASE("generation is deterministic in the seed") {
  const GeneratorSpec spec = desk_spec();
  const SynthResult a = generate_corpus(spec);
  const SynthResult b = generate_corpus(spec);
  CHECK(corpus_digest(a.episodes) == corpus_digest(b.episodes));
  CHECK(a.stats.mean_codes == b.stats.mean_codes);

  const SynthResult c = generate_corpus(desk_spec(22));
  CHECK(corpus_digest(a.episodes) != corpus_digest(c.episodes));
}

TEST_CASE("corpus statistics track the spec") {
  const GeneratorSpec spec = desk_spec();
  const SynthResult r = generate_corpus(spec);
  REQUIRE(r.stats.n_episodes == spec.n_episodes);
  CHECK(r.stats.n_inpatient + r.stats.n_outpatient == spec.n_episodes);
  CHECK(std::abs(r.stats.mean_codes - spec.mean_codes) / spec.mean_codes < 0.05);
  CHECK(std::abs(double(r.stats.n_outpatient) / double(spec.n_episodes) -
                 spec.outpatient_fraction) < 0.05);
  for (int m = 0; m < 4; ++m) {
    const double present_rate = double(r.stats.modality_present[static_cast<std::size_t>(m)]) /
                                double(spec.n_episodes);
    CHECK(std::abs(present_rate - (1.0 - spec.modality_dropout[static_cast<std::size_t>(m)])) <
          0.05);
  }
  CHECK(r.stats.modality_present[3] == spec.n_episodes);

  // Every lab string the generator renders must survive its own parser.
  const Lexicons lex = Lexicons::defaults();
  long parsed = 0;
  for (const auto& ep : r.episodes) {
    for (const auto& lab : ep.labs) {
      try {
        (void)parse_lab_value(lab.raw_value, lex);
        parsed += 1;
      } catch (const Error& e) {
        CHECK((e.code() == Err::EmptyValue || e.code() == Err::Unparseable));
      }
    }
  }
  CHECK(parsed > 0);
  // lab_entries counts signal entries; fuzz entries are tallied separately.
  CHECK(parsed == r.stats.lab_entries + r.stats.fuzz_categorical + r.stats.fuzz_plus_grade);
  const long failures = r.stats.fuzz_empty + r.stats.fuzz_unparseable;
  CHECK(failures > 0);

  const std::string text = synth_stats_text(r.stats, spec);
  CHECK(text.find("episodes") != std::string::npos);

  // Codes truncate cleanly and there is one code per category.
  for (const auto& ep : r.episodes) {
    REQUIRE(!ep.codes.empty());
    std::set<std::string> cats;
    for (const auto& code : ep.codes) cats.insert(truncate_code(code));
    CHECK(cats.size() == ep.codes.size());  // one code per category
  }
}

TEST_CASE("posterior oracle beats the prior baseline") {
  const GeneratorSpec spec = desk_spec();
  const SynthResult r = generate_corpus(spec);
  const Lexicons lex = Lexicons::defaults();
  const auto oracle = bayes_reference(r.episodes, r.tables, lex);
  const auto prior = prior_reference(r.episodes, r.tables);
  CHECK(oracle.lrap > prior.lrap + 0.2);
  CHECK(oracle.principal_accuracy > prior.principal_accuracy + 0.2);
  CHECK(oracle.lrap > 0.8);
}

TEST_CASE("signal strength scales the oracle monotonically") {
  std::array<double, 3> lraps{};
  const std::array<double, 3> levels = {0.15, 0.5, 1.0};
  for (std::size_t i = 0; i < levels.size(); ++i) {
    GeneratorSpec spec = desk_spec();
    spec.n_episodes = 800;
    spec.strength = {levels[i], levels[i], levels[i], levels[i]};
    const SynthResult r = generate_corpus(spec);
    lraps[i] = bayes_reference(r.episodes, r.tables, Lexicons::defaults()).lrap;
  }
  CHECK(lraps[1] > lraps[0] - 1e-3);
  CHECK(lraps[2] > lraps[1] - 1e-3);
  CHECK(lraps[2] > lraps[0] + 0.03);
}

TEST_CASE("a noiseless configuration is solved exactly") {
  GeneratorSpec spec;
  spec.n_episodes = 300;
  spec.n_categories = 8;
  spec.n_rare = 0;
  spec.mean_codes = 1.0;  // principal only
  spec.strength = {1.0, 1.0, 1.0, 1.0};
  spec.modality_dropout = {0.0, 0.0, 0.0, 0.0};
  spec.n_noise_drugs = 0;
  spec.n_noise_tests = 0;
  spec.n_noise_tokens = 0;
  spec.bg_drug_prob = 0.0;
  spec.bg_token_prob = 0.0;
  spec.adm_concentration = 1.0;
  spec.fuzz_rate = 0.0;
  spec.seed = 5;
  const SynthResult r = generate_corpus(spec);
  for (const auto& ep : r.episodes) CHECK(ep.codes.size() == 1);
  const auto oracle = bayes_reference(r.episodes, r.tables, Lexicons::defaults());
  CHECK(oracle.principal_accuracy == Approx(1.0));
  CHECK(oracle.lrap == Approx(1.0));
}

TEST_CASE("zero strength collapses the posterior onto the prior") {
  GeneratorSpec spec = desk_spec();
  spec.n_episodes = 60;
  spec.strength = {0.0, 0.0, 0.0, 0.0};
  const SynthResult r = generate_corpus(spec);
  const Lexicons lex = Lexicons::defaults();
  const Eigen::VectorXd prior = prior_scores(r.tables);
  for (const auto& ep : r.episodes) {
    const Eigen::VectorXd post = bayes_scores(ep, r.tables, lex);
    REQUIRE(post.size() == prior.size());
    CHECK((post - prior).cwiseAbs().maxCoeff() < 1e-9);
  }
}

TEST_CASE("generator tables round trip") {
  const GeneratorSpec spec = desk_spec();
  const GenTables tables = build_tables(spec);
  CHECK(tables.categories.size() == static_cast<std::size_t>(spec.n_total_categories()));
  CHECK(tables.category_index(tables.categories[3].name) == 3);
  CHECK(tables.category_index("ZZZ") == -1);

  testutil::TempDir tmp("tables");
  const auto path = tmp.file("tables.json");
  save_tables(path, tables);
  const GenTables back = load_tables(path);
  const auto dump = [](const GenTables& t) {
    nlohmann::json j;
    to_json(j, t.spec);
    std::ostringstream os;
    os << j.dump();
    for (const auto& c : t.categories)
      os << c.name << c.prior << c.secondary_prob << c.preferred_age_bin << c.preferred_month;
    for (const auto& d : t.drugs) os << d.code << d.owner;
    for (const auto& lt : t.tests)
      os << lt.id << lt.owner << lt.mu << lt.delta << lt.sigma << lt.appear_prob << lt.unit;
    for (const auto& tok : t.tokens) os << tok.word << tok.owner;
    return os.str();
  };
  CHECK(dump(back) == dump(tables));
  CHECK_THROWS_AS((void)load_tables(tmp.file("absent.json")), Error);

  // Priors are a distribution; rare categories sit at the configured mass.
  double total = 0.0;
  for (const auto& c : tables.categories) total += c.prior;
  CHECK(total == Approx(1.0));
  for (int i = spec.n_categories; i < spec.n_total_categories(); ++i) {
    CHECK(tables.categories[static_cast<std::size_t>(i)].prior < 1e-3);
  }
}
