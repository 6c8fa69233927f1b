#include <fstream>
#include <string>

#include "doctest.h"
#include "pipeline/config.hpp"
#include "test_helpers.hpp"
#include "util/errors.hpp"

using namespace codex;
using namespace codex::pipeline;
using nlohmann::json;

TEST_CASE("config serialization is canonical and hash-stable") {
  const PipelineConfig def;
  def.validate();
  const std::string h = config_hash(def);
  CHECK(h.size() == 16);
  CHECK(h.find_first_not_of("0123456789abcdef") == std::string::npos);

  const PipelineConfig back = config_from_json(config_to_json(def));
  CHECK(config_hash(back) == h);

  // Key order in the file must not matter.
  json shuffled;
  shuffled["train"] = config_to_json(def).at("train");
  shuffled["schema_version"] = 1;
  shuffled["work_dir"] = def.work_dir;
  CHECK(config_hash(config_from_json(shuffled)) == h);

  // Absent keys keep defaults, so a minimal file hashes like the defaults.
  CHECK(config_hash(config_from_json(json{{"schema_version", 1}})) == h);

  PipelineConfig other = def;
  other.train.seed = def.train.seed + 1;
  CHECK(config_hash(other) != h);
  other = def;
  other.synth.n_episodes += 1;
  CHECK(config_hash(other) != h);
}

TEST_CASE("config parsing is strict") {
  CHECK_THROWS_AS((void)config_from_json(json{{"schema_version", 2}}), Error);
  CHECK_THROWS_AS((void)config_from_json(json{{"wrok_dir", "w"}}), Error);
  CHECK_THROWS_AS((void)config_from_json(json{{"work_dir", 7}}), Error);
  CHECK_THROWS_AS((void)config_from_json(json{{"train", json{{"patince", 3}}}}), Error);
  CHECK_THROWS_AS((void)config_from_json(json{{"train", json{{"patience", "3"}}}}), Error);
  CHECK_THROWS_AS((void)config_from_json(json::array()), Error);

  const json ok{{"schema_version", 1}, {"train", json{{"patience", 9}}}};
  CHECK(config_from_json(ok).train.patience == 9);
}

TEST_CASE("config validation rejects out-of-range settings") {
  auto broken = [](auto&& mutate) {
    PipelineConfig c;
    mutate(c);
    return c;
  };
  CHECK_THROWS_AS(broken([](PipelineConfig& c) { c.work_dir = ""; }).validate(), Error);
  CHECK_THROWS_AS(broken([](PipelineConfig& c) { c.prepare.dim_per_sentence = 0; }).validate(),
                  Error);
  CHECK_THROWS_AS(broken([](PipelineConfig& c) { c.prepare.min_support = 0; }).validate(), Error);
  CHECK_THROWS_AS(
      broken([](PipelineConfig& c) { c.prepare.split_ratios = {0.5, 0.2, 0.2}; }).validate(),
      Error);
  CHECK_THROWS_AS(
      broken([](PipelineConfig& c) { c.prepare.age_bin_edges = {5, 5, 18}; }).validate(), Error);
  CHECK_THROWS_AS(
      broken([](PipelineConfig& c) { c.train.modality_hidden[2].clear(); }).validate(), Error);
  CHECK_THROWS_AS(broken([](PipelineConfig& c) { c.train.mask_prob = 1.0; }).validate(), Error);
  CHECK_THROWS_AS(broken([](PipelineConfig& c) { c.train.combined_dropout = -0.1; }).validate(),
                  Error);
  CHECK_THROWS_AS(broken([](PipelineConfig& c) { c.train.confidence_folds = 1; }).validate(),
                  Error);
  CHECK_THROWS_AS(broken([](PipelineConfig& c) { c.evaluate.threshold = 1.0; }).validate(),
                  Error);
  CHECK_THROWS_AS(broken([](PipelineConfig& c) { c.evaluate.scopes = {0.2, 0.1}; }).validate(),
                  Error);
  CHECK_THROWS_AS(broken([](PipelineConfig& c) { c.evaluate.scopes = {0.0, 0.5}; }).validate(),
                  Error);
  CHECK_THROWS_AS(broken([](PipelineConfig& c) { c.evaluate.triage_scope = 0.17; }).validate(),
                  Error);
  CHECK_THROWS_AS(broken([](PipelineConfig& c) { c.evaluate.top_k = 0; }).validate(), Error);
  CHECK_THROWS_AS(
      broken([](PipelineConfig& c) { c.evaluate.ablation_subsets = {"lab+imaging"}; }).validate(),
      Error);

  // Triage scope only needs to be listed while the confidence head is on.
  PipelineConfig off;
  off.train.confidence = false;
  off.evaluate.triage_scope = 0.17;
  off.validate();
}

TEST_CASE("modality subsets parse to canonical names") {
  CHECK(subset_name(parse_subset("admission+lab")) == "lab+admission");
  CHECK(subset_name(parse_subset("radiology")) == "radiology");
  CHECK(subset_name(parse_subset("medications+lab+radiology+admission")) ==
        "lab+medications+radiology+admission");
  CHECK(parse_subset("lab+lab").size() == 1);
  CHECK_THROWS_AS((void)parse_subset("lab+imaging"), Error);
  CHECK_THROWS_AS((void)parse_subset("lab++radiology"), Error);
  CHECK_THROWS_AS((void)parse_subset(""), Error);
}

TEST_CASE("config files load strictly") {
  testutil::TempDir tmp("config");
  const auto path = tmp.file("conf.json");
  {
    std::ofstream out(path);
    out << R"({"schema_version": 1, "work_dir": "w", "train": {"max_epochs": 3}})";
  }
  const PipelineConfig c = load_config_file(path);
  CHECK(c.work_dir == "w");
  CHECK(c.train.max_epochs == 3);

  CHECK_THROWS_AS((void)load_config_file(tmp.file("absent.json")), Error);
  {
    std::ofstream out(tmp.file("broken.json"));
    out << "{not json";
  }
  CHECK_THROWS_AS((void)load_config_file(tmp.file("broken.json")), Error);

  // The checked-in default config stays parseable and self-consistent.
  const PipelineConfig shipped = load_config_file(CODEX_CONFIG_DIR "/default.json");
  shipped.validate();
}
