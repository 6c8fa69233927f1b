#include "pipeline/pipeline.hpp"

#include <fcntl.h>
#include <unistd.h>

#include <algorithm>
#include <cerrno>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "metrics.hpp"
#include "util/errors.hpp"
#include "util/hash.hpp"
#include "util/rng.hpp"
#include "util/tensor_file.hpp"

namespace codex::pipeline {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr std::uint64_t kStreamAblation = 0x61626c74ULL;

const std::set<std::string> kTrainParts = {"nets", "ensemble", "combined", "confidence"};

json read_json_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(Err::MissingArtifact, path);
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw Error(Err::IoError, path + ": " + e.what());
  }
  return j;
}

void write_json_file(const std::string& path, const json& j) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(Err::IoError, "cannot write " + path);
  out << j.dump(2) << '\n';
  if (!out) throw Error(Err::IoError, "short write to " + path);
}

void write_text_file(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(Err::IoError, "cannot write " + path);
  out << text;
  if (!out) throw Error(Err::IoError, "short write to " + path);
}

std::string vocab_fingerprint(const CodeVocabulary& vocab) {
  std::string joined;
  for (const std::string& cat : vocab.categories) {
    joined += cat;
    joined += '\n';
  }
  return hex16(fnv1a64(joined));
}

json report_to_json(const metrics::EvalReport& r) {
  return json{{"lrap", r.lrap},
              {"ranking_loss", r.ranking_loss},
              {"coverage_error", r.coverage_error},
              {"micro_f1", r.micro_f1},
              {"jaccard", r.jaccard},
              {"principal_accuracy", r.principal_accuracy},
              {"n_records", r.n_records}};
}

// (n x V) score rows from a model over row-major float inputs.
Eigen::MatrixXd predict_rows(const nn::MlpModel& model, const Eigen::MatrixXf& input_rows) {
  return nn::predict(model, input_rows.transpose().cast<double>()).transpose();
}

double round6(double v) { return std::round(v * 1e6) / 1e6; }

}  // namespace

Pipeline::Pipeline(PipelineConfig config) : config_(std::move(config)) {
  config_.validate();
  hash_ = config_hash(config_);
  std::error_code ec;
  fs::create_directories(path("features"), ec);
  fs::create_directories(path("models"), ec);
  fs::create_directories(path("reports"), ec);
  if (ec) throw Error(Err::IoError, "cannot create work dir " + config_.work_dir);

  const std::string lock_path = path(".lock");
  lock_fd_ = ::open(lock_path.c_str(), O_CREAT | O_EXCL | O_WRONLY, 0644);
  if (lock_fd_ < 0) {
    if (errno == EEXIST) {
      throw Error(Err::WorkdirLocked,
                  lock_path + " exists; another run is active (or remove the stale lock)");
    }
    throw Error(Err::IoError, "cannot create lock file " + lock_path);
  }
}

Pipeline::~Pipeline() {
  if (lock_fd_ >= 0) {
    ::close(lock_fd_);
    ::unlink(path(".lock").c_str());
  }
}

std::string Pipeline::path(const std::string& rel) const {
  return config_.work_dir + "/" + rel;
}

void Pipeline::write_meta(const std::string& rel) const {
  write_json_file(path(rel) + ".meta.json", json{{"config_hash", hash_}});
}

void Pipeline::check_meta(const std::string& rel) const {
  if (!fs::exists(path(rel))) {
    throw Error(Err::MissingArtifact, path(rel) + " (run the producing stage first)");
  }
  const json meta = read_json_file(path(rel) + ".meta.json");
  const std::string produced = meta.value("config_hash", "");
  if (produced != hash_) {
    throw Error(Err::ConfigHashMismatch,
                path(rel) + " was produced by config " + produced + ", current config is " +
                    hash_);
  }
}

void Pipeline::save_model_file(const std::string& rel, const nn::MlpModel& model) const {
  nn::save_model(path(rel), model, {{"config_hash", hash_}});
}

nn::MlpModel Pipeline::load_model_file(const std::string& rel) const {
  const std::string file = path(rel);
  if (!fs::exists(file)) {
    throw Error(Err::MissingArtifact, file + " (run `train` first)");
  }
  const TensorFile tf = TensorFile::load(file);
  if (!tf.has_meta("config_hash") || tf.meta("config_hash") != hash_) {
    throw Error(Err::ConfigHashMismatch, file + " does not match the current config");
  }
  return nn::load_model(file);
}

models::SplitData Pipeline::load_split_data(Split s) const {
  check_meta("retained.jsonl");
  check_meta("vocab.tsv");
  check_meta("split.tsv");
  const std::vector<EpisodeRecord> retained = load_corpus(path("retained.jsonl"));
  const CodeVocabulary vocab = load_vocab(path("vocab.tsv"));
  const std::map<std::string, Split> manifest = load_split_manifest(path("split.tsv"));

  std::vector<const EpisodeRecord*> selected;
  for (const EpisodeRecord& ep : retained) {
    const auto it = manifest.find(ep.episode_id);
    if (it == manifest.end()) {
      throw Error(Err::SchemaViolation, "episode " + ep.episode_id + " missing from split manifest");
    }
    if (it->second == s) selected.push_back(&ep);
  }

  models::SplitData data;
  const long n = static_cast<long>(selected.size());
  data.labels.resize(n, vocab.size());
  data.principal.reserve(selected.size());
  data.episode_ids.reserve(selected.size());
  for (long i = 0; i < n; ++i) {
    const LabelVector lv = label_vector(*selected[static_cast<std::size_t>(i)], vocab);
    for (int c = 0; c < vocab.size(); ++c) {
      data.labels(i, c) = lv.bits[static_cast<std::size_t>(c)] ? 1.0f : 0.0f;
    }
    data.principal.push_back(lv.principal_index);
    data.episode_ids.push_back(selected[static_cast<std::size_t>(i)]->episode_id);
  }

  for (Modality m : kAllModalities) {
    const std::string rel = "features/" + std::string(split_name(s)) + "_" +
                            std::string(modality_name(m)) + ".cdxt";
    if (!fs::exists(path(rel))) {
      throw Error(Err::MissingArtifact, path(rel) + " (run `prepare` first)");
    }
    FeatureMatrix fm = load_feature_matrix(path(rel));
    if (fm.config_hash != hash_) {
      throw Error(Err::ConfigHashMismatch, path(rel) + " does not match the current config");
    }
    if (fm.values.rows() != n) {
      throw Error(Err::ShapeMismatch, path(rel) + " rows disagree with the split manifest");
    }
    const std::size_t mi = static_cast<std::size_t>(static_cast<int>(m));
    data.features[mi] = std::move(fm.values);
    data.present[mi] = std::move(fm.present);
  }
  data.validate();
  return data;
}

void Pipeline::run_synth() {
  const synth::SynthResult result = synth::generate_corpus(config_.synth);
  save_corpus(path("corpus.jsonl"), result.episodes);
  write_meta("corpus.jsonl");
  synth::save_tables(path("tables.json"), result.tables);
  write_meta("tables.json");
  synth::save_synth_stats(path("synth_stats.json"), result.stats);
  write_meta("synth_stats.json");

  const Lexicons lex = Lexicons::defaults();
  const metrics::EvalReport bayes = synth::bayes_reference(result.episodes, result.tables, lex);
  const metrics::EvalReport prior = synth::prior_reference(result.episodes, result.tables);
  std::ostringstream os;
  os << "config " << hash_ << "\n\n"
     << synth::synth_stats_text(result.stats, config_.synth) << '\n'
     << "reference rankings over the generator categories:\n"
     << bayes.to_text("posterior") << '\n'
     << prior.to_text("prior-rank") << '\n';
  write_text_file(path("synth_report.txt"), os.str());
}

void Pipeline::run_prepare() {
  check_meta("corpus.jsonl");
  std::vector<EpisodeRecord> episodes = load_corpus(path("corpus.jsonl"));
  const std::size_t n_corpus = episodes.size();

  const CodeVocabulary vocab = build_code_vocab(episodes, config_.prepare.min_support);
  const std::vector<std::string> dropped = unlabeled_episode_ids(episodes, vocab);
  const std::vector<EpisodeRecord> retained = drop_unlabeled(std::move(episodes), vocab);
  const SplitAssignment assignment = stratified_split(
      retained, vocab, config_.prepare.split_ratios, config_.prepare.split_seed);

  save_corpus(path("retained.jsonl"), retained);
  write_meta("retained.jsonl");
  save_vocab(path("vocab.tsv"), vocab);
  write_meta("vocab.tsv");
  save_split_manifest(path("split.tsv"), retained, assignment);
  write_meta("split.tsv");

  const Lexicons lex = config_.prepare.lexicon_dir.empty()
                           ? Lexicons::defaults()
                           : Lexicons::load_dir(config_.prepare.lexicon_dir);

  std::vector<EpisodeRecord> train_eps;
  for (std::size_t i : assignment.indices_of(Split::Train)) train_eps.push_back(retained[i]);
  const EpisodeEncoder encoder = EpisodeEncoder::fit(train_eps, config_.feature_config(), lex);
  encoder.save(path("encoder.json"));
  write_meta("encoder.json");

  // Encode every retained episode once, bucketing rows by split.
  IngestCounts counts;
  std::array<std::array<std::vector<Eigen::VectorXf>, 4>, 3> rows;
  std::array<std::array<std::vector<float>, 4>, 3> present;
  for (std::size_t i = 0; i < retained.size(); ++i) {
    const int s = static_cast<int>(assignment.split[i]);
    const auto encoded = encoder.encode(retained[i], &counts);
    for (int m = 0; m < 4; ++m) {
      const std::size_t mi = static_cast<std::size_t>(m);
      rows[static_cast<std::size_t>(s)][mi].push_back(encoded[mi].values);
      present[static_cast<std::size_t>(s)][mi].push_back(encoded[mi].present ? 1.0f : 0.0f);
    }
  }
  for (Split s : {Split::Train, Split::Dev, Split::Test}) {
    const std::size_t si = static_cast<std::size_t>(static_cast<int>(s));
    for (Modality m : kAllModalities) {
      const std::size_t mi = static_cast<std::size_t>(static_cast<int>(m));
      FeatureMatrix fm;
      fm.modality = m;
      fm.config_hash = hash_;
      const auto& split_rows = rows[si][mi];
      fm.values.resize(static_cast<long>(split_rows.size()), encoder.dim(m));
      for (std::size_t r = 0; r < split_rows.size(); ++r) {
        fm.values.row(static_cast<long>(r)) = split_rows[r].transpose();
      }
      fm.present.resize(static_cast<long>(present[si][mi].size()));
      for (std::size_t r = 0; r < present[si][mi].size(); ++r) {
        fm.present(static_cast<long>(r)) = present[si][mi][r];
      }
      const std::string rel = "features/" + std::string(split_name(s)) + "_" +
                              std::string(modality_name(m)) + ".cdxt";
      save_feature_matrix(path(rel), fm);
    }
  }

  json feature_dims;
  for (Modality m : kAllModalities) {
    feature_dims[std::string(modality_name(m))] = encoder.dim(m);
  }
  const json report{{"schema_version", 1},
                    {"config_hash", hash_},
                    {"n_corpus", n_corpus},
                    {"n_dropped_unlabeled", dropped.size()},
                    {"n_retained", retained.size()},
                    {"vocab_size", vocab.size()},
                    {"split_sizes",
                     {{"train", assignment.indices_of(Split::Train).size()},
                      {"dev", assignment.indices_of(Split::Dev).size()},
                      {"test", assignment.indices_of(Split::Test).size()}}},
                    {"lab_values",
                     {{"total", counts.lab_values_total},
                      {"empty", counts.lab_values_empty},
                      {"unparseable", counts.lab_values_unparseable}}},
                    {"feature_dims", feature_dims}};
  write_json_file(path("prepare_report.json"), report);

  std::ostringstream os;
  os << "config " << hash_ << '\n'
     << "episodes " << n_corpus << " -> retained " << retained.size() << " (dropped "
     << dropped.size() << " with no surviving code)\n"
     << "vocabulary " << vocab.size() << " categories (min support "
     << config_.prepare.min_support << ")\n"
     << "split train/dev/test = " << assignment.indices_of(Split::Train).size() << "/"
     << assignment.indices_of(Split::Dev).size() << "/"
     << assignment.indices_of(Split::Test).size() << '\n'
     << "lab values " << counts.lab_values_total << " (" << counts.lab_values_empty
     << " empty, " << counts.lab_values_unparseable << " unparseable)\n";
  write_text_file(path("prepare_report.txt"), os.str());
}

void Pipeline::run_train(const std::set<std::string>& only) {
  for (const std::string& part : only) {
    if (!kTrainParts.count(part)) {
      throw Error(Err::BadConfig, "unknown train part '" + part + "'");
    }
  }
  auto wants = [&](const char* part) {
    if (!only.empty()) return only.count(part) > 0;
    if (std::string(part) == "confidence") return config_.train.confidence;
    return true;
  };

  const models::SplitData train_sd = load_split_data(Split::Train);
  const models::SplitData dev_sd = load_split_data(Split::Dev);
  const models::StackConfig scfg = config_.stack_config();

  if (wants("nets")) {
    for (Modality m : kAllModalities) {
      const std::size_t mi = static_cast<std::size_t>(static_cast<int>(m));
      const nn::NetworkSpec shape = models::modality_net_spec(
          m, static_cast<int>(train_sd.features[mi].cols()), train_sd.n_labels(),
          scfg.modality_hidden[mi], scfg.modality_dropout[mi]);
      const nn::MlpModel net = models::train_modality_net(m, train_sd, dev_sd, shape, scfg.train);
      save_model_file("models/" + std::string(modality_name(m)) + ".cdxt", net);
    }
  }

  if (wants("ensemble")) {
    std::map<Modality, nn::MlpModel> nets;
    for (Modality m : kAllModalities) {
      nets.emplace(m, load_model_file("models/" + std::string(modality_name(m)) + ".cdxt"));
    }
    const nn::MlpModel ens =
        models::train_ensemble(nets, train_sd, dev_sd, scfg.ensemble_hidden,
                               scfg.ensemble_dropout, scfg.mask_prob, scfg.train);
    save_model_file("models/ensemble.cdxt", ens);
  }

  if (wants("combined")) {
    const nn::MlpModel comb =
        models::train_combined(train_sd, dev_sd, config_.train.combined_hidden,
                               config_.train.combined_dropout, scfg.train);
    save_model_file("models/combined.cdxt", comb);
  }

  std::vector<std::pair<double, double>> thresholds;
  bool trained_confidence = false;
  if (wants("confidence")) {
    models::TrainedStack stack;
    for (Modality m : kAllModalities) {
      stack.nets.emplace(m, load_model_file("models/" + std::string(modality_name(m)) + ".cdxt"));
    }
    stack.ensemble = load_model_file("models/ensemble.cdxt");
    const models::ConfidenceModel conf = models::train_confidence(
        train_sd, dev_sd, stack, scfg, config_.train.confidence_hidden, scfg.train,
        config_.train.confidence_folds);
    save_model_file("models/confidence.cdxt", conf.regressor);

    const Eigen::MatrixXf dev_rows =
        predict_rows(stack.ensemble, models::ensemble_inputs(stack.nets, dev_sd)).cast<float>();
    const std::vector<double> dev_conf = models::confidence_scores(conf, dev_sd, dev_rows);
    for (double scope : config_.evaluate.scopes) {
      thresholds.emplace_back(scope, models::confidence_threshold(dev_conf, scope));
    }
    trained_confidence = true;
  }

  // Manifest: what exists on disk for this config, plus the threshold table.
  json manifest{{"schema_version", 1}, {"config_hash", hash_}};
  const CodeVocabulary vocab = load_vocab(path("vocab.tsv"));
  manifest["vocab_hash"] = vocab_fingerprint(vocab);
  manifest["n_labels"] = vocab.size();
  json dims;
  for (Modality m : kAllModalities) {
    const std::size_t mi = static_cast<std::size_t>(static_cast<int>(m));
    dims[std::string(modality_name(m))] = train_sd.features[mi].cols();
  }
  manifest["feature_dims"] = dims;
  json model_files = json::object();
  for (const std::string name :
       {"lab", "medications", "radiology", "admission", "ensemble", "combined", "confidence"}) {
    const std::string rel = "models/" + name + ".cdxt";
    if (fs::exists(path(rel))) model_files[name] = rel;
  }
  manifest["models"] = model_files;
  if (!trained_confidence) {
    // Preserve a threshold table from an earlier confidence run of the same
    // config, if any.
    const std::string mf = path("models/manifest.json");
    if (fs::exists(mf)) {
      const json old = read_json_file(mf);
      if (old.value("config_hash", "") == hash_ && old.contains("thresholds")) {
        for (const auto& row : old.at("thresholds")) {
          thresholds.emplace_back(row.at(0).get<double>(), row.at(1).get<double>());
        }
      }
    }
  }
  json threshold_rows = json::array();
  for (const auto& [scope, cutoff] : thresholds) {
    threshold_rows.push_back(json::array({scope, cutoff}));
  }
  manifest["thresholds"] = threshold_rows;
  write_json_file(path("models/manifest.json"), manifest);
}

void Pipeline::run_evaluate(const std::vector<std::string>& subset_overrides) {
  const models::SplitData test_sd = load_split_data(Split::Test);
  std::map<Modality, nn::MlpModel> nets;
  for (Modality m : kAllModalities) {
    nets.emplace(m, load_model_file("models/" + std::string(modality_name(m)) + ".cdxt"));
  }
  const nn::MlpModel ensemble = load_model_file("models/ensemble.cdxt");
  const nn::MlpModel combined = load_model_file("models/combined.cdxt");

  const Eigen::MatrixXd truth = test_sd.labels.cast<double>();
  const double threshold = config_.evaluate.threshold;

  const Eigen::MatrixXd ens_scores =
      predict_rows(ensemble, models::ensemble_inputs(nets, test_sd));
  const Eigen::MatrixXd comb_scores =
      predict_rows(combined, models::combined_inputs(test_sd));
  const Eigen::MatrixXd avg_scores = models::averaging_scores(nets, test_sd).cast<double>();

  const metrics::EvalReport ens_report =
      metrics::evaluate_all(ens_scores, truth, test_sd.principal, threshold);
  const metrics::EvalReport comb_report =
      metrics::evaluate_all(comb_scores, truth, test_sd.principal, threshold);
  const metrics::EvalReport avg_report =
      metrics::evaluate_all(avg_scores, truth, test_sd.principal, threshold);

  write_json_file(path("reports/evaluate.json"),
                  json{{"schema_version", 1},
                       {"config_hash", hash_},
                       {"split", "test"},
                       {"ensemble", report_to_json(ens_report)},
                       {"combined", report_to_json(comb_report)},
                       {"averaging", report_to_json(avg_report)}});
  std::ostringstream os;
  os << "config " << hash_ << "  split test\n"
     << ens_report.to_text("ensemble") << '\n'
     << comb_report.to_text("combined") << '\n'
     << avg_report.to_text("averaging") << '\n';
  write_text_file(path("reports/evaluate.txt"), os.str());

  // Ablation: retrain the meta-network with off-subset modalities treated as
  // absent everywhere; the full subset reuses the main ensemble run.
  const std::vector<std::string>& subset_names =
      subset_overrides.empty() ? config_.evaluate.ablation_subsets : subset_overrides;
  std::vector<std::set<Modality>> subsets;
  for (const std::string& name : subset_names) subsets.push_back(parse_subset(name));
  std::stable_sort(subsets.begin(), subsets.end(),
                   [](const std::set<Modality>& a, const std::set<Modality>& b) {
                     if (a.size() != b.size()) return a.size() < b.size();
                     return subset_name(a) < subset_name(b);
                   });

  const models::SplitData train_sd = load_split_data(Split::Train);
  const models::SplitData dev_sd = load_split_data(Split::Dev);
  const models::StackConfig scfg = config_.stack_config();

  json ablation_rows = json::array();
  std::ostringstream table;
  table << "subset                                      AP      RL      CR  Jaccard      F1  Acc(pr)\n";
  for (const std::set<Modality>& subset : subsets) {
    const std::string name = subset_name(subset);
    metrics::EvalReport row;
    if (subset.size() == 4) {
      row = ens_report;
    } else {
      nn::TrainConfig tc = scfg.train;
      tc.seed = derive_seed(scfg.train.seed, kStreamAblation, fnv1a64(name));
      const models::SplitData masked_train = models::mask_to_subset(train_sd, subset);
      const models::SplitData masked_dev = models::mask_to_subset(dev_sd, subset);
      const models::SplitData masked_test = models::mask_to_subset(test_sd, subset);
      const nn::MlpModel sub_ens =
          models::train_ensemble(nets, masked_train, masked_dev, scfg.ensemble_hidden,
                                 scfg.ensemble_dropout, scfg.mask_prob, tc);
      const Eigen::MatrixXd scores =
          predict_rows(sub_ens, models::ensemble_inputs(nets, masked_test));
      row = metrics::evaluate_all(scores, truth, test_sd.principal, threshold);
    }
    json jrow = report_to_json(row);
    jrow["subset"] = name;
    ablation_rows.push_back(jrow);
    char buf[160];
    std::snprintf(buf, sizeof buf, "%-38s %6.4f  %6.4f  %6.2f   %6.4f  %6.4f   %6.4f\n",
                  name.c_str(), row.lrap, row.ranking_loss, row.coverage_error, row.jaccard,
                  row.micro_f1, row.principal_accuracy);
    table << buf;
  }
  write_json_file(path("reports/ablation.json"),
                  json{{"schema_version", 1}, {"config_hash", hash_}, {"rows", ablation_rows}});
  write_text_file(path("reports/ablation.txt"),
                  "config " + hash_ + "  split test\n" + table.str());
}

void Pipeline::run_scope_report() {
  const json manifest = read_json_file(path("models/manifest.json"));
  if (manifest.value("config_hash", "") != hash_) {
    throw Error(Err::ConfigHashMismatch, "models/manifest.json does not match the current config");
  }
  const models::SplitData test_sd = load_split_data(Split::Test);
  std::map<Modality, nn::MlpModel> nets;
  for (Modality m : kAllModalities) {
    nets.emplace(m, load_model_file("models/" + std::string(modality_name(m)) + ".cdxt"));
  }
  const nn::MlpModel ensemble = load_model_file("models/ensemble.cdxt");
  models::ConfidenceModel conf;
  conf.regressor = load_model_file("models/confidence.cdxt");

  const Eigen::MatrixXd score_rows = predict_rows(ensemble, models::ensemble_inputs(nets, test_sd));
  const Eigen::MatrixXf score_rows_f = score_rows.cast<float>();
  const std::vector<double> confidences =
      models::confidence_scores(conf, test_sd, score_rows_f);

  const std::vector<metrics::ScopeRow> rows = metrics::scope_report(
      confidences, score_rows, test_sd.labels.cast<double>(), config_.evaluate.scopes);

  json jrows = json::array();
  for (const auto& r : rows) {
    jrows.push_back(json{{"scope", r.scope},
                         {"n_selected", r.n_selected},
                         {"lrap", r.lrap},
                         {"coverage_error", r.coverage_error},
                         {"ranking_loss", r.ranking_loss}});
  }
  write_json_file(path("reports/scope.json"),
                  json{{"schema_version", 1}, {"config_hash", hash_}, {"rows", jrows}});
  write_text_file(path("reports/scope.txt"),
                  "config " + hash_ + "  split test\n" + metrics::scope_table_text(rows));
}

void Pipeline::run_predict(const std::string& input_path, const std::string& output_path) {
  check_meta("encoder.json");
  check_meta("vocab.tsv");
  models::EnsembleSystem system;
  system.encoder = EpisodeEncoder::load(path("encoder.json"));
  system.vocab = load_vocab(path("vocab.tsv"));
  for (Modality m : kAllModalities) {
    system.nets.emplace(m, load_model_file("models/" + std::string(modality_name(m)) + ".cdxt"));
  }
  system.ensemble = load_model_file("models/ensemble.cdxt");

  double cutoff = -1.0;
  bool have_cutoff = false;
  if (fs::exists(path("models/confidence.cdxt"))) {
    models::ConfidenceModel conf;
    conf.regressor = load_model_file("models/confidence.cdxt");
    const json manifest = read_json_file(path("models/manifest.json"));
    if (manifest.value("config_hash", "") != hash_) {
      throw Error(Err::ConfigHashMismatch,
                  "models/manifest.json does not match the current config");
    }
    for (const auto& row : manifest.at("thresholds")) {
      const double scope = row.at(0).get<double>();
      if (std::abs(scope - config_.evaluate.triage_scope) < 1e-12) {
        cutoff = row.at(1).get<double>();
        have_cutoff = true;
      }
      conf.thresholds.emplace_back(scope, row.at(1).get<double>());
    }
    system.confidence = std::move(conf);
  }

  const std::vector<EpisodeRecord> episodes = load_corpus(input_path);
  std::ofstream out(output_path, std::ios::binary);
  if (!out) throw Error(Err::IoError, "cannot write " + output_path);

  for (const EpisodeRecord& ep : episodes) {
    const models::PredictionBundle bundle = models::predict_episode(system, ep);
    std::vector<int> order(static_cast<std::size_t>(bundle.ensemble_scores.size()));
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = static_cast<int>(i);
    std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
      return bundle.ensemble_scores(a) > bundle.ensemble_scores(b);
    });
    const int k = std::min<int>(config_.evaluate.top_k, static_cast<int>(order.size()));
    json top = json::array();
    for (int i = 0; i < k; ++i) {
      top.push_back(json{{"category", system.vocab.categories[static_cast<std::size_t>(order[static_cast<std::size_t>(i)])]},
                         {"score", round6(bundle.ensemble_scores(order[static_cast<std::size_t>(i)]))}});
    }
    json line{{"episode_id", ep.episode_id},
              {"top", std::move(top)},
              {"principal",
               system.vocab.categories[static_cast<std::size_t>(bundle.predicted_principal)]}};
    if (bundle.confidence) {
      line["confidence"] = round6(*bundle.confidence);
      if (have_cutoff) {
        line["accepted"] = *bundle.confidence >= cutoff;
      } else {
        line["accepted"] = nullptr;
      }
    } else {
      line["confidence"] = nullptr;
      line["accepted"] = nullptr;
    }
    out << line.dump() << '\n';
  }
  if (!out) throw Error(Err::IoError, "short write to " + output_path);
}

}  // namespace codex::pipeline
