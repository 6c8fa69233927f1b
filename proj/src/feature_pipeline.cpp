#include "feature_pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include "json.hpp"
#include "util/errors.hpp"
#include "util/hash.hpp"
#include "util/tensor_file.hpp"
#include "util/text.hpp"

namespace codex {

using nlohmann::json;

std::string_view modality_name(Modality m) {
  switch (m) {
    case Modality::Lab: return "lab";
    case Modality::Medications: return "medications";
    case Modality::Radiology: return "radiology";
    case Modality::Admission: return "admission";
  }
  return "?";
}

Modality modality_from_name(std::string_view name) {
  for (Modality m : kAllModalities)
    if (modality_name(m) == name) return m;
  throw Error(Err::UnknownModality, "'" + std::string(name) + "'");
}

namespace {

constexpr double kTau = 2.0 * M_PI;

// min/max aggregation sees range endpoints, everything else its numeric value.
void numeric_contributions(const ParsedLabValue& v, std::vector<double>& out) {
  out.clear();
  if (v.range) {
    out.push_back(v.range->first);
    out.push_back(v.range->second);
  } else if (v.numeric_value) {
    out.push_back(*v.numeric_value);
  }
}

// Lab values live on a log scale; negatives would fall outside its domain.
double log_value(double v) { return std::log1p(std::max(v, 0.0)); }

double clamp01(double v) { return std::min(1.0, std::max(0.0, v)); }

// (value - lo) / (hi - lo) clamped; a width-zero training range carries no
// ordering information, so everything maps to the midpoint.
double min_max_norm(double v, double lo, double hi) {
  if (hi <= lo) return 0.5;
  return clamp01((v - lo) / (hi - lo));
}

Eigen::VectorXf to_f32(const Eigen::VectorXd& v) { return v.cast<float>(); }

}  // namespace

std::vector<std::pair<std::string, ParsedLabValue>> parse_episode_labs(
    const EpisodeRecord& episode, const Lexicons& lex, IngestCounts* counts) {
  std::vector<std::pair<std::string, ParsedLabValue>> out;
  for (const auto& entry : episode.labs) {
    if (counts) counts->lab_values_total += 1;
    try {
      out.emplace_back(entry.test_id, parse_lab_value(entry.raw_value, lex));
    } catch (const Error& e) {
      if (e.code() == Err::EmptyValue) {
        if (counts) counts->lab_values_empty += 1;
      } else if (e.code() == Err::Unparseable) {
        if (counts) counts->lab_values_unparseable += 1;
      } else {
        throw;
      }
    }
  }
  return out;
}

LabNormStats fit_lab_stats(const std::vector<EpisodeRecord>& episodes, const Lexicons& lex,
                           const std::string& fitted_on) {
  struct Acc {
    double lo = 0.0, hi = 0.0;
    bool any = false;
    long max_count = 0;
  };
  std::map<std::string, Acc> acc;
  std::vector<double> vals;
  for (const auto& ep : episodes) {
    std::map<std::string, long> counts;
    for (const auto& [test, parsed] : parse_episode_labs(ep, lex)) {
      counts[test] += 1;
      numeric_contributions(parsed, vals);
      for (double v : vals) {
        const double lv = log_value(v);
        auto& a = acc[test];
        if (!a.any) {
          a.lo = a.hi = lv;
          a.any = true;
        } else {
          a.lo = std::min(a.lo, lv);
          a.hi = std::max(a.hi, lv);
        }
      }
    }
    for (const auto& [test, c] : counts) {
      auto it = acc.find(test);
      if (it != acc.end()) it->second.max_count = std::max(it->second.max_count, c);
    }
  }

  LabNormStats stats;
  stats.fitted_on = fitted_on;
  for (const auto& [test, a] : acc) {
    if (!a.any) continue;
    stats.per_test[test] = {a.lo, a.hi, std::log1p(static_cast<double>(a.max_count))};
  }
  if (stats.per_test.empty())
    throw Error(Err::NoNumericValues, "no numeric lab value in the fitting episodes");
  return stats;
}

ModalityVector encode_lab(const EpisodeRecord& episode, const LabNormStats& stats,
                          const Lexicons& lex, IngestCounts* counts) {
  struct Agg {
    long count = 0;
    double lo = 0.0, hi = 0.0;
    bool any_numeric = false;
  };
  std::map<std::string, Agg> agg;
  std::vector<double> vals;
  for (const auto& [test, parsed] : parse_episode_labs(episode, lex, counts)) {
    if (!stats.per_test.count(test)) continue;  // outside the training universe
    auto& a = agg[test];
    a.count += 1;
    numeric_contributions(parsed, vals);
    for (double v : vals) {
      const double lv = log_value(v);
      if (!a.any_numeric) {
        a.lo = a.hi = lv;
        a.any_numeric = true;
      } else {
        a.lo = std::min(a.lo, lv);
        a.hi = std::max(a.hi, lv);
      }
    }
  }

  ModalityVector out;
  out.modality = Modality::Lab;
  Eigen::VectorXd values = Eigen::VectorXd::Zero(3 * static_cast<long>(stats.per_test.size()));
  long base = 0;
  for (const auto& [test, ts] : stats.per_test) {
    const auto it = agg.find(test);
    if (it != agg.end()) {
      const Agg& a = it->second;
      values[base] = ts.count_log_max > 0.0
                         ? std::log1p(static_cast<double>(a.count)) / ts.count_log_max
                         : 0.0;
      if (a.any_numeric) {
        values[base + 1] = min_max_norm(a.lo, ts.log_min, ts.log_max);
        values[base + 2] = min_max_norm(a.hi, ts.log_min, ts.log_max);
      }
    }
    base += 3;
  }
  out.values = to_f32(values);
  out.present = !episode.labs.empty();
  return out;
}

ModalityVector embed_report(const CleanedReport& report, int dim_per_sentence,
                            std::uint64_t seed, const Lexicons& lex) {
  if (dim_per_sentence < 1) throw Error(Err::SpecInvalid, "dim_per_sentence must be >= 1");
  if (static_cast<int>(report.sentences.size()) != kSentenceSlots)
    throw Error(Err::ShapeMismatch, "report does not hold exactly 5 sentence slots");

  const long tag_dim = static_cast<long>(lex.locations.size() + lex.positions.size());
  Eigen::VectorXd values =
      Eigen::VectorXd::Zero(kSentenceSlots * static_cast<long>(dim_per_sentence) + tag_dim);
  for (int s = 0; s < kSentenceSlots; ++s) {
    const long base = static_cast<long>(s) * dim_per_sentence;
    for (const auto& token : report.sentences[static_cast<std::size_t>(s)]) {
      const std::uint64_t h = token_hash(token, seed);
      const long bucket = static_cast<long>(h % static_cast<std::uint64_t>(dim_per_sentence));
      const double sign = ((h >> 32) & 1u) ? 1.0 : -1.0;
      values[base + bucket] += sign;
    }
    const double norm = values.segment(base, dim_per_sentence).norm();
    if (norm > 0.0) values.segment(base, dim_per_sentence) /= norm;
  }

  long pos = static_cast<long>(kSentenceSlots) * dim_per_sentence;
  for (const auto& loc : lex.locations) values[pos++] = report.location_tags.count(loc) ? 1.0 : 0.0;
  for (const auto& view : lex.positions) values[pos++] = report.position_tags.count(view) ? 1.0 : 0.0;

  ModalityVector out;
  out.modality = Modality::Radiology;
  out.values = to_f32(values);
  out.present = !report.empty();
  return out;
}

DrugVocabulary build_drug_vocab(const std::vector<EpisodeRecord>& episodes, const Lexicons& lex) {
  std::set<std::string> drugs;
  for (const auto& ep : episodes)
    for (const auto& med : ep.medications)
      if (auto code = normalize_medication(med.drug_code, med.status, lex); code && !code->empty())
        drugs.insert(*code);
  DrugVocabulary vocab;
  for (const auto& d : drugs) {
    vocab.index[d] = static_cast<int>(vocab.drugs.size());
    vocab.drugs.push_back(d);
  }
  return vocab;
}

ModalityVector encode_medications(const std::set<std::string>& drugs,
                                  const DrugVocabulary& vocab) {
  ModalityVector out;
  out.modality = Modality::Medications;
  Eigen::VectorXd values = Eigen::VectorXd::Zero(vocab.size());
  for (const auto& d : drugs) {
    const auto it = vocab.index.find(d);
    if (it != vocab.index.end()) values[it->second] = 1.0;
  }
  out.values = to_f32(values);
  out.present = !drugs.empty();
  return out;
}

AdmissionStats fit_admission_stats(const std::vector<EpisodeRecord>& episodes,
                                   const std::string& fitted_on) {
  AdmissionStats stats;
  stats.fitted_on = fitted_on;
  bool first = true;
  for (const auto& ep : episodes) {
    const auto& adm = ep.admission;
    long los = 0;
    if (adm.discharge_date) los = std::max(0L, days_between(adm.admit_date, *adm.discharge_date));
    stats.los_log_max = std::max(stats.los_log_max, std::log1p(static_cast<double>(los)));
    if (first) {
      stats.year_min = stats.year_max = adm.admit_date.year;
      first = false;
    } else {
      stats.year_min = std::min(stats.year_min, adm.admit_date.year);
      stats.year_max = std::max(stats.year_max, adm.admit_date.year);
    }
  }
  if (first) throw Error(Err::EmptyDataset, "no episodes to fit admission stats on");
  return stats;
}

ModalityVector encode_admission(const AdmissionFields& fields, const AdmissionStats& stats,
                                const FeatureConfig& config) {
  const int n_bins = config.n_age_bins();
  Eigen::VectorXd values = Eigen::VectorXd::Zero(n_bins + 7);
  long pos = 0;
  values[pos++] = fields.gender;
  const int bin = std::min(fields.age_bin, n_bins - 1);
  values[pos + bin] = 1.0;
  pos += n_bins;
  values[pos++] = stats.los_log_max > 0.0
                      ? clamp01(std::log1p(static_cast<double>(fields.length_of_stay_days)) /
                                stats.los_log_max)
                      : 0.0;
  // Cyclic pairs rescaled to [0,1] to keep every admission channel in range.
  const double day_angle = kTau * fields.admit_day / 31.0;
  const double month_angle = kTau * fields.admit_month / 12.0;
  values[pos++] = (std::sin(day_angle) + 1.0) / 2.0;
  values[pos++] = (std::cos(day_angle) + 1.0) / 2.0;
  values[pos++] = (std::sin(month_angle) + 1.0) / 2.0;
  values[pos++] = (std::cos(month_angle) + 1.0) / 2.0;
  values[pos++] = min_max_norm(fields.admit_year, stats.year_min, stats.year_max);

  ModalityVector out;
  out.modality = Modality::Admission;
  out.values = to_f32(values);
  out.present = true;  // admission fields always exist on a record
  return out;
}

EpisodeEncoder EpisodeEncoder::fit(const std::vector<EpisodeRecord>& train_episodes,
                                   const FeatureConfig& config, const Lexicons& lex) {
  EpisodeEncoder enc;
  enc.config_ = config;
  enc.lexicons_ = lex;
  enc.lab_stats_ = fit_lab_stats(train_episodes, lex, "train");
  enc.admission_stats_ = fit_admission_stats(train_episodes, "train");
  enc.drug_vocab_ = build_drug_vocab(train_episodes, lex);
  return enc;
}

ModalityVector EpisodeEncoder::encode_one(const EpisodeRecord& episode, Modality m,
                                          IngestCounts* counts) const {
  switch (m) {
    case Modality::Lab:
      return encode_lab(episode, lab_stats_, lexicons_, counts);
    case Modality::Medications: {
      std::set<std::string> drugs;
      for (const auto& med : episode.medications)
        if (auto code = normalize_medication(med.drug_code, med.status, lexicons_);
            code && !code->empty())
          drugs.insert(*code);
      return encode_medications(drugs, drug_vocab_);
    }
    case Modality::Radiology: {
      std::string joined;
      for (const auto& r : episode.reports) {
        if (!joined.empty()) joined += ". ";
        joined += r.text;
      }
      CleanedReport rep = clean_radiology_text(joined, lexicons_);
      for (const auto& r : episode.reports) {
        const std::string loc = to_lower(trim(r.location));
        const std::string view = to_lower(trim(r.position));
        if (lexicons_.locations.count(loc)) rep.location_tags.insert(loc);
        if (lexicons_.positions.count(view)) rep.position_tags.insert(view);
      }
      ModalityVector out = embed_report(rep, config_.dim_per_sentence, config_.hash_seed,
                                        lexicons_);
      // Presence tracks the raw payload, not what survived cleaning.
      out.present = !episode.reports.empty();
      return out;
    }
    case Modality::Admission: {
      const auto& adm = episode.admission;
      const AdmissionFields fields = parse_admission(adm.gender, adm.birth_date, adm.admit_date,
                                                     adm.discharge_date, config_.age_bin_edges);
      return encode_admission(fields, admission_stats_, config_);
    }
  }
  throw Error(Err::UnknownModality, "bad modality enum value");
}

std::array<ModalityVector, 4> EpisodeEncoder::encode(const EpisodeRecord& episode,
                                                     IngestCounts* counts) const {
  return {encode_one(episode, Modality::Lab, counts),
          encode_one(episode, Modality::Medications),
          encode_one(episode, Modality::Radiology),
          encode_one(episode, Modality::Admission)};
}

int EpisodeEncoder::dim(Modality m) const {
  switch (m) {
    case Modality::Lab: return 3 * static_cast<int>(lab_stats_.per_test.size());
    case Modality::Medications: return drug_vocab_.size();
    case Modality::Radiology:
      return kSentenceSlots * config_.dim_per_sentence +
             static_cast<int>(lexicons_.locations.size() + lexicons_.positions.size());
    case Modality::Admission: return config_.n_age_bins() + 7;
  }
  throw Error(Err::UnknownModality, "bad modality enum value");
}

namespace {

json string_set_to_json(const std::set<std::string>& s) { return json(s); }

std::set<std::string> string_set_from_json(const json& j) {
  std::set<std::string> out;
  for (const auto& v : j) out.insert(v.get<std::string>());
  return out;
}

}  // namespace

void EpisodeEncoder::save(const std::string& path) const {
  json j;
  j["schema_version"] = 1;
  j["config"] = {{"dim_per_sentence", config_.dim_per_sentence},
                 {"hash_seed", config_.hash_seed},
                 {"age_bin_edges", config_.age_bin_edges}};
  json tests = json::object();
  for (const auto& [test, ts] : lab_stats_.per_test)
    tests[test] = {{"log_min", ts.log_min},
                   {"log_max", ts.log_max},
                   {"count_log_max", ts.count_log_max}};
  j["lab_stats"] = {{"fitted_on", lab_stats_.fitted_on}, {"tests", std::move(tests)}};
  j["admission_stats"] = {{"fitted_on", admission_stats_.fitted_on},
                          {"los_log_max", admission_stats_.los_log_max},
                          {"year_min", admission_stats_.year_min},
                          {"year_max", admission_stats_.year_max}};
  j["drug_vocab"] = drug_vocab_.drugs;
  json cats = json::object();
  for (const auto& [form, canon] : lexicons_.lab_categories) cats[form] = canon;
  j["lexicons"] = {{"lab_categories", std::move(cats)},
                   {"units", string_set_to_json(lexicons_.units)},
                   {"stopwords", string_set_to_json(lexicons_.stopwords)},
                   {"cancel_statuses", string_set_to_json(lexicons_.cancel_statuses)},
                   {"locations", string_set_to_json(lexicons_.locations)},
                   {"positions", string_set_to_json(lexicons_.positions)}};

  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(Err::IoError, "cannot open '" + path + "' for writing");
  out << j.dump(2) << "\n";
  if (!out) throw Error(Err::IoError, "write failed for '" + path + "'");
}

EpisodeEncoder EpisodeEncoder::load(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(Err::MissingArtifact, path);
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw Error(Err::SchemaViolation, path + ": " + e.what());
  }
  if (j.value("schema_version", 0) != 1)
    throw Error(Err::SchemaViolation, path + ": unsupported schema_version");

  EpisodeEncoder enc;
  const json& cfg = j.at("config");
  enc.config_.dim_per_sentence = cfg.at("dim_per_sentence").get<int>();
  enc.config_.hash_seed = cfg.at("hash_seed").get<std::uint64_t>();
  enc.config_.age_bin_edges = cfg.at("age_bin_edges").get<std::vector<int>>();

  const json& ls = j.at("lab_stats");
  enc.lab_stats_.fitted_on = ls.at("fitted_on").get<std::string>();
  for (const auto& [test, ts] : ls.at("tests").items())
    enc.lab_stats_.per_test[test] = {ts.at("log_min").get<double>(),
                                     ts.at("log_max").get<double>(),
                                     ts.at("count_log_max").get<double>()};

  const json& as = j.at("admission_stats");
  enc.admission_stats_.fitted_on = as.at("fitted_on").get<std::string>();
  enc.admission_stats_.los_log_max = as.at("los_log_max").get<double>();
  enc.admission_stats_.year_min = as.at("year_min").get<int>();
  enc.admission_stats_.year_max = as.at("year_max").get<int>();

  for (const auto& d : j.at("drug_vocab")) {
    const std::string drug = d.get<std::string>();
    enc.drug_vocab_.index[drug] = static_cast<int>(enc.drug_vocab_.drugs.size());
    enc.drug_vocab_.drugs.push_back(drug);
  }

  const json& lx = j.at("lexicons");
  for (const auto& [form, canon] : lx.at("lab_categories").items())
    enc.lexicons_.lab_categories[form] = canon.get<std::string>();
  enc.lexicons_.units = string_set_from_json(lx.at("units"));
  enc.lexicons_.stopwords = string_set_from_json(lx.at("stopwords"));
  enc.lexicons_.cancel_statuses = string_set_from_json(lx.at("cancel_statuses"));
  enc.lexicons_.locations = string_set_from_json(lx.at("locations"));
  enc.lexicons_.positions = string_set_from_json(lx.at("positions"));
  return enc;
}

void save_feature_matrix(const std::string& path, const FeatureMatrix& m) {
  if (m.values.rows() != m.present.size())
    throw Error(Err::ShapeMismatch, "presence vector does not match the feature rows");
  TensorFile tf;
  tf.set_meta("kind", "features");
  tf.set_meta("modality", std::string(modality_name(m.modality)));
  tf.set_meta("n_rows", std::to_string(m.values.rows()));
  tf.set_meta("n_cols", std::to_string(m.values.cols()));
  tf.set_meta("config_hash", m.config_hash);

  Tensor values;
  values.name = "values";
  values.shape = {m.values.rows(), m.values.cols()};
  values.data.reserve(static_cast<std::size_t>(m.values.size()));
  for (Eigen::Index r = 0; r < m.values.rows(); ++r)
    for (Eigen::Index c = 0; c < m.values.cols(); ++c) values.data.push_back(m.values(r, c));
  tf.add(std::move(values));

  Tensor present;
  present.name = "present";
  present.shape = {m.present.size()};
  for (Eigen::Index r = 0; r < m.present.size(); ++r) present.data.push_back(m.present(r));
  tf.add(std::move(present));
  tf.save(path);
}

FeatureMatrix load_feature_matrix(const std::string& path) {
  const TensorFile tf = TensorFile::load(path);
  if (!tf.has_meta("kind") || tf.meta("kind") != "features")
    throw Error(Err::IoError, "'" + path + "' does not hold a feature matrix");
  FeatureMatrix m;
  m.modality = modality_from_name(tf.meta("modality"));
  m.config_hash = tf.meta("config_hash");
  const Tensor& values = tf.get("values");
  if (values.shape.size() != 2)
    throw Error(Err::ShapeMismatch, "feature tensor must be rank 2 in '" + path + "'");
  m.values.resize(values.shape[0], values.shape[1]);
  std::size_t i = 0;
  for (Eigen::Index r = 0; r < m.values.rows(); ++r)
    for (Eigen::Index c = 0; c < m.values.cols(); ++c) m.values(r, c) = values.data[i++];
  const Tensor& present = tf.get("present");
  m.present.resize(present.shape[0]);
  for (Eigen::Index r = 0; r < m.present.size(); ++r)
    m.present(r) = present.data[static_cast<std::size_t>(r)];
  if (m.values.rows() != m.present.size())
    throw Error(Err::ShapeMismatch, "presence vector does not match the feature rows in '" +
                                        path + "'");
  return m;
}

}  // namespace codex
