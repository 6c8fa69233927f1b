#include "metrics.hpp"

#include <algorithm>
#include <cstdio>
#include <numeric>

#include "util/errors.hpp"

namespace codex::metrics {

namespace {

void check_shapes(const Eigen::MatrixXd& scores, const Eigen::MatrixXd& truth) {
  if (scores.rows() != truth.rows() || scores.cols() != truth.cols())
    throw Error(Err::ShapeMismatch, "scores and truth dimensions differ");
}

}  // namespace

double micro_f1(const Eigen::MatrixXd& scores, const Eigen::MatrixXd& truth, double threshold) {
  check_shapes(scores, truth);
  long tp = 0, fp = 0, fn = 0;
  for (Eigen::Index i = 0; i < scores.rows(); ++i) {
    for (Eigen::Index j = 0; j < scores.cols(); ++j) {
      const bool pred = scores(i, j) >= threshold;
      const bool is_true = truth(i, j) != 0.0;
      if (pred && is_true) ++tp;
      else if (pred) ++fp;
      else if (is_true) ++fn;
    }
  }
  const long denom = 2 * tp + fp + fn;
  return denom == 0 ? 0.0 : 2.0 * static_cast<double>(tp) / static_cast<double>(denom);
}

double jaccard(const Eigen::MatrixXd& scores, const Eigen::MatrixXd& truth, double threshold) {
  check_shapes(scores, truth);
  if (scores.rows() == 0) return 0.0;
  double acc = 0.0;
  for (Eigen::Index i = 0; i < scores.rows(); ++i) {
    long inter = 0, uni = 0;
    for (Eigen::Index j = 0; j < scores.cols(); ++j) {
      const bool pred = scores(i, j) >= threshold;
      const bool is_true = truth(i, j) != 0.0;
      if (pred && is_true) ++inter;
      if (pred || is_true) ++uni;
    }
    acc += uni == 0 ? 1.0 : static_cast<double>(inter) / static_cast<double>(uni);
  }
  return acc / static_cast<double>(scores.rows());
}

double lrap(const Eigen::MatrixXd& scores, const Eigen::MatrixXd& truth) {
  check_shapes(scores, truth);
  if (scores.rows() == 0) throw Error(Err::NoTrueLabels, "no records");
  double acc = 0.0;
  for (Eigen::Index i = 0; i < scores.rows(); ++i) {
    double rec = 0.0;
    long n_true = 0;
    for (Eigen::Index j = 0; j < scores.cols(); ++j) {
      if (truth(i, j) == 0.0) continue;
      ++n_true;
      long rank = 0, tp = 0;
      for (Eigen::Index k = 0; k < scores.cols(); ++k) {
        if (scores(i, k) >= scores(i, j)) {
          ++rank;
          if (truth(i, k) != 0.0) ++tp;
        }
      }
      rec += static_cast<double>(tp) / static_cast<double>(rank);
    }
    if (n_true == 0) throw Error(Err::NoTrueLabels, "record " + std::to_string(i));
    acc += rec / static_cast<double>(n_true);
  }
  return acc / static_cast<double>(scores.rows());
}

double ranking_loss(const Eigen::MatrixXd& scores, const Eigen::MatrixXd& truth) {
  check_shapes(scores, truth);
  if (scores.rows() == 0) throw Error(Err::DegenerateRecord, "no records");
  double acc = 0.0;
  for (Eigen::Index i = 0; i < scores.rows(); ++i) {
    long n_true = 0, n_false = 0, violations = 0;
    for (Eigen::Index j = 0; j < scores.cols(); ++j) {
      if (truth(i, j) != 0.0) ++n_true;
      else ++n_false;
    }
    if (n_true == 0 || n_false == 0)
      throw Error(Err::DegenerateRecord, "record " + std::to_string(i) +
                                             " needs at least one true and one false label");
    for (Eigen::Index j = 0; j < scores.cols(); ++j) {
      if (truth(i, j) == 0.0) continue;
      for (Eigen::Index k = 0; k < scores.cols(); ++k) {
        if (truth(i, k) != 0.0) continue;
        if (scores(i, j) <= scores(i, k)) ++violations;
      }
    }
    acc += static_cast<double>(violations) / (static_cast<double>(n_true) * static_cast<double>(n_false));
  }
  return acc / static_cast<double>(scores.rows());
}

double coverage_error(const Eigen::MatrixXd& scores, const Eigen::MatrixXd& truth) {
  check_shapes(scores, truth);
  if (scores.rows() == 0) throw Error(Err::NoTrueLabels, "no records");
  double acc = 0.0;
  for (Eigen::Index i = 0; i < scores.rows(); ++i) {
    long deepest = 0;
    bool any_true = false;
    for (Eigen::Index j = 0; j < scores.cols(); ++j) {
      if (truth(i, j) == 0.0) continue;
      any_true = true;
      long rank = 0;
      for (Eigen::Index k = 0; k < scores.cols(); ++k)
        if (scores(i, k) >= scores(i, j)) ++rank;
      deepest = std::max(deepest, rank);
    }
    if (!any_true) throw Error(Err::NoTrueLabels, "record " + std::to_string(i));
    acc += static_cast<double>(deepest);
  }
  return acc / static_cast<double>(scores.rows());
}

double principal_accuracy(const Eigen::MatrixXd& scores, const std::vector<int>& principal) {
  if (static_cast<Eigen::Index>(principal.size()) != scores.rows())
    throw Error(Err::ShapeMismatch, "principal index count does not match record count");
  if (scores.rows() == 0) return 0.0;
  long correct = 0;
  for (Eigen::Index i = 0; i < scores.rows(); ++i) {
    const int p = principal[static_cast<std::size_t>(i)];
    if (p < 0 || p >= scores.cols())
      throw Error(Err::IndexOutOfRange, "principal index " + std::to_string(p));
    Eigen::Index best = 0;
    for (Eigen::Index j = 1; j < scores.cols(); ++j)
      if (scores(i, j) > scores(i, best)) best = j;  // ties keep the lowest index
    if (best == p) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(scores.rows());
}

EvalReport evaluate_all(const Eigen::MatrixXd& scores, const Eigen::MatrixXd& truth,
                        const std::vector<int>& principal, double threshold) {
  EvalReport r;
  r.lrap = lrap(scores, truth);
  r.ranking_loss = ranking_loss(scores, truth);
  r.coverage_error = coverage_error(scores, truth);
  r.micro_f1 = micro_f1(scores, truth, threshold);
  r.jaccard = jaccard(scores, truth, threshold);
  r.principal_accuracy = principal_accuracy(scores, principal);
  r.n_records = scores.rows();
  return r;
}

std::string EvalReport::to_text(const std::string& title) const {
  char buf[256];
  std::snprintf(buf, sizeof(buf),
                "%-12s AP=%.4f RL=%.4f CR=%.2f Jaccard=%.4f F1=%.4f Acc(principal)=%.4f n=%ld",
                title.c_str(), lrap, ranking_loss, coverage_error, jaccard, micro_f1,
                principal_accuracy, n_records);
  return buf;
}

std::vector<ScopeRow> scope_report(const std::vector<double>& confidences,
                                   const Eigen::MatrixXd& scores, const Eigen::MatrixXd& truth,
                                   const std::vector<double>& scopes) {
  const long n = scores.rows();
  if (static_cast<long>(confidences.size()) != n)
    throw Error(Err::ShapeMismatch, "confidence count does not match record count");
  std::vector<long> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](long a, long b) {
    return confidences[static_cast<std::size_t>(a)] > confidences[static_cast<std::size_t>(b)];
  });

  std::vector<ScopeRow> rows;
  for (double s : scopes) {
    if (s <= 0.0 || s > 1.0) throw Error(Err::BadScope, "scope must lie in (0,1]");
    const long k = std::min<long>(n, static_cast<long>(std::ceil(s * static_cast<double>(n))));
    if (k == 0) throw Error(Err::EmptySelection, "scope selects no records");
    Eigen::MatrixXd sub_scores(k, scores.cols());
    Eigen::MatrixXd sub_truth(k, truth.cols());
    for (long i = 0; i < k; ++i) {
      sub_scores.row(i) = scores.row(order[static_cast<std::size_t>(i)]);
      sub_truth.row(i) = truth.row(order[static_cast<std::size_t>(i)]);
    }
    ScopeRow row;
    row.scope = s;
    row.n_selected = k;
    row.lrap = lrap(sub_scores, sub_truth);
    row.coverage_error = coverage_error(sub_scores, sub_truth);
    row.ranking_loss = ranking_loss(sub_scores, sub_truth);
    rows.push_back(row);
  }
  return rows;
}

std::string scope_table_text(const std::vector<ScopeRow>& rows) {
  std::string out = "Data Scope      AP      CR      RL   n\n";
  char buf[128];
  for (const auto& r : rows) {
    std::snprintf(buf, sizeof(buf), "%9.0f%%  %6.4f  %6.2f  %6.4f  %ld\n", r.scope * 100.0,
                  r.lrap, r.coverage_error, r.ranking_loss, r.n_selected);
    out += buf;
  }
  return out;
}

}  // namespace codex::metrics
