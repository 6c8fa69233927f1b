#pragma once

#include <Eigen/Core>
#include <string>
#include <vector>

// Multi-label evaluation measures. All matrices are (records x labels);
// truth entries are 0/1. Rank-based measures resolve ties with the
// score >= score_j counting rule; argmax ties break to the lowest index.

namespace codex::metrics {

struct EvalReport {
  double lrap = 0.0;
  double ranking_loss = 0.0;
  double coverage_error = 0.0;
  double micro_f1 = 0.0;
  double jaccard = 0.0;
  double principal_accuracy = 0.0;
  long n_records = 0;

  std::string to_text(const std::string& title) const;
};

double micro_f1(const Eigen::MatrixXd& scores, const Eigen::MatrixXd& truth,
                double threshold = 0.5);

// Per-record intersection-over-union at the threshold, averaged; two empty
// sets count as similarity 1.
double jaccard(const Eigen::MatrixXd& scores, const Eigen::MatrixXd& truth,
               double threshold = 0.5);

// Label-ranking average precision.
double lrap(const Eigen::MatrixXd& scores, const Eigen::MatrixXd& truth);

// Fraction of (true, false) label pairs ordered incorrectly; ties count as
// violations.
double ranking_loss(const Eigen::MatrixXd& scores, const Eigen::MatrixXd& truth);

// Mean depth of the deepest true label in the descending score ranking.
double coverage_error(const Eigen::MatrixXd& scores, const Eigen::MatrixXd& truth);

double principal_accuracy(const Eigen::MatrixXd& scores, const std::vector<int>& principal);

EvalReport evaluate_all(const Eigen::MatrixXd& scores, const Eigen::MatrixXd& truth,
                        const std::vector<int>& principal, double threshold = 0.5);

struct ScopeRow {
  double scope = 0.0;
  long n_selected = 0;
  double lrap = 0.0;
  double coverage_error = 0.0;
  double ranking_loss = 0.0;
};

// For each scope fraction, evaluates the rank metrics over the
// ceil(scope * N) most confident records; confidence ties keep record order.
std::vector<ScopeRow> scope_report(const std::vector<double>& confidences,
                                   const Eigen::MatrixXd& scores,
                                   const Eigen::MatrixXd& truth,
                                   const std::vector<double>& scopes);

std::string scope_table_text(const std::vector<ScopeRow>& rows);

}  // namespace codex::metrics
