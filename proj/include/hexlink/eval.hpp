#pragma once

#include <span>
#include <string>
#include <vector>

#include "hexlink/mobility.hpp"

#include "json.hpp"

namespace hexlink {

struct Split {
  std::vector<std::size_t> train;  // flow indices, ascending
  std::vector<std::size_t> test;
};

// Per-user stratified split: a user with n >= 2 flows sends
// clamp(round(ratio * n), 1, n - 1) of them to train; single-flow users go to train.
Split split_dataset(std::span<const MobilityFlow> flows, double ratio, std::uint64_t seed);

struct LabelSet {
  std::vector<std::string> users;   // sorted
  std::vector<std::size_t> labels;  // per flow, index into users
};
LabelSet label_flows(std::span<const MobilityFlow> flows);

// User indices by descending score; ties go to the lower index.
std::vector<std::size_t> rank_users(std::span<const double> scores);

// Fraction of examples whose truth is among the first k entries of its ranking.
double acc_at_k(std::span<const std::vector<std::size_t>> rankings, std::span<const std::size_t> truths,
                std::size_t k);

struct Prf {
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
};

// confusion[truth][prediction]
std::vector<std::vector<std::size_t>> confusion_matrix(std::span<const std::size_t> predictions,
                                                       std::span<const std::size_t> truths, std::size_t n_users);

// Unweighted means over all n_users classes; a class with an empty denominator
// contributes 0 to that metric.
Prf macro_prf(std::span<const std::size_t> predictions, std::span<const std::size_t> truths, std::size_t n_users);

struct EvalReport {
  double acc_at_1 = 0.0;
  double acc_at_5 = 0.0;
  double macro_precision = 0.0;
  double macro_recall = 0.0;
  double macro_f1 = 0.0;
  std::vector<std::vector<std::size_t>> confusion;
  std::size_t n_test = 0;
  std::size_t n_users = 0;
  // Expected accuracy of a uniformly random ranking.
  double random_acc_at_1 = 0.0;
  double random_acc_at_5 = 0.0;
  // Accuracy of always predicting the most frequent training user.
  double majority_acc_at_1 = 0.0;

  nlohmann::json to_json() const;
};

// `train_counts[u]` is the number of training flows of user u (for the majority baseline).
EvalReport make_report(std::span<const std::vector<double>> logits, std::span<const std::size_t> truths,
                       std::span<const std::size_t> train_counts);

}  // namespace hexlink
