#include "hexlink/eval.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <random>

#include "hexlink/errors.hpp"

namespace hexlink {

Split split_dataset(std::span<const MobilityFlow> flows, double ratio, std::uint64_t seed) {
  if (!(ratio > 0.0 && ratio < 1.0)) throw ConfigError("split ratio must lie in (0, 1)");
  std::map<std::string, std::vector<std::size_t>> by_user;
  for (std::size_t i = 0; i < flows.size(); ++i) by_user[flows[i].user_id].push_back(i);
  std::mt19937_64 rng(seed);
  Split s;
  for (auto& [user, idx] : by_user) {
    std::shuffle(idx.begin(), idx.end(), rng);
    const std::size_t n = idx.size();
    std::size_t n_train = n;
    if (n >= 2) {
      const auto k = static_cast<std::size_t>(std::lround(ratio * static_cast<double>(n)));
      n_train = std::clamp<std::size_t>(k, 1, n - 1);
    }
    s.train.insert(s.train.end(), idx.begin(), idx.begin() + static_cast<long>(n_train));
    s.test.insert(s.test.end(), idx.begin() + static_cast<long>(n_train), idx.end());
  }
  std::sort(s.train.begin(), s.train.end());
  std::sort(s.test.begin(), s.test.end());
  return s;
}

LabelSet label_flows(std::span<const MobilityFlow> flows) {
  LabelSet ls;
  for (const auto& f : flows) ls.users.push_back(f.user_id);
  std::sort(ls.users.begin(), ls.users.end());
  ls.users.erase(std::unique(ls.users.begin(), ls.users.end()), ls.users.end());
  ls.labels.reserve(flows.size());
  for (const auto& f : flows) {
    ls.labels.push_back(static_cast<std::size_t>(std::lower_bound(ls.users.begin(), ls.users.end(), f.user_id) -
                                                 ls.users.begin()));
  }
  return ls;
}

std::vector<std::size_t> rank_users(std::span<const double> scores) {
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
  return order;
}

double acc_at_k(std::span<const std::vector<std::size_t>> rankings, std::span<const std::size_t> truths,
                std::size_t k) {
  if (k == 0) throw ConfigError("k must be at least 1");
  if (rankings.size() != truths.size()) throw ShapeError("one ranking per truth is required");
  if (truths.empty()) return 0.0;
  std::size_t hit = 0;
  for (std::size_t i = 0; i < truths.size(); ++i) {
    const auto& r = rankings[i];
    const auto end = r.begin() + static_cast<long>(std::min(k, r.size()));
    hit += std::find(r.begin(), end, truths[i]) != end ? 1 : 0;
  }
  return static_cast<double>(hit) / static_cast<double>(truths.size());
}

std::vector<std::vector<std::size_t>> confusion_matrix(std::span<const std::size_t> predictions,
                                                       std::span<const std::size_t> truths, std::size_t n_users) {
  if (predictions.size() != truths.size()) throw ShapeError("one prediction per truth is required");
  std::vector<std::vector<std::size_t>> c(n_users, std::vector<std::size_t>(n_users, 0));
  for (std::size_t i = 0; i < truths.size(); ++i) {
    if (truths[i] >= n_users || predictions[i] >= n_users) throw LabelError("label outside the user set");
    ++c[truths[i]][predictions[i]];
  }
  return c;
}

Prf macro_prf(std::span<const std::size_t> predictions, std::span<const std::size_t> truths, std::size_t n_users) {
  const auto c = confusion_matrix(predictions, truths, n_users);
  Prf out;
  if (n_users == 0) return out;
  for (std::size_t u = 0; u < n_users; ++u) {
    std::size_t predicted = 0;
    std::size_t actual = 0;
    for (std::size_t v = 0; v < n_users; ++v) {
      predicted += c[v][u];
      actual += c[u][v];
    }
    const double tp = static_cast<double>(c[u][u]);
    const double p = predicted == 0 ? 0.0 : tp / static_cast<double>(predicted);
    const double r = actual == 0 ? 0.0 : tp / static_cast<double>(actual);
    out.precision += p;
    out.recall += r;
    out.f1 += (p + r) == 0.0 ? 0.0 : 2.0 * p * r / (p + r);
  }
  const double n = static_cast<double>(n_users);
  out.precision /= n;
  out.recall /= n;
  out.f1 /= n;
  return out;
}

nlohmann::json EvalReport::to_json() const {
  return {{"acc_at_1", acc_at_1},
          {"acc_at_5", acc_at_5},
          {"macro_precision", macro_precision},
          {"macro_recall", macro_recall},
          {"macro_f1", macro_f1},
          {"n_test", n_test},
          {"n_users", n_users},
          {"baselines",
           {{"random_acc_at_1", random_acc_at_1},
            {"random_acc_at_5", random_acc_at_5},
            {"majority_acc_at_1", majority_acc_at_1}}},
          {"confusion", confusion}};
}

EvalReport make_report(std::span<const std::vector<double>> logits, std::span<const std::size_t> truths,
                       std::span<const std::size_t> train_counts) {
  if (logits.size() != truths.size()) throw ShapeError("one logit row per truth is required");
  const std::size_t n_users = train_counts.size();
  EvalReport r;
  r.n_test = truths.size();
  r.n_users = n_users;
  std::vector<std::vector<std::size_t>> rankings;
  std::vector<std::size_t> preds;
  for (const auto& row : logits) {
    if (row.size() != n_users) throw ShapeError("logit row width does not match the user count");
    rankings.push_back(rank_users(row));
    preds.push_back(rankings.back().front());
  }
  if (n_users > 0) {
    r.acc_at_1 = acc_at_k(rankings, truths, 1);
    r.acc_at_5 = acc_at_k(rankings, truths, 5);
    const Prf prf = macro_prf(preds, truths, n_users);
    r.macro_precision = prf.precision;
    r.macro_recall = prf.recall;
    r.macro_f1 = prf.f1;
    r.confusion = confusion_matrix(preds, truths, n_users);
    const double n = static_cast<double>(n_users);
    r.random_acc_at_1 = 1.0 / n;
    r.random_acc_at_5 = static_cast<double>(std::min<std::size_t>(5, n_users)) / n;
    const auto majority = static_cast<std::size_t>(
        std::max_element(train_counts.begin(), train_counts.end()) - train_counts.begin());
    if (!truths.empty()) {
      r.majority_acc_at_1 = static_cast<double>(std::count(truths.begin(), truths.end(), majority)) /
                            static_cast<double>(truths.size());
    }
  }
  return r;
}

}  // namespace hexlink
