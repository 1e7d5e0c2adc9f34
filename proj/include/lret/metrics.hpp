#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <fstream>
#include <nlohmann/json.hpp>
#include <stdexcept>
#include <string>
#include <vector>

#include "lret/tensor.hpp"

namespace lret {

struct PerClassMetrics {
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
  int64_t support = 0;
  bool zero_division = false;
};

struct RocPoint {
  double threshold, fpr, tpr;
};

struct PrPoint {
  double threshold, precision, recall;
};

struct CurveSet {
  std::vector<RocPoint> roc;
  std::vector<PrPoint> pr;
  double auc = 0.0;
  double ap = 0.0;
  bool skipped = false;  // set when the class lacks a positive or a negative
};

struct MetricsReport {
  int64_t n = 0;
  int k = 0;
  std::vector<std::string> class_names;
  double accuracy = 0.0;
  double weighted_precision = 0.0;
  double weighted_recall = 0.0;
  double weighted_f1 = 0.0;
  std::vector<PerClassMetrics> per_class;
  std::vector<std::vector<int64_t>> confusion;  // [true][pred]
  std::vector<CurveSet> curves;
  CurveSet micro;
  double macro_auc = 0.0;
  double macro_ap = 0.0;
  std::vector<double> confidence_correct;
  std::vector<double> confidence_incorrect;
  bool zero_support_flag = false;
};

/// Argmax with the lowest index winning exact ties.
inline int argmax_prediction(const Tensor& probs, int row) {
  const int k = probs.dim(1);
  int best = 0;
  for (int j = 1; j < k; ++j) {
    if (probs.at2(row, j) > probs.at2(row, best)) best = j;
  }
  return best;
}

namespace detail {

/// One-vs-rest curves from (score, positive) pairs. Thresholds are the
/// distinct scores in decreasing order; AUC by trapezoid, AP by the step rule.
inline CurveSet curves_from_pairs(std::vector<std::pair<double, bool>> pairs) {
  CurveSet cs;
  int64_t pos = 0, neg = 0;
  for (const auto& [s, p] : pairs) (p ? pos : neg)++;
  if (pos == 0 || neg == 0) {
    cs.skipped = true;
    return cs;
  }
  std::sort(pairs.begin(), pairs.end(),
            [](const auto& a, const auto& b) { return a.first > b.first; });
  cs.roc.push_back({std::numeric_limits<double>::infinity(), 0.0, 0.0});
  int64_t tp = 0, fp = 0;
  double prev_recall = 0.0;
  size_t i = 0;
  while (i < pairs.size()) {
    double score = pairs[i].first;
    while (i < pairs.size() && pairs[i].first == score) {
      (pairs[i].second ? tp : fp)++;
      ++i;
    }
    double tpr = double(tp) / double(pos);
    double fpr = double(fp) / double(neg);
    cs.roc.push_back({score, fpr, tpr});
    double precision = double(tp) / double(tp + fp);
    cs.pr.push_back({score, precision, tpr});
    cs.ap += (tpr - prev_recall) * precision;
    prev_recall = tpr;
  }
  for (size_t j = 1; j < cs.roc.size(); ++j) {
    cs.auc += (cs.roc[j].fpr - cs.roc[j - 1].fpr) * (cs.roc[j].tpr + cs.roc[j - 1].tpr) / 2.0;
  }
  return cs;
}

}  // namespace detail

/// One-vs-rest ROC/AUC and PR/AP per class plus micro (pooled pairs) and
/// macro (mean over non-skipped classes) averages.
inline void roc_pr_curves(const Tensor& probs, const std::vector<int>& labels,
                          MetricsReport& report) {
  const int k = probs.dim(1);
  std::vector<std::pair<double, bool>> pooled;
  report.curves.clear();
  int counted = 0;
  report.macro_auc = report.macro_ap = 0.0;
  for (int c = 0; c < k; ++c) {
    std::vector<std::pair<double, bool>> pairs;
    for (size_t i = 0; i < labels.size(); ++i) {
      pairs.push_back({double(probs.at2(int(i), c)), labels[i] == c});
      pooled.push_back(pairs.back());
    }
    report.curves.push_back(detail::curves_from_pairs(std::move(pairs)));
    if (!report.curves.back().skipped) {
      report.macro_auc += report.curves.back().auc;
      report.macro_ap += report.curves.back().ap;
      ++counted;
    }
  }
  if (counted > 0) {
    report.macro_auc /= counted;
    report.macro_ap /= counted;
  }
  report.micro = detail::curves_from_pairs(std::move(pooled));
}

inline MetricsReport compute_metrics(const Tensor& probs, const std::vector<int>& labels,
                                     const std::vector<std::string>& class_names,
                                     bool with_curves = true) {
  if (probs.rank() != 2) throw std::invalid_argument("metrics: probs must be N x K");
  const int k = probs.dim(1);
  const int n = probs.dim(0);
  if (int(labels.size()) != n) throw std::invalid_argument("metrics: labels/probs size mismatch");
  if (int(class_names.size()) != k) {
    throw std::invalid_argument("metrics: class name count mismatch");
  }
  for (int i = 0; i < n; ++i) {
    double row = 0.0;
    for (int j = 0; j < k; ++j) row += probs.at2(i, j);
    if (std::abs(row - 1.0) > 1e-4) {
      throw std::invalid_argument("metrics: probability row " + std::to_string(i) +
                                  " sums to " + std::to_string(row));
    }
    if (labels[size_t(i)] < 0 || labels[size_t(i)] >= k) {
      throw std::invalid_argument("metrics: label out of range at row " + std::to_string(i));
    }
  }

  MetricsReport r;
  r.n = n;
  r.k = k;
  r.class_names = class_names;
  r.confusion.assign(size_t(k), std::vector<int64_t>(size_t(k), 0));
  int64_t correct = 0;
  for (int i = 0; i < n; ++i) {
    int pred = argmax_prediction(probs, i);
    int truth = labels[size_t(i)];
    r.confusion[size_t(truth)][size_t(pred)]++;
    double conf = probs.at2(i, pred);
    if (pred == truth) {
      ++correct;
      r.confidence_correct.push_back(conf);
    } else {
      r.confidence_incorrect.push_back(conf);
    }
  }
  r.accuracy = double(correct) / double(n);

  r.per_class.resize(size_t(k));
  for (int c = 0; c < k; ++c) {
    int64_t tp = r.confusion[size_t(c)][size_t(c)], fp = 0, fn = 0;
    for (int o = 0; o < k; ++o) {
      if (o == c) continue;
      fp += r.confusion[size_t(o)][size_t(c)];
      fn += r.confusion[size_t(c)][size_t(o)];
    }
    PerClassMetrics& pc = r.per_class[size_t(c)];
    pc.support = tp + fn;
    if (tp + fp == 0 || tp + fn == 0) pc.zero_division = true;
    pc.precision = tp + fp > 0 ? double(tp) / double(tp + fp) : 0.0;
    pc.recall = tp + fn > 0 ? double(tp) / double(tp + fn) : 0.0;
    pc.f1 = pc.precision + pc.recall > 0.0
                ? 2.0 * pc.precision * pc.recall / (pc.precision + pc.recall)
                : 0.0;
    if (pc.support == 0) r.zero_support_flag = true;
    r.weighted_precision += pc.precision * double(pc.support);
    r.weighted_recall += pc.recall * double(pc.support);
    r.weighted_f1 += pc.f1 * double(pc.support);
  }
  r.weighted_precision /= double(n);
  r.weighted_recall /= double(n);
  r.weighted_f1 /= double(n);

  if (with_curves) roc_pr_curves(probs, labels, r);
  return r;
}

struct ThresholdReport {
  double tau = 0.9;
  double coverage = 0.0;
  double accuracy = 0.0;
  double weighted_f1 = 0.0;
  bool undefined = false;  // empty kept set
};

/// Keeps samples whose top probability exceeds tau and evaluates the kept
/// subset.
inline ThresholdReport threshold_report(const Tensor& probs, const std::vector<int>& labels,
                                        const std::vector<std::string>& class_names, double tau) {
  if (tau <= 0.0 || tau >= 1.0) throw std::invalid_argument("threshold_report: tau must be in (0,1)");
  const int n = probs.dim(0), k = probs.dim(1);
  std::vector<int> kept_rows;
  for (int i = 0; i < n; ++i) {
    if (probs.at2(i, argmax_prediction(probs, i)) > tau) kept_rows.push_back(i);
  }
  ThresholdReport out;
  out.tau = tau;
  out.coverage = double(kept_rows.size()) / double(n);
  if (kept_rows.empty()) {
    out.undefined = true;
    return out;
  }
  Tensor sub = Tensor::zeros({int(kept_rows.size()), k});
  std::vector<int> sub_labels;
  for (size_t i = 0; i < kept_rows.size(); ++i) {
    for (int j = 0; j < k; ++j) sub.at2(int(i), j) = probs.at2(kept_rows[i], j);
    sub_labels.push_back(labels[size_t(kept_rows[i])]);
  }
  MetricsReport m = compute_metrics(sub, sub_labels, class_names, false);
  out.accuracy = m.accuracy;
  out.weighted_f1 = m.weighted_f1;
  return out;
}

struct GroupReport {
  Tensor group_probs;  // N x G, rows still sum to 1
  std::vector<std::string> group_names;
  MetricsReport metrics;  // over argmax group vs grouped truth
};

/// Adds class probabilities within each group (e.g. tumor vs normal) and
/// evaluates the grouped predictions.
inline GroupReport group_scores(const Tensor& probs, const std::vector<int>& labels,
                                const std::vector<int>& class_to_group,
                                const std::vector<std::string>& group_names) {
  const int n = probs.dim(0), k = probs.dim(1);
  if (int(class_to_group.size()) != k) {
    throw std::invalid_argument("group_scores: map must cover all classes");
  }
  const int g = int(group_names.size());
  for (int c : class_to_group) {
    if (c < 0 || c >= g) throw std::invalid_argument("group_scores: group index out of range");
  }
  GroupReport out;
  out.group_names = group_names;
  out.group_probs = Tensor::zeros({n, g});
  std::vector<int> group_labels;
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < k; ++j) {
      out.group_probs.at2(i, class_to_group[size_t(j)]) += probs.at2(i, j);
    }
    group_labels.push_back(class_to_group[size_t(labels[size_t(i)])]);
  }
  out.metrics = compute_metrics(out.group_probs, group_labels, group_names);
  return out;
}

inline nlohmann::json metrics_to_json(const MetricsReport& r) {
  nlohmann::json per = nlohmann::json::array();
  for (int c = 0; c < r.k; ++c) {
    const auto& pc = r.per_class[size_t(c)];
    per.push_back({{"class", r.class_names[size_t(c)]},
                   {"precision", pc.precision},
                   {"recall", pc.recall},
                   {"f1", pc.f1},
                   {"support", pc.support},
                   {"zero_division", pc.zero_division}});
  }
  nlohmann::json aucs = nlohmann::json::array();
  for (int c = 0; c < int(r.curves.size()); ++c) {
    aucs.push_back({{"class", r.class_names[size_t(c)]},
                    {"auc", r.curves[size_t(c)].auc},
                    {"ap", r.curves[size_t(c)].ap},
                    {"skipped", r.curves[size_t(c)].skipped}});
  }
  return {{"samples", r.n},
          {"accuracy", r.accuracy},
          {"weighted_precision", r.weighted_precision},
          {"weighted_recall", r.weighted_recall},
          {"weighted_f1", r.weighted_f1},
          {"per_class", per},
          {"confusion", r.confusion},
          {"class_auc_ap", aucs},
          {"macro_auc", r.macro_auc},
          {"macro_ap", r.macro_ap},
          {"micro_auc", r.micro.auc},
          {"micro_ap", r.micro.ap},
          {"confidence_correct", r.confidence_correct},
          {"confidence_incorrect", r.confidence_incorrect},
          {"zero_support_flag", r.zero_support_flag}};
}

inline void write_roc_csv(const MetricsReport& r, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("metrics: cannot write " + path);
  out.precision(17);
  out << "class,threshold,fpr,tpr\n";
  auto dump = [&](const std::string& name, const CurveSet& cs) {
    for (const auto& p : cs.roc) out << name << "," << p.threshold << "," << p.fpr << "," << p.tpr << "\n";
  };
  for (int c = 0; c < int(r.curves.size()); ++c) dump(r.class_names[size_t(c)], r.curves[size_t(c)]);
  dump("micro", r.micro);
}

inline void write_pr_csv(const MetricsReport& r, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("metrics: cannot write " + path);
  out.precision(17);
  out << "class,threshold,precision,recall\n";
  auto dump = [&](const std::string& name, const CurveSet& cs) {
    for (const auto& p : cs.pr) {
      out << name << "," << p.threshold << "," << p.precision << "," << p.recall << "\n";
    }
  };
  for (int c = 0; c < int(r.curves.size()); ++c) dump(r.class_names[size_t(c)], r.curves[size_t(c)]);
  dump("micro", r.micro);
}

inline void write_confusion_csv(const MetricsReport& r, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("metrics: cannot write " + path);
  out << "true\\pred";
  for (const auto& name : r.class_names) out << "," << name;
  out << "\n";
  for (int t = 0; t < r.k; ++t) {
    out << r.class_names[size_t(t)];
    for (int p = 0; p < r.k; ++p) out << "," << r.confusion[size_t(t)][size_t(p)];
    out << "\n";
  }
}

}  // namespace lret
