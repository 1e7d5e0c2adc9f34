#pragma once

#include <algorithm>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "lret/rng.hpp"

namespace lret {

struct Record {
  std::string path;
  std::string label;
  std::string split;
};

/// Manifest-driven dataset description. class_index maps the sorted unique
/// labels to [0, K).
struct DatasetManifest {
  std::vector<Record> records;
  std::map<std::string, int> class_index;
  std::string base_dir;

  int num_classes() const { return static_cast<int>(class_index.size()); }

  int label_of(const Record& r) const {
    auto it = class_index.find(r.label);
    if (it == class_index.end()) {
      throw std::invalid_argument("manifest: label not in class index: " + r.label);
    }
    return it->second;
  }

  std::string resolve(const Record& r) const {
    if (base_dir.empty() || (!r.path.empty() && r.path.front() == '/')) return r.path;
    return base_dir + "/" + r.path;
  }

  void rebuild_class_index() {
    class_index.clear();
    std::set<std::string> labels;
    for (const auto& r : records) labels.insert(r.label);
    int idx = 0;
    for (const auto& l : labels) class_index[l] = idx++;
  }

  std::vector<int> split_indices(const std::string& split) const {
    std::vector<int> out;
    for (int i = 0; i < static_cast<int>(records.size()); ++i) {
      if (records[static_cast<size_t>(i)].split == split) out.push_back(i);
    }
    return out;
  }
};

namespace detail {

inline std::string dir_of(const std::string& path) {
  auto pos = path.find_last_of('/');
  return pos == std::string::npos ? std::string(".") : path.substr(0, pos);
}

inline std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> fields;
  std::string cur;
  for (char c : line) {
    if (c == ',') {
      fields.push_back(cur);
      cur.clear();
    } else if (c != '\r') {
      cur += c;
    }
  }
  fields.push_back(cur);
  return fields;
}

}  // namespace detail

inline bool valid_split_token(const std::string& s) {
  return s == "train" || s == "val" || s == "test";
}

inline DatasetManifest load_manifest(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("manifest: cannot open " + path);
  DatasetManifest m;
  m.base_dir = detail::dir_of(path);
  std::string line;
  int lineno = 0;
  std::set<std::string> seen_paths;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty() || line == "\r") continue;
    auto fields = detail::split_csv_line(line);
    if (lineno == 1) {
      if (fields != std::vector<std::string>{"path", "label", "split"}) {
        throw std::runtime_error("manifest: line 1: expected header path,label,split");
      }
      continue;
    }
    if (fields.size() != 3) {
      throw std::runtime_error("manifest: line " + std::to_string(lineno) +
                               ": expected 3 fields, got " + std::to_string(fields.size()));
    }
    if (!valid_split_token(fields[2])) {
      throw std::runtime_error("manifest: line " + std::to_string(lineno) +
                               ": unknown split token \"" + fields[2] + "\"");
    }
    if (!seen_paths.insert(fields[0]).second) {
      throw std::runtime_error("manifest: line " + std::to_string(lineno) + ": duplicate path " +
                               fields[0]);
    }
    m.records.push_back({fields[0], fields[1], fields[2]});
  }
  if (m.records.empty()) throw std::runtime_error("manifest: no records in " + path);
  m.rebuild_class_index();
  return m;
}

inline void save_manifest(const DatasetManifest& m, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("manifest: cannot write " + path);
  out << "path,label,split\n";
  for (const auto& r : m.records) out << r.path << "," << r.label << "," << r.split << "\n";
  if (!out) throw std::runtime_error("manifest: write failed for " + path);
}

/// Assigns splits per class with a seeded stratified shuffle. Per-class
/// proportions land within one record of the targets (largest remainder).
inline DatasetManifest split_dataset(std::vector<Record> records,
                                     const std::vector<std::pair<std::string, double>>& ratios,
                                     uint64_t seed) {
  double total = 0.0;
  for (const auto& [name, frac] : ratios) total += frac;
  if (std::abs(total - 1.0) > 1e-9) {
    throw std::invalid_argument("split_dataset: ratios sum to " + std::to_string(total));
  }
  std::map<std::string, std::vector<size_t>> by_label;
  for (size_t i = 0; i < records.size(); ++i) by_label[records[i].label].push_back(i);

  uint64_t class_id = 0;
  for (auto& [label, idx] : by_label) {
    if (idx.size() < ratios.size()) {
      throw std::invalid_argument("split_dataset: class " + label + " has " +
                                  std::to_string(idx.size()) + " records for " +
                                  std::to_string(ratios.size()) + " splits");
    }
    Rng rng(mix_seed(seed, class_id++));
    rng.shuffle(idx);
    const size_t n = idx.size();
    std::vector<size_t> counts(ratios.size());
    std::vector<std::pair<double, size_t>> rema;
    size_t assigned = 0;
    for (size_t s = 0; s < ratios.size(); ++s) {
      double want = ratios[s].second * double(n);
      counts[s] = static_cast<size_t>(want);
      assigned += counts[s];
      rema.push_back({want - double(counts[s]), s});
    }
    std::stable_sort(rema.begin(), rema.end(),
                     [](const auto& a, const auto& b) { return a.first > b.first; });
    for (size_t r = 0; r < n - assigned; ++r) counts[rema[r].second]++;
    size_t pos = 0;
    for (size_t s = 0; s < ratios.size(); ++s) {
      for (size_t j = 0; j < counts[s]; ++j) records[idx[pos++]].split = ratios[s].first;
    }
  }
  DatasetManifest m;
  m.records = std::move(records);
  m.rebuild_class_index();
  return m;
}

/// Uniformly subsamples classes above cap down to exactly cap records
/// (seeded); record order is preserved for the survivors.
inline DatasetManifest cap_classes(const DatasetManifest& m, int cap, uint64_t seed) {
  if (cap < 1) throw std::invalid_argument("cap_classes: cap must be >= 1");
  std::map<std::string, std::vector<size_t>> by_label;
  for (size_t i = 0; i < m.records.size(); ++i) by_label[m.records[i].label].push_back(i);
  std::vector<bool> keep(m.records.size(), true);
  uint64_t class_id = 0;
  for (auto& [label, idx] : by_label) {
    uint64_t cid = class_id++;
    if (static_cast<int>(idx.size()) <= cap) continue;
    Rng rng(mix_seed(seed, cid));
    rng.shuffle(idx);
    for (size_t j = static_cast<size_t>(cap); j < idx.size(); ++j) keep[idx[j]] = false;
  }
  DatasetManifest out;
  out.base_dir = m.base_dir;
  for (size_t i = 0; i < m.records.size(); ++i) {
    if (keep[i]) out.records.push_back(m.records[i]);
  }
  out.rebuild_class_index();
  return out;
}

/// Balanced class weights for a split: w_c = N_total / (K * n_c).
inline std::vector<float> compute_class_weights(const DatasetManifest& m,
                                                const std::string& split) {
  const int k = m.num_classes();
  std::vector<int64_t> counts(static_cast<size_t>(k), 0);
  int64_t total = 0;
  for (const auto& r : m.records) {
    if (r.split != split) continue;
    counts[static_cast<size_t>(m.label_of(r))]++;
    total++;
  }
  if (total == 0) throw std::invalid_argument("compute_class_weights: split " + split + " empty");
  std::vector<float> w(static_cast<size_t>(k));
  for (const auto& [label, idx] : m.class_index) {
    if (counts[static_cast<size_t>(idx)] == 0) {
      throw std::invalid_argument("compute_class_weights: class " + label + " absent from split " +
                                  split);
    }
    w[static_cast<size_t>(idx)] =
        float(double(total) / (double(k) * double(counts[static_cast<size_t>(idx)])));
  }
  return w;
}

}  // namespace lret
