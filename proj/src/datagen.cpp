#include "pcb/datagen.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include "json.hpp"
#include "pcb/rng.hpp"

namespace pcb {

namespace {

constexpr double kPi = 3.14159265358979323846;

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> out;
  std::stringstream ss(line);
  std::string cell;
  while (std::getline(ss, cell, ',')) out.push_back(trim(cell));
  if (!line.empty() && line.back() == ',') out.push_back("");
  return out;
}

const char* split_name(Split s) {
  switch (s) {
    case Split::kFrequent: return "frequent";
    case Split::kCommon: return "common";
    case Split::kRare: return "rare";
  }
  return "frequent";
}

Split split_from_name(const std::string& s) {
  if (s == "frequent") return Split::kFrequent;
  if (s == "common") return Split::kCommon;
  if (s == "rare") return Split::kRare;
  throw std::invalid_argument("unknown split name: " + s);
}

}  // namespace

std::vector<std::int64_t> LongTailDataset::indices_of(Partition p) const {
  std::vector<std::int64_t> idx;
  for (std::size_t i = 0; i < partition.size(); ++i) {
    if (partition[i] == p) idx.push_back(static_cast<std::int64_t>(i));
  }
  return idx;
}

Split split_for_count(std::int64_t train_count, const SplitThresholds& t) {
  if (train_count <= t.rare_max) return Split::kRare;
  if (train_count <= t.common_max) return Split::kCommon;
  return Split::kFrequent;
}

std::vector<int> synth_angle_order(int num_classes) {
  std::vector<int> order;
  order.reserve(static_cast<std::size_t>(num_classes));
  for (int k = 0; k < num_classes; ++k) {
    order.push_back(k % 2 == 0 ? k / 2 : num_classes - 1 - k / 2);
  }
  return order;
}

LongTailDataset synth(const SynthConfig& cfg) {
  if (cfg.num_classes < 2) throw std::invalid_argument("synth: need >= 2 classes");
  if (cfg.max_count < 1) throw std::invalid_argument("synth: max_count must be >= 1");
  if (cfg.imbalance < 1.0) throw std::invalid_argument("synth: imbalance must be >= 1");
  if (cfg.confusability <= 0.0) throw std::invalid_argument("synth: confusability must be > 0");
  if (cfg.feature_dim < 2) throw std::invalid_argument("synth: need >= 2 feature dims");
  if (cfg.val_per_class < 1) throw std::invalid_argument("synth: need >= 1 validation sample per class");

  const int C = cfg.num_classes;
  const int D = cfg.feature_dim;

  std::vector<std::int64_t> counts(static_cast<std::size_t>(C));
  for (int c = 0; c < C; ++c) {
    const double expo = -static_cast<double>(c) / static_cast<double>(C - 1);
    const double raw =
        static_cast<double>(cfg.max_count) * std::pow(cfg.imbalance, expo);
    counts[static_cast<std::size_t>(c)] = std::max<std::int64_t>(1, std::llround(raw));
  }

  std::int64_t n_train = 0;
  for (auto c : counts) n_train += c;
  const std::int64_t n_val = static_cast<std::int64_t>(C) * cfg.val_per_class;

  LongTailDataset ds;
  ds.seed = cfg.seed;
  ds.thresholds = cfg.thresholds;
  ds.class_counts = counts;
  ds.features.resize(n_train + n_val, D);
  ds.labels.resize(static_cast<std::size_t>(n_train + n_val));
  ds.partition.resize(static_cast<std::size_t>(n_train + n_val));
  ds.split_of.resize(static_cast<std::size_t>(C));
  for (int c = 0; c < C; ++c) {
    ds.split_of[static_cast<std::size_t>(c)] =
        split_for_count(counts[static_cast<std::size_t>(c)], cfg.thresholds);
  }

  Rng rng(cfg.seed);
  const std::vector<int> order = synth_angle_order(C);
  Eigen::MatrixXd means = Eigen::MatrixXd::Zero(C, D);
  for (int slot = 0; slot < C; ++slot) {
    const double angle = 2.0 * kPi * static_cast<double>(slot) / C;
    means(order[static_cast<std::size_t>(slot)], 0) = std::cos(angle);
    means(order[static_cast<std::size_t>(slot)], 1) = std::sin(angle);
  }

  std::int64_t row = 0;
  auto emit = [&](int c, Partition p) {
    for (int d = 0; d < D; ++d) {
      ds.features(row, d) = means(c, d) + cfg.confusability * rng.normal();
    }
    ds.labels[static_cast<std::size_t>(row)] = c;
    ds.partition[static_cast<std::size_t>(row)] = p;
    ++row;
  };
  for (int c = 0; c < C; ++c) {
    for (std::int64_t i = 0; i < counts[static_cast<std::size_t>(c)]; ++i) {
      emit(c, Partition::kTrain);
    }
  }
  for (int c = 0; c < C; ++c) {
    for (int i = 0; i < cfg.val_per_class; ++i) emit(c, Partition::kVal);
  }
  return ds;
}

LongTailDataset ingest_tabular(const std::string& path,
                               const TabularSchema& schema) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot read " + path);

  std::string line;
  if (!std::getline(in, line)) {
    throw std::runtime_error(path + ": empty file");
  }
  const auto header = split_csv(line);
  if (header.size() < 2 || header.back() != "label") {
    throw std::runtime_error(path +
                             ": header must end with a `label` column");
  }
  const int D = static_cast<int>(header.size()) - 1;

  std::vector<std::vector<double>> rows;
  std::vector<int> labels;
  std::int64_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (trim(line).empty()) continue;
    const auto cells = split_csv(line);
    if (static_cast<int>(cells.size()) != D + 1) {
      throw std::runtime_error(path + ":" + std::to_string(lineno) +
                               ": expected " + std::to_string(D + 1) +
                               " columns, got " + std::to_string(cells.size()));
    }
    std::vector<double> feat(static_cast<std::size_t>(D));
    for (int d = 0; d < D; ++d) {
      try {
        std::size_t used = 0;
        feat[static_cast<std::size_t>(d)] = std::stod(cells[static_cast<std::size_t>(d)], &used);
        if (used != cells[static_cast<std::size_t>(d)].size()) throw std::invalid_argument("");
      } catch (const std::exception&) {
        throw std::runtime_error(path + ":" + std::to_string(lineno) +
                                 ": non-numeric feature `" +
                                 cells[static_cast<std::size_t>(d)] + "`");
      }
    }
    int label = 0;
    try {
      std::size_t used = 0;
      label = std::stoi(cells.back(), &used);
      if (used != cells.back().size()) throw std::invalid_argument("");
    } catch (const std::exception&) {
      throw std::runtime_error(path + ":" + std::to_string(lineno) +
                               ": non-integer label `" + cells.back() + "`");
    }
    if (label < 1 ||
        (schema.expected_classes > 0 && label > schema.expected_classes)) {
      throw std::runtime_error(path + ":" + std::to_string(lineno) +
                               ": label " + std::to_string(label) +
                               " outside [1, C]");
    }
    rows.push_back(std::move(feat));
    labels.push_back(label - 1);  // 0-based in memory
  }
  if (rows.empty()) {
    throw std::runtime_error(path + ": no data rows");
  }

  int C = schema.expected_classes;
  if (C == 0) {
    for (int l : labels) C = std::max(C, l + 1);
  }

  LongTailDataset ds;
  ds.seed = schema.seed;
  ds.thresholds = schema.thresholds;
  const std::int64_t n = static_cast<std::int64_t>(rows.size());
  ds.features.resize(n, D);
  ds.labels = labels;
  ds.partition.resize(static_cast<std::size_t>(n), Partition::kTrain);
  for (std::int64_t i = 0; i < n; ++i) {
    for (int d = 0; d < D; ++d) {
      ds.features(i, d) = rows[static_cast<std::size_t>(i)][static_cast<std::size_t>(d)];
    }
  }

  if (schema.val_fraction > 0.0) {
    for (std::int64_t i = 0; i < n; ++i) {
      const std::uint64_t h =
          splitmix64(schema.seed ^ splitmix64(static_cast<std::uint64_t>(i)));
      const double u = static_cast<double>(h >> 11) * 0x1.0p-53;
      if (u < schema.val_fraction) {
        ds.partition[static_cast<std::size_t>(i)] = Partition::kVal;
      }
    }
    // Every class keeps at least one validation sample: promote the last
    // occurrence of any all-train class.
    std::vector<std::int64_t> last(static_cast<std::size_t>(C), -1);
    std::vector<bool> has_val(static_cast<std::size_t>(C), false);
    for (std::int64_t i = 0; i < n; ++i) {
      const auto c = static_cast<std::size_t>(ds.labels[static_cast<std::size_t>(i)]);
      last[c] = i;
      if (ds.partition[static_cast<std::size_t>(i)] == Partition::kVal) has_val[c] = true;
    }
    for (int c = 0; c < C; ++c) {
      if (!has_val[static_cast<std::size_t>(c)] && last[static_cast<std::size_t>(c)] >= 0) {
        ds.partition[static_cast<std::size_t>(last[static_cast<std::size_t>(c)])] = Partition::kVal;
      }
    }
  }

  ds.class_counts.assign(static_cast<std::size_t>(C), 0);
  for (std::int64_t i = 0; i < n; ++i) {
    if (ds.partition[static_cast<std::size_t>(i)] == Partition::kTrain) {
      ds.class_counts[static_cast<std::size_t>(ds.labels[static_cast<std::size_t>(i)])] += 1;
    }
  }
  ds.split_of.resize(static_cast<std::size_t>(C));
  for (int c = 0; c < C; ++c) {
    ds.split_of[static_cast<std::size_t>(c)] = split_for_count(
        ds.class_counts[static_cast<std::size_t>(c)], ds.thresholds);
  }
  return ds;
}

void save_dataset(const LongTailDataset& ds, const std::string& path) {
  nlohmann::json j;
  j["format"] = "pcblab.dataset.v1";
  j["seed"] = ds.seed;
  j["num_classes"] = ds.num_classes();
  j["feature_dim"] = ds.feature_dim();
  j["class_counts"] = ds.class_counts;
  j["thresholds"] = {{"rare_max", ds.thresholds.rare_max},
                     {"common_max", ds.thresholds.common_max}};
  std::vector<std::string> splits;
  for (auto s : ds.split_of) splits.push_back(split_name(s));
  j["split_of"] = splits;
  std::vector<int> labels;
  for (int l : ds.labels) labels.push_back(l + 1);  // 1-based on disk
  j["labels"] = labels;
  std::vector<std::string> parts;
  for (auto p : ds.partition) {
    parts.push_back(p == Partition::kTrain ? "train" : "val");
  }
  j["partition"] = parts;
  std::vector<std::vector<double>> feats(static_cast<std::size_t>(ds.size()));
  for (std::int64_t i = 0; i < ds.size(); ++i) {
    feats[static_cast<std::size_t>(i)].assign(ds.features.row(i).begin(),
                                              ds.features.row(i).end());
  }
  j["features"] = feats;
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path);
  out << j.dump() << "\n";
}

LongTailDataset load_dataset(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot read " + path);
  nlohmann::json j;
  in >> j;
  if (j.value("format", "") != "pcblab.dataset.v1") {
    throw std::runtime_error(path + ": not a dataset snapshot");
  }
  LongTailDataset ds;
  ds.seed = j.at("seed").get<std::uint64_t>();
  ds.thresholds.rare_max = j.at("thresholds").at("rare_max").get<std::int64_t>();
  ds.thresholds.common_max = j.at("thresholds").at("common_max").get<std::int64_t>();
  ds.class_counts = j.at("class_counts").get<std::vector<std::int64_t>>();
  for (const auto& s : j.at("split_of")) {
    ds.split_of.push_back(split_from_name(s.get<std::string>()));
  }
  for (const auto& l : j.at("labels")) ds.labels.push_back(l.get<int>() - 1);
  for (const auto& p : j.at("partition")) {
    ds.partition.push_back(p.get<std::string>() == "train" ? Partition::kTrain
                                                           : Partition::kVal);
  }
  const auto feats = j.at("features").get<std::vector<std::vector<double>>>();
  const int D = j.at("feature_dim").get<int>();
  ds.features.resize(static_cast<Eigen::Index>(feats.size()), D);
  for (std::size_t i = 0; i < feats.size(); ++i) {
    for (int d = 0; d < D; ++d) {
      ds.features(static_cast<Eigen::Index>(i), d) = feats[i][static_cast<std::size_t>(d)];
    }
  }
  return ds;
}

}  // namespace pcb
