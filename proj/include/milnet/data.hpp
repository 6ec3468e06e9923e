#pragma once

#include <charconv>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <istream>
#include <ostream>
#include <sstream>
#include <string>
#include <string_view>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include "milnet/errors.hpp"
#include "milnet/numerics.hpp"

namespace milnet {

/// One labeled bag. Rows of `instances` are the instance feature vectors.
struct Bag {
  std::string id;
  int label = 0;
  Matrix instances;

  Eigen::Index size() const { return instances.rows(); }
  Eigen::Index dim() const { return instances.cols(); }
};

/// Immutable collection of bags sharing one feature dimension.
class BagDataset {
 public:
  BagDataset(std::string name, std::vector<Bag> bags) : name_(std::move(name)), bags_(std::move(bags)) {
    if (bags_.empty()) throw DataError("dataset '" + name_ + "' has no bags");
    dim_ = bags_.front().dim();
    if (dim_ < 1) throw DataError("dataset '" + name_ + "' has zero feature dimensions");
    std::unordered_set<std::string> seen;
    for (const auto& bag : bags_) {
      if (bag.size() < 1) throw DataError("bag '" + bag.id + "' has zero instances");
      if (bag.dim() != dim_) {
        throw DataError("bag '" + bag.id + "' has dimension " + std::to_string(bag.dim()) +
                        ", dataset has " + std::to_string(dim_));
      }
      if (bag.label != 0 && bag.label != 1) {
        throw DataError("bag '" + bag.id + "' has label " + std::to_string(bag.label));
      }
      if (!seen.insert(bag.id).second) throw DataError("duplicate bag id '" + bag.id + "'");
    }
  }

  const std::string& name() const { return name_; }
  Eigen::Index dim() const { return dim_; }
  std::size_t size() const { return bags_.size(); }
  const std::vector<Bag>& bags() const { return bags_; }
  const Bag& operator[](std::size_t i) const { return bags_[i]; }

  std::size_t positives() const {
    std::size_t n = 0;
    for (const auto& b : bags_) n += static_cast<std::size_t>(b.label == 1);
    return n;
  }
  std::size_t negatives() const { return size() - positives(); }
  std::size_t instance_count() const {
    std::size_t n = 0;
    for (const auto& b : bags_) n += static_cast<std::size_t>(b.size());
    return n;
  }

  BagDataset subset(const std::vector<std::size_t>& indices) const {
    std::vector<Bag> picked;
    picked.reserve(indices.size());
    for (auto i : indices) picked.push_back(bags_.at(i));
    return BagDataset(name_, std::move(picked));
  }

 private:
  std::string name_;
  Eigen::Index dim_ = 0;
  std::vector<Bag> bags_;
};

// ---------------------------------------------------------------------------
// MIL-CSV
//
//   # comment
//   bag_id,label,d=<dim>
//   <bag_id>,<0|1>,f1,...,fd
// ---------------------------------------------------------------------------

namespace detail {

inline std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  return s;
}

inline std::vector<std::string_view> split_commas(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  for (;;) {
    const auto pos = line.find(',', start);
    out.push_back(trim(line.substr(start, pos == std::string_view::npos ? line.size() - start : pos - start)));
    if (pos == std::string_view::npos) break;
    start = pos + 1;
  }
  return out;
}

inline bool parse_double(std::string_view s, double& out) {
  if (!s.empty() && s.front() == '+') s.remove_prefix(1);
  if (s.empty()) return false;
  const auto res = std::from_chars(s.data(), s.data() + s.size(), out);
  return res.ec == std::errc() && res.ptr == s.data() + s.size();
}

inline std::string format_double(double v) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);  // shortest round-trip form
  return std::string(buf, res.ptr);
}

}  // namespace detail

inline BagDataset read_milcsv(std::istream& in, const std::string& name) {
  std::string raw;
  std::size_t lineno = 0;
  long dim = -1;

  struct Pending {
    std::string id;
    int label;
    std::vector<double> values;  // row-major, dim per instance
  };
  std::vector<Pending> bags;
  std::unordered_map<std::string, std::size_t> index;

  while (std::getline(in, raw)) {
    ++lineno;
    const std::string_view line = detail::trim(raw);
    if (line.empty() || line.front() == '#') continue;
    const auto fields = detail::split_commas(line);

    if (dim < 0) {
      if (fields.size() != 3 || fields[0] != "bag_id" || fields[1] != "label" ||
          fields[2].substr(0, 2) != "d=") {
        throw DataError("expected header 'bag_id,label,d=<dim>'", lineno);
      }
      const auto num = fields[2].substr(2);
      const auto res = std::from_chars(num.data(), num.data() + num.size(), dim);
      if (res.ec != std::errc() || res.ptr != num.data() + num.size() || dim < 1) {
        throw DataError("invalid dimension in header '" + std::string(fields[2]) + "'", lineno);
      }
      continue;
    }

    if (static_cast<long>(fields.size()) != dim + 2) {
      throw DataError("expected " + std::to_string(dim) + " features, found " +
                          std::to_string(static_cast<long>(fields.size()) - 2),
                      lineno);
    }
    if (fields[0].empty()) throw DataError("empty bag_id", lineno);
    int label;
    if (fields[1] == "0") {
      label = 0;
    } else if (fields[1] == "1") {
      label = 1;
    } else {
      throw DataError("label must be 0 or 1, got '" + std::string(fields[1]) + "'", lineno);
    }

    std::string id(fields[0]);
    auto [it, inserted] = index.try_emplace(id, bags.size());
    if (inserted) {
      bags.push_back({id, label, {}});
    } else if (bags[it->second].label != label) {
      throw DataError("bag '" + id + "' has conflicting labels", lineno);
    }
    auto& values = bags[it->second].values;
    for (long c = 0; c < dim; ++c) {
      double v;
      const auto field = fields[static_cast<std::size_t>(c + 2)];
      if (!detail::parse_double(field, v) || !std::isfinite(v)) {
        throw DataError("feature " + std::to_string(c + 1) + " is not a finite number: '" +
                            std::string(field) + "'",
                        lineno);
      }
      values.push_back(v);
    }
  }

  if (dim < 0) throw DataError("empty file: missing header", lineno);
  if (bags.empty()) throw DataError("file contains no instances", lineno);

  std::vector<Bag> out;
  out.reserve(bags.size());
  for (auto& p : bags) {
    const auto m = static_cast<Eigen::Index>(p.values.size()) / dim;
    Matrix inst = Eigen::Map<const Matrix>(p.values.data(), m, dim);
    out.push_back({std::move(p.id), p.label, std::move(inst)});
  }
  return BagDataset(name, std::move(out));
}

inline BagDataset load_milcsv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open '" + path.string() + "'");
  return read_milcsv(in, path.stem().string());
}

inline void write_milcsv(const BagDataset& ds, std::ostream& out) {
  out << "bag_id,label,d=" << ds.dim() << '\n';
  for (const auto& bag : ds.bags()) {
    for (Eigen::Index j = 0; j < bag.size(); ++j) {
      out << bag.id << ',' << bag.label;
      for (Eigen::Index c = 0; c < bag.dim(); ++c) out << ',' << detail::format_double(bag.instances(j, c));
      out << '\n';
    }
  }
}

inline void save_milcsv(const BagDataset& ds, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write '" + path.string() + "'");
  write_milcsv(ds, out);
}

// ---------------------------------------------------------------------------
// Standardization
// ---------------------------------------------------------------------------

/// Per-feature affine map x -> (x - mean) / scale. Features whose training
/// std is below 1e-12 keep mean 0 and scale 1 (pass through unchanged).
struct FeatureScaler {
  Vector mean;
  Vector scale;

  Matrix apply(const Matrix& x) const {
    if (x.cols() != mean.size()) {
      throw ShapeError("FeatureScaler: input has " + std::to_string(x.cols()) + " features, scaler has " +
                       std::to_string(mean.size()));
    }
    return (x.rowwise() - mean.transpose()).array().rowwise() / scale.transpose().array();
  }

  BagDataset apply(const BagDataset& ds) const {
    std::vector<Bag> bags;
    bags.reserve(ds.size());
    for (const auto& b : ds.bags()) bags.push_back({b.id, b.label, apply(b.instances)});
    return BagDataset(ds.name(), std::move(bags));
  }
};

/// Population mean/std over every instance of `train`.
inline FeatureScaler fit_scaler(const BagDataset& train) {
  const auto d = train.dim();
  const auto n = static_cast<double>(train.instance_count());
  Vector sum = Vector::Zero(d);
  for (const auto& b : train.bags()) sum += b.instances.colwise().sum().transpose();
  const Vector mean = sum / n;
  Vector sq = Vector::Zero(d);
  for (const auto& b : train.bags()) {
    sq += (b.instances.rowwise() - mean.transpose()).array().square().matrix().colwise().sum().transpose();
  }
  const Vector std = (sq / n).cwiseSqrt();

  FeatureScaler s{mean, std};
  for (Eigen::Index c = 0; c < d; ++c) {
    if (!(std[c] >= 1e-12)) {
      s.mean[c] = 0.0;
      s.scale[c] = 1.0;
    }
  }
  return s;
}

inline BagDataset standardize(const BagDataset& train, const BagDataset& apply_to) {
  if (train.dim() != apply_to.dim()) {
    throw ShapeError("standardize: training dimension " + std::to_string(train.dim()) + " vs " +
                     std::to_string(apply_to.dim()));
  }
  return fit_scaler(train).apply(apply_to);
}

// ---------------------------------------------------------------------------
// Cross-validation folds
// ---------------------------------------------------------------------------

struct FoldPlan {
  int repeats = 0;
  int folds = 0;
  std::uint64_t seed = 0;
  // assignments[r][i] = test fold of bag i in repeat r
  std::vector<std::vector<int>> assignments;

  std::vector<std::size_t> test_indices(int repeat, int fold) const { return select(repeat, fold, true); }
  std::vector<std::size_t> train_indices(int repeat, int fold) const { return select(repeat, fold, false); }

  friend bool operator==(const FoldPlan&, const FoldPlan&) = default;

 private:
  std::vector<std::size_t> select(int repeat, int fold, bool in_fold) const {
    const auto& a = assignments.at(static_cast<std::size_t>(repeat));
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < a.size(); ++i) {
      if ((a[i] == fold) == in_fold) out.push_back(i);
    }
    return out;
  }
};

/// Stratified folds: positives and negatives are shuffled separately and
/// dealt round-robin, negatives continuing where positives stopped.
inline FoldPlan make_folds(const BagDataset& ds, int repeats, int folds, std::uint64_t seed) {
  if (repeats < 1) throw ConfigError("repeats must be >= 1");
  if (folds < 2) throw ConfigError("folds must be >= 2");
  std::vector<std::size_t> pos, neg;
  for (std::size_t i = 0; i < ds.size(); ++i) (ds[i].label == 1 ? pos : neg).push_back(i);
  if (pos.size() < static_cast<std::size_t>(folds) || neg.size() < static_cast<std::size_t>(folds)) {
    throw ConfigError("too few bags per class for " + std::to_string(folds) + " folds (" +
                      std::to_string(pos.size()) + " positive, " + std::to_string(neg.size()) + " negative)");
  }

  FoldPlan plan{repeats, folds, seed, {}};
  for (int r = 0; r < repeats; ++r) {
    Rng rng(derive_seed(seed, static_cast<std::uint64_t>(r), 0xF01D));
    auto p = pos;
    auto n = neg;
    shuffle(p, rng);
    shuffle(n, rng);
    std::vector<int> assign(ds.size(), -1);
    std::size_t dealt = 0;
    for (auto i : p) assign[i] = static_cast<int>(dealt++ % static_cast<std::size_t>(folds));
    for (auto i : n) assign[i] = static_cast<int>(dealt++ % static_cast<std::size_t>(folds));
    plan.assignments.push_back(std::move(assign));
  }
  return plan;
}

}  // namespace milnet
