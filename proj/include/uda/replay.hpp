#pragma once

// Per-class memory buffer filled once at the end of the source phase and
// replayed alongside target minibatches.

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "uda/checkpoint.hpp"
#include "uda/domains.hpp"
#include "uda/error.hpp"
#include "uda/tensor.hpp"

namespace uda {

class MemoryBuffer {
 public:
  MemoryBuffer() = default;
  MemoryBuffer(std::size_t capacity, std::size_t classes, std::size_t dim)
      : capacity_(capacity), dim_(dim), per_class_(classes, Tensor::zeros({0, dim})) {}

  std::size_t capacity() const { return capacity_; }
  std::size_t classes() const { return per_class_.size(); }
  std::size_t dim() const { return dim_; }
  bool empty() const { return size() == 0; }

  std::size_t size() const {
    std::size_t n = 0;
    for (const Tensor& t : per_class_) n += t.rows();
    return n;
  }

  /// Stored inputs of class c, [k, dim].
  const Tensor& items(std::size_t c) const { return per_class_.at(c); }

  /// Flat view in class order: row i has label labels()[i].
  Tensor inputs() const {
    std::vector<double> data;
    data.reserve(size() * dim_);
    for (const Tensor& t : per_class_) data.insert(data.end(), t.data().begin(), t.data().end());
    return Tensor({size(), dim_}, std::move(data));
  }

  std::vector<std::size_t> labels() const {
    std::vector<std::size_t> out;
    for (std::size_t c = 0; c < per_class_.size(); ++c) out.insert(out.end(), per_class_[c].rows(), c);
    return out;
  }

  /// Classes that held fewer than `capacity` examples, with their shortfall.
  const std::vector<std::pair<std::size_t, std::size_t>>& shortfalls() const { return shortfalls_; }

  std::uint64_t checksum() const {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (const Tensor& t : per_class_) h = fnv1a(t.data(), h);
    return h;
  }

 private:
  friend MemoryBuffer sample_memory(const LabeledSet&, std::size_t, std::uint64_t);
  friend MemoryBuffer import_memory(const std::filesystem::path&);

  std::size_t capacity_ = 0;
  std::size_t dim_ = 0;
  std::vector<Tensor> per_class_;
  std::vector<std::pair<std::size_t, std::size_t>> shortfalls_;
};

/// Uniform sampling without replacement inside each class.
inline MemoryBuffer sample_memory(const LabeledSet& s0, std::size_t n, std::uint64_t seed) {
  require(n >= 1, "memory needs at least one sample per class");
  s0.validate();
  MemoryBuffer m(n, s0.classes, s0.dim());
  std::mt19937_64 rng(seed);
  for (std::size_t c = 0; c < s0.classes; ++c) {
    std::vector<std::size_t> rows;
    for (std::size_t i = 0; i < s0.size(); ++i) {
      if (s0.y[i] == c) rows.push_back(i);
    }
    std::shuffle(rows.begin(), rows.end(), rng);
    if (rows.size() < n) m.shortfalls_.emplace_back(c, n - rows.size());
    rows.resize(std::min(rows.size(), n));
    m.per_class_[c] = gather_rows(s0.x, rows);
    if (rows.empty()) m.per_class_[c] = Tensor::zeros({0, s0.dim()});
  }
  return m;
}

struct JointBatch {
  Tensor xs;                    // [K, dim] replayed source inputs
  std::vector<std::size_t> ys;  // [K] their labels
  Tensor xt;                    // [K, dim] target inputs
};

/// Walks T1 in epochs: a fresh permutation per epoch, K rows per draw.
class TargetSampler {
 public:
  explicit TargetSampler(std::size_t n) : order_(n) {
    require(n > 0, "target set is empty");
    std::iota(order_.begin(), order_.end(), 0);
  }

  std::size_t epoch() const { return epoch_; }

  /// Next K indices; starts a new epoch when fewer than K remain.
  std::vector<std::size_t> next(std::size_t k, std::mt19937_64& rng) {
    require(k >= 1, "batch size must be >= 1");
    require(k <= order_.size(), "batch larger than target set");
    if (cursor_ == 0 || cursor_ + k > order_.size()) {
      std::shuffle(order_.begin(), order_.end(), rng);
      cursor_ = 0;
      ++epoch_;
    }
    std::vector<std::size_t> out(order_.begin() + cursor_, order_.begin() + cursor_ + k);
    cursor_ += k;
    if (cursor_ == order_.size()) cursor_ = 0;
    return out;
  }

 private:
  std::vector<std::size_t> order_;
  std::size_t cursor_ = 0;
  std::size_t epoch_ = 0;
};

/// K source pairs drawn with replacement from the buffer plus K target rows.
inline JointBatch draw_joint_minibatch(const MemoryBuffer& m, const UnlabeledSet& t1,
                                       TargetSampler& sampler, std::size_t k,
                                       std::mt19937_64& rng) {
  require(!m.empty(), "memory buffer is empty");
  require(t1.size() > 0, "target set is empty");
  require(k >= 1, "batch size must be >= 1");
  std::vector<std::size_t> offsets;
  std::size_t total = 0;
  for (std::size_t c = 0; c < m.classes(); ++c) {
    offsets.push_back(total);
    total += m.items(c).rows();
  }
  std::uniform_int_distribution<std::size_t> pick(0, total - 1);
  JointBatch b{Tensor::zeros({k, m.dim()}), std::vector<std::size_t>(k), {}};
  for (std::size_t i = 0; i < k; ++i) {
    const std::size_t flat = pick(rng);
    const std::size_t c =
        static_cast<std::size_t>(std::upper_bound(offsets.begin(), offsets.end(), flat) -
                                 offsets.begin()) - 1;
    const auto row = m.items(c).row(flat - offsets[c]);
    std::copy(row.begin(), row.end(), b.xs.data().begin() + static_cast<std::ptrdiff_t>(i * m.dim()));
    b.ys[i] = c;
  }
  const auto rows = sampler.next(k, rng);
  b.xt = gather_rows(t1.x, rows);
  return b;
}

// ---------------------------------------------------------------------------
// Export/import: <base>.ckpt holds one record per class ("memory.<c>"),
// <base>.manifest holds "class <c> count <k> capacity <n>" lines.

inline void export_memory(const MemoryBuffer& m, const std::filesystem::path& base) {
  std::vector<Record> records;
  for (std::size_t c = 0; c < m.classes(); ++c) {
    records.push_back({"memory." + std::to_string(c), m.items(c)});
  }
  save_records(std::filesystem::path(base.string() + ".ckpt"), records);
  std::ofstream man(base.string() + ".manifest");
  if (!man) throw FormatError("cannot write memory manifest");
  for (std::size_t c = 0; c < m.classes(); ++c) {
    man << "class " << c << " count " << m.items(c).rows() << " capacity " << m.capacity() << '\n';
  }
}

inline MemoryBuffer import_memory(const std::filesystem::path& base) {
  const auto records = load_records(std::filesystem::path(base.string() + ".ckpt"));
  std::ifstream man(base.string() + ".manifest");
  if (!man) throw FormatError("cannot read memory manifest");
  MemoryBuffer m;
  std::string line;
  while (std::getline(man, line)) {
    if (line.empty()) continue;
    std::istringstream ls(line);
    std::string kw_class, kw_count, kw_cap;
    std::size_t c = 0, count = 0, cap = 0;
    if (!(ls >> kw_class >> c >> kw_count >> count >> kw_cap >> cap) || kw_class != "class" ||
        kw_count != "count" || kw_cap != "capacity") {
      throw FormatError("bad manifest line: " + line);
    }
    if (c != m.per_class_.size()) throw FormatError("manifest classes out of order");
    const std::string name = "memory." + std::to_string(c);
    const auto it = std::find_if(records.begin(), records.end(),
                                 [&](const Record& r) { return r.name == name; });
    if (it == records.end()) throw FormatError("memory record missing for class " + std::to_string(c));
    if (it->value.rank() != 2 || it->value.rows() != count) {
      throw FormatError("memory record " + name + " disagrees with manifest");
    }
    m.capacity_ = cap;
    m.dim_ = it->value.cols();
    m.per_class_.push_back(it->value);
    if (count < cap) m.shortfalls_.emplace_back(c, cap - count);
  }
  if (m.per_class_.empty()) throw FormatError("empty memory manifest");
  return m;
}

}  // namespace uda
