#pragma once

#include "clickforge/common.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <atomic>
#include <cstring>
#include <initializer_list>
#include <cstdint>
#include <numeric>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

namespace clickforge {

/// Which module owns a tensor. kUnassigned only appears in malformed input.
enum class Partition : std::uint8_t { kBsm = 0, kAdm = 1, kUnassigned = 255 };

inline const char* to_string(Partition partition) {
  switch (partition) {
    case Partition::kBsm: return "BSM";
    case Partition::kAdm: return "ADM";
    case Partition::kUnassigned: return "unassigned";
  }
  return "unassigned";
}

template <typename Scalar>
struct Tensor {
  using Vector = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

  std::vector<int> shape;
  Vector values;
  Partition partition = Partition::kUnassigned;

  Eigen::Index size() const { return values.size(); }

  /// Row-major view as shape[0] × (product of the remaining dims).
  auto as_matrix() const {
    const Eigen::Index rows = shape.empty() ? 1 : shape[0];
    return Eigen::Map<const Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>(
        values.data(), rows, rows ? values.size() / rows : 0);
  }
  auto as_matrix() {
    const Eigen::Index rows = shape.empty() ? 1 : shape[0];
    return Eigen::Map<Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>(
        values.data(), rows, rows ? values.size() / rows : 0);
  }
};

/// Set of partitions an operation applies to.
using Scope = std::vector<Partition>;

inline Eigen::Index element_count(const std::vector<int>& shape) {
  return std::accumulate(shape.begin(), shape.end(), Eigen::Index{1},
                         [](Eigen::Index a, int b) { return a * b; });
}

inline std::string shape_string(const std::vector<int>& shape) {
  std::string s = "[";
  for (std::size_t k = 0; k < shape.size(); ++k) s += (k ? "," : "") + std::to_string(shape[k]);
  return s + "]";
}

namespace detail {
inline std::uint64_t next_param_set_id() {
  static std::atomic<std::uint64_t> counter{1};
  return counter.fetch_add(1);
}
}  // namespace detail

/// Ordered, named parameter tensors with partition tags. Shapes are fixed
/// once added. Every mutable access bumps generation(), which forward tapes
/// use to detect stale recordings.
template <typename Scalar>
class ParamSet {
 public:
  using TensorType = Tensor<Scalar>;

  ParamSet() = default;
  ParamSet(const ParamSet& other)
      : names_(other.names_), tensors_(other.tensors_), index_(other.index_) {}
  ParamSet& operator=(const ParamSet& other) {
    if (this != &other) {
      names_ = other.names_;
      tensors_ = other.tensors_;
      index_ = other.index_;
      id_ = detail::next_param_set_id();
      generation_ = 0;
    }
    return *this;
  }
  ParamSet(ParamSet&& other) noexcept
      : names_(std::move(other.names_)), tensors_(std::move(other.tensors_)), index_(std::move(other.index_)) {
    other.id_ = detail::next_param_set_id();
  }
  ParamSet& operator=(ParamSet&& other) noexcept {
    names_ = std::move(other.names_);
    tensors_ = std::move(other.tensors_);
    index_ = std::move(other.index_);
    id_ = detail::next_param_set_id();
    generation_ = 0;
    other.id_ = detail::next_param_set_id();
    return *this;
  }

  TensorType& add(const std::string& name, std::vector<int> shape, Partition partition) {
    if (index_.count(name)) throw InvalidArgument("duplicate parameter name '" + name + "'");
    TensorType t;
    t.values = TensorType::Vector::Zero(element_count(shape));
    t.shape = std::move(shape);
    t.partition = partition;
    index_.emplace(name, tensors_.size());
    names_.push_back(name);
    tensors_.push_back(std::move(t));
    ++generation_;
    return tensors_.back();
  }

  std::size_t size() const { return tensors_.size(); }
  bool contains(const std::string& name) const { return index_.count(name) != 0; }
  const std::vector<std::string>& names() const { return names_; }

  const TensorType& at(const std::string& name) const { return tensors_[lookup(name)]; }
  const TensorType& at(std::size_t k) const { return tensors_[k]; }
  TensorType& mutable_at(const std::string& name) {
    ++generation_;
    return tensors_[lookup(name)];
  }
  TensorType& mutable_at(std::size_t k) {
    ++generation_;
    return tensors_[k];
  }

  std::uint64_t id() const { return id_; }
  std::uint64_t generation() const { return generation_; }

  Eigen::Index count_elements(Partition partition) const {
    Eigen::Index n = 0;
    for (const auto& t : tensors_)
      if (t.partition == partition) n += t.size();
    return n;
  }

  /// Same names, shapes and tags; all values zero.
  ParamSet zeros_like() const {
    ParamSet out(*this);
    for (auto& t : out.tensors_) t.values.setZero();
    return out;
  }

  template <typename To>
  ParamSet<To> cast() const {
    ParamSet<To> out;
    for (std::size_t k = 0; k < tensors_.size(); ++k) {
      auto& t = out.add(names_[k], tensors_[k].shape, tensors_[k].partition);
      t.values = tensors_[k].values.template cast<To>();
    }
    return out;
  }

  /// Bit-level equality including names, order, shapes and tags.
  bool operator==(const ParamSet& other) const {
    if (names_ != other.names_) return false;
    for (std::size_t k = 0; k < tensors_.size(); ++k) {
      const auto& a = tensors_[k];
      const auto& b = other.tensors_[k];
      if (a.shape != b.shape || a.partition != b.partition) return false;
      if (std::memcmp(a.values.data(), b.values.data(), sizeof(Scalar) * a.values.size()) != 0) return false;
    }
    return true;
  }

 private:
  std::size_t lookup(const std::string& name) const {
    const auto it = index_.find(name);
    if (it == index_.end()) throw InvalidArgument("unknown parameter '" + name + "'");
    return it->second;
  }

  std::vector<std::string> names_;
  std::vector<TensorType> tensors_;
  std::unordered_map<std::string, std::size_t> index_;
  std::uint64_t id_ = detail::next_param_set_id();
  std::uint64_t generation_ = 0;
};

template <typename Scalar>
struct PartitionedParams {
  ParamSet<Scalar> bsm;
  ParamSet<Scalar> adm;
};

/// Disjoint, covering split by tag. Throws on untagged tensors.
template <typename Scalar>
PartitionedParams<Scalar> partition(const ParamSet<Scalar>& params) {
  PartitionedParams<Scalar> out;
  for (std::size_t k = 0; k < params.size(); ++k) {
    const auto& t = params.at(k);
    const auto& name = params.names()[k];
    ParamSet<Scalar>* target = nullptr;
    if (t.partition == Partition::kBsm) target = &out.bsm;
    else if (t.partition == Partition::kAdm) target = &out.adm;
    else throw InvalidArgument("tensor '" + name + "' has no partition tag");
    target->add(name, t.shape, t.partition).values = t.values;
  }
  return out;
}

/// Copy of the tensors whose tag is in `scope`.
template <typename Scalar>
ParamSet<Scalar> select(const ParamSet<Scalar>& params, const Scope& scope) {
  ParamSet<Scalar> out;
  for (std::size_t k = 0; k < params.size(); ++k) {
    const auto& t = params.at(k);
    if (std::find(scope.begin(), scope.end(), t.partition) == scope.end()) continue;
    out.add(params.names()[k], t.shape, t.partition).values = t.values;
  }
  return out;
}

}  // namespace clickforge
