#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <memory>
#include <string>
#include <unordered_map>
#include <vector>

#include "polytrans/error.hpp"

namespace polytrans {

template <typename S>
using Mat = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename S>
using Vec = Eigen::Matrix<S, Eigen::Dynamic, 1>;
template <typename S>
using MatMap = Eigen::Map<Mat<S>>;
template <typename S>
using VecMap = Eigen::Map<Vec<S>>;
template <typename S>
using ConstMatMap = Eigen::Map<const Mat<S>>;

// Names and shapes of every parameter tensor, in a fixed order. The layout is
// built once by the model and shared by parameter, gradient, and optimizer
// stores, which are all views over one flat buffer each.
class ParamLayout {
 public:
  struct Segment {
    std::string name;
    int rows = 0;
    int cols = 0;
    std::size_t offset = 0;
  };

  void add(const std::string& name, int rows, int cols) {
    if (index_.count(name)) throw Error("param layout: duplicate segment '" + name + "'");
    if (rows < 1 || cols < 1) throw Error("param layout: bad shape for '" + name + "'");
    index_[name] = segments_.size();
    segments_.push_back({name, rows, cols, total_});
    total_ += static_cast<std::size_t>(rows) * static_cast<std::size_t>(cols);
  }

  const Segment& at(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw Error("param layout: unknown segment '" + name + "'");
    return segments_[it->second];
  }

  const std::vector<Segment>& segments() const { return segments_; }
  std::size_t total_size() const { return total_; }

 private:
  std::vector<Segment> segments_;
  std::unordered_map<std::string, std::size_t> index_;
  std::size_t total_ = 0;
};

// One flat scalar buffer with named matrix views. Keeping everything in a
// single array makes the optimizer, gradient clipping, finite differences,
// and checkpoint I/O one-liners, and makes weight tying literal: tied tensors
// are the same segment.
template <typename S>
class ParamStore {
 public:
  ParamStore() = default;
  explicit ParamStore(std::shared_ptr<const ParamLayout> layout)
      : layout_(std::move(layout)), data_(layout_->total_size(), S(0)) {}

  MatMap<S> mat(const std::string& name) {
    const auto& seg = layout_->at(name);
    return MatMap<S>(data_.data() + seg.offset, seg.rows, seg.cols);
  }
  ConstMatMap<S> mat(const std::string& name) const {
    const auto& seg = layout_->at(name);
    return ConstMatMap<S>(data_.data() + seg.offset, seg.rows, seg.cols);
  }
  // Row-shaped segments (biases, layer-norm scales) viewed as vectors.
  VecMap<S> vec(const std::string& name) {
    const auto& seg = layout_->at(name);
    if (seg.rows != 1) throw Error("param store: '" + name + "' is not a row vector");
    return VecMap<S>(data_.data() + seg.offset, seg.cols);
  }
  Eigen::Map<const Vec<S>> vec(const std::string& name) const {
    const auto& seg = layout_->at(name);
    if (seg.rows != 1) throw Error("param store: '" + name + "' is not a row vector");
    return Eigen::Map<const Vec<S>>(data_.data() + seg.offset, seg.cols);
  }

  std::vector<S>& flat() { return data_; }
  const std::vector<S>& flat() const { return data_; }
  std::size_t size() const { return data_.size(); }
  void zero() { std::fill(data_.begin(), data_.end(), S(0)); }

  const ParamLayout& layout() const { return *layout_; }
  std::shared_ptr<const ParamLayout> layout_ptr() const { return layout_; }

 private:
  std::shared_ptr<const ParamLayout> layout_;
  std::vector<S> data_;
};

}  // namespace polytrans
