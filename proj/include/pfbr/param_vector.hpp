#pragma once

#include "pfbr/common.hpp"

#include <memory>
#include <string>
#include <string_view>
#include <vector>

namespace pfbr {

// One named block of a flat parameter vector. Matrix segments are stored
// row-major inside the flat array.
struct Segment {
  std::string name;
  int rows = 0;
  int cols = 0;
  std::size_t offset = 0;

  std::size_t size() const { return static_cast<std::size_t>(rows) * cols; }
};

class ParamLayout {
 public:
  int add(std::string name, int rows, int cols) {
    require(rows >= 1 && cols >= 1, ErrorKind::ShapeMismatch,
            "segment '" + name + "' must have positive shape");
    require(index_of(name) < 0, ErrorKind::ShapeMismatch, "duplicate segment '" + name + "'");
    Segment s{std::move(name), rows, cols, total_};
    total_ += s.size();
    segments_.push_back(std::move(s));
    return static_cast<int>(segments_.size()) - 1;
  }

  int index_of(std::string_view name) const {
    for (std::size_t i = 0; i < segments_.size(); ++i)
      if (segments_[i].name == name) return static_cast<int>(i);
    return -1;
  }

  const Segment& segment(int i) const { return segments_.at(static_cast<std::size_t>(i)); }
  int count() const { return static_cast<int>(segments_.size()); }
  std::size_t total_size() const { return total_; }

  bool same_shapes(const ParamLayout& other) const {
    if (segments_.size() != other.segments_.size()) return false;
    for (std::size_t i = 0; i < segments_.size(); ++i) {
      const Segment &a = segments_[i], &b = other.segments_[i];
      if (a.name != b.name || a.rows != b.rows || a.cols != b.cols) return false;
    }
    return true;
  }

 private:
  std::vector<Segment> segments_;
  std::size_t total_ = 0;
};

using LayoutPtr = std::shared_ptr<const ParamLayout>;

// Flat f64 parameter vector with a named-segment layout. Doubles as the
// gradient accumulator, which shares the layout of the parameters it
// differentiates.
class ParamVector {
 public:
  ParamVector() = default;

  explicit ParamVector(LayoutPtr layout)
      : layout_(std::move(layout)), values_(Vec::Zero(static_cast<int>(layout_->total_size()))) {}

  ParamVector(LayoutPtr layout, Vec values) : layout_(std::move(layout)), values_(std::move(values)) {
    require(static_cast<std::size_t>(values_.size()) == layout_->total_size(),
            ErrorKind::ShapeMismatch, "value length does not match layout size");
  }

  const LayoutPtr& layout() const { return layout_; }
  Vec& values() { return values_; }
  const Vec& values() const { return values_; }
  std::size_t size() const { return layout_ ? layout_->total_size() : 0; }

  Eigen::Map<const RowMajorMat> mat(int seg) const {
    const Segment& s = layout_->segment(seg);
    return {values_.data() + s.offset, s.rows, s.cols};
  }

  Eigen::Map<RowMajorMat> mat(int seg) {
    const Segment& s = layout_->segment(seg);
    return {values_.data() + s.offset, s.rows, s.cols};
  }

  Eigen::Map<const Vec> flat(int seg) const {
    const Segment& s = layout_->segment(seg);
    return {values_.data() + s.offset, static_cast<Eigen::Index>(s.size())};
  }

  Eigen::Map<Vec> flat(int seg) {
    const Segment& s = layout_->segment(seg);
    return {values_.data() + s.offset, static_cast<Eigen::Index>(s.size())};
  }

  Eigen::Map<const Vec> flat(std::string_view name) const {
    int i = layout_->index_of(name);
    require(i >= 0, ErrorKind::ShapeMismatch, "no segment named '" + std::string(name) + "'");
    return flat(i);
  }

  Eigen::Map<Vec> flat(std::string_view name) {
    int i = layout_->index_of(name);
    require(i >= 0, ErrorKind::ShapeMismatch, "no segment named '" + std::string(name) + "'");
    return flat(i);
  }

  void set_zero() { values_.setZero(); }

  void check_finite(const char* what) const {
    require(values_.allFinite(), ErrorKind::NonFinite, std::string(what) + " contains NaN/Inf");
  }

 private:
  LayoutPtr layout_;
  Vec values_;
};

}  // namespace pfbr
