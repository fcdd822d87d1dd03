#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "mgrgcl/error.hpp"

namespace mgrgcl {

struct MapShape {
  std::uint16_t channels = 0;
  std::uint16_t height = 0;
  std::uint16_t width = 0;

  std::size_t volume() const noexcept { return std::size_t{channels} * height * width; }
  bool valid() const noexcept { return channels >= 1 && height >= 1 && width >= 1; }
  std::string str() const {
    return "(" + std::to_string(channels) + "," + std::to_string(height) + "," + std::to_string(width) + ")";
  }
  friend bool operator==(const MapShape&, const MapShape&) = default;
};

/// A C x H x W activation map, stored as float32 in (c, h, w) row-major order,
/// which is exactly the layout of the feature file payload.
class FeatureMap {
 public:
  FeatureMap() = default;
  explicit FeatureMap(MapShape shape, float fill = 0.0f) : shape_(shape), values_(shape.volume(), fill) {
    if (!shape.valid()) fail(Errc::ShapeMismatch, "feature map shape " + shape.str() + " has an empty extent");
  }
  FeatureMap(MapShape shape, std::vector<float> values) : shape_(shape), values_(std::move(values)) {
    if (!shape.valid()) fail(Errc::ShapeMismatch, "feature map shape " + shape.str() + " has an empty extent");
    if (values_.size() != shape.volume()) {
      fail(Errc::ShapeMismatch, "feature map " + shape.str() + " given " + std::to_string(values_.size()) + " values");
    }
  }

  const MapShape& shape() const noexcept { return shape_; }
  std::size_t channels() const noexcept { return shape_.channels; }
  std::size_t height() const noexcept { return shape_.height; }
  std::size_t width() const noexcept { return shape_.width; }

  std::size_t index(std::size_t c, std::size_t h, std::size_t w) const noexcept {
    return (c * shape_.height + h) * shape_.width + w;
  }
  float& at(std::size_t c, std::size_t h, std::size_t w) { return values_[index(c, h, w)]; }
  float at(std::size_t c, std::size_t h, std::size_t w) const { return values_[index(c, h, w)]; }

  std::vector<float>& values() noexcept { return values_; }
  const std::vector<float>& values() const noexcept { return values_; }

  bool finite() const {
    for (float v : values_) {
      if (!std::isfinite(v)) return false;
    }
    return true;
  }

  friend bool operator==(const FeatureMap&, const FeatureMap&) = default;

 private:
  MapShape shape_;
  std::vector<float> values_;
};

}  // namespace mgrgcl
