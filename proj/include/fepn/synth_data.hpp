#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

namespace fepn {

using Point2 = std::array<double, 2>;

inline constexpr std::size_t kDefaultFeatureDim = 8;
inline constexpr int kGeneratorVersion = 1;
inline constexpr double kMoonNoise = 0.1;
inline constexpr double kRingInner = 2.5;
inline constexpr double kRingOuter = 3.5;
/// Analytic mean of the two-moons mixture (ring center).
inline constexpr Point2 kInlierMean = {0.5, 0.25};

/// Mix a base seed with a stream tag and an index (splitmix64 finalizer).
std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream, std::uint64_t index);

/// Two interleaving half-circles with isotropic Gaussian noise (sigma 0.1).
std::vector<Point2> make_inliers(std::size_t n, std::uint64_t seed);

/// Area-uniform annulus of radius [2.5, 3.5] around the inlier mean.
std::vector<Point2> make_outliers(std::size_t n, std::uint64_t seed);

/// H x W raster of feature vectors. label 1 = inlier; the OoD mask is
/// 1 - label.
class LabeledGrid {
 public:
  LabeledGrid(std::size_t height, std::size_t width, std::size_t dim,
              std::vector<double> features, std::vector<std::uint8_t> labels);

  std::size_t height() const noexcept { return height_; }
  std::size_t width() const noexcept { return width_; }
  std::size_t dim() const noexcept { return dim_; }
  std::size_t size() const noexcept { return labels_.size(); }

  std::span<const double> feature(std::size_t cell) const {
    return {features_.data() + cell * dim_, dim_};
  }
  std::uint8_t label(std::size_t cell) const { return labels_[cell]; }
  std::uint8_t mask(std::size_t cell) const { return static_cast<std::uint8_t>(1 - labels_[cell]); }

  const std::vector<double>& features() const noexcept { return features_; }
  const std::vector<std::uint8_t>& labels() const noexcept { return labels_; }
  std::vector<std::uint8_t> mask() const;
  std::size_t outlier_count() const;

  /// CSV `row,col,label,f0..f{D-1}`, 17 significant digits.
  void write_csv(std::ostream& os) const;

  bool operator==(const LabeledGrid&) const = default;

 private:
  std::size_t height_;
  std::size_t width_;
  std::size_t dim_;
  std::vector<double> features_;
  std::vector<std::uint8_t> labels_;
};

/// Raw 2-D scene: a rectangular outlier patch covering about
/// outlier_fraction * H * W cells inside an inlier background.
LabeledGrid mix_scene(std::size_t height, std::size_t width, double outlier_fraction,
                      std::uint64_t seed);

/// Fixed random affine map R^2 -> R^D followed by ReLU. Never trained.
class FrozenBackbone {
 public:
  explicit FrozenBackbone(std::uint64_t seed, std::size_t dim = kDefaultFeatureDim);

  std::uint64_t seed() const noexcept { return seed_; }
  std::size_t dim() const noexcept { return dim_; }
  const std::vector<double>& weights() const noexcept { return weights_; }
  const std::vector<double>& bias() const noexcept { return bias_; }

  /// FNV-1a over the parameter bytes.
  std::uint64_t checksum() const;

  std::vector<double> embed(const Point2& p) const;
  /// Embed a raw 2-D grid; labels are carried over.
  LabeledGrid embed(const LabeledGrid& raw) const;

 private:
  std::uint64_t seed_;
  std::size_t dim_;
  std::vector<double> weights_;  // dim x 2
  std::vector<double> bias_;
};

struct SceneMetadata {
  std::uint64_t seed = 0;
  double outlier_fraction = 0.0;
  std::size_t dim = 0;
  int generator_version = kGeneratorVersion;
};

/// Sidecar JSON for a grid file.
void write_metadata(std::ostream& os, const SceneMetadata& meta);

}  // namespace fepn
