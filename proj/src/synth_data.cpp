#include "fepn/synth_data.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <iomanip>
#include <numbers>
#include <ostream>
#include <random>

#include "json.hpp"

#include "fepn/errors.hpp"

namespace fepn {

std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream, std::uint64_t index) {
  auto mix = [](std::uint64_t z) {
    z += 0x9e3779b97f4a7c15ULL;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  };
  return mix(mix(mix(seed) ^ stream) ^ index);
}

std::vector<Point2> make_inliers(std::size_t n, std::uint64_t seed) {
  if (n == 0) throw DomainError("make_inliers: n must be > 0");
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> angle(0.0, std::numbers::pi);
  std::bernoulli_distribution which(0.5);
  std::normal_distribution<double> noise(0.0, kMoonNoise);
  std::vector<Point2> pts(n);
  for (auto& p : pts) {
    const double t = angle(rng);
    if (which(rng)) {
      p = {std::cos(t), std::sin(t)};
    } else {
      p = {1.0 - std::cos(t), 0.5 - std::sin(t)};
    }
    p[0] += noise(rng);
    p[1] += noise(rng);
  }
  return pts;
}

std::vector<Point2> make_outliers(std::size_t n, std::uint64_t seed) {
  if (n == 0) throw DomainError("make_outliers: n must be > 0");
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> angle(0.0, 2.0 * std::numbers::pi);
  std::uniform_real_distribution<double> r2(kRingInner * kRingInner, kRingOuter * kRingOuter);
  std::vector<Point2> pts(n);
  for (auto& p : pts) {
    const double r = std::sqrt(r2(rng));
    const double t = angle(rng);
    p = {kInlierMean[0] + r * std::cos(t), kInlierMean[1] + r * std::sin(t)};
  }
  return pts;
}

LabeledGrid::LabeledGrid(std::size_t height, std::size_t width, std::size_t dim,
                         std::vector<double> features, std::vector<std::uint8_t> labels)
    : height_(height), width_(width), dim_(dim), features_(std::move(features)), labels_(std::move(labels)) {
  require_shape(height > 0 && width > 0 && dim > 0, "LabeledGrid: empty dimension");
  require_shape(labels_.size() == height * width, "LabeledGrid: label count != H*W");
  require_shape(features_.size() == height * width * dim, "LabeledGrid: feature count != H*W*D");
  for (auto l : labels_) {
    if (l > 1) throw DomainError("LabeledGrid: labels must be binary");
  }
  for (double f : features_) {
    if (!std::isfinite(f)) throw DomainError("LabeledGrid: non-finite feature");
  }
}

std::vector<std::uint8_t> LabeledGrid::mask() const {
  std::vector<std::uint8_t> m(labels_.size());
  std::transform(labels_.begin(), labels_.end(), m.begin(),
                 [](std::uint8_t l) { return static_cast<std::uint8_t>(1 - l); });
  return m;
}

std::size_t LabeledGrid::outlier_count() const {
  return static_cast<std::size_t>(std::count(labels_.begin(), labels_.end(), std::uint8_t{0}));
}

void LabeledGrid::write_csv(std::ostream& os) const {
  os << "row,col,label";
  for (std::size_t d = 0; d < dim_; ++d) os << ",f" << d;
  os << '\n' << std::setprecision(17);
  for (std::size_t r = 0; r < height_; ++r) {
    for (std::size_t c = 0; c < width_; ++c) {
      const std::size_t i = r * width_ + c;
      os << r << ',' << c << ',' << static_cast<int>(labels_[i]);
      for (double f : feature(i)) os << ',' << f;
      os << '\n';
    }
  }
}

LabeledGrid mix_scene(std::size_t height, std::size_t width, double outlier_fraction,
                      std::uint64_t seed) {
  if (height == 0 || width == 0) throw DomainError("mix_scene: empty grid");
  if (!(outlier_fraction >= 0.0 && outlier_fraction <= 1.0)) {
    throw DomainError("mix_scene: outlier_fraction must lie in [0, 1]");
  }
  std::mt19937_64 rng(derive_seed(seed, 0x5ce7e, 0));
  const std::size_t cells = height * width;
  std::vector<std::uint8_t> labels(cells, 1);

  const double area = outlier_fraction * static_cast<double>(cells);
  if (area >= 0.5) {
    std::uniform_real_distribution<double> log_aspect(std::log(0.5), std::log(2.0));
    const double aspect = std::exp(log_aspect(rng));  // rect height / rect width
    auto clamp_len = [](double v, std::size_t hi) {
      return std::clamp<std::size_t>(static_cast<std::size_t>(std::lround(v)), 1, hi);
    };
    std::size_t rh = clamp_len(std::sqrt(area * aspect), height);
    std::size_t rw = clamp_len(area / static_cast<double>(rh), width);
    rh = clamp_len(area / static_cast<double>(rw), height);
    std::uniform_int_distribution<std::size_t> top(0, height - rh);
    std::uniform_int_distribution<std::size_t> left(0, width - rw);
    const std::size_t r0 = top(rng);
    const std::size_t c0 = left(rng);
    for (std::size_t r = r0; r < r0 + rh; ++r) {
      for (std::size_t c = c0; c < c0 + rw; ++c) labels[r * width + c] = 0;
    }
  }

  const std::size_t n_out = static_cast<std::size_t>(std::count(labels.begin(), labels.end(), 0));
  const std::size_t n_in = cells - n_out;
  const auto inliers = n_in > 0 ? make_inliers(n_in, derive_seed(seed, 0x1, 0)) : std::vector<Point2>{};
  const auto outliers = n_out > 0 ? make_outliers(n_out, derive_seed(seed, 0x2, 0)) : std::vector<Point2>{};
  std::vector<double> features(cells * 2);
  std::size_t next_in = 0;
  std::size_t next_out = 0;
  for (std::size_t i = 0; i < cells; ++i) {
    const Point2& p = labels[i] == 1 ? inliers[next_in++] : outliers[next_out++];
    features[2 * i] = p[0];
    features[2 * i + 1] = p[1];
  }
  return LabeledGrid(height, width, 2, std::move(features), std::move(labels));
}

FrozenBackbone::FrozenBackbone(std::uint64_t seed, std::size_t dim)
    : seed_(seed), dim_(dim), weights_(dim * 2), bias_(dim) {
  if (dim == 0) throw DomainError("FrozenBackbone: dim must be > 0");
  std::mt19937_64 rng(derive_seed(seed, 0xbacb, 0));
  std::normal_distribution<double> w(0.0, 1.0);
  std::uniform_real_distribution<double> b(4.0, 6.0);
  for (auto& v : weights_) v = w(rng);
  for (auto& v : bias_) v = b(rng);
}

std::uint64_t FrozenBackbone::checksum() const {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  auto feed = [&h](const std::vector<double>& v) {
    for (double x : v) {
      unsigned char bytes[sizeof(double)];
      std::memcpy(bytes, &x, sizeof(double));
      for (unsigned char c : bytes) {
        h ^= c;
        h *= 0x100000001b3ULL;
      }
    }
  };
  feed(weights_);
  feed(bias_);
  return h;
}

std::vector<double> FrozenBackbone::embed(const Point2& p) const {
  std::vector<double> f(dim_);
  for (std::size_t d = 0; d < dim_; ++d) {
    f[d] = std::max(0.0, weights_[2 * d] * p[0] + weights_[2 * d + 1] * p[1] + bias_[d]);
  }
  return f;
}

LabeledGrid FrozenBackbone::embed(const LabeledGrid& raw) const {
  require_shape(raw.dim() == 2, "FrozenBackbone::embed: expected raw 2-D grid");
  std::vector<double> features(raw.size() * dim_);
  for (std::size_t i = 0; i < raw.size(); ++i) {
    const auto x = raw.feature(i);
    const auto f = embed(Point2{x[0], x[1]});
    std::copy(f.begin(), f.end(), features.begin() + static_cast<std::ptrdiff_t>(i * dim_));
  }
  return LabeledGrid(raw.height(), raw.width(), dim_, std::move(features), raw.labels());
}

void write_metadata(std::ostream& os, const SceneMetadata& meta) {
  nlohmann::ordered_json j;
  j["seed"] = meta.seed;
  j["outlier_fraction"] = meta.outlier_fraction;
  j["dim"] = meta.dim;
  j["generator_version"] = meta.generator_version;
  os << j.dump(2) << '\n';
}

}  // namespace fepn
