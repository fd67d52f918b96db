#include "lionxa/networks.hpp"

#include <bit>
#include <cmath>
#include <random>

#include "lionxa/error.hpp"

namespace lionxa {

using ad::Tensor;

// ---------------------------------------------------------------------------
// ParameterSet

Tensor ParameterSet::add(std::string name, ad::Shape shape, std::vector<double> values) {
  Tensor t = Tensor::parameter(std::move(shape), std::move(values));
  items_.push_back({std::move(name), t});
  return t;
}

std::vector<Tensor> ParameterSet::tensors() const {
  std::vector<Tensor> out;
  out.reserve(items_.size());
  for (const auto& p : items_) out.push_back(p.tensor);
  return out;
}

const Tensor& ParameterSet::get(std::string_view name) const {
  for (const auto& p : items_) {
    if (p.name == name) return p.tensor;
  }
  throw Error(ErrorCode::kShapeError, "no parameter named " + std::string(name));
}

std::size_t ParameterSet::scalar_count() const {
  std::size_t n = 0;
  for (const auto& p : items_) n += p.tensor.size();
  return n;
}

void ParameterSet::zero_grad() {
  for (auto& p : items_) p.tensor.zero_grad();
}

void ParameterSet::set_requires_grad(bool on) {
  for (auto& p : items_) p.tensor.set_requires_grad(on);
}

std::uint64_t ParameterSet::hash() const {
  std::uint64_t h = 1469598103934665603ull;
  for (const auto& p : items_) {
    for (double v : p.tensor.values()) {
      h ^= std::bit_cast<std::uint64_t>(v);
      h *= 1099511628211ull;
    }
  }
  return h;
}

std::vector<std::vector<double>> ParameterSet::snapshot() const {
  std::vector<std::vector<double>> out;
  out.reserve(items_.size());
  for (const auto& p : items_) out.emplace_back(p.tensor.values().begin(), p.tensor.values().end());
  return out;
}

void ParameterSet::restore(const std::vector<std::vector<double>>& values) {
  if (values.size() != items_.size()) {
    throw Error(ErrorCode::kCheckpointMismatch, "snapshot has wrong parameter count");
  }
  for (std::size_t i = 0; i < items_.size(); ++i) {
    auto dst = items_[i].tensor.mutable_values();
    if (values[i].size() != dst.size()) {
      throw Error(ErrorCode::kCheckpointMismatch, "snapshot shape mismatch for " + items_[i].name);
    }
    std::copy(values[i].begin(), values[i].end(), dst.begin());
  }
}

ParameterSet ParameterSet::clone() const {
  ParameterSet out;
  for (const auto& p : items_) {
    out.add(p.name, p.tensor.shape(),
            std::vector<double>(p.tensor.values().begin(), p.tensor.values().end()));
  }
  return out;
}

// ---------------------------------------------------------------------------
// initialisation helpers

namespace {

std::vector<double> normal_init(std::mt19937_64& rng, std::size_t n, double stddev) {
  std::normal_distribution<double> dist(0.0, stddev);
  std::vector<double> v(n);
  for (auto& x : v) x = dist(rng);
  return v;
}

void add_conv(ParameterSet& ps, std::mt19937_64& rng, const std::string& name, std::size_t cin,
              std::size_t cout, std::size_t k, bool with_norm, double gain = 2.0) {
  const double stddev = std::sqrt(gain / static_cast<double>(cin * k * k));
  ps.add(name + ".w", {cout, cin, k, k}, normal_init(rng, cout * cin * k * k, stddev));
  ps.add(name + ".b", {cout}, std::vector<double>(cout, 0.0));
  if (with_norm) {
    ps.add(name + ".gamma", {cout}, std::vector<double>(cout, 1.0));
    ps.add(name + ".beta", {cout}, std::vector<double>(cout, 0.0));
  }
}

void add_linear(ParameterSet& ps, std::mt19937_64& rng, const std::string& name, std::size_t in,
                std::size_t out, double gain = 2.0) {
  ps.add(name + ".w", {in, out}, normal_init(rng, in * out, std::sqrt(gain / static_cast<double>(in))));
  ps.add(name + ".b", {out}, std::vector<double>(out, 0.0));
}

Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b) {
  return ad::add_row_bias(ad::matmul(x, w), b);
}

constexpr double kSlope = 0.1;

}  // namespace

// ---------------------------------------------------------------------------
// Seg2DNet

Seg2DNet::Seg2DNet(int num_classes, std::uint64_t seed) : num_classes_(num_classes) {
  if (num_classes < 1) throw Error(ErrorCode::kShapeError, "need at least one class");
  std::mt19937_64 rng(seed);
  const auto f = static_cast<std::size_t>(kFeatureChannels);
  const auto c = static_cast<std::size_t>(num_classes);
  add_conv(params_, rng, "enc1", 5, 16, 3, true);
  add_conv(params_, rng, "enc2", 16, 32, 3, true);
  add_conv(params_, rng, "enc3", 32, 64, 3, true);
  add_conv(params_, rng, "dec3", 64, 32, 3, true);
  add_conv(params_, rng, "dec2", 32, 16, 3, true);
  add_conv(params_, rng, "dec1", 16, f, 3, true);
  add_conv(params_, rng, "head_main", f, c, 1, false, 1.0);
  add_conv(params_, rng, "head_mimicry", f, c, 1, false, 1.0);
}

Seg2DOutput Seg2DNet::forward(const Tensor& image) const {
  if (image.rank() != 3 || image.dim(0) != kRangeChannels) {
    throw Error(ErrorCode::kShapeError,
                "Seg2DNet expects a [5,H,W] image, got " + ad::shape_str(image.shape()));
  }
  if (image.dim(1) % 8 != 0 || image.dim(2) % 8 != 0) {
    throw Error(ErrorCode::kShapeError,
                "Seg2DNet needs H and W divisible by 8, got " + ad::shape_str(image.shape()));
  }
  const auto& p = params_.items();
  auto block = [&](const Tensor& x, std::size_t base) {
    Tensor y = ad::conv2d(x, p[base].tensor, p[base + 1].tensor);
    y = ad::instance_norm_2d(y, p[base + 2].tensor, p[base + 3].tensor);
    return ad::leaky_relu(y, kSlope);
  };
  const Tensor a1 = block(image, 0);
  const Tensor a2 = block(ad::max_pool2d(a1), 4);
  const Tensor a3 = block(ad::max_pool2d(a2), 8);
  const Tensor bottleneck = ad::max_pool2d(a3);
  const Tensor d3 = block(ad::add(ad::upsample_nearest2d(bottleneck), a3), 12);
  const Tensor d2 = block(ad::add(ad::upsample_nearest2d(d3), a2), 16);
  const Tensor features = block(ad::add(ad::upsample_nearest2d(d2), a1), 20);
  Seg2DOutput out;
  out.features = features;
  out.main_logits = ad::conv2d(features, p[24].tensor, p[25].tensor);
  out.mimicry_logits = ad::conv2d(features, p[26].tensor, p[27].tensor);
  return out;
}

Seg2DNet Seg2DNet::clone() const {
  Seg2DNet out;
  out.num_classes_ = num_classes_;
  out.params_ = params_.clone();
  return out;
}

// ---------------------------------------------------------------------------
// Seg3DNet

Seg3DNet::Seg3DNet(int num_classes, std::uint64_t seed) : num_classes_(num_classes) {
  if (num_classes < 1) throw Error(ErrorCode::kShapeError, "need at least one class");
  std::mt19937_64 rng(seed);
  const auto f = static_cast<std::size_t>(kFeatureChannels);
  const auto c = static_cast<std::size_t>(num_classes);
  add_linear(params_, rng, "point1", 4, 32);
  add_linear(params_, rng, "point2", 64, 64);
  add_linear(params_, rng, "feature", 64, f);
  add_linear(params_, rng, "head_main", f, c, 1.0);
  add_linear(params_, rng, "head_mimicry", f, c, 1.0);
}

std::vector<double> voxel_inputs(const VoxelSet& voxels, const PointCloud& cloud) {
  std::vector<double> rows;
  rows.reserve(voxels.size() * 4);
  for (auto rep : voxels.representative) {
    const Point& pt = cloud.points.at(static_cast<std::size_t>(rep));
    rows.push_back(pt.x * Seg3DNet::kCoordScale);
    rows.push_back(pt.y * Seg3DNet::kCoordScale);
    rows.push_back(pt.z * Seg3DNet::kCoordScale);
    rows.push_back(pt.remission);
  }
  return rows;
}

Tensor neighbor_mean(const Tensor& rows, const std::vector<std::vector<std::int64_t>>& neighbors) {
  const std::size_t v = rows.dim(0), f = rows.dim(1);
  std::vector<std::int64_t> src, dst;
  std::vector<double> inv(v * f, 0.0);
  for (std::size_t i = 0; i < neighbors.size(); ++i) {
    for (auto j : neighbors[i]) {
      src.push_back(j);
      dst.push_back(static_cast<std::int64_t>(i));
    }
    if (!neighbors[i].empty()) {
      std::fill_n(inv.begin() + static_cast<long>(i * f), f,
                  1.0 / static_cast<double>(neighbors[i].size()));
    }
  }
  if (src.empty()) return Tensor::zeros({v, f});
  const Tensor summed = ad::scatter_rows(ad::gather_rows(rows, src), dst, v);
  return ad::mul(summed, Tensor::constant({v, f}, std::move(inv)));
}

Seg3DOutput Seg3DNet::forward(const VoxelSet& voxels, const PointCloud& cloud) const {
  return forward(voxels, cloud, voxels.face_neighbors());
}

Seg3DOutput Seg3DNet::forward(const VoxelSet& voxels, const PointCloud& cloud,
                              const std::vector<std::vector<std::int64_t>>& neighbors) const {
  if (voxels.empty()) throw Error(ErrorCode::kEmptyInput, "Seg3DNet needs at least one voxel");
  if (neighbors.size() != voxels.size()) {
    throw Error(ErrorCode::kShapeError, "neighbour list does not match the voxel set");
  }
  const auto& p = params_.items();
  const Tensor x = Tensor::constant({voxels.size(), 4}, voxel_inputs(voxels, cloud));
  const Tensor h1 = ad::leaky_relu(linear(x, p[0].tensor, p[1].tensor), kSlope);
  const Tensor ctx = neighbor_mean(h1, neighbors);
  const Tensor h2 = ad::leaky_relu(linear(ad::concat({h1, ctx}, 1), p[2].tensor, p[3].tensor), kSlope);
  Seg3DOutput out;
  out.features = ad::leaky_relu(linear(h2, p[4].tensor, p[5].tensor), kSlope);
  out.main_logits = linear(out.features, p[6].tensor, p[7].tensor);
  out.mimicry_logits = linear(out.features, p[8].tensor, p[9].tensor);
  return out;
}

Seg3DNet Seg3DNet::clone() const {
  Seg3DNet out;
  out.num_classes_ = num_classes_;
  out.params_ = params_.clone();
  return out;
}

// ---------------------------------------------------------------------------
// discriminators

FeatureDiscriminator::FeatureDiscriminator(int feature_channels, std::uint64_t seed,
                                           ParameterSet& registry, const std::string& prefix)
    : channels_(feature_channels) {
  std::mt19937_64 rng(seed);
  const auto f = static_cast<std::size_t>(feature_channels);
  w1_ = registry.add(prefix + ".conv1.w", {8, f, 3, 3}, normal_init(rng, 8 * f * 9, std::sqrt(2.0 / (9.0 * f))));
  b1_ = registry.add(prefix + ".conv1.b", {8}, std::vector<double>(8, 0.0));
  w2_ = registry.add(prefix + ".conv2.w", {1, 8, 1, 1}, normal_init(rng, 8, std::sqrt(1.0 / 8.0)));
  b2_ = registry.add(prefix + ".conv2.b", {1}, {0.0});
}

Tensor FeatureDiscriminator::forward(const Tensor& features) const {
  if (features.rank() != 3 || features.dim(0) != static_cast<std::size_t>(channels_)) {
    throw Error(ErrorCode::kShapeError, "feature discriminator expects [" +
                                            std::to_string(channels_) + ",H,W], got " +
                                            ad::shape_str(features.shape()));
  }
  const Tensor h = ad::leaky_relu(ad::conv2d(features, w1_, b1_), kSlope);
  return ad::sigmoid(ad::mean(ad::conv2d(h, w2_, b2_)));
}

PredictionDiscriminator::PredictionDiscriminator(int num_classes, std::uint64_t seed,
                                                 ParameterSet& registry, const std::string& prefix)
    : classes_(num_classes) {
  std::mt19937_64 rng(seed);
  const auto c = static_cast<std::size_t>(num_classes);
  w1_ = registry.add(prefix + ".fc1.w", {c, 32}, normal_init(rng, c * 32, std::sqrt(2.0 / c)));
  b1_ = registry.add(prefix + ".fc1.b", {32}, std::vector<double>(32, 0.0));
  w2_ = registry.add(prefix + ".fc2.w", {32, 1}, normal_init(rng, 32, std::sqrt(1.0 / 32.0)));
  b2_ = registry.add(prefix + ".fc2.b", {1}, {0.0});
}

Tensor PredictionDiscriminator::forward(const Tensor& probabilities) const {
  if (probabilities.rank() != 2 || probabilities.dim(1) != static_cast<std::size_t>(classes_) ||
      probabilities.dim(0) == 0) {
    throw Error(ErrorCode::kShapeError, "prediction discriminator expects [N," +
                                            std::to_string(classes_) + "], got " +
                                            ad::shape_str(probabilities.shape()));
  }
  const Tensor h = ad::leaky_relu(linear(probabilities, w1_, b1_), kSlope);
  return ad::sigmoid(ad::mean(linear(h, w2_, b2_)));
}

DiscriminatorSet::DiscriminatorSet(int num_classes, std::uint64_t seed)
    : params_(),
      feature_(Seg2DNet::kFeatureChannels, seed, params_, "d_feat"),
      s3d_t2d_(num_classes, seed + 1, params_, "d_s3d_t2d"),
      s2d_t3d_(num_classes, seed + 2, params_, "d_s2d_t3d") {}

Tensor DiscriminatorSet::forward(DiscriminatorKind kind, const Tensor& input) const {
  switch (kind) {
    case DiscriminatorKind::kFeature2D: return feature_.forward(input);
    case DiscriminatorKind::kSource3DTarget2D: return s3d_t2d_.forward(input);
    case DiscriminatorKind::kSource2DTarget3D: return s2d_t3d_.forward(input);
  }
  throw Error(ErrorCode::kShapeError, "unknown discriminator kind");
}

// ---------------------------------------------------------------------------
// lifting and inputs

Tensor pixels_as_rows(const Tensor& chw) {
  if (chw.rank() != 3) throw Error(ErrorCode::kShapeError, "expected [C,H,W]");
  return ad::transpose(ad::reshape(chw, {chw.dim(0), chw.dim(1) * chw.dim(2)}));
}

Tensor lift_rows(const Tensor& chw, std::span<const std::int64_t> pixel_index) {
  return ad::gather_rows(pixels_as_rows(chw), pixel_index);
}

Tensor image_tensor(const RangeImage& img) {
  const std::size_t n = img.pixels();
  std::vector<double> v(img.data);
  for (int ch = 0; ch < kRangeChannels; ++ch) {
    for (std::size_t f = 0; f < n; ++f) {
      if (!img.valid[f]) v[ch * n + f] = 0.0;
    }
  }
  return Tensor::constant({static_cast<std::size_t>(kRangeChannels),
                           static_cast<std::size_t>(img.height), static_cast<std::size_t>(img.width)},
                          std::move(v));
}

// ---------------------------------------------------------------------------
// checkpoints

namespace {

constexpr std::uint32_t kCheckpointVersion = 1;

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int k = 0; k < 4; ++k) out.push_back(static_cast<std::uint8_t>((v >> (8 * k)) & 0xFF));
}

void put_u64(std::vector<std::uint8_t>& out, std::uint64_t v) {
  for (int k = 0; k < 8; ++k) out.push_back(static_cast<std::uint8_t>((v >> (8 * k)) & 0xFF));
}

class Reader {
 public:
  explicit Reader(std::span<const std::uint8_t> bytes) : bytes_(bytes) {}
  std::uint64_t u(int width) {
    need(static_cast<std::size_t>(width));
    std::uint64_t v = 0;
    for (int k = 0; k < width; ++k) v |= static_cast<std::uint64_t>(bytes_[pos_ + k]) << (8 * k);
    pos_ += static_cast<std::size_t>(width);
    return v;
  }
  std::string str(std::size_t n) {
    need(n);
    std::string s(reinterpret_cast<const char*>(bytes_.data() + pos_), n);
    pos_ += n;
    return s;
  }
  bool done() const { return pos_ == bytes_.size(); }

 private:
  void need(std::size_t n) const {
    if (pos_ + n > bytes_.size()) throw Error(ErrorCode::kCheckpointMismatch, "truncated checkpoint");
  }
  std::span<const std::uint8_t> bytes_;
  std::size_t pos_ = 0;
};

}  // namespace

std::vector<std::uint8_t> serialize_checkpoint(const ParameterSet& params) {
  std::vector<std::uint8_t> out;
  for (char c : {'L', 'X', 'C', 'K'}) out.push_back(static_cast<std::uint8_t>(c));
  put_u32(out, kCheckpointVersion);
  put_u32(out, static_cast<std::uint32_t>(params.items().size()));
  for (const auto& p : params.items()) {
    put_u32(out, static_cast<std::uint32_t>(p.name.size()));
    out.insert(out.end(), p.name.begin(), p.name.end());
    put_u32(out, static_cast<std::uint32_t>(p.tensor.rank()));
    for (auto d : p.tensor.shape()) put_u64(out, d);
    for (double v : p.tensor.values()) put_u64(out, std::bit_cast<std::uint64_t>(v));
  }
  return out;
}

void load_checkpoint(ParameterSet& params, std::span<const std::uint8_t> bytes) {
  Reader in(bytes);
  if (in.str(4) != "LXCK") throw Error(ErrorCode::kCheckpointMismatch, "bad checkpoint magic");
  if (in.u(4) != kCheckpointVersion) {
    throw Error(ErrorCode::kCheckpointMismatch, "unsupported checkpoint version");
  }
  const auto count = in.u(4);
  if (count != params.items().size()) {
    throw Error(ErrorCode::kCheckpointMismatch,
                "checkpoint holds " + std::to_string(count) + " tensors, model has " +
                    std::to_string(params.items().size()));
  }
  std::vector<std::vector<double>> values;
  for (const auto& p : params.items()) {
    const std::string name = in.str(in.u(4));
    if (name != p.name) {
      throw Error(ErrorCode::kCheckpointMismatch, "expected tensor " + p.name + ", found " + name);
    }
    const auto rank = in.u(4);
    ad::Shape shape;
    for (std::uint64_t k = 0; k < rank; ++k) shape.push_back(in.u(8));
    if (shape != p.tensor.shape()) {
      throw Error(ErrorCode::kCheckpointMismatch, "shape mismatch for " + name + ": " +
                                                      ad::shape_str(shape) + " vs " +
                                                      ad::shape_str(p.tensor.shape()));
    }
    std::vector<double> v(p.tensor.size());
    for (auto& x : v) x = std::bit_cast<double>(in.u(8));
    values.push_back(std::move(v));
  }
  if (!in.done()) throw Error(ErrorCode::kCheckpointMismatch, "trailing bytes in checkpoint");
  params.restore(values);
}

}  // namespace lionxa
