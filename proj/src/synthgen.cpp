#include "fsi2p/synthgen.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>

namespace fsi2p {

SceneMode parse_scene_mode(std::string_view name) {
  if (name == "easy") return SceneMode::easy;
  if (name == "hard") return SceneMode::hard;
  throw ConfigError("unknown scene mode '" + std::string(name) + "' (easy, hard)");
}

std::string_view to_string(SceneMode mode) { return mode == SceneMode::hard ? "hard" : "easy"; }

void SceneSpec::validate() const {
  if (points < 6) throw ConfigError("scene: at least 6 points required, got " + std::to_string(points));
  if (height < 4 || width < 4 || height % 4 != 0 || width % 4 != 0) {
    throw ConfigError("scene: grid " + std::to_string(height) + "x" + std::to_string(width) +
                      " is not divisible by 4");
  }
  if (channels < 1) throw ConfigError("scene: channel width must be positive");
  if (!(noise >= 0)) throw ConfigError("scene: noise must be non-negative");
  if (!(focal > 0)) throw ConfigError("scene: focal length must be positive");
  if (!(min_depth > 0 && max_depth > min_depth)) throw ConfigError("scene: invalid depth range");
  if (!(max_rotation >= 0 && max_translation >= 0)) throw ConfigError("scene: invalid pose range");
  if (!(min_separation_px >= 0)) throw ConfigError("scene: separation must be non-negative");
  if (mode == SceneMode::hard && (repetition_groups < 1 || repetition_groups > points)) {
    throw ConfigError("scene: repetition groups must lie in 1.." + std::to_string(points));
  }
}

namespace {

template <typename Derived>
void quantize_all(Eigen::MatrixBase<Derived>& m) {
  for (Index i = 0; i < m.rows(); ++i)
    for (Index j = 0; j < m.cols(); ++j) {
      volatile float f = static_cast<float>(m(i, j));
      m(i, j) = f;
    }
}

Eigen::VectorXd unit_code(Index c, Rng& rng) {
  Eigen::VectorXd v(c);
  do {
    for (Index i = 0; i < c; ++i) v[i] = rng.normal();
  } while (v.norm() == 0.0);
  return v.normalized();
}

}  // namespace

void SyntheticSample::derive() {
  const Index n = points.rows();
  projections.resize(n, 2);
  point_pixel.assign(static_cast<std::size_t>(n), 0);
  pixel_owner.assign(static_cast<std::size_t>(h * w), -1);
  std::vector<double> best(static_cast<std::size_t>(h * w), kOwnerRadiusPx + 1.0);
  for (Index j = 0; j < n; ++j) {
    const Eigen::Vector2d p = project<double>(points.row(j).transpose(), K, pose);
    projections.row(j) = p.transpose();
    const Index c0 = std::clamp<Index>(std::lround(p.x()), 0, w - 1);
    const Index r0 = std::clamp<Index>(std::lround(p.y()), 0, h - 1);
    point_pixel[static_cast<std::size_t>(j)] = r0 * w + c0;
    for (Index r = std::max<Index>(r0 - 1, 0); r <= std::min(r0 + 1, h - 1); ++r) {
      for (Index c = std::max<Index>(c0 - 1, 0); c <= std::min(c0 + 1, w - 1); ++c) {
        const double d = std::hypot(p.x() - double(c), p.y() - double(r));
        const auto k = static_cast<std::size_t>(r * w + c);
        if (d <= kOwnerRadiusPx && d < best[k]) {
          best[k] = d;
          pixel_owner[k] = j;
        }
      }
    }
  }
}

SyntheticSample gen_scene(const SceneSpec& spec, std::uint64_t seed) {
  spec.validate();
  Rng rng = Rng::stream(seed, "data");
  SyntheticSample s;
  s.h = spec.height;
  s.w = spec.width;
  s.channels = spec.channels;
  s.K << spec.focal, 0, double(spec.width) / 2, 0, spec.focal, double(spec.height) / 2, 0, 0, 1;

  Eigen::Vector3d axis;
  do {
    axis = Eigen::Vector3d(rng.normal(), rng.normal(), rng.normal());
  } while (axis.norm() == 0.0);
  const double angle = rng.uniform(0.0, spec.max_rotation);
  s.pose.R = Eigen::AngleAxisd(angle, axis.normalized()).toRotationMatrix();
  Eigen::Vector3d dir;
  do {
    dir = Eigen::Vector3d(rng.normal(), rng.normal(), rng.normal());
  } while (dir.norm() == 0.0);
  s.pose.t = dir.normalized() * spec.max_translation * std::cbrt(rng.uniform());
  quantize_all(s.K);
  quantize_all(s.pose.R);
  quantize_all(s.pose.t);

  const Index n = spec.points;
  const double sep2 = spec.min_separation_px * spec.min_separation_px;
  const double z0 = std::pow(spec.min_depth, 3), z1 = std::pow(spec.max_depth, 3);
  const Eigen::Matrix3d kinv = s.K.inverse();
  std::vector<Eigen::Vector2d> placed;
  s.points.resize(n, 3);
  const Index max_attempts = 500 * n;
  Index attempts = 0;
  while (static_cast<Index>(placed.size()) < n) {
    if (++attempts > max_attempts) {
      throw DomainError("gen_scene: could not place " + std::to_string(n) + " points " +
                        std::to_string(spec.min_separation_px) + " px apart in a " +
                        std::to_string(spec.height) + "x" + std::to_string(spec.width) + " frustum");
    }
    const double u = rng.uniform(0.0, double(spec.width - 1));
    const double v = rng.uniform(0.0, double(spec.height - 1));
    const double z = std::cbrt(z0 + rng.uniform() * (z1 - z0));
    const Eigen::Vector2d p(u, v);
    const bool clash = std::any_of(placed.begin(), placed.end(),
                                   [&](const Eigen::Vector2d& q) { return (q - p).squaredNorm() < sep2; });
    if (clash) continue;
    const Eigen::Vector3d cam = z * kinv * Eigen::Vector3d(u, v, 1.0);
    s.points.row(static_cast<Index>(placed.size())) = (s.pose.R.transpose() * (cam - s.pose.t)).transpose();
    placed.push_back(p);
  }
  quantize_all(s.points);
  s.derive();

  const Index codes = spec.mode == SceneMode::hard ? spec.repetition_groups : n;
  std::vector<Eigen::VectorXd> code(static_cast<std::size_t>(codes));
  for (auto& c : code) c = unit_code(spec.channels, rng);
  auto code_of = [&](Index j) -> const Eigen::VectorXd& { return code[static_cast<std::size_t>(j % codes)]; };

  s.point_features.resize(n, spec.channels);
  for (Index j = 0; j < n; ++j) {
    for (Index c = 0; c < spec.channels; ++c) {
      s.point_features(j, c) = code_of(j)[c] + spec.noise * rng.normal();
    }
  }
  s.image_features.resize(s.h * s.w, spec.channels);
  s.depth = Eigen::VectorXd::Zero(s.h * s.w);
  for (Index p = 0; p < s.h * s.w; ++p) {
    const Index owner = s.pixel_owner[static_cast<std::size_t>(p)];
    const Eigen::VectorXd base = owner >= 0 ? code_of(owner) : unit_code(spec.channels, rng);
    for (Index c = 0; c < spec.channels; ++c) {
      s.image_features(p, c) = base[c] + spec.noise * rng.normal();
    }
    if (owner >= 0) s.depth[p] = s.pose.apply(s.points.row(owner).transpose()).z();
  }
  quantize_all(s.point_features);
  quantize_all(s.image_features);
  quantize_all(s.depth);
  for (Index j = 0; j < n; ++j) {
    s.correspondences.emplace_back(static_cast<std::uint32_t>(s.point_pixel[static_cast<std::size_t>(j)]),
                                   static_cast<std::uint32_t>(j));
  }
  return s;
}

OverlapTable gt_overlap(const SyntheticSample& sample, const PyramidIndex& index, double radius) {
  const Index n = sample.point_count(), tokens = index.total();
  if (index.fine_h != sample.h || index.fine_w != sample.w) {
    throw ShapeError("gt_overlap: pyramid built for a different grid");
  }
  OverlapTable o;
  o.overlap_2d = RowMatrix::Zero(tokens, n);
  o.overlap_3d = RowMatrix::Zero(tokens, n);
  RowMatrix counts = RowMatrix::Zero(tokens, n);
  Eigen::VectorXd fg = Eigen::VectorXd::Zero(tokens);
  for (Index p = 0; p < sample.h * sample.w; ++p) {
    const Index owner = sample.pixel_owner[static_cast<std::size_t>(p)];
    if (owner < 0) continue;
    for (int l = 0; l < 3; ++l) {
      const Index t = index.token_at(l, p);
      counts(t, owner) += 1.0;
      fg[t] += 1.0;
    }
  }
  o.balls.reserve(static_cast<std::size_t>(n));
  for (Index j = 0; j < n; ++j) {
    o.balls.push_back(ball_query(sample.points, j, radius));
    const auto& ball = o.balls.back();
    for (Index q : ball) o.overlap_2d.col(j) += counts.col(q);
    const double share = 1.0 / double(ball.size());
    for (Index q : ball) {
      for (int l = 0; l < 3; ++l) {
        o.overlap_3d(index.token_at(l, sample.point_pixel[static_cast<std::size_t>(q)]), j) += share;
      }
    }
  }
  for (Index t = 0; t < tokens; ++t) {
    if (fg[t] > 0) o.overlap_2d.row(t) /= fg[t];
  }
  return o;
}

SplitCounts split_counts(Index count) {
  SplitCounts s;
  s.train = count * 70 / 100;
  s.val = count * 15 / 100;
  s.test = count - s.train - s.val;
  return s;
}

namespace {

constexpr char kSampleMagic[] = "FSIP-SYN1";
constexpr std::size_t kSampleMagicLen = sizeof(kSampleMagic) - 1;

class Writer {
 public:
  explicit Writer(const std::filesystem::path& path) : path_(path), out_(path, std::ios::binary) {
    if (!out_) throw IoError("cannot open " + path.string() + " for writing");
  }
  void bytes(const void* p, std::size_t n) {
    out_.write(static_cast<const char*>(p), static_cast<std::streamsize>(n));
    if (!out_) throw IoError("write failed on " + path_.string());
  }
  void u32(std::uint32_t v) { bytes(&v, 4); }
  void f32(double v) {
    const float f = static_cast<float>(v);
    bytes(&f, 4);
  }
  template <typename Derived>
  void f32s(const Eigen::DenseBase<Derived>& m) {
    // Row-major element order regardless of storage.
    for (Index i = 0; i < m.rows(); ++i)
      for (Index j = 0; j < m.cols(); ++j) f32(m(i, j));
  }

 private:
  std::filesystem::path path_;
  std::ofstream out_;
};

class Reader {
 public:
  explicit Reader(const std::filesystem::path& path) : path_(path), in_(path, std::ios::binary) {
    if (!in_) throw IoError("cannot open " + path.string());
  }
  void bytes(void* p, std::size_t n) {
    in_.read(static_cast<char*>(p), static_cast<std::streamsize>(n));
    if (!in_) throw IoError("truncated file " + path_.string());
  }
  std::uint32_t u32() {
    std::uint32_t v;
    bytes(&v, 4);
    return v;
  }
  double f32() {
    float f;
    bytes(&f, 4);
    return f;
  }
  template <typename Derived>
  void f32s(Eigen::DenseBase<Derived>& m) {
    for (Index i = 0; i < m.rows(); ++i)
      for (Index j = 0; j < m.cols(); ++j) m(i, j) = f32();
  }
  void expect_end() {
    if (in_.peek() != std::char_traits<char>::eof()) throw IoError("trailing bytes in " + path_.string());
  }
  const std::filesystem::path& path() const { return path_; }

 private:
  std::filesystem::path path_;
  std::ifstream in_;
};

}  // namespace

void write_sample(const std::filesystem::path& path, const SyntheticSample& s) {
  Writer w(path);
  w.bytes(kSampleMagic, kSampleMagicLen);
  w.u32(static_cast<std::uint32_t>(s.h));
  w.u32(static_cast<std::uint32_t>(s.w));
  w.u32(static_cast<std::uint32_t>(s.channels));
  w.u32(static_cast<std::uint32_t>(s.point_count()));
  w.f32s(s.K);
  w.f32s(s.pose.R);
  w.f32s(s.pose.t.transpose());
  w.f32s(s.image_features);
  w.f32s(s.points);
  w.f32s(s.point_features);
  w.u32(static_cast<std::uint32_t>(s.correspondences.size()));
  for (const auto& [pixel, point] : s.correspondences) {
    w.u32(pixel);
    w.u32(point);
  }
  w.f32s(s.depth.transpose());
}

SyntheticSample read_sample(const std::filesystem::path& path) {
  Reader r(path);
  char magic[kSampleMagicLen];
  r.bytes(magic, kSampleMagicLen);
  if (std::memcmp(magic, kSampleMagic, kSampleMagicLen) != 0) {
    throw IoError(path.string() + " is not a synthetic sample (bad magic)");
  }
  SyntheticSample s;
  s.h = r.u32();
  s.w = r.u32();
  s.channels = r.u32();
  const Index n = r.u32();
  if (s.h == 0 || s.w == 0 || s.channels == 0 || n == 0 || s.h * s.w > (1 << 26) ||
      s.channels > 4096 || n > (1 << 24)) {
    throw IoError(path.string() + ": implausible header");
  }
  r.f32s(s.K);
  r.f32s(s.pose.R);
  Eigen::RowVector3d t;
  r.f32s(t);
  s.pose.t = t.transpose();
  s.image_features.resize(s.h * s.w, s.channels);
  r.f32s(s.image_features);
  s.points.resize(n, 3);
  r.f32s(s.points);
  s.point_features.resize(n, s.channels);
  r.f32s(s.point_features);
  const std::uint32_t m = r.u32();
  for (std::uint32_t k = 0; k < m; ++k) {
    const std::uint32_t pixel = r.u32(), point = r.u32();
    if (pixel >= s.h * s.w || point >= n) throw IoError(path.string() + ": correspondence out of range");
    s.correspondences.emplace_back(pixel, point);
  }
  Eigen::RowVectorXd depth(s.h * s.w);
  r.f32s(depth);
  s.depth = depth.transpose();
  r.expect_end();
  s.derive();
  return s;
}

void gen_dataset(const SceneSpec& spec, Index count, std::uint64_t seed,
                 const std::filesystem::path& dir) {
  if (count < 1) throw ConfigError("gen_dataset: count must be positive");
  spec.validate();
  const SplitCounts split = split_counts(count);
  std::error_code ec;
  for (const char* name : {"train", "val", "test"}) {
    std::filesystem::create_directories(dir / name, ec);
    if (ec) throw IoError("cannot create " + (dir / name).string() + ": " + ec.message());
  }
  for (Index i = 0; i < count; ++i) {
    const char* name = i < split.train ? "train" : i < split.train + split.val ? "val" : "test";
    char file[64];
    std::snprintf(file, sizeof file, "sample_%08llu.bin",
                  static_cast<unsigned long long>(seed + static_cast<std::uint64_t>(i)));
    write_sample(dir / name / file, gen_scene(spec, seed + static_cast<std::uint64_t>(i)));
  }
}

std::vector<SyntheticSample> load_split(const std::filesystem::path& dir, std::string_view split) {
  const std::filesystem::path sub = dir / std::string(split);
  std::error_code ec;
  if (!std::filesystem::is_directory(sub, ec)) throw IoError("dataset split not found: " + sub.string());
  std::vector<std::filesystem::path> files;
  for (const auto& e : std::filesystem::directory_iterator(sub)) {
    if (e.is_regular_file() && e.path().extension() == ".bin") files.push_back(e.path());
  }
  std::sort(files.begin(), files.end());
  std::vector<SyntheticSample> out;
  out.reserve(files.size());
  for (const auto& f : files) out.push_back(read_sample(f));
  return out;
}

}  // namespace fsi2p
