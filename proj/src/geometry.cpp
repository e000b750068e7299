#include "rlvo/geometry.hpp"

#include <Eigen/SVD>

#include <cmath>
#include <limits>
#include <string>

#include "rlvo/errors.hpp"

namespace rlvo {

Quat canonical_quaternion(const Quat& q) {
  // Already unit to rounding: leave the bits alone so canonicalization is idempotent.
  Quat out = std::abs(q.squaredNorm() - 1.0) <= 8.0 * std::numeric_limits<double>::epsilon()
                 ? q
                 : q.normalized();
  if (out.w() < 0.0) out.coeffs() = -out.coeffs();
  return out;
}

Quat axis_angle_quaternion(const Vec3& axis, double angle) {
  return canonical_quaternion(Quat(Eigen::AngleAxisd(angle, axis.normalized())));
}

Quat rotation_vector_quaternion(const Vec3& omega) {
  const double angle = omega.norm();
  if (angle < 1e-12) {
    // first-order expansion keeps tiny rotations exact to machine precision
    return canonical_quaternion(Quat(1.0, 0.5 * omega.x(), 0.5 * omega.y(), 0.5 * omega.z()));
  }
  return axis_angle_quaternion(omega / angle, angle);
}

Pose::Pose(double timestamp, const Vec3& translation, const Quat& rotation)
    : timestamp_(timestamp), translation_(translation), rotation_(canonical_quaternion(rotation)) {}

Pose Pose::from_canonical(double timestamp, const Vec3& translation, const Quat& rotation) {
  Pose p;
  p.timestamp_ = timestamp;
  p.translation_ = translation;
  p.rotation_ = rotation;
  return p;
}

Pose Pose::with_timestamp(double t) const {
  Pose p = *this;
  p.timestamp_ = t;
  return p;
}

Pose compose(const Pose& a, const Pose& b) {
  return Pose(b.timestamp(), a.rotation() * b.translation() + a.translation(),
              a.rotation() * b.rotation());
}

Pose inverse(const Pose& p) {
  const Quat inv = p.rotation().conjugate();
  return Pose(p.timestamp(), -(inv * p.translation()), inv);
}

Pose relative(const Pose& a, const Pose& b) { return compose(inverse(a), b); }

double rotation_angle(const Quat& q) {
  const Quat c = canonical_quaternion(q);
  return 2.0 * std::atan2(c.vec().norm(), c.w());
}

double rotation_angle(const Pose& p) { return rotation_angle(p.rotation()); }

Trajectory::Trajectory(std::vector<Pose> poses) {
  poses_.reserve(poses.size());
  for (const auto& p : poses) push_back(p);
}

void Trajectory::push_back(const Pose& pose) {
  if (!poses_.empty() && !(pose.timestamp() > poses_.back().timestamp())) {
    throw InvalidTrajectory("timestamps must be strictly increasing (got " +
                            std::to_string(pose.timestamp()) + " after " +
                            std::to_string(poses_.back().timestamp()) + ")");
  }
  if (pose.timestamp() < 0.0) throw InvalidTrajectory("negative timestamp");
  poses_.push_back(pose);
}

std::vector<Vec3> Trajectory::positions() const {
  std::vector<Vec3> out;
  out.reserve(poses_.size());
  for (const auto& p : poses_) out.push_back(p.translation());
  return out;
}

double Trajectory::path_length() const {
  double length = 0.0;
  for (std::size_t i = 1; i < poses_.size(); ++i) {
    length += (poses_[i].translation() - poses_[i - 1].translation()).norm();
  }
  return length;
}

SimilarityTransform::SimilarityTransform(double scale, const Quat& rotation, const Vec3& translation)
    : scale_(scale), rotation_(canonical_quaternion(rotation)), translation_(translation) {
  if (!(scale > 0.0)) throw DegenerateInput("similarity scale must be positive");
}

SimilarityTransform SimilarityTransform::inverse() const {
  const Quat inv = rotation_.conjugate();
  return SimilarityTransform(1.0 / scale_, inv, -(inv * translation_) / scale_);
}

SimilarityTransform umeyama_align(std::span<const Vec3> source, std::span<const Vec3> target) {
  if (source.size() != target.size()) {
    throw DegenerateInput("umeyama_align: source and target lengths differ");
  }
  const std::size_t n = source.size();
  if (n < 3) throw DegenerateInput("umeyama_align: need at least 3 point pairs");

  const double inv_n = 1.0 / static_cast<double>(n);
  Vec3 mean_src = Vec3::Zero();
  Vec3 mean_dst = Vec3::Zero();
  for (std::size_t i = 0; i < n; ++i) {
    mean_src += source[i];
    mean_dst += target[i];
  }
  mean_src *= inv_n;
  mean_dst *= inv_n;

  Mat3 cross = Mat3::Zero();
  Mat3 scatter = Mat3::Zero();
  double src_var = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const Vec3 s = source[i] - mean_src;
    const Vec3 d = target[i] - mean_dst;
    cross.noalias() += d * s.transpose();
    scatter.noalias() += s * s.transpose();
    src_var += s.squaredNorm();
  }
  cross *= inv_n;
  scatter *= inv_n;
  src_var *= inv_n;

  // Rank test: a unique rotation needs rank >= 2 in both the source scatter
  // and the cross-covariance.
  const Eigen::Vector3d scatter_sv = Eigen::JacobiSVD<Mat3>(scatter).singularValues();
  if (!(scatter_sv(0) > 0.0) || scatter_sv(1) < kCollinearityTolerance * scatter_sv(0)) {
    throw DegenerateInput("umeyama_align: source points are collinear");
  }

  Eigen::JacobiSVD<Mat3> svd(cross, Eigen::ComputeFullU | Eigen::ComputeFullV);
  const Vec3 sv = svd.singularValues();
  if (!(sv(0) > 0.0) || sv(1) < kCollinearityTolerance * sv(0)) {
    throw DegenerateInput("umeyama_align: cross-covariance rank below 2");
  }

  const Mat3& u = svd.matrixU();
  const Mat3& v = svd.matrixV();
  Vec3 sign = Vec3::Ones();
  if (u.determinant() * v.determinant() < 0.0) sign(2) = -1.0;

  const Mat3 rotation = u * sign.asDiagonal() * v.transpose();
  const double scale = sv.dot(sign) / src_var;
  const Vec3 translation = mean_dst - scale * rotation * mean_src;
  return SimilarityTransform(scale, Quat(rotation), translation);
}

Trajectory apply_transform(const SimilarityTransform& transform, const Trajectory& trajectory) {
  std::vector<Pose> out;
  out.reserve(trajectory.size());
  for (const auto& p : trajectory) {
    out.emplace_back(p.timestamp(), transform.apply(p.translation()),
                     transform.rotation() * p.rotation());
  }
  return Trajectory(std::move(out));
}

}  // namespace rlvo
