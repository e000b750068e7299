#pragma once

#include <Eigen/Core>
#include <Eigen/Geometry>

#include <cstddef>
#include <span>
#include <vector>

namespace rlvo {

using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;
using Quat = Eigen::Quaterniond;

// Unit quaternion with w >= 0. Every Pose and SimilarityTransform stores its
// rotation in this form.
Quat canonical_quaternion(const Quat& q);

Quat axis_angle_quaternion(const Vec3& axis, double angle);

// Quaternion for the rotation vector `omega` (axis * angle).
Quat rotation_vector_quaternion(const Vec3& omega);

// Timestamped rigid transform (camera-to-world).
class Pose {
 public:
  Pose() = default;
  Pose(double timestamp, const Vec3& translation, const Quat& rotation = Quat::Identity());

  static Pose identity(double timestamp = 0.0) { return Pose(timestamp, Vec3::Zero()); }

  // Restores a pose whose quaternion is already canonical (e.g. read back from
  // a state file) without renormalizing, so the round trip is bit-exact.
  static Pose from_canonical(double timestamp, const Vec3& translation, const Quat& rotation);

  double timestamp() const { return timestamp_; }
  const Vec3& translation() const { return translation_; }
  const Quat& rotation() const { return rotation_; }
  Mat3 rotation_matrix() const { return rotation_.toRotationMatrix(); }

  Pose with_timestamp(double t) const;

  Vec3 transform_point(const Vec3& p) const { return rotation_ * p + translation_; }

 private:
  double timestamp_ = 0.0;
  Vec3 translation_ = Vec3::Zero();
  Quat rotation_ = Quat::Identity();
};

// R_a R_b, R_a t_b + t_a; timestamp from b.
Pose compose(const Pose& a, const Pose& b);
Pose inverse(const Pose& p);
// b expressed in the frame of a.
Pose relative(const Pose& a, const Pose& b);
// Geodesic rotation angle in [0, pi].
double rotation_angle(const Pose& p);
double rotation_angle(const Quat& q);

// Ordered poses with strictly increasing timestamps.
class Trajectory {
 public:
  Trajectory() = default;
  explicit Trajectory(std::vector<Pose> poses);

  void push_back(const Pose& pose);

  std::size_t size() const { return poses_.size(); }
  bool empty() const { return poses_.empty(); }
  const Pose& operator[](std::size_t i) const { return poses_[i]; }
  const Pose& front() const { return poses_.front(); }
  const Pose& back() const { return poses_.back(); }
  auto begin() const { return poses_.begin(); }
  auto end() const { return poses_.end(); }
  const std::vector<Pose>& poses() const { return poses_; }

  std::vector<Vec3> positions() const;
  // Sum of distances between consecutive positions.
  double path_length() const;

 private:
  std::vector<Pose> poses_;
};

// x -> scale * R x + t
class SimilarityTransform {
 public:
  SimilarityTransform() = default;
  SimilarityTransform(double scale, const Quat& rotation, const Vec3& translation);

  static SimilarityTransform identity() { return {}; }

  double scale() const { return scale_; }
  const Quat& rotation() const { return rotation_; }
  const Vec3& translation() const { return translation_; }

  Vec3 apply(const Vec3& p) const { return scale_ * (rotation_ * p) + translation_; }
  SimilarityTransform inverse() const;

 private:
  double scale_ = 1.0;
  Quat rotation_ = Quat::Identity();
  Vec3 translation_ = Vec3::Zero();
};

// Relative tolerance of the rank test in umeyama_align.
inline constexpr double kCollinearityTolerance = 1e-9;

// Least-squares similarity (s, R, t) minimizing sum |target_i - (s R source_i + t)|^2,
// closed form via SVD of the cross-covariance with the reflection correction.
// Throws DegenerateInput for fewer than 3 pairs, mismatched lengths, or
// (near-)collinear point sets.
SimilarityTransform umeyama_align(std::span<const Vec3> source, std::span<const Vec3> target);

Trajectory apply_transform(const SimilarityTransform& transform, const Trajectory& trajectory);

}  // namespace rlvo
