#pragma once

#include <Eigen/Core>
#include <cmath>
#include <span>
#include <vector>

#include "roadloc/errors.hpp"

namespace roadloc::geometry {

inline constexpr double kPi = 3.14159265358979323846;
inline constexpr double kDefaultEpsH = 1e-12;      // dehomogenization cutoff
inline constexpr double kDefaultEpsDet = 1e-10;    // homography singularity cutoff
inline constexpr double kDefaultEpsAngle = 1e-8;   // duplicate-line cutoff, radians

// Reduce an angle to [0, pi). Undirected line directions live on this range.
double wrap_pi(double angle);

// Undirected direction of a line in the plane.
class Direction {
 public:
  Direction() = default;
  explicit Direction(double radians) : angle_(wrap_pi(radians)) {}
  double radians() const { return angle_; }

 private:
  double angle_ = 0.0;
};

// Undirected angle between two directions, in [0, pi/2].
double angle_between(Direction a, Direction b);

class HomogPoint {
 public:
  HomogPoint() : v_(0, 0, 1) {}
  HomogPoint(double x, double y) : v_(x, y, 1) {}
  explicit HomogPoint(const Eigen::Vector3d& v);  // throws Error on ~zero vector

  const Eigen::Vector3d& vec() const { return v_; }
  bool at_infinity(double eps_h = kDefaultEpsH) const;
  Eigen::Vector2d dehom(double eps_h = kDefaultEpsH) const;  // throws PointAtInfinity

 private:
  Eigen::Vector3d v_;
};

// Line a*x + b*y + c = 0, stored with a^2 + b^2 = 1 and the first nonzero of
// (a, b) positive so equal lines compare equal.
class HomogLine {
 public:
  HomogLine() : v_(0, 1, 0) {}
  HomogLine(double a, double b, double c) : HomogLine(Eigen::Vector3d(a, b, c)) {}
  explicit HomogLine(const Eigen::Vector3d& coeffs);  // throws LineAtInfinity

  static HomogLine through_point_at_angle(const Eigen::Vector2d& p, double angle);

  const Eigen::Vector3d& coeffs() const { return v_; }
  double a() const { return v_.x(); }
  double b() const { return v_.y(); }
  double c() const { return v_.z(); }

  Direction direction() const { return Direction(std::atan2(-v_.x(), v_.y())); }
  // Signed perpendicular distance; |.| is the Euclidean distance to the line.
  double signed_distance(const Eigen::Vector2d& p) const {
    return v_.x() * p.x() + v_.y() * p.y() + v_.z();
  }
  double distance(const HomogPoint& p, double eps_h = kDefaultEpsH) const {
    return std::abs(signed_distance(p.dehom(eps_h)));
  }

 private:
  Eigen::Vector3d v_;
};

// Invertible plane projective transform, Frobenius-normalized with the
// largest-magnitude entry positive.
class Homography {
 public:
  Homography() : m_(Eigen::Matrix3d::Identity() / std::sqrt(3.0)) {}
  explicit Homography(const Eigen::Matrix3d& m, double eps_det = kDefaultEpsDet);

  static Homography identity() { return Homography(); }
  static Homography translation(double dx, double dy);

  const Eigen::Matrix3d& matrix() const { return m_; }
  Homography inverse() const;
  Homography operator*(const Homography& rhs) const { return Homography(m_ * rhs.m_); }

  HomogPoint apply(const HomogPoint& p) const { return HomogPoint(Eigen::Vector3d(m_ * p.vec())); }
  Eigen::Vector2d apply(const Eigen::Vector2d& p, double eps_h = kDefaultEpsH) const {
    return apply(HomogPoint(p.x(), p.y())).dehom(eps_h);
  }

 private:
  Eigen::Matrix3d m_;
};

// Join of two points. Throws CoincidentPoints when p and q are projectively equal.
HomogLine line_through_points(const HomogPoint& p, const HomogPoint& q, double tol = 1e-12);

// Least-squares meet of n >= 2 lines: the unit vector x minimizing
// sum (l_i^T x)^2, i.e. the smallest right singular vector of the stacked
// line matrix. Throws DegeneratePencil when the stack has rank < 2.
HomogPoint meet_lines_lsq(std::span<const HomogLine> lines);

// Image of a line: l' = H^{-T} l.
HomogLine transform_line(const Homography& h, const HomogLine& l);

// Cross ratio of four concurrent lines given by their directions, taken in
// argument order: (sin t13 * sin t24) / (sin t14 * sin t23) with t_ij the
// directed angle from line i to line j. Throws DuplicateLines.
double cross_ratio_directions(double a1, double a2, double a3, double a4,
                              double eps_angle = kDefaultEpsAngle);

// Same, validating that all four lines pass through `vertex` (NotConcurrent
// otherwise). `concurrency_tol` is an absolute point-line distance.
double cross_ratio_pencil(const HomogPoint& vertex, const HomogLine& l1,
                          const HomogLine& l2, const HomogLine& l3, const HomogLine& l4,
                          double concurrency_tol = 1e-6,
                          double eps_angle = kDefaultEpsAngle);

struct LinePair {
  HomogLine source;
  HomogLine target;
};

struct HomographyFromLinesOptions {
  bool refine = false;              // iterative refinement after the linear solve
  int max_refine_iterations = 40;
  double degenerate_sv_ratio = 0.1; // smallest/second-smallest singular value
  double eps_det = kDefaultEpsDet;
};

// Estimate H with target = H^{-T} * source for every pair, via a normalized
// direct linear transform on the line coefficients. Throws InsufficientLines
// (< 4 pairs) or DegenerateConfiguration (rank-deficient system).
Homography homography_from_lines(std::span<const LinePair> pairs,
                                 const HomographyFromLinesOptions& opts = {});

}  // namespace roadloc::geometry
