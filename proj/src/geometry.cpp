#include "roadloc/geometry.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>

namespace roadloc::geometry {

double wrap_pi(double angle) {
  double a = std::fmod(angle, kPi);
  if (a < 0) a += kPi;
  if (a >= kPi) a = 0.0;  // fmod rounding can land exactly on pi
  return a;
}

double angle_between(Direction a, Direction b) {
  const double d = std::abs(a.radians() - b.radians());
  return std::min(d, kPi - d);
}

HomogPoint::HomogPoint(const Eigen::Vector3d& v) : v_(v) {
  if (!(v_.norm() > 0.0) || !v_.allFinite()) throw Error("homogeneous point must be a finite nonzero vector");
}

bool HomogPoint::at_infinity(double eps_h) const {
  return std::abs(v_.z()) <= eps_h * v_.norm();
}

Eigen::Vector2d HomogPoint::dehom(double eps_h) const {
  if (at_infinity(eps_h)) throw PointAtInfinity();
  return v_.head<2>() / v_.z();
}

HomogLine::HomogLine(const Eigen::Vector3d& coeffs) : v_(coeffs) {
  const double n = std::hypot(v_.x(), v_.y());
  if (!(n > 0.0) || !v_.allFinite()) throw LineAtInfinity();
  v_ /= n;
  // canonical sign: first nonzero of (a, b) positive
  if (v_.x() < 0.0 || (v_.x() == 0.0 && v_.y() < 0.0)) v_ = -v_;
}

HomogLine HomogLine::through_point_at_angle(const Eigen::Vector2d& p, double angle) {
  // direction (cos, sin) -> normal (-sin, cos)
  const double a = -std::sin(angle);
  const double b = std::cos(angle);
  return HomogLine(a, b, -(a * p.x() + b * p.y()));
}

Homography::Homography(const Eigen::Matrix3d& m, double eps_det) : m_(m) {
  if (!m_.allFinite()) throw SingularHomography("homography has non-finite entries");
  const double norm = m_.norm();
  if (!(norm > 0.0)) throw SingularHomography("homography is the zero matrix");
  m_ /= norm;
  // The determinant is translation-invariant but the Frobenius normalization
  // is not, so gauge the threshold by the linear block. A fixed cutoff on the
  // normalized determinant would reject valid large-translation transforms.
  const double linear_scale =
      std::max(m_.topLeftCorner<2, 2>().norm() / std::sqrt(2.0), 1e-300);
  if (std::abs(m_.determinant()) <= eps_det * linear_scale * linear_scale * linear_scale)
    throw SingularHomography();
  // canonical sign: largest-magnitude entry positive (first in row-major order)
  int best_r = 0, best_c = 0;
  double best = -1.0;
  for (int r = 0; r < 3; ++r)
    for (int c = 0; c < 3; ++c)
      if (std::abs(m_(r, c)) > best) {
        best = std::abs(m_(r, c));
        best_r = r;
        best_c = c;
      }
  if (m_(best_r, best_c) < 0.0) m_ = -m_;
}

Homography Homography::translation(double dx, double dy) {
  Eigen::Matrix3d m = Eigen::Matrix3d::Identity();
  m(0, 2) = dx;
  m(1, 2) = dy;
  return Homography(m);
}

Homography Homography::inverse() const {
  return Homography(m_.inverse().eval());
}

HomogLine line_through_points(const HomogPoint& p, const HomogPoint& q, double tol) {
  const Eigen::Vector3d cross = p.vec().cross(q.vec());
  if (cross.norm() <= tol * p.vec().norm() * q.vec().norm()) throw CoincidentPoints();
  return HomogLine(cross);
}

HomogPoint meet_lines_lsq(std::span<const HomogLine> lines) {
  if (lines.size() < 2) throw DegeneratePencil("need at least 2 lines");
  Eigen::MatrixXd stack(static_cast<Eigen::Index>(lines.size()), 3);
  for (Eigen::Index i = 0; i < stack.rows(); ++i)
    stack.row(i) = lines[static_cast<std::size_t>(i)].coeffs().transpose();
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(stack, Eigen::ComputeFullV);
  const auto& sv = svd.singularValues();
  if (sv(1) <= 1e-12 * sv(0)) throw DegeneratePencil();
  return HomogPoint(Eigen::Vector3d(svd.matrixV().col(2)));
}

HomogLine transform_line(const Homography& h, const HomogLine& l) {
  const Eigen::Matrix3d hinv = h.inverse().matrix();
  return HomogLine(Eigen::Vector3d(hinv.transpose() * l.coeffs()));
}

double cross_ratio_directions(double a1, double a2, double a3, double a4,
                              double eps_angle) {
  const double angles[4] = {a1, a2, a3, a4};
  for (int i = 0; i < 4; ++i)
    for (int j = i + 1; j < 4; ++j)
      if (angle_between(Direction(angles[i]), Direction(angles[j])) < eps_angle)
        throw DuplicateLines();
  const double s13 = std::sin(a3 - a1);
  const double s24 = std::sin(a4 - a2);
  const double s14 = std::sin(a4 - a1);
  const double s23 = std::sin(a3 - a2);
  return (s13 * s24) / (s14 * s23);
}

double cross_ratio_pencil(const HomogPoint& vertex, const HomogLine& l1,
                          const HomogLine& l2, const HomogLine& l3, const HomogLine& l4,
                          double concurrency_tol, double eps_angle) {
  const Eigen::Vector2d v = vertex.dehom();
  for (const HomogLine* l : {&l1, &l2, &l3, &l4})
    if (std::abs(l->signed_distance(v)) > concurrency_tol) throw NotConcurrent();
  return cross_ratio_directions(l1.direction().radians(), l2.direction().radians(),
                                l3.direction().radians(), l4.direction().radians(),
                                eps_angle);
}

namespace {

// Similarity that centers the lines' closest points to the origin and scales
// their spread to sqrt(2). Conditions the DLT system.
Eigen::Matrix3d line_conditioner(std::span<const LinePair> pairs, bool source) {
  Eigen::Vector2d mean(0, 0);
  for (const auto& pr : pairs) {
    const auto& l = source ? pr.source : pr.target;
    mean += -l.c() * Eigen::Vector2d(l.a(), l.b());
  }
  mean /= static_cast<double>(pairs.size());
  double spread = 0.0;
  for (const auto& pr : pairs) {
    const auto& l = source ? pr.source : pr.target;
    spread += (-l.c() * Eigen::Vector2d(l.a(), l.b()) - mean).norm();
  }
  spread /= static_cast<double>(pairs.size());
  const double s = spread > 1e-12 ? std::sqrt(2.0) / spread : 1.0;
  Eigen::Matrix3d t;
  t << s, 0, -s * mean.x(), 0, s, -s * mean.y(), 0, 0, 1;
  return t;
}

Eigen::Vector3d condition_line(const Eigen::Matrix3d& inv_transpose, const HomogLine& l) {
  Eigen::Vector3d v = inv_transpose * l.coeffs();
  return v / v.norm();
}

double line_pair_residual(const Eigen::Matrix3d& h_inv_t, const LinePair& pr) {
  Eigen::Vector3d mapped = h_inv_t * pr.source.coeffs();
  mapped /= mapped.norm();
  Eigen::Vector3d target = pr.target.coeffs();
  target /= target.norm();
  return mapped.cross(target).squaredNorm();
}

// Damped Gauss-Newton on the 9 entries of H, minimizing the cross-product
// residuals ||unit(H^{-T} l) x unit(l')||^2 over all pairs.
Eigen::Matrix3d refine_homography(Eigen::Matrix3d h, std::span<const LinePair> pairs,
                                  int max_iterations) {
  const auto total = [&](const Eigen::Matrix3d& m) {
    const Eigen::Matrix3d mit = m.inverse().transpose();
    double sum = 0.0;
    for (const auto& pr : pairs) sum += line_pair_residual(mit, pr);
    return sum;
  };
  double lambda = 1e-6;
  double cost = total(h);
  for (int iter = 0; iter < max_iterations; ++iter) {
    // numeric Jacobian of the stacked residual vector
    const Eigen::Index m = static_cast<Eigen::Index>(pairs.size());
    Eigen::VectorXd r0(m);
    {
      const Eigen::Matrix3d mit = h.inverse().transpose();
      for (Eigen::Index i = 0; i < m; ++i)
        r0(i) = std::sqrt(line_pair_residual(mit, pairs[static_cast<std::size_t>(i)]));
    }
    Eigen::MatrixXd jac(m, 9);
    const double step = 1e-7;
    for (int p = 0; p < 9; ++p) {
      Eigen::Matrix3d hp = h;
      hp(p / 3, p % 3) += step;
      const Eigen::Matrix3d mit = hp.inverse().transpose();
      for (Eigen::Index i = 0; i < m; ++i) {
        const double r = std::sqrt(line_pair_residual(mit, pairs[static_cast<std::size_t>(i)]));
        jac(i, p) = (r - r0(i)) / step;
      }
    }
    const Eigen::MatrixXd jtj = jac.transpose() * jac;
    const Eigen::VectorXd jtr = jac.transpose() * r0;
    const Eigen::VectorXd delta =
        (jtj + lambda * Eigen::MatrixXd::Identity(9, 9)).ldlt().solve(-jtr);
    Eigen::Matrix3d trial = h;
    for (int p = 0; p < 9; ++p) trial(p / 3, p % 3) += delta(p);
    trial /= trial.norm();
    const double trial_cost = total(trial);
    if (trial_cost < cost) {
      h = trial;
      cost = trial_cost;
      lambda = std::max(lambda * 0.5, 1e-12);
      if (cost < 1e-30) break;
    } else {
      lambda *= 10.0;
      if (lambda > 1e8) break;
    }
  }
  return h;
}

}  // namespace

Homography homography_from_lines(std::span<const LinePair> pairs,
                                 const HomographyFromLinesOptions& opts) {
  if (pairs.size() < 4) throw InsufficientLines();

  const Eigen::Matrix3d s = line_conditioner(pairs, true);
  const Eigen::Matrix3d t = line_conditioner(pairs, false);
  const Eigen::Matrix3d s_it = s.inverse().transpose();
  const Eigen::Matrix3d t_it = t.inverse().transpose();

  // target = H^{-T} source  <=>  source = G * target with G = (S H^{-1} T^{-1})^T
  // in the conditioned frames; each pair contributes source x (G target) = 0.
  const Eigen::Index rows = static_cast<Eigen::Index>(pairs.size()) * 3;
  Eigen::MatrixXd a = Eigen::MatrixXd::Zero(rows, 9);
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    const Eigen::Vector3d ls = condition_line(s_it, pairs[i].source);
    const Eigen::Vector3d lt = condition_line(t_it, pairs[i].target);
    Eigen::Matrix3d skew;
    skew << 0, -ls.z(), ls.y(), ls.z(), 0, -ls.x(), -ls.y(), ls.x(), 0;
    for (int r = 0; r < 3; ++r)
      for (int m = 0; m < 3; ++m)
        for (int j = 0; j < 3; ++j)
          a(static_cast<Eigen::Index>(i) * 3 + r, m * 3 + j) += skew(r, m) * lt(j);
  }

  Eigen::JacobiSVD<Eigen::MatrixXd> svd(a, Eigen::ComputeFullV);
  const auto& sv = svd.singularValues();
  const double second_smallest = sv(7);
  if (!(second_smallest > 0.0) || sv(8) / second_smallest > opts.degenerate_sv_ratio)
    throw DegenerateConfiguration();

  Eigen::Matrix3d g;
  const auto v = svd.matrixV().col(8);
  for (int p = 0; p < 9; ++p) g(p / 3, p % 3) = v(p);

  // undo the conditioning: l_s = G l_t with l_s = S^{-T} l, l_t = T^{-T} l'
  // gives l = (S^T G T^{-T}) l', so H^T = S^T G T^{-T}.
  const Eigen::Matrix3d ht = s.transpose() * g * t.inverse().transpose();
  Eigen::Matrix3d h = ht.transpose();

  if (opts.refine) h = refine_homography(h / h.norm(), pairs, opts.max_refine_iterations);
  return Homography(h, opts.eps_det);
}

}  // namespace roadloc::geometry
