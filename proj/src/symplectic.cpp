#include "critscat/symplectic.hpp"

#include "critscat/io.hpp"

#include <Eigen/SVD>

#include <algorithm>

namespace critscat {

int SpaceSpec::ambient() const {
  int s = 0;
  for (int k : n) s += 2 * k;
  return s;
}

SpaceSpec SpaceSpec::product(int n, std::vector<int> signs) {
  SpaceSpec s;
  s.n.assign(signs.size(), n);
  s.sign = std::move(signs);
  return s;
}

double symplectic_form(const Vec& u, const Vec& v, const SpaceSpec& space) {
  if (space.n.size() != space.sign.size()) throw DimensionError("space spec: one sign per factor");
  if (u.size() != space.ambient() || v.size() != space.ambient())
    throw DimensionError("symplectic_form: vector dimension " + std::to_string(u.size()) + "/" +
                         std::to_string(v.size()) + " does not match ambient " + std::to_string(space.ambient()));
  double w = 0.0;
  int off = 0;
  for (std::size_t k = 0; k < space.n.size(); ++k) {
    const int m = space.n[k];
    const double part = u.segment(off, m).dot(v.segment(off + m, m)) - u.segment(off + m, m).dot(v.segment(off, m));
    w += space.sign[k] * part;
    off += 2 * m;
  }
  return w;
}

double lagrangian_defect(const TangentFrame& frame) {
  const int amb = frame.space.ambient();
  if (frame.vectors.rows() != amb || 2 * frame.vectors.cols() != amb)
    throw DimensionError("lagrangian_defect needs " + std::to_string(amb / 2) + " vectors in dimension " +
                         std::to_string(amb));
  double worst = 0.0;
  for (int i = 0; i < frame.vectors.cols(); ++i)
    for (int j = i + 1; j < frame.vectors.cols(); ++j) {
      const Vec a = frame.vectors.col(i), b = frame.vectors.col(j);
      const double scale = a.norm() * b.norm();
      if (scale > 0) worst = std::max(worst, std::abs(symplectic_form(a, b, frame.space)) / scale);
    }
  return worst;
}

RankInfo numerical_rank(const Mat& A) {
  RankInfo r;
  if (A.cols() == 0) return r;
  Mat B = A;
  for (int c = 0; c < B.cols(); ++c) {
    const double nc = B.col(c).norm();
    if (nc > 0) B.col(c) /= nc;
  }
  Eigen::JacobiSVD<Mat> svd(B);
  const Vec s = svd.singularValues();
  const double top = s.size() ? s[0] : 0.0;
  for (int i = 0; i < s.size(); ++i) {
    const double rel = top > 0 ? s[i] / top : 0.0;
    r.singular_values.push_back(rel);
    if (rel >= kRankBandLo && rel <= kRankBandHi)
      throw IndeterminateRankError("relative singular value " + io::fmt(rel) + " inside the ambiguous band");
    if (rel > kRankTol) ++r.rank;
  }
  return r;
}

ExcessReport clean_intersection_excess(const TangentFrame& Y, const TangentFrame& Z, double point_tol) {
  if (Y.space.ambient() != Z.space.ambient() || Y.vectors.rows() != Z.vectors.rows() ||
      Y.vectors.rows() != Y.space.ambient())
    throw DimensionError("clean_intersection_excess: frames live in different spaces");
  if (Y.base.size() != Z.base.size() ||
      (Y.base - Z.base).norm() > point_tol * std::max(1.0, Y.base.norm()))
    throw PreconditionError("clean_intersection_excess: base points differ");
  ExcessReport r;
  r.dim_X = Y.space.ambient();
  r.Y = numerical_rank(Y.vectors);
  r.Z = numerical_rank(Z.vectors);
  Mat both(Y.vectors.rows(), Y.vectors.cols() + Z.vectors.cols());
  both << Y.vectors, Z.vectors;
  r.sum = numerical_rank(both);
  r.dim_Y = r.Y.rank;
  r.dim_Z = r.Z.rank;
  r.dim_intersection = r.dim_Y + r.dim_Z - r.sum.rank;
  r.e = r.dim_X + r.dim_intersection - r.dim_Y - r.dim_Z;
  return r;
}

nlohmann::json to_json(const ExcessReport& r) {
  return {{"e", r.e},
          {"dim_X", r.dim_X},
          {"dim_Y", r.dim_Y},
          {"dim_Z", r.dim_Z},
          {"dim_intersection", r.dim_intersection},
          {"singular_values",
           {{"Y", r.Y.singular_values}, {"Z", r.Z.singular_values}, {"Y_plus_Z", r.sum.singular_values}}},
          {"rank_tol", kRankTol},
          {"indeterminate_band", {kRankBandLo, kRankBandHi}}};
}

TangentFrame graph_frame(const PhasePoint& image, const PhasePoint& pre, const Mat& M) {
  const int n = pre.dim();
  if (M.rows() != 2 * n || M.cols() != 2 * n) throw DimensionError("graph_frame: M must be 2n x 2n");
  TangentFrame f;
  f.space = SpaceSpec::product(n, {1, -1});
  f.base.resize(4 * n);
  f.base << image.packed(), pre.packed();
  f.vectors.resize(4 * n, 2 * n);
  f.vectors.topRows(2 * n) = M;
  f.vectors.bottomRows(2 * n).setIdentity();
  return f;
}

TangentFrame product_frame(const TangentFrame& a, const TangentFrame& b) {
  TangentFrame f;
  f.space.n = a.space.n;
  f.space.n.insert(f.space.n.end(), b.space.n.begin(), b.space.n.end());
  f.space.sign = a.space.sign;
  f.space.sign.insert(f.space.sign.end(), b.space.sign.begin(), b.space.sign.end());
  f.base.resize(a.base.size() + b.base.size());
  f.base << a.base, b.base;
  f.vectors = Mat::Zero(a.vectors.rows() + b.vectors.rows(), a.vectors.cols() + b.vectors.cols());
  f.vectors.topLeftCorner(a.vectors.rows(), a.vectors.cols()) = a.vectors;
  f.vectors.bottomRightCorner(b.vectors.rows(), b.vectors.cols()) = b.vectors;
  return f;
}

TangentFrame diagonal_frame(const PhasePoint& r1, const PhasePoint& r2, const PhasePoint& r4) {
  const int n = r1.dim(), m = 2 * n;
  TangentFrame f;
  f.space = SpaceSpec::product(n, {1, -1, 1, -1});
  f.base.resize(4 * m);
  f.base << r1.packed(), r2.packed(), r2.packed(), r4.packed();
  f.vectors = Mat::Zero(4 * m, 3 * m);
  f.vectors.block(0, 0, m, m).setIdentity();
  f.vectors.block(m, m, m, m).setIdentity();
  f.vectors.block(2 * m, m, m, m).setIdentity();
  f.vectors.block(3 * m, 2 * m, m, m).setIdentity();
  return f;
}

TangentFrame manifold_frame(const ManifoldSample& s) {
  if (s.frame.size() == 0) throw PreconditionError("manifold sample carries no frame");
  TangentFrame f;
  f.space = SpaceSpec::single(s.rho.dim());
  f.base = s.rho.packed();
  f.vectors = s.frame;
  return f;
}

TangentFrame flowout_frame(const PotentialModel& model, const PhasePoint& rho, double t, const FlowOptions& opts) {
  const int n = rho.dim(), m = 2 * n;
  const VariationalFlow vf = flow_with_variational(model, rho, t, opts);
  // Tangent space of the energy shell at rho: kernel of dp = (grad V, xi).
  Vec dp(m);
  dp << model.gradient(rho.x), rho.xi;
  if (dp.norm() == 0) throw PreconditionError("flowout_frame: rho is a critical point of p");
  Eigen::JacobiSVD<Mat> svd(dp.transpose(), Eigen::ComputeFullV);
  const Mat K = svd.matrixV().rightCols(m - 1);
  TangentFrame f;
  f.space = SpaceSpec::product(n, {1, -1});
  f.base.resize(2 * m);
  f.base << vf.point.packed(), rho.packed();
  f.vectors = Mat::Zero(2 * m, m);
  f.vectors.topLeftCorner(m, m - 1) = vf.M * K;
  f.vectors.bottomLeftCorner(m, m - 1) = K;
  f.vectors.block(0, m - 1, m, 1) = vector_field(model, vf.point);
  return f;
}

}  // namespace critscat
