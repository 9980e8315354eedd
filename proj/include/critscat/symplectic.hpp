#pragma once

// Linear symplectic geometry on products of cotangent spaces: the form,
// Lagrangian defects and the excess of clean intersections, all computed
// from sampled tangent frames.

#include "critscat/manifolds.hpp"

namespace critscat {

/// Product T*R^{n_1} x ... x T*R^{n_k} with the form sum_k s_k (dxi_k ^ dx_k),
/// s_k = +-1. Vectors are laid out factor by factor as (x_k, xi_k).
struct SpaceSpec {
  std::vector<int> n;
  std::vector<int> sign;

  int ambient() const;
  static SpaceSpec single(int n) { return {{n}, {1}}; }
  /// k copies of T*R^n with the given signs.
  static SpaceSpec product(int n, std::vector<int> signs);
};

struct TangentFrame {
  Vec base;      // point of the ambient space
  Mat vectors;   // ambient x k, one tangent vector per column
  SpaceSpec space;
};

/// omega(u, v) = sum_k s_k (<x_u, xi_v> - <xi_u, x_v>), so that
/// omega(d/dx1, d/dxi1) = 1 in a positive factor.
double symplectic_form(const Vec& u, const Vec& v, const SpaceSpec& space);

/// max |omega(u_i, u_j)| / (|u_i| |u_j|) over pairs. Requires exactly half
/// as many vectors as the ambient dimension.
double lagrangian_defect(const TangentFrame& frame);

inline constexpr double kRankTol = 1e-8;
inline constexpr double kRankBandLo = 1e-9;
inline constexpr double kRankBandHi = 1e-7;

struct RankInfo {
  int rank = 0;
  std::vector<double> singular_values;  // relative to the largest
};

/// Numerical rank of the column-normalized matrix; throws
/// IndeterminateRankError when a relative singular value falls in the
/// ambiguous band.
RankInfo numerical_rank(const Mat& A);

struct ExcessReport {
  int e = 0;
  int dim_X = 0, dim_Y = 0, dim_Z = 0, dim_intersection = 0;
  RankInfo Y, Z, sum;
};

/// e = dim X + dim(T Y cap T Z) - dim Y - dim Z at a common base point, with
/// dim(T Y cap T Z) = dim Y + dim Z - rank[Y Z].
ExcessReport clean_intersection_excess(const TangentFrame& Y, const TangentFrame& Z, double point_tol = 1e-8);

nlohmann::json to_json(const ExcessReport& r);

// Frame builders for the composition configurations.

/// Graph {(M w, w)} of a linear symplectic map at (image, pre), in
/// T*R^n x T*R^n with signs (+, -).
TangentFrame graph_frame(const PhasePoint& image, const PhasePoint& pre, const Mat& M);

/// Direct product of frames (block-diagonal vectors, concatenated spaces).
TangentFrame product_frame(const TangentFrame& a, const TangentFrame& b);

/// T*R^n x diag(T*R^n) x T*R^n at (r1, r2, r2, r4), signs (+, -, +, -).
TangentFrame diagonal_frame(const PhasePoint& r1, const PhasePoint& r2, const PhasePoint& r4);

/// Tangent frame of a sampled manifold point (frame columns of the sample).
TangentFrame manifold_frame(const ManifoldSample& s);

/// Energy-shell flowout Lambda(E) = {(exp(t H_p) rho, rho) : p(rho) = E} at
/// the pair (exp(t H_p) rho, rho), signs (+, -). Dimension 2n.
TangentFrame flowout_frame(const PotentialModel& model, const PhasePoint& rho, double t,
                           const FlowOptions& opts = {});

}  // namespace critscat
