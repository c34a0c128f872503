#pragma once

// Independent exact reference solvers for the two partial-matching LPs, used
// only by tests. Everything here is deliberately different from the
// production path (src/transport.cpp): the production solver runs a
// network simplex on a balanced dummy-row/column reduction in doubles; these
// routines solve the raw inequality LP
//
//   partial mass        min sum d_ij p_ij   s.t. row sums <= a, col sums <= b,
//                                                sum p >= m, p >= 0
//   distance threshold  min sum (d_ij - h) p_ij  s.t. row sums <= a,
//                                                col sums <= b, p >= 0
//
// in exact rational arithmetic (inputs converted bit-exactly from double), by
// two unrelated methods:
//
//   simplex_*    dense two-phase tableau simplex with Bland's rule; exact and
//                practical up to roughly 8x8 instances.
//   enumerate_*  brute-force vertex enumeration over all active-set systems
//                (every subset of variables allowed nonzero paired with every
//                equally sized subset of tight constraints); exponential, for
//                instances of at most ~3x3.
//
// The returned rationals are the exact optima of the given double data, so
// comparisons against the production objective need only floating-point
// round-off slack.

#include <Eigen/Dense>
#include <boost/multiprecision/cpp_int.hpp>

namespace exact_lp {

using Rational = boost::multiprecision::cpp_rational;

double to_double(const Rational& q);

// Exact optimum of the partial-mass problem. Throws std::invalid_argument
// when m exceeds min(sum a, sum b) (infeasible).
Rational simplex_partial_mass(const Eigen::MatrixXd& dist,
                              const Eigen::VectorXd& a,
                              const Eigen::VectorXd& b, double m);

// Exact optimum of the distance-threshold problem (always feasible).
Rational simplex_distance_threshold(const Eigen::MatrixXd& dist,
                                    const Eigen::VectorXd& a,
                                    const Eigen::VectorXd& b, double h);

// Same optima by exhaustive vertex enumeration.
Rational enumerate_partial_mass(const Eigen::MatrixXd& dist,
                                const Eigen::VectorXd& a,
                                const Eigen::VectorXd& b, double m);

Rational enumerate_distance_threshold(const Eigen::MatrixXd& dist,
                                      const Eigen::VectorXd& a,
                                      const Eigen::VectorXd& b, double h);

}  // namespace exact_lp
