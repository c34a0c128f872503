#pragma once

#include <Eigen/Dense>
#include <array>
#include <memory>
#include <vector>

namespace pwan {

// Parametric source-to-reference maps acting on row-vector points:
//   T(y) = y * A + t (+ per-point displacement where applicable).
// Parameters are exposed as one flat vector so optimizers and snapshotting
// stay generic. `rows` passes the original point indices of a mini-batch so
// per-point parameters (the displacement field) can be routed; an empty list
// means the batch is the full set in order.
class TransformModel {
 public:
  virtual ~TransformModel() = default;

  virtual int param_count() const = 0;
  virtual Eigen::VectorXd& params() = 0;
  virtual const Eigen::VectorXd& params() const = 0;

  virtual Eigen::MatrixXd apply(const Eigen::MatrixXd& Y,
                                const std::vector<int>& rows = {}) const = 0;

  // Accumulates sum_j U.row(j) * dT(y_j)/dparams into `grad` (U carries any
  // loss coefficients already).
  virtual void accumulate_param_gradient(const Eigen::MatrixXd& Y,
                                         const Eigen::MatrixXd& U,
                                         const std::vector<int>& rows,
                                         Eigen::VectorXd& grad) const = 0;

  // Dense 3 x param_count Jacobian of T at one point (reference path for
  // gradient tests; training uses accumulate_param_gradient).
  virtual Eigen::MatrixXd jacobian(const Eigen::RowVector3d& y,
                                   int row_index) const = 0;

  virtual std::unique_ptr<TransformModel> clone() const = 0;
};

// Affine-plus-displacement map T(y_j) = y_j * A + t + V_j. Parameter layout:
// A (9, column-major), t (3), V (3r, column-major r x 3). Initialized to the
// identity with zero displacements.
class NonRigidTransform final : public TransformModel {
 public:
  explicit NonRigidTransform(int point_count);

  int point_count() const { return r_; }
  Eigen::Matrix3d linear() const;
  Eigen::RowVector3d translation() const;
  Eigen::MatrixXd displacement() const;  // r x 3
  void set_displacement(const Eigen::MatrixXd& V);

  // Flat-vector span of the displacement block (for the coherence penalty).
  int displacement_offset() const { return 12; }

  int param_count() const override { return 12 + 3 * r_; }
  Eigen::VectorXd& params() override { return theta_; }
  const Eigen::VectorXd& params() const override { return theta_; }
  Eigen::MatrixXd apply(const Eigen::MatrixXd& Y,
                        const std::vector<int>& rows = {}) const override;
  void accumulate_param_gradient(const Eigen::MatrixXd& Y,
                                 const Eigen::MatrixXd& U,
                                 const std::vector<int>& rows,
                                 Eigen::VectorXd& grad) const override;
  Eigen::MatrixXd jacobian(const Eigen::RowVector3d& y,
                           int row_index) const override;
  std::unique_ptr<TransformModel> clone() const override {
    return std::make_unique<NonRigidTransform>(*this);
  }

 private:
  int r_;
  Eigen::VectorXd theta_;
};

// Rigid map T(y) = y * A(q) + t with A a rotation parametrized by an
// UNNORMALIZED quaternion q; normalization happens inside apply and the
// Jacobian (with the corresponding chain rule), so the parameter vector is
// free of constraints. Layout: q (4, scalar-first), t (3).
class RigidTransform final : public TransformModel {
 public:
  RigidTransform();

  Eigen::Matrix3d rotation() const;  // A(q/|q|)
  Eigen::RowVector3d translation() const;

  int param_count() const override { return 7; }
  Eigen::VectorXd& params() override { return theta_; }
  const Eigen::VectorXd& params() const override { return theta_; }
  Eigen::MatrixXd apply(const Eigen::MatrixXd& Y,
                        const std::vector<int>& rows = {}) const override;
  void accumulate_param_gradient(const Eigen::MatrixXd& Y,
                                 const Eigen::MatrixXd& U,
                                 const std::vector<int>& rows,
                                 Eigen::VectorXd& grad) const override;
  Eigen::MatrixXd jacobian(const Eigen::RowVector3d& y,
                           int row_index) const override;
  std::unique_ptr<TransformModel> clone() const override {
    return std::make_unique<RigidTransform>(*this);
  }

 private:
  Eigen::VectorXd theta_;
};

// Frozen identity (used when only the potential is being optimized).
class IdentityTransform final : public TransformModel {
 public:
  int param_count() const override { return 0; }
  Eigen::VectorXd& params() override { return theta_; }
  const Eigen::VectorXd& params() const override { return theta_; }
  Eigen::MatrixXd apply(const Eigen::MatrixXd& Y,
                        const std::vector<int>& rows = {}) const override {
    (void)rows;
    return Y;
  }
  void accumulate_param_gradient(const Eigen::MatrixXd&, const Eigen::MatrixXd&,
                                 const std::vector<int>&,
                                 Eigen::VectorXd&) const override {}
  Eigen::MatrixXd jacobian(const Eigen::RowVector3d&, int) const override {
    return Eigen::MatrixXd::Zero(3, 0);
  }
  std::unique_ptr<TransformModel> clone() const override {
    return std::make_unique<IdentityTransform>(*this);
  }

 private:
  Eigen::VectorXd theta_;
};

// Rotation matrix of a scalar-first unit quaternion, acting on row vectors
// from the right, and its partials with respect to the four raw (pre-
// normalization) quaternion components.
Eigen::Matrix3d quaternion_rotation(const Eigen::Vector4d& q_unnormalized);
std::array<Eigen::Matrix3d, 4> quaternion_rotation_derivatives(
    const Eigen::Vector4d& q_unnormalized);

}  // namespace pwan
