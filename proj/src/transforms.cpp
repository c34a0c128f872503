#include "pwan/transforms.hpp"

#include <cmath>
#include <stdexcept>

namespace pwan {
namespace {

void check_batch(const Eigen::MatrixXd& Y, const std::vector<int>& rows,
                 int point_count) {
  if (Y.cols() != 3) {
    throw std::invalid_argument("transform: expected 3-column point rows");
  }
  if (rows.empty()) {
    if (point_count >= 0 && Y.rows() != point_count) {
      throw std::invalid_argument(
          "transform: full-batch size does not match the displacement field");
    }
    return;
  }
  if (static_cast<int>(rows.size()) != Y.rows()) {
    throw std::invalid_argument("transform: row-index list does not match batch");
  }
  for (int r : rows) {
    if (r < 0 || (point_count >= 0 && r >= point_count)) {
      throw std::invalid_argument("transform: row index out of range");
    }
  }
}

}  // namespace

NonRigidTransform::NonRigidTransform(int point_count) : r_(point_count) {
  if (point_count < 0) {
    throw std::invalid_argument("transform: negative point count");
  }
  theta_ = Eigen::VectorXd::Zero(param_count());
  Eigen::Map<Eigen::Matrix3d>(theta_.data()) = Eigen::Matrix3d::Identity();
}

Eigen::Matrix3d NonRigidTransform::linear() const {
  return Eigen::Map<const Eigen::Matrix3d>(theta_.data());
}

Eigen::RowVector3d NonRigidTransform::translation() const {
  return theta_.segment<3>(9).transpose();
}

Eigen::MatrixXd NonRigidTransform::displacement() const {
  return Eigen::Map<const Eigen::MatrixXd>(theta_.data() + 12, r_, 3);
}

void NonRigidTransform::set_displacement(const Eigen::MatrixXd& V) {
  if (V.rows() != r_ || V.cols() != 3) {
    throw std::invalid_argument("transform: displacement shape mismatch");
  }
  Eigen::Map<Eigen::MatrixXd>(theta_.data() + 12, r_, 3) = V;
}

Eigen::MatrixXd NonRigidTransform::apply(const Eigen::MatrixXd& Y,
                                         const std::vector<int>& rows) const {
  check_batch(Y, rows, r_);
  Eigen::MatrixXd out = Y * linear();
  out.rowwise() += translation();
  Eigen::Map<const Eigen::MatrixXd> V(theta_.data() + 12, r_, 3);
  if (rows.empty()) {
    out += V;
  } else {
    for (Eigen::Index j = 0; j < out.rows(); ++j) {
      out.row(j) += V.row(rows[static_cast<std::size_t>(j)]);
    }
  }
  return out;
}

void NonRigidTransform::accumulate_param_gradient(const Eigen::MatrixXd& Y,
                                                  const Eigen::MatrixXd& U,
                                                  const std::vector<int>& rows,
                                                  Eigen::VectorXd& grad) const {
  check_batch(Y, rows, r_);
  if (U.rows() != Y.rows() || U.cols() != 3) {
    throw std::invalid_argument("transform: gradient batch shape mismatch");
  }
  if (grad.size() != param_count()) {
    throw std::invalid_argument("transform: gradient vector size mismatch");
  }
  Eigen::Map<Eigen::Matrix3d>(grad.data()) += Y.transpose() * U;
  grad.segment<3>(9) += U.colwise().sum().transpose();
  Eigen::Map<Eigen::MatrixXd> gV(grad.data() + 12, r_, 3);
  if (rows.empty()) {
    gV += U;
  } else {
    for (Eigen::Index j = 0; j < U.rows(); ++j) {
      gV.row(rows[static_cast<std::size_t>(j)]) += U.row(j);
    }
  }
}

Eigen::MatrixXd NonRigidTransform::jacobian(const Eigen::RowVector3d& y,
                                            int row_index) const {
  if (row_index < 0 || row_index >= r_) {
    throw std::invalid_argument("transform: row index out of range");
  }
  Eigen::MatrixXd J = Eigen::MatrixXd::Zero(3, param_count());
  // T_b = sum_a y_a A(a,b) + t_b + V(row,b); A is column-major in theta.
  for (int b = 0; b < 3; ++b) {
    for (int a = 0; a < 3; ++a) {
      J(b, 3 * b + a) = y(a);
    }
    J(b, 9 + b) = 1.0;
    J(b, 12 + b * r_ + row_index) = 1.0;
  }
  return J;
}

RigidTransform::RigidTransform() {
  theta_ = Eigen::VectorXd::Zero(7);
  theta_(0) = 1.0;  // identity quaternion (1, 0, 0, 0)
}

Eigen::Matrix3d RigidTransform::rotation() const {
  return quaternion_rotation(theta_.head<4>());
}

Eigen::RowVector3d RigidTransform::translation() const {
  return theta_.segment<3>(4).transpose();
}

Eigen::MatrixXd RigidTransform::apply(const Eigen::MatrixXd& Y,
                                      const std::vector<int>& rows) const {
  check_batch(Y, rows, -1);
  Eigen::MatrixXd out = Y * rotation();
  out.rowwise() += translation();
  return out;
}

void RigidTransform::accumulate_param_gradient(const Eigen::MatrixXd& Y,
                                               const Eigen::MatrixXd& U,
                                               const std::vector<int>& rows,
                                               Eigen::VectorXd& grad) const {
  check_batch(Y, rows, -1);
  if (U.rows() != Y.rows() || U.cols() != 3) {
    throw std::invalid_argument("transform: gradient batch shape mismatch");
  }
  if (grad.size() != 7) {
    throw std::invalid_argument("transform: gradient vector size mismatch");
  }
  const Eigen::Matrix3d GA = Y.transpose() * U;  // d(loss)/dA
  const auto dA = quaternion_rotation_derivatives(theta_.head<4>());
  for (int k = 0; k < 4; ++k) {
    grad(k) += GA.cwiseProduct(dA[static_cast<std::size_t>(k)]).sum();
  }
  grad.segment<3>(4) += U.colwise().sum().transpose();
}

Eigen::MatrixXd RigidTransform::jacobian(const Eigen::RowVector3d& y,
                                         int /*row_index*/) const {
  Eigen::MatrixXd J = Eigen::MatrixXd::Zero(3, 7);
  const auto dA = quaternion_rotation_derivatives(theta_.head<4>());
  for (int k = 0; k < 4; ++k) {
    J.col(k) = (y * dA[static_cast<std::size_t>(k)]).transpose();
  }
  J.block<3, 3>(0, 4) = Eigen::Matrix3d::Identity();
  return J;
}

Eigen::Matrix3d quaternion_rotation(const Eigen::Vector4d& q_unnormalized) {
  const double norm = q_unnormalized.norm();
  if (!(norm > 0.0) || !std::isfinite(norm)) {
    throw std::invalid_argument("transform: quaternion has no direction");
  }
  const Eigen::Vector4d q = q_unnormalized / norm;
  const double w = q(0), x = q(1), y = q(2), z = q(3);
  Eigen::Matrix3d R;
  R << 1.0 - 2.0 * (y * y + z * z), 2.0 * (x * y - w * z), 2.0 * (x * z + w * y),
      2.0 * (x * y + w * z), 1.0 - 2.0 * (x * x + z * z), 2.0 * (y * z - w * x),
      2.0 * (x * z - w * y), 2.0 * (y * z + w * x), 1.0 - 2.0 * (x * x + y * y);
  return R;
}

std::array<Eigen::Matrix3d, 4> quaternion_rotation_derivatives(
    const Eigen::Vector4d& q_unnormalized) {
  const double norm = q_unnormalized.norm();
  if (!(norm > 0.0) || !std::isfinite(norm)) {
    throw std::invalid_argument("transform: quaternion has no direction");
  }
  const Eigen::Vector4d q = q_unnormalized / norm;
  const double w = q(0), x = q(1), y = q(2), z = q(3);

  // Partials with respect to the normalized components.
  std::array<Eigen::Matrix3d, 4> dUnit;
  dUnit[0] << 0, -z, y,
              z, 0, -x,
              -y, x, 0;
  dUnit[1] << 0, y, z,
              y, -2 * x, -w,
              z, w, -2 * x;
  dUnit[2] << -2 * y, x, w,
              x, 0, z,
              -w, z, -2 * y;
  dUnit[3] << -2 * z, -w, x,
              w, -2 * z, y,
              x, y, 0;
  for (auto& m : dUnit) m *= 2.0;

  // Chain through normalization: d(q_m)/d(raw_k) = (delta_mk - q_m q_k)/norm.
  std::array<Eigen::Matrix3d, 4> dRaw;
  for (int k = 0; k < 4; ++k) {
    Eigen::Matrix3d acc = Eigen::Matrix3d::Zero();
    for (int m = 0; m < 4; ++m) {
      const double coeff = ((m == k ? 1.0 : 0.0) - q(m) * q(k)) / norm;
      acc += coeff * dUnit[static_cast<std::size_t>(m)];
    }
    dRaw[static_cast<std::size_t>(k)] = acc;
  }
  return dRaw;
}

}  // namespace pwan
