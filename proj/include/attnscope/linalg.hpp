#pragma once

#include <Eigen/Dense>

namespace attnscope {

// Representations are row vectors, matching the x W convention of the
// attention equations: a token is a 1 x d row, a sequence is n x d.
using Matrix = Eigen::MatrixXd;
using RowVector = Eigen::RowVectorXd;

}  // namespace attnscope
