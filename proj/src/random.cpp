#include "spe/random.hpp"

namespace spe {

Eigen::MatrixXd RandomStream::normal_matrix(Eigen::Index rows, Eigen::Index cols) {
  Eigen::MatrixXd out(rows, cols);
  double* data = out.data();
  for (Eigen::Index i = 0; i < out.size(); ++i) data[i] = normal_(engine_);
  return out;
}

Eigen::VectorXd RandomStream::normal_vector(Eigen::Index n) {
  Eigen::VectorXd out(n);
  for (Eigen::Index i = 0; i < n; ++i) out[i] = normal_(engine_);
  return out;
}

Eigen::MatrixXd RandomStream::uniform_matrix(Eigen::Index rows, Eigen::Index cols, double lo,
                                             double hi) {
  Eigen::MatrixXd out(rows, cols);
  double* data = out.data();
  for (Eigen::Index i = 0; i < out.size(); ++i) data[i] = uniform(lo, hi);
  return out;
}

}  // namespace spe
