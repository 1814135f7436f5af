#include <Eigen/Dense>
#include <Eigen/SVD>

#include "plcgrid/embed.hpp"
#include "plcgrid/error.hpp"

namespace plcgrid::embed {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

PcaResult pca(const Matrix& x, std::size_t k) {
  const std::size_t n = x.rows;
  const std::size_t d = x.cols;
  if (k < 1 || n < k) throw InvalidArgument("pca requires n >= k >= 1");
  if (k > std::min(n, d)) throw InvalidArgument("pca: k exceeds min(n, d)");

  Eigen::Map<const RowMatrix> xm(x.data.data(), static_cast<Eigen::Index>(n),
                                 static_cast<Eigen::Index>(d));
  const Eigen::RowVectorXd mean = xm.colwise().mean();
  const RowMatrix centered = xm.rowwise() - mean;
  const double denom = n > 1 ? static_cast<double>(n - 1) : 1.0;

  Eigen::BDCSVD<Eigen::MatrixXd> svd(centered, Eigen::ComputeThinV);
  const auto& s = svd.singularValues();
  Eigen::MatrixXd v = svd.matrixV();

  PcaResult r;
  r.mean.assign(mean.data(), mean.data() + d);
  r.total_variance = centered.squaredNorm() / denom;
  r.components = Matrix(k, d);
  r.explained_variance.resize(k);
  for (std::size_t c = 0; c < k; ++c) {
    auto col = v.col(static_cast<Eigen::Index>(c));
    // Sign convention: the largest-magnitude loading is positive.
    Eigen::Index arg = 0;
    col.cwiseAbs().maxCoeff(&arg);
    if (col(arg) < 0) col = -col;
    for (std::size_t j = 0; j < d; ++j) r.components(c, j) = col(static_cast<Eigen::Index>(j));
    const double sv = s(static_cast<Eigen::Index>(c));
    r.explained_variance[c] = sv * sv / denom;
  }
  Eigen::Map<const RowMatrix> comp(r.components.data.data(), static_cast<Eigen::Index>(k),
                                   static_cast<Eigen::Index>(d));
  const RowMatrix proj = centered * comp.transpose();
  r.projected = Matrix(n, k);
  std::copy(proj.data(), proj.data() + proj.size(), r.projected.data.begin());
  return r;
}

}  // namespace plcgrid::embed
