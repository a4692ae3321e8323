#ifndef PREGEN_LOSS_HPP
#define PREGEN_LOSS_HPP

#include "pregen/types.hpp"

#include <cmath>
#include <string>

namespace pregen {

/// S[i][j] = cos(queries.row(i), targets.row(j)).
template <typename Scalar>
Matrix<Scalar> similarity_matrix(const Matrix<Scalar>& queries, const Matrix<Scalar>& targets);

/// Backpropagates d(loss)/dS to the un-normalized query and target rows.
template <typename Scalar>
void similarity_backward(const Matrix<Scalar>& grad_s, const Matrix<Scalar>& queries, const Matrix<Scalar>& targets,
                         Matrix<Scalar>& grad_queries, Matrix<Scalar>& grad_targets);

template <typename Scalar>
struct InfoNceResult {
  Scalar loss = 0;
  Matrix<Scalar> grad;  // d(loss)/dS
};

/// Symmetric InfoNCE over a square similarity matrix: the mean of the
/// query->target (row softmax) and target->query (column softmax) cross
/// entropies, each with the diagonal as the positive.
template <typename Scalar>
InfoNceResult<Scalar> info_nce(const Matrix<Scalar>& s, double temperature);

// ---------------------------------------------------------------------------

namespace detail {

template <typename Scalar>
Vector<Scalar> row_norms(const Matrix<Scalar>& m, const char* side) {
  Vector<Scalar> norms = m.rowwise().norm();
  for (Eigen::Index i = 0; i < norms.size(); ++i) {
    if (!(norms(i) > Scalar(0))) {
      throw Error(std::string("similarity: ") + side + " row " + std::to_string(i) + " has zero norm");
    }
  }
  return norms;
}

}  // namespace detail

template <typename Scalar>
Matrix<Scalar> similarity_matrix(const Matrix<Scalar>& queries, const Matrix<Scalar>& targets) {
  if (queries.cols() != targets.cols()) throw Error("similarity: query and target dimensions differ");
  const Vector<Scalar> qn = detail::row_norms(queries, "query");
  const Vector<Scalar> tn = detail::row_norms(targets, "target");
  const Matrix<Scalar> q = queries.array().colwise() / qn.array();
  const Matrix<Scalar> t = targets.array().colwise() / tn.array();
  return q * t.transpose();
}

template <typename Scalar>
void similarity_backward(const Matrix<Scalar>& grad_s, const Matrix<Scalar>& queries, const Matrix<Scalar>& targets,
                         Matrix<Scalar>& grad_queries, Matrix<Scalar>& grad_targets) {
  const Vector<Scalar> qn = detail::row_norms(queries, "query");
  const Vector<Scalar> tn = detail::row_norms(targets, "target");
  const Matrix<Scalar> q = queries.array().colwise() / qn.array();
  const Matrix<Scalar> t = targets.array().colwise() / tn.array();
  const Matrix<Scalar> dq = grad_s * t;
  const Matrix<Scalar> dt = grad_s.transpose() * q;
  // d(x/|x|) = (I - x^ x^T) / |x|
  const Vector<Scalar> q_dot = dq.cwiseProduct(q).rowwise().sum();
  const Vector<Scalar> t_dot = dt.cwiseProduct(t).rowwise().sum();
  grad_queries = (dq - (q.array().colwise() * q_dot.array()).matrix()).array().colwise() / qn.array();
  grad_targets = (dt - (t.array().colwise() * t_dot.array()).matrix()).array().colwise() / tn.array();
}

template <typename Scalar>
InfoNceResult<Scalar> info_nce(const Matrix<Scalar>& s, double temperature) {
  if (s.rows() != s.cols() || s.rows() < 1) throw Error("info_nce: similarity matrix must be square and non-empty");
  if (!(temperature > 0.0)) throw Error("info_nce: temperature must be > 0");
  if (!s.allFinite()) throw Error("info_nce: non-finite similarity");
  const Eigen::Index batch = s.rows();
  const Scalar inv_t = static_cast<Scalar>(1.0 / temperature);
  const Matrix<Scalar> logits = s * inv_t;

  Matrix<Scalar> row_p(batch, batch), col_p(batch, batch);
  Scalar total = 0;
  for (Eigen::Index i = 0; i < batch; ++i) {
    const Scalar rmax = logits.row(i).maxCoeff();
    const Scalar rlse = rmax + std::log((logits.row(i).array() - rmax).exp().sum());
    row_p.row(i) = (logits.row(i).array() - rlse).exp().matrix();
    const Scalar cmax = logits.col(i).maxCoeff();
    const Scalar clse = cmax + std::log((logits.col(i).array() - cmax).exp().sum());
    col_p.col(i) = (logits.col(i).array() - clse).exp().matrix();
    total += (rlse - logits(i, i)) + (clse - logits(i, i));
  }
  const Scalar denom = Scalar(2) * static_cast<Scalar>(batch);
  InfoNceResult<Scalar> out;
  out.loss = total / denom;
  out.grad = (row_p + col_p - Scalar(2) * Matrix<Scalar>::Identity(batch, batch)) * (inv_t / denom);
  return out;
}

}  // namespace pregen

#endif  // PREGEN_LOSS_HPP
