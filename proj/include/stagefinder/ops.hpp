// Licensed under the Apache License, Version 2.0 (the "License"); you
// may not use this file except in compliance with the License.  You
// may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or
// implied.  See the License for the specific language governing
// permissions and limitations under the License.

// Small dense kernels shared by the encoder, estimator and losses. All of them
// take Eigen expressions and work for any floating scalar.

#pragma once

#include <Eigen/Dense>
#include <cmath>

namespace stagefinder {

/// Max-subtracted softmax of each column.
template <typename Derived>
typename Derived::PlainObject softmax(const Eigen::MatrixBase<Derived>& logits) {
  typename Derived::PlainObject out(logits.rows(), logits.cols());
  for (Eigen::Index j = 0; j < logits.cols(); ++j) {
    const auto m = logits.col(j).maxCoeff();
    out.col(j) = (logits.col(j).array() - m).exp().matrix();
    out.col(j) /= out.col(j).sum();
  }
  return out;
}

/// Column-wise softmax backward: dlogits = p * (dp - <p, dp>).
template <typename DP, typename DG>
typename DP::PlainObject softmax_backward(const Eigen::MatrixBase<DP>& probs, const Eigen::MatrixBase<DG>& d_probs) {
  typename DP::PlainObject out(probs.rows(), probs.cols());
  for (Eigen::Index j = 0; j < probs.cols(); ++j) {
    const auto inner = probs.col(j).dot(d_probs.col(j));
    out.col(j) = probs.col(j).cwiseProduct(d_probs.col(j) - DP::PlainObject::Constant(probs.rows(), 1, inner));
  }
  return out;
}

template <typename Derived>
typename Derived::Scalar log_sum_exp(const Eigen::MatrixBase<Derived>& v) {
  const auto m = v.maxCoeff();
  return m + std::log((v.array() - m).exp().sum());
}

template <typename Derived>
typename Derived::PlainObject sigmoid(const Eigen::MatrixBase<Derived>& x) {
  using S = typename Derived::Scalar;
  return x.unaryExpr([](S v) { return S(1) / (S(1) + std::exp(-v)); });
}

/// Cosine similarity with the norms guarded by +eps.
template <typename DA, typename DB>
typename DA::Scalar cosine_similarity(const Eigen::MatrixBase<DA>& a, const Eigen::MatrixBase<DB>& b,
                                      typename DA::Scalar eps = 1e-12) {
  return a.dot(b) / ((a.norm() + eps) * (b.norm() + eps));
}

/// Adds d(cos)/da * upstream and d(cos)/db * upstream into grad_a / grad_b.
template <typename DA, typename DB, typename GA, typename GB>
void cosine_similarity_backward(const Eigen::MatrixBase<DA>& a, const Eigen::MatrixBase<DB>& b,
                                typename DA::Scalar upstream, const Eigen::MatrixBase<GA>& grad_a_out,
                                const Eigen::MatrixBase<GB>& grad_b_out, typename DA::Scalar eps = 1e-12) {
  using S = typename DA::Scalar;
  // Eigen idiom for writable expression arguments (blocks, columns).
  auto& grad_a = const_cast<Eigen::MatrixBase<GA>&>(grad_a_out);
  auto& grad_b = const_cast<Eigen::MatrixBase<GB>&>(grad_b_out);
  const S na = a.norm();
  const S nb = b.norm();
  const S da = na + eps;
  const S db = nb + eps;
  const S dot = a.dot(b);
  // cos = dot / (da * db); d(da)/da = a / |a| (zero at the origin).
  grad_a += upstream * (b / (da * db));
  grad_b += upstream * (a / (da * db));
  if (na > S(0)) grad_a -= upstream * dot / (da * da * db) * (a / na);
  if (nb > S(0)) grad_b -= upstream * dot / (da * db * db) * (b / nb);
}

}  // namespace stagefinder
