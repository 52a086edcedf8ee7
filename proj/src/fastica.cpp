/******************************************************************************
 * Copyright 2026 The hcica Authors
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 * 	http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 *****************************************************************************/

#include "hcica/fastica.hpp"

#include "hcica/types.hpp"

#include <cmath>

namespace hcica {

Eigen::MatrixXd random_orthogonal(std::size_t q, std::mt19937_64& rng) {
	std::normal_distribution<double> gauss(0.0, 1.0);
	const auto n = static_cast<Eigen::Index>(q);
	Eigen::MatrixXd G(n, n);
	for (Eigen::Index c = 0; c < n; ++c)
		for (Eigen::Index r = 0; r < n; ++r) G(r, c) = gauss(rng);
	Eigen::HouseholderQR<Eigen::MatrixXd> qr(G);
	Eigen::MatrixXd Q = qr.householderQ() * Eigen::MatrixXd::Identity(n, n);
	Eigen::MatrixXd R = qr.matrixQR().triangularView<Eigen::Upper>();
	for (Eigen::Index k = 0; k < n; ++k)
		if (R(k, k) < 0) Q.col(k) = -Q.col(k);
	return Q;
}

Eigen::MatrixXd pca_whiten(const Eigen::MatrixXd& X, std::size_t q) {
	const auto V = static_cast<double>(X.cols());
	const auto qq = static_cast<Eigen::Index>(q);
	Eigen::MatrixXd centered = X.colwise() - X.rowwise().mean();
	Eigen::MatrixXd cov = centered * centered.transpose() / V;
	Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(cov);
	const auto n = cov.rows();
	Eigen::MatrixXd U(n, qq);
	Eigen::VectorXd scale(qq);
	for (Eigen::Index k = 0; k < qq; ++k) {
		U.col(k) = eig.eigenvectors().col(n - 1 - k);
		double lam = eig.eigenvalues()[n - 1 - k];
		if (!(lam > 0)) throw Error("pca_whiten: rank-deficient input");
		scale[k] = 1.0 / std::sqrt(lam);
	}
	return scale.asDiagonal() * U.transpose() * centered;
}

FastIcaResult fastica_symmetric(const Eigen::MatrixXd& Z, std::mt19937_64& rng, std::size_t max_iter, double tol) {
	const auto q = Z.rows();
	const auto V = static_cast<double>(Z.cols());
	FastIcaResult res;
	Eigen::MatrixXd W = random_orthogonal(static_cast<std::size_t>(q), rng);

	for (std::size_t it = 0; it < max_iter; ++it) {
		Eigen::MatrixXd WZ = W * Z;
		Eigen::MatrixXd G = WZ.array().tanh().matrix();
		Eigen::VectorXd gprime = (1.0 - G.array().square()).rowwise().mean();
		Eigen::MatrixXd Wn = (G * Z.transpose()) / V - gprime.asDiagonal() * W;
		// symmetric decorrelation: W <- (W W')^{-1/2} W
		Wn = orthogonalize(Wn.transpose()).transpose();
		double lim = ((Wn * W.transpose()).diagonal().array().abs() - 1.0).abs().maxCoeff();
		W = Wn;
		res.iterations = it + 1;
		if (lim < tol) {
			res.converged = true;
			break;
		}
	}
	res.W = W;
	res.S = W * Z;
	return res;
}

}  // namespace hcica
