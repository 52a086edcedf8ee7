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

#include "hcica/preproc.hpp"

#include <cmath>

namespace hcica::preproc {

Eigen::MatrixXd center(const Eigen::MatrixXd& raw) {
	if (raw.rows() < 2) throw Error("center: need at least two time points");
	Eigen::MatrixXd out = raw;
	out.rowwise() -= out.colwise().mean();
	out.colwise() -= out.rowwise().mean();
	return out;
}

SubjectData reduce_whiten(const Eigen::MatrixXd& centered, std::size_t q) {
	const auto T = centered.rows();
	const auto V = centered.cols();
	const auto qq = static_cast<Eigen::Index>(q);
	if (q == 0) throw Error("reduce_whiten: q must be positive");
	if (qq >= T)
		throw Error("reduce_whiten: q (" + std::to_string(q) + ") must be smaller than T (" + std::to_string(T) + ")");

	// T x T covariance; T is much smaller than V for imaging data
	Eigen::MatrixXd cov = (centered * centered.transpose()) / static_cast<double>(V);
	Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(cov);
	if (eig.info() != Eigen::Success) throw Error("reduce_whiten: eigendecomposition failed");

	// ascending order: the top q are the last q
	const Eigen::VectorXd& evals = eig.eigenvalues();
	Eigen::VectorXd lambda(qq);
	Eigen::MatrixXd U(T, qq);
	for (Eigen::Index k = 0; k < qq; ++k) {
		lambda[k] = evals[T - 1 - k];
		Eigen::VectorXd u = eig.eigenvectors().col(T - 1 - k);
		for (Eigen::Index t = 0; t < T; ++t) {
			if (std::abs(u[t]) > 1e-12) {
				if (u[t] < 0) u = -u;
				break;
			}
		}
		U.col(k) = u;
	}
	double rest = 0.0;
	for (Eigen::Index k = 0; k < T - qq; ++k) rest += std::max(evals[k], 0.0);
	double sigma2 = rest / static_cast<double>(T - qq);

	for (Eigen::Index k = 0; k < qq; ++k) {
		if (!(lambda[k] > sigma2)) throw Error("reduce_whiten: insufficient signal subspace");
	}

	SubjectData out;
	out.residual_var = sigma2;
	out.eigenvalues = lambda;
	Eigen::VectorXd scale = (lambda.array() - sigma2).rsqrt();
	out.whitener = scale.asDiagonal() * U.transpose();
	out.Y = out.whitener * centered;
	return out;
}

std::vector<SubjectData> preprocess(const std::vector<Eigen::MatrixXd>& raw, std::size_t q) {
	std::vector<SubjectData> out(raw.size());
	std::vector<std::string> errors(raw.size());
#pragma omp parallel for schedule(dynamic)
	for (std::size_t i = 0; i < raw.size(); ++i) {
		try {
			out[i] = reduce_whiten(center(raw[i]), q);
		} catch (const Error& e) {
			errors[i] = e.what();
		}
	}
	for (std::size_t i = 0; i < raw.size(); ++i)
		if (!errors[i].empty()) throw Error("subject " + std::to_string(i) + ": " + errors[i]);
	return out;
}

Eigen::MatrixXd dewhitener(const SubjectData& s) {
	const Eigen::MatrixXd& W = s.whitener;
	return W.transpose() * (W * W.transpose()).inverse();
}

}  // namespace hcica::preproc
