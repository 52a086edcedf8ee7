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

#include "hcica/inference.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <numeric>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace hcica {

ResidualCovariance residual_covariance(const std::vector<SubjectData>& data, const CovariateSet& X,
                                       const ModelParams& params, const VoxelPosterior& post, std::size_t v) {
	const std::size_t N = data.size();
	if (N == 0) throw Error("residual_covariance: no subjects");
	const auto q = data[0].Y.rows();
	const auto vv = static_cast<Eigen::Index>(v);
	const Eigen::VectorXd s0 = post.s_mean.tail(q);
	const Eigen::MatrixXd& B = params.beta[v];

	ResidualCovariance rc;
	rc.W = Eigen::MatrixXd::Zero(q, q);
	for (std::size_t i = 0; i < N; ++i) {
		Eigen::VectorXd r = params.A[i].transpose() * data[i].Y.col(vv) - s0 -
		                    B.transpose() * X.X.row(static_cast<Eigen::Index>(i)).transpose();
		rc.W.noalias() += r * r.transpose();
	}
	rc.W /= static_cast<double>(N);

	const double tr = rc.W.trace();
	Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(rc.W, Eigen::EigenvaluesOnly);
	const double lo = eig.eigenvalues()[0];
	const double hi = eig.eigenvalues()[q - 1];
	if (!(lo > 1e-12 * hi) || !(hi > 0.0)) {
		double ridge = tr > 0.0 ? 1e-8 * tr / static_cast<double>(q) : 1e-8;
		rc.W.diagonal().array() += ridge;
		rc.ridged = true;
	}
	return rc;
}

Eigen::MatrixXd beta_variance(const CovariateSet& X, const Eigen::MatrixXd& W) {
	const auto N = X.X.rows();
	const auto p = X.X.cols();
	const auto q = W.rows();
	Eigen::LLT<Eigen::MatrixXd> llt(W);
	if (llt.info() != Eigen::Success) throw Error("beta_variance: W is not positive definite");
	const Eigen::MatrixXd Winv = llt.solve(Eigen::MatrixXd::Identity(q, q));

	Eigen::MatrixXd info = Eigen::MatrixXd::Zero(p * q, p * q);
	Eigen::MatrixXd Xi(q, p * q);
	for (Eigen::Index i = 0; i < N; ++i) {
		for (Eigen::Index k = 0; k < p; ++k) Xi.block(0, k * q, q, q) = X.X(i, k) * Eigen::MatrixXd::Identity(q, q);
		info.noalias() += Xi.transpose() * Winv * Xi;
	}
	Eigen::LDLT<Eigen::MatrixXd> ldlt(info);
	Eigen::JacobiSVD<Eigen::MatrixXd> svd(info);
	const auto& sv = svd.singularValues();
	if (sv.size() == 0 || !(sv[sv.size() - 1] > 1e-12 * sv[0]))
		throw Error("beta_variance: information matrix is singular (collinear covariates)");
	Eigen::MatrixXd var = ldlt.solve(Eigen::MatrixXd::Identity(p * q, p * q));
	return 0.5 * (var + var.transpose());
}

double normal_two_sided_p(double z) {
	// 2(1 - Phi(|z|)) = erfc(|z|/sqrt 2), without cancellation in the tail
	return std::erfc(std::abs(z) / std::numbers::sqrt2);
}

ZTest z_and_p(double beta_hat, double variance) {
	ZTest t;
	if (!(variance > 0.0)) {
		t.degenerate = true;
		t.z = beta_hat == 0.0 ? 0.0 : std::copysign(std::numeric_limits<double>::infinity(), beta_hat);
		t.p = beta_hat == 0.0 ? 1.0 : 0.0;
		return t;
	}
	t.z = beta_hat / std::sqrt(variance);
	t.p = normal_two_sided_p(t.z);
	return t;
}

std::vector<double> fdr_adjust(const std::vector<double>& p) {
	const std::size_t n = p.size();
	std::vector<double> out(n);
	if (n == 0) return out;
	for (double x : p)
		if (!(x >= 0.0 && x <= 1.0)) throw Error("fdr_adjust: p-values must lie in [0, 1]");
	std::vector<std::size_t> order(n);
	std::iota(order.begin(), order.end(), 0);
	std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return p[a] < p[b]; });
	double c = 0.0;
	for (std::size_t i = 1; i <= n; ++i) c += 1.0 / static_cast<double>(i);
	const double nd = static_cast<double>(n);
	double run = 1.0;
	for (std::size_t k = n; k-- > 0;) {
		double val = std::min(1.0, nd * c * p[order[k]] / static_cast<double>(k + 1));
		run = std::min(run, val);
		out[order[k]] = run;
	}
	return out;
}

Eigen::MatrixXd fdr_adjust_maps(const Eigen::MatrixXd& p_values, std::size_t q, FdrFamily family) {
	Eigen::MatrixXd out(p_values.rows(), p_values.cols());
	if (family == FdrFamily::Global) {
		std::vector<double> all(p_values.data(), p_values.data() + p_values.size());
		auto adj = fdr_adjust(all);
		std::copy(adj.begin(), adj.end(), out.data());
		return out;
	}
	if (q == 0 || p_values.cols() % static_cast<Eigen::Index>(q) != 0)
		throw Error("fdr_adjust_maps: column count is not a multiple of q");
	for (Eigen::Index c = 0; c < p_values.cols(); ++c) {
		std::vector<double> col(p_values.col(c).data(), p_values.col(c).data() + p_values.rows());
		auto adj = fdr_adjust(col);
		for (Eigen::Index v = 0; v < p_values.rows(); ++v) out(v, c) = adj[static_cast<std::size_t>(v)];
	}
	return out;
}

std::vector<char> activation_map(const std::vector<VoxelPosterior>& posteriors, std::size_t l, std::size_t j,
                                 double threshold) {
	if (j == 0) throw Error("activation_map: the background component is not an activation state");
	if (!(threshold > 0.0 && threshold < 1.0)) throw Error("activation_map: threshold must lie in (0, 1)");
	std::vector<char> out(posteriors.size(), 0);
	for (std::size_t v = 0; v < posteriors.size(); ++v) {
		const auto& P = posteriors[v].ic_prob;
		if (l >= static_cast<std::size_t>(P.rows()) || j >= static_cast<std::size_t>(P.cols()))
			throw Error("activation_map: IC or component index out of range");
		out[v] = P(static_cast<Eigen::Index>(l), static_cast<Eigen::Index>(j)) > threshold;
	}
	return out;
}

InferenceMaps run_inference(const std::vector<SubjectData>& data, const CovariateSet& X, const ModelParams& params,
                            const std::vector<VoxelPosterior>& posteriors, const InferenceOptions& opt) {
	if (data.empty()) throw Error("run_inference: no subjects");
	const auto q = data[0].Y.rows();
	const auto p = X.X.cols();
	const auto V = static_cast<std::size_t>(data[0].Y.cols());
	if (posteriors.size() != V) throw Error("run_inference: one posterior per voxel required");
	if (!validate(X).empty()) throw Error("run_inference: X'X is singular (collinear covariates)");
	const Eigen::Index m = params.mog.empty() ? 0 : params.mog[0].pi.size();
	const Eigen::Index pq = p * q;

	InferenceMaps maps;
	maps.p = static_cast<std::size_t>(p);
	maps.q = static_cast<std::size_t>(q);
	maps.var_beta.resize(V);
	maps.beta_hat.resize(static_cast<Eigen::Index>(V), pq);
	maps.z_stats.resize(static_cast<Eigen::Index>(V), pq);
	maps.p_values.resize(static_cast<Eigen::Index>(V), pq);
	maps.activation_prob.resize(static_cast<Eigen::Index>(V), q * std::max<Eigen::Index>(m - 1, 0));
	maps.ridged.assign(V, 0);
	maps.degenerate.assign(V, 0);

	std::string err;
#ifdef _OPENMP
	const int nt = opt.threads > 0 ? opt.threads : omp_get_max_threads();
#else
	const int nt = 1;
#endif
#pragma omp parallel for schedule(static) num_threads(nt)
	for (std::size_t v = 0; v < V; ++v) {
		try {
			const auto vi = static_cast<Eigen::Index>(v);
			ResidualCovariance rc = residual_covariance(data, X, params, posteriors[v], v);
			maps.ridged[v] = rc.ridged;
			maps.var_beta[v] = beta_variance(X, rc.W);
			const Eigen::MatrixXd& B = params.beta[v];
			for (Eigen::Index k = 0; k < p; ++k)
				for (Eigen::Index l = 0; l < q; ++l) {
					const Eigen::Index c = k * q + l;
					ZTest t = z_and_p(B(k, l), maps.var_beta[v](c, c));
					maps.beta_hat(vi, c) = B(k, l);
					maps.z_stats(vi, c) = t.z;
					maps.p_values(vi, c) = t.p;
					if (t.degenerate) maps.degenerate[v] = 1;
				}
			for (Eigen::Index l = 0; l < q; ++l)
				for (Eigen::Index j = 1; j < m; ++j)
					maps.activation_prob(vi, l * (m - 1) + (j - 1)) = posteriors[v].ic_prob(l, j);
		} catch (const Error& e) {
#pragma omp critical(hcica_infer_err)
			if (err.empty()) err = "voxel " + std::to_string(v) + ": " + e.what();
		}
	}
	if (!err.empty()) throw Error("run_inference: " + err);
	maps.fdr_adjusted = fdr_adjust_maps(maps.p_values, static_cast<std::size_t>(q), opt.fdr_family);
	return maps;
}

}  // namespace hcica
