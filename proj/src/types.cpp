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

#include "hcica/types.hpp"

#include <cmath>
#include <sstream>

namespace hcica {

namespace {

std::string fmt(double x) {
	std::ostringstream os;
	os.precision(12);
	os << x;
	return os.str();
}

}  // namespace

Eigen::VectorXd ModelParams::flatten() const {
	std::size_t n = 1 + static_cast<std::size_t>(D.size());
	for (const auto& b : beta) n += b.size();
	for (const auto& a : A) n += a.size();
	for (const auto& g : mog) n += g.pi.size() + g.mu.size() + g.sigma2.size();

	Eigen::VectorXd out(n);
	Eigen::Index k = 0;
	auto put = [&](const auto& mat) {
		for (Eigen::Index c = 0; c < mat.cols(); ++c)
			for (Eigen::Index r = 0; r < mat.rows(); ++r) out[k++] = mat(r, c);
	};
	for (const auto& b : beta) put(b);
	for (const auto& a : A) put(a);
	out[k++] = nu0_sq;
	put(D);
	for (const auto& g : mog) {
		put(g.pi);
		put(g.mu);
		put(g.sigma2);
	}
	return out;
}

std::vector<std::string> validate(const Dimensions& d) {
	std::vector<std::string> out;
	if (d.N == 0) out.push_back("N must be positive");
	if (d.T == 0) out.push_back("T must be positive");
	if (d.V == 0) out.push_back("V must be positive");
	if (d.q == 0) out.push_back("q must be positive");
	if (d.p == 0) out.push_back("p must be positive");
	if (d.m < 2) out.push_back("m must be at least 2, got " + std::to_string(d.m));
	if (d.q > d.T) out.push_back("q (" + std::to_string(d.q) + ") exceeds T (" + std::to_string(d.T) + ")");
	return out;
}

std::vector<std::string> validate(const CovariateSet& cov) {
	std::vector<std::string> out;
	const auto N = cov.X.rows();
	const auto p = cov.X.cols();
	if (N < p) {
		out.push_back("fewer subjects (" + std::to_string(N) + ") than covariates (" + std::to_string(p) + ")");
		return out;
	}
	Eigen::MatrixXd G = cov.X.transpose() * cov.X;
	Eigen::JacobiSVD<Eigen::MatrixXd> svd(G);
	const auto& s = svd.singularValues();
	if (s.size() == 0 || s[s.size() - 1] <= 1e-12 * std::max(1.0, s[0]))
		out.push_back("X'X is singular (collinear covariates)");
	return out;
}

std::vector<std::string> validate(const ModelParams& params, const Dimensions& dims) {
	std::vector<std::string> out = validate(dims);
	const auto q = static_cast<Eigen::Index>(dims.q);
	const auto p = static_cast<Eigen::Index>(dims.p);
	const auto m = static_cast<Eigen::Index>(dims.m);

	if (params.beta.size() != dims.V)
		out.push_back("beta has " + std::to_string(params.beta.size()) + " voxels, expected " + std::to_string(dims.V));
	for (std::size_t v = 0; v < params.beta.size(); ++v) {
		const auto& b = params.beta[v];
		if (b.rows() != p || b.cols() != q) {
			out.push_back("beta(" + std::to_string(v) + ") is not p x q");
			break;
		}
		if (!b.allFinite()) {
			out.push_back("beta(" + std::to_string(v) + ") has non-finite entries");
			break;
		}
	}

	if (params.A.size() != dims.N)
		out.push_back("A has " + std::to_string(params.A.size()) + " subjects, expected " + std::to_string(dims.N));
	for (std::size_t i = 0; i < params.A.size(); ++i) {
		const auto& a = params.A[i];
		if (a.rows() != q || a.cols() != q) {
			out.push_back("A_" + std::to_string(i) + " is not q x q");
			continue;
		}
		double err = orthogonality_error(a);
		if (!(err <= kOrthogonalityTol))
			out.push_back("A_" + std::to_string(i) + " is not orthogonal: ||A'A - I||_F = " + fmt(err));
	}

	if (!(params.nu0_sq > 0.0) || !std::isfinite(params.nu0_sq))
		out.push_back("nu0_sq must be positive, got " + fmt(params.nu0_sq));

	if (params.D.size() != q) {
		out.push_back("D has length " + std::to_string(params.D.size()) + ", expected " + std::to_string(q));
	} else {
		for (Eigen::Index l = 0; l < q; ++l)
			if (!(params.D[l] > 0.0) || !std::isfinite(params.D[l]))
				out.push_back("D_" + std::to_string(l) + " must be positive, got " + fmt(params.D[l]));
	}

	if (params.mog.size() != dims.q)
		out.push_back("mog has " + std::to_string(params.mog.size()) + " entries, expected " + std::to_string(q));
	for (std::size_t l = 0; l < params.mog.size(); ++l) {
		const auto& g = params.mog[l];
		const std::string tag = "IC " + std::to_string(l) + ": ";
		if (g.pi.size() != m || g.mu.size() != m || g.sigma2.size() != m) {
			out.push_back(tag + "mixture vectors must have length m = " + std::to_string(m));
			continue;
		}
		double total = g.pi.sum();
		if (std::abs(total - 1.0) > kSimplexTol) out.push_back(tag + "pi sums to " + fmt(total));
		for (Eigen::Index j = 0; j < m; ++j) {
			if (!(g.pi[j] >= 0.0)) out.push_back(tag + "pi_" + std::to_string(j + 1) + " is negative");
			if (!(g.sigma2[j] > 0.0) || !std::isfinite(g.sigma2[j]))
				out.push_back(tag + "sigma2_" + std::to_string(j + 1) + " must be positive");
			if (!std::isfinite(g.mu[j])) out.push_back(tag + "mu_" + std::to_string(j + 1) + " is not finite");
		}
	}
	return out;
}

std::string LatentState::to_string() const {
	std::string s = "(";
	for (std::size_t l = 0; l < z.size(); ++l) {
		if (l) s += ",";
		s += std::to_string(static_cast<int>(z[l]) + 1);
	}
	return s + ")";
}

std::size_t LatentStateHash::operator()(const LatentState& s) const noexcept {
	// FNV-1a over the component labels
	std::size_t h = 1469598103934665603ull;
	for (auto c : s.z) {
		h ^= c;
		h *= 1099511628211ull;
	}
	return h;
}

std::size_t VoxelPosterior::subjects() const {
	const std::size_t q = components();
	if (q == 0 || s_mean.size() == 0) return 0;
	return static_cast<std::size_t>(s_mean.size()) / q - 1;
}

Eigen::MatrixXd VoxelPosterior::subject_second(std::size_t i) const {
	const auto q = static_cast<Eigen::Index>(components());
	const Eigen::VectorXd m = s_mean.segment(static_cast<Eigen::Index>(i) * q, q);
	return m * m.transpose() + subject_cov;
}

double VoxelPosterior::cross(std::size_t l, std::size_t i) const {
	return si_mean(i, l) * s0_mean(l) + cross_cov[static_cast<Eigen::Index>(l)];
}

double VoxelPosterior::s0_mean(std::size_t l) const {
	return s_mean[static_cast<Eigen::Index>(subjects() * components() + l)];
}

double VoxelPosterior::si_mean(std::size_t i, std::size_t l) const {
	return s_mean[static_cast<Eigen::Index>(i * components() + l)];
}

CollapsedModel CollapsedModel::build(const ModelParams& params, const CovariateSet& cov, std::size_t v) {
	CollapsedModel cm;
	cm.N = params.A.size();
	cm.q = static_cast<std::size_t>(params.D.size());
	const auto N = static_cast<Eigen::Index>(cm.N);
	const auto q = static_cast<Eigen::Index>(cm.q);
	cm.A_blk = Eigen::MatrixXd::Zero(N * q, N * q);
	cm.Bx.resize(N * q);
	for (Eigen::Index i = 0; i < N; ++i) {
		cm.A_blk.block(i * q, i * q, q, q) = params.A[static_cast<std::size_t>(i)];
		cm.Bx.segment(i * q, q) = params.beta[v].transpose() * cov.X.row(i).transpose();
	}
	cm.nu0_sq = params.nu0_sq;
	cm.D = params.D;
	return cm;
}

Eigen::MatrixXd CollapsedModel::U() const {
	const auto N = static_cast<Eigen::Index>(this->N);
	const auto q = static_cast<Eigen::Index>(this->q);
	Eigen::MatrixXd u(N * q, q);
	for (Eigen::Index i = 0; i < N; ++i) u.block(i * q, 0, q, q).setIdentity();
	return u;
}

Eigen::MatrixXd CollapsedModel::stacked_design() const {
	const auto Nq = static_cast<Eigen::Index>(N * q);
	Eigen::MatrixXd r(Nq, Nq + static_cast<Eigen::Index>(q));
	r.leftCols(Nq).setIdentity();
	r.rightCols(static_cast<Eigen::Index>(q)) = U();
	return r;
}

Eigen::MatrixXd CollapsedModel::P() const {
	const auto Nq = static_cast<Eigen::Index>(N * q);
	const auto qq = static_cast<Eigen::Index>(q);
	Eigen::MatrixXd p = Eigen::MatrixXd::Zero(Nq + qq, Nq + qq);
	p.topLeftCorner(Nq, Nq).setIdentity();
	p.topRightCorner(Nq, qq) = U();
	p.bottomRightCorner(qq, qq).setIdentity();
	return p;
}

Eigen::VectorXd CollapsedModel::Q(const Eigen::VectorXd& mu_z) const {
	const auto Nq = static_cast<Eigen::Index>(N * q);
	Eigen::VectorXd out(Nq + static_cast<Eigen::Index>(q));
	out.head(Nq) = Bx + U() * mu_z;
	out.tail(static_cast<Eigen::Index>(q)) = mu_z;
	return out;
}

Eigen::MatrixXd CollapsedModel::Gamma(const Eigen::VectorXd& sigma2_z) const {
	const auto Nq = static_cast<Eigen::Index>(N * q);
	const auto qq = static_cast<Eigen::Index>(q);
	Eigen::VectorXd diag(Nq + qq);
	for (Eigen::Index i = 0; i < static_cast<Eigen::Index>(N); ++i) diag.segment(i * qq, qq) = D;
	diag.tail(qq) = sigma2_z;
	return diag.asDiagonal();
}

Eigen::MatrixXd CollapsedModel::Upsilon() const {
	const auto Nq = static_cast<Eigen::Index>(N * q);
	return Eigen::MatrixXd::Identity(Nq, Nq) * nu0_sq;
}

Eigen::VectorXd state_means(const ModelParams& params, const LatentState& z) {
	Eigen::VectorXd mu(static_cast<Eigen::Index>(z.size()));
	for (std::size_t l = 0; l < z.size(); ++l) mu[static_cast<Eigen::Index>(l)] = params.mog[l].mu[z[l]];
	return mu;
}

Eigen::VectorXd state_variances(const ModelParams& params, const LatentState& z) {
	Eigen::VectorXd s2(static_cast<Eigen::Index>(z.size()));
	for (std::size_t l = 0; l < z.size(); ++l) s2[static_cast<Eigen::Index>(l)] = params.mog[l].sigma2[z[l]];
	return s2;
}

double orthogonality_error(const Eigen::MatrixXd& A) {
	return (A.transpose() * A - Eigen::MatrixXd::Identity(A.cols(), A.cols())).norm();
}

Eigen::MatrixXd orthogonalize(const Eigen::MatrixXd& X) {
	Eigen::JacobiSVD<Eigen::MatrixXd> svd(X, Eigen::ComputeThinU | Eigen::ComputeThinV);
	return svd.matrixU() * svd.matrixV().transpose();
}

}  // namespace hcica
