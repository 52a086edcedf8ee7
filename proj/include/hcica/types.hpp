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
 *
 * @file types.hpp Model quantities shared by every stage of the hierarchical
 * covariate ICA pipeline: dimensions, whitened subject data, covariates,
 * mixture-of-Gaussians source parameters and the full parameter set.
 *
 *****************************************************************************/

#pragma once

#include <Eigen/Dense>

#include <cstddef>
#include <cstdint>
#include <functional>
#include <stdexcept>
#include <string>
#include <vector>

namespace hcica {

/// Every recoverable failure in the library is reported with this type.
class Error : public std::runtime_error {
public:
	using std::runtime_error::runtime_error;
};

struct Dimensions {
	std::size_t N = 0;  ///< subjects
	std::size_t T = 0;  ///< time points before reduction
	std::size_t V = 0;  ///< voxels
	std::size_t q = 0;  ///< independent components
	std::size_t p = 0;  ///< covariates
	std::size_t m = 2;  ///< Gaussian components per source mixture
};

/**
 * One subject after centering, dimension reduction and whitening.
 *
 * Y is q x V. whitener is the q x T matrix (Lambda - sigma^2 I)^{-1/2} U'
 * that produced Y from the centered T x V data; eigenvalues holds the top q
 * eigenvalues of the sample covariance used to build it.
 */
struct SubjectData {
	Eigen::MatrixXd Y;
	double residual_var = 0.0;
	Eigen::MatrixXd whitener;
	Eigen::VectorXd eigenvalues;
};

/// Row i of X is the covariate vector of subject i (N x p).
struct CovariateSet {
	Eigen::MatrixXd X;
};

/// Source distribution of one IC. Component 0 is the background state.
struct MoGParams {
	Eigen::VectorXd pi;
	Eigen::VectorXd mu;
	Eigen::VectorXd sigma2;
};

struct ModelParams {
	std::vector<Eigen::MatrixXd> beta;  ///< V entries, each p x q
	std::vector<Eigen::MatrixXd> A;     ///< N entries, each q x q orthogonal
	double nu0_sq = 1.0;                ///< isotropic first-level noise variance
	Eigen::VectorXd D;                  ///< q random-effect variances
	std::vector<MoGParams> mog;         ///< q source mixtures

	/// All free parameters concatenated (beta, A, nu0_sq, D, pi, mu, sigma2).
	Eigen::VectorXd flatten() const;
};

/**
 * Check every invariant of params against dims. Returns one human-readable
 * line per violation; an empty list means the parameters are usable.
 */
std::vector<std::string> validate(const ModelParams& params, const Dimensions& dims);

/// Violations of the dimension invariants alone.
std::vector<std::string> validate(const Dimensions& dims);

/// Violations of the covariate invariants (N >= p, X'X nonsingular).
std::vector<std::string> validate(const CovariateSet& cov);

inline constexpr double kOrthogonalityTol = 1e-8;
inline constexpr double kSimplexTol = 1e-10;

/**
 * A latent state vector z(v). Entries are stored 0-based: entry l holds the
 * mixture component of IC l, with 0 the background component. to_string()
 * prints the conventional 1-based labels.
 */
struct LatentState {
	std::vector<std::uint8_t> z;

	std::size_t size() const { return z.size(); }
	std::uint8_t operator[](std::size_t l) const { return z[l]; }
	bool operator==(const LatentState&) const = default;
	auto operator<=>(const LatentState&) const = default;
	std::string to_string() const;
};

struct LatentStateHash {
	std::size_t operator()(const LatentState& s) const noexcept;
};

/**
 * Posterior summary at one voxel.
 *
 * The stacked source vector is s = [s_1; ...; s_N; s_0] (length (N+1)q); the
 * entry for subject i (i = N for the population level) and IC l sits at
 * i*q + l. Given y the subject sources share one conditional covariance,
 * so E[s_i s_i'] = E[s_i]E[s_i]' + subject_cov and
 * E[s_il s_0l] = E[s_il]E[s_0l] + cross_cov_l. s_second is only filled when
 * the E-step is asked for the full matrix.
 */
struct VoxelPosterior {
	std::vector<double> state_probs;          ///< aligned with the StateSpace order
	Eigen::VectorXd s_mean;                   ///< E[s | y]
	Eigen::MatrixXd subject_cov;              ///< Cov(s_i | y), q x q, the same for every i
	Eigen::MatrixXd s0_second;                ///< E[s_0 s_0' | y], q x q
	Eigen::VectorXd cross_cov;                ///< Cov(s_il, s_0l | y), length q
	Eigen::MatrixXd ic_prob;                  ///< q x m, p[z_l = j | y]
	Eigen::MatrixXd ic_s0_mean;               ///< q x m, E[s_0l | z_l = j, y]
	Eigen::MatrixXd ic_s0_sq;                 ///< q x m, E[s_0l^2 | z_l = j, y]
	double log_evidence = 0.0;                ///< log of the normalising constant over the space
	Eigen::MatrixXd s_second;                 ///< optional full E[s s' | y]

	std::size_t subjects() const;
	std::size_t components() const { return static_cast<std::size_t>(ic_prob.rows()); }
	double s0_mean(std::size_t l) const;
	double si_mean(std::size_t i, std::size_t l) const;
	/// E[s_i s_i' | y]
	Eigen::MatrixXd subject_second(std::size_t i) const;
	/// E[s_il s_0l | y]
	double cross(std::size_t l, std::size_t i) const;
};

/**
 * The model collapsed across subjects at one voxel given the current
 * parameters:  A'y = B x + U mu_z + R r_z + e.
 *
 * Only A_blk and Bx are stored; the structured operators are materialised on
 * request for tests and reference computations.
 */
struct CollapsedModel {
	std::size_t N = 0;
	std::size_t q = 0;
	Eigen::MatrixXd A_blk;   ///< Nq x Nq block diagonal
	Eigen::VectorXd Bx;      ///< (I_N kron beta(v)') x, length Nq
	double nu0_sq = 1.0;
	Eigen::VectorXd D;

	static CollapsedModel build(const ModelParams& params, const CovariateSet& cov, std::size_t v);

	Eigen::MatrixXd U() const;               ///< 1_N kron I_q
	Eigen::MatrixXd stacked_design() const;  ///< [I_Nq, 1_N kron I_q]
	Eigen::MatrixXd P() const;               ///< maps r_z to s
	Eigen::VectorXd Q(const Eigen::VectorXd& mu_z) const;
	Eigen::MatrixXd Gamma(const Eigen::VectorXd& sigma2_z) const;
	Eigen::MatrixXd Upsilon() const;
};

/// mu_z and Sigma_z diagonal of a state.
Eigen::VectorXd state_means(const ModelParams& params, const LatentState& z);
Eigen::VectorXd state_variances(const ModelParams& params, const LatentState& z);

/// Frobenius norm of A'A - I.
double orthogonality_error(const Eigen::MatrixXd& A);

/// Nearest orthogonal matrix in Frobenius norm, X (X'X)^{-1/2}, via SVD.
Eigen::MatrixXd orthogonalize(const Eigen::MatrixXd& X);

}  // namespace hcica
