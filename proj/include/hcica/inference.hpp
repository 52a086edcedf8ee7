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
 * @file inference.hpp Voxel-wise tests of covariate effects from a fitted
 * model: plug-in variance, Z statistics, Benjamini-Yekutieli adjustment and
 * activation maps.
 *
 * Effect maps use the vec[beta(v)'] layout throughout: the entry for
 * covariate k and IC l sits in column k*q + l.
 *
 *****************************************************************************/

#pragma once

#include "hcica/types.hpp"

#include <vector>

namespace hcica {

enum class FdrFamily {
	PerIC,   ///< one family per (covariate, IC) map across voxels
	Global,  ///< a single family over every test
};

struct ResidualCovariance {
	Eigen::MatrixXd W;    ///< q x q
	bool ridged = false;  ///< a ridge was added because W was numerically singular
};

struct ZTest {
	double z = 0.0;
	double p = 1.0;
	bool degenerate = false;  ///< zero variance entry
};

struct InferenceOptions {
	FdrFamily fdr_family = FdrFamily::PerIC;
	int threads = 0;
};

struct InferenceMaps {
	std::size_t p = 0;
	std::size_t q = 0;
	std::vector<Eigen::MatrixXd> var_beta;  ///< V entries, pq x pq
	Eigen::MatrixXd beta_hat;               ///< V x pq
	Eigen::MatrixXd z_stats;                ///< V x pq
	Eigen::MatrixXd p_values;               ///< V x pq
	Eigen::MatrixXd fdr_adjusted;           ///< V x pq
	Eigen::MatrixXd activation_prob;        ///< V x q(m-1), column l*(m-1) + (j-1)
	std::vector<char> ridged;               ///< per voxel
	std::vector<char> degenerate;           ///< per voxel, any zero variance entry

	std::size_t V() const { return var_beta.size(); }
};

/**
 * Empirical covariance of the collapsed-model residuals at voxel v,
 * (1/N) sum_i r_i r_i' with r_i = A_i'y_i(v) - E[s_0(v)|y] - beta(v)'x_i.
 */
ResidualCovariance residual_covariance(const std::vector<SubjectData>& data, const CovariateSet& X,
                                       const ModelParams& params, const VoxelPosterior& post, std::size_t v);

/// (sum_i X_i' W^{-1} X_i)^{-1} with X_i = x_i' kron I_q.
Eigen::MatrixXd beta_variance(const CovariateSet& X, const Eigen::MatrixXd& W);

/// Two-sided normal test of one coefficient.
ZTest z_and_p(double beta_hat, double variance);

/// Two-sided p-value 2(1 - Phi(|z|)).
double normal_two_sided_p(double z);

/// Benjamini-Yekutieli step-up adjustment of one family.
std::vector<double> fdr_adjust(const std::vector<double>& p);

/// Adjust a V x pq p-value map family by family.
Eigen::MatrixXd fdr_adjust_maps(const Eigen::MatrixXd& p_values, std::size_t q, FdrFamily family);

/// Voxels with p[z_l = j | y] > threshold (l, j 0-based, j > 0).
std::vector<char> activation_map(const std::vector<VoxelPosterior>& posteriors, std::size_t l, std::size_t j,
                                 double threshold);

InferenceMaps run_inference(const std::vector<SubjectData>& data, const CovariateSet& X, const ModelParams& params,
                            const std::vector<VoxelPosterior>& posteriors, const InferenceOptions& opt = {});

}  // namespace hcica
