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
 * @file simgen.hpp Synthetic multi-subject datasets with block-shaped
 * sources, voxel-wise covariate effects and known truth, plus the matching
 * and scoring used to compare estimates against that truth.
 *
 *****************************************************************************/

#pragma once

#include "hcica/types.hpp"

#include <array>
#include <cstdint>
#include <string>
#include <vector>

namespace hcica {

enum class CovariateKind { Bernoulli, Uniform };
enum class Variability { Low, Medium, High };

struct SimSpec {
	std::size_t N = 10;
	std::size_t T = 200;
	std::size_t q = 3;
	std::size_t m = 2;
	std::array<std::size_t, 3> grid{25, 25, 4};
	std::vector<CovariateKind> covariates{CovariateKind::Bernoulli, CovariateKind::Uniform};
	std::vector<double> beta_values{1.5, 1.8, 2.5, 3.0};  ///< strip values inside each active block
	bool null_effects = false;                            ///< beta = 0 everywhere
	Eigen::VectorXd D;                                    ///< random-effect variances, one per IC
	double noise_sd = 1.0;                                ///< first-level noise standard deviation
	double s0_noise_var = 0.5;                            ///< noise added to the population maps
	double amplitude = 3.0;                               ///< value of the true maps inside the blocks
	double active_fraction = 0.1;                         ///< block size as a fraction of the grid
	double overlap_fraction = 0.0;                        ///< horizontal overlap between neighbouring blocks
	double effect_fraction = 0.25;                        ///< share of each block's rows carrying effects
	std::size_t sinusoids = 3;                            ///< per time course
	double ar_coef = 0.5;
	double ar_sd = 0.2;
	std::uint64_t seed = 1;

	std::size_t V() const { return grid[0] * grid[1] * grid[2]; }
	std::size_t p() const { return covariates.size(); }
	Dimensions dims() const;
	void validate() const;

	static Eigen::VectorXd variability(Variability level, std::size_t q);
	/// 25x25x4 grid, q = 3, T = 200, unit noise.
	static SimSpec study1(std::size_t N, Variability level, std::uint64_t seed);
	/// 20x20 grid, q = 2, D = 0.25, noise variance 0.4, noise-free population maps.
	static SimSpec study3(std::size_t N, bool null_effects, std::uint64_t seed);
};

struct SimTruth {
	Eigen::MatrixXd s0;                         ///< q x V population maps
	Eigen::MatrixXd s0_signal;                  ///< q x V noiseless block maps
	std::vector<Eigen::MatrixXd> beta;          ///< V entries, p x q
	std::vector<Eigen::MatrixXd> s;             ///< N entries, q x V subject maps
	std::vector<Eigen::MatrixXd> time_courses;  ///< N entries, T x q with orthogonal columns
	Eigen::MatrixXd X;                          ///< N x p
};

struct SimDataset {
	SimTruth truth;
	std::vector<Eigen::MatrixXd> raw;  ///< N entries, T x V
};

SimDataset generate(const SimSpec& spec);

/// Pearson correlation; throws if either input has zero variance.
double correlation(const Eigen::Ref<const Eigen::VectorXd>& a, const Eigen::Ref<const Eigen::VectorXd>& b);

struct Matching {
	std::vector<std::size_t> perm;  ///< perm[l] = estimated row matched to true row l
	std::vector<int> sign;          ///< +1 or -1 making the matched correlation positive
	Eigen::VectorXd corr;           ///< matched correlations after the sign flip
};

/**
 * Pair estimated rows with true rows by |correlation|. Greedy by default:
 * repeatedly take the largest remaining |corr|, ties going to the lower true
 * index and then the lower estimated index. optimal = true searches every
 * permutation for the largest total |corr|.
 */
Matching match_components(const Eigen::MatrixXd& estimated, const Eigen::MatrixXd& truth, bool optimal = false);

/// mean over v of ||beta_hat(v) - beta(v)||_F^2 after aligning columns: column l of the
/// aligned estimate is scale[l] * sign[l] * column perm[l] of beta_hat(v).
double beta_mse(const std::vector<Eigen::MatrixXd>& beta_hat, const std::vector<Eigen::MatrixXd>& beta,
                const Matching& match, const Eigen::VectorXd& scale);

struct FitSummary {
	Eigen::MatrixXd population;             ///< q x V
	std::vector<Eigen::MatrixXd> subjects;  ///< N entries, q x V
	std::vector<Eigen::MatrixXd> A;         ///< N entries, q x q
	std::vector<Eigen::MatrixXd> dewhiten;  ///< N entries, T x q (maps A back to time courses)
	std::vector<Eigen::MatrixXd> beta;      ///< V entries, p x q
};

struct Score {
	Matching match;
	Eigen::VectorXd scale;  ///< per IC slope of the true on the aligned estimated population map
	double population_corr = 0.0;
	double subject_corr = 0.0;
	double time_course_corr = 0.0;
	double beta_mse = 0.0;
	Eigen::MatrixXd subject_corr_each;  ///< N x q
	Eigen::MatrixXd tc_corr_each;       ///< N x q
};

/**
 * Compare a fit with the truth. Estimated maps live in whitened units, so
 * beta_hat is put on the scale of the truth by the least-squares slope of the
 * true population map on the matched estimate before the MSE is taken.
 */
Score score(const FitSummary& fit, const SimTruth& truth);

}  // namespace hcica
