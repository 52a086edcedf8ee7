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
 * @file em_engine.hpp Maximum likelihood estimation of the hierarchical
 * covariate ICA model by EM, over either the full latent state space or the
 * single-activation subspace.
 *
 *****************************************************************************/

#pragma once

#include "hcica/latent_space.hpp"
#include "hcica/types.hpp"

#include <cstdint>
#include <string>
#include <vector>

namespace hcica {

enum class EMMode { Exact, Subspace };

/// Denominator of the noise variance update: q*N*V (default) or T*N*V.
enum class NoiseDenominator { QNV, TNV };

/**
 * Mixing matrix update.
 *
 * Procrustes maximises the expected log-likelihood over orthogonal matrices
 * directly, A_i = H(sum_v y_i E[s_i]'). Orthogonalized first solves the
 * unconstrained problem, A_i = H((sum_v y_i E[s_i]')(sum_v E[s_i s_i'])^{-1}).
 */
enum class MixingUpdate { Procrustes, Orthogonalized };

SpaceKind space_kind(EMMode mode);
std::string to_string(EMMode mode);
EMMode parse_mode(const std::string& s);

struct EMConfig {
	EMMode mode = EMMode::Exact;
	std::size_t max_iters = 500;
	double rel_tol = 1e-4;
	std::uint64_t seed = 1;
	bool loglik_monitor = true;
	NoiseDenominator noise_denominator = NoiseDenominator::QNV;
	MixingUpdate mixing_update = MixingUpdate::Procrustes;
	std::size_t full_state_cap = StateSpace::kDefaultFullCap;
	int threads = 0;  ///< 0 keeps the OpenMP default

	void validate() const;
};

struct EMTrace {
	std::vector<double> rel_change;
	std::vector<double> loglik;   ///< NaN when not monitored
	std::vector<double> seconds;  ///< wall time of each iteration

	std::size_t iterations() const { return rel_change.size(); }
};

struct EStepOptions {
	bool full_second = false;  ///< also fill VoxelPosterior::s_second
	int threads = 0;
};

struct MStepOptions {
	NoiseDenominator noise_denominator = NoiseDenominator::QNV;
	std::size_t T = 0;  ///< only used with NoiseDenominator::TNV
	MixingUpdate mixing_update = MixingUpdate::Procrustes;
	bool resort = true;  ///< move the smallest |mu| component to the background slot
	double variance_floor = 1e-10;
	std::vector<std::string>* warnings = nullptr;
};

struct GaussianMoments {
	Eigen::VectorXd mean;
	Eigen::MatrixXd cov;
};

/// Terms of the expected complete-data log-likelihood (2 pi constants dropped).
struct QTerms {
	double q1 = 0.0;  ///< first-level Gaussian term
	double q2 = 0.0;  ///< random-effect term
	double q3 = 0.0;  ///< mixture-component term
	double q4 = 0.0;  ///< mixing-proportion term

	double total() const { return q1 + q2 + q3 + q4; }
	QTerms& operator+=(const QTerms& o);
};

struct SourceMaps {
	Eigen::MatrixXd population;             ///< q x V
	std::vector<Eigen::MatrixXd> subjects;  ///< N entries, q x V
};

struct FitResult {
	ModelParams params;
	EMTrace trace;
	std::vector<VoxelPosterior> posteriors;
	bool converged = false;
	std::vector<std::string> warnings;
};

/// Raised when an iteration produces non-finite values; carries the trace so far.
class FitError : public Error {
public:
	FitError(const std::string& what, EMTrace trace) : Error(what), trace_(std::move(trace)) {}
	const EMTrace& trace() const { return trace_; }

private:
	EMTrace trace_;
};

/// Stacked whitened observations [y_1(v); ...; y_N(v)].
Eigen::VectorXd stack_voxel(const std::vector<SubjectData>& data, std::size_t v);

/**
 * Starting values: fixed-point ICA on the temporally concatenated data,
 * back-projected per subject and orthogonalised; mixture parameters from
 * empirical quantiles of the initial population map.
 */
ModelParams initialize(const std::vector<SubjectData>& data, const CovariateSet& X, const Dimensions& dims,
                       std::uint64_t seed, std::vector<std::string>* warnings = nullptr);

/// Gaussian posterior of the stacked sources s(v) = [s_1; ...; s_N; s_0] given z.
GaussianMoments posterior_s_given_z(const CollapsedModel& model, const Eigen::VectorXd& y_stack,
                                    const LatentState& z, const ModelParams& params);

/// p[z | y] over the states of space, in space order.
std::vector<double> posterior_z(const CollapsedModel& model, const Eigen::VectorXd& y_stack,
                                const ModelParams& params, const StateSpace& space);

/// Posterior summaries at every voxel.
std::vector<VoxelPosterior> e_step(const std::vector<SubjectData>& data, const CovariateSet& X,
                                   const ModelParams& params, const StateSpace& space,
                                   const EStepOptions& opt = {});

/// As e_step, reusing the storage of out.
void e_step_into(const std::vector<SubjectData>& data, const CovariateSet& X, const ModelParams& params,
                 const StateSpace& space, std::vector<VoxelPosterior>& out, const EStepOptions& opt = {});

ModelParams m_step(const std::vector<SubjectData>& data, const CovariateSet& X,
                   const std::vector<VoxelPosterior>& posteriors, const ModelParams& params_prev,
                   const MStepOptions& opt = {});

/// Expected complete-data log-likelihood of params under the given posteriors.
QTerms q_function(const ModelParams& params, const std::vector<VoxelPosterior>& posteriors,
                  const std::vector<SubjectData>& data, const CovariateSet& X);

/// Contribution of voxel v to q_function.
QTerms q_function_voxel(const ModelParams& params, const VoxelPosterior& post, const std::vector<SubjectData>& data,
                        const CovariateSet& X, std::size_t v);

/// Sum over voxels of the log marginal density of the data, summed over space.
double observed_loglik(const std::vector<SubjectData>& data, const CovariateSet& X, const ModelParams& params,
                       const StateSpace& space, int threads = 0);

FitResult fit(const std::vector<SubjectData>& data, const CovariateSet& X, const Dimensions& dims,
              const EMConfig& config);

/// Continue EM from given starting values.
FitResult fit_from(const std::vector<SubjectData>& data, const CovariateSet& X, const Dimensions& dims,
                   const EMConfig& config, ModelParams start);

SourceMaps estimate_sources(const std::vector<VoxelPosterior>& posteriors, std::size_t N, std::size_t q);

/// Reorder each mixture so the component with smallest |mu| is the background.
void sort_mixture_components(ModelParams& params);

}  // namespace hcica
