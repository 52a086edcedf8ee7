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
 * @file fastica.hpp Symmetric-decorrelation fixed-point ICA used to seed
 * the EM iterations.
 *
 *****************************************************************************/

#pragma once

#include <Eigen/Dense>

#include <cstddef>
#include <random>

namespace hcica {

struct FastIcaResult {
	Eigen::MatrixXd W;  ///< q x q orthogonal unmixing matrix
	Eigen::MatrixXd S;  ///< q x V estimated sources, W * Z
	bool converged = false;
	std::size_t iterations = 0;
};

/**
 * Fixed-point ICA with the log-cosh contrast and symmetric decorrelation,
 * on rows of Z (q x V, already white). The starting point is a random
 * orthogonal matrix drawn from rng.
 */
FastIcaResult fastica_symmetric(const Eigen::MatrixXd& Z, std::mt19937_64& rng, std::size_t max_iter = 1000,
                                double tol = 1e-10);

/// Haar-ish random orthogonal matrix: Q factor of a Gaussian matrix with signs fixed.
Eigen::MatrixXd random_orthogonal(std::size_t q, std::mt19937_64& rng);

/// Rows scaled to unit variance and projected to q whitened rows by PCA.
Eigen::MatrixXd pca_whiten(const Eigen::MatrixXd& X, std::size_t q);

}  // namespace hcica
