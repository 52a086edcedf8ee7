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
 * @file preproc.hpp Centering, dimension reduction and whitening of raw
 * T x V subject matrices.
 *
 *****************************************************************************/

#pragma once

#include "hcica/types.hpp"

namespace hcica::preproc {

/**
 * Remove each voxel's temporal mean, then each time point's spatial mean.
 * After the second pass both row and column means are zero. Constant rows
 * become zero.
 */
Eigen::MatrixXd center(const Eigen::MatrixXd& raw);

/**
 * Project centered data onto its top-q eigenvectors and whiten:
 *   Y = (Lambda_q - sigma^2 I)^{-1/2} U_q' Y_tilde
 * where sigma^2 is the mean of the T - q discarded eigenvalues of
 * Y_tilde Y_tilde' / V. Eigenvectors are signed so that their first
 * nonzero entry is positive.
 *
 * Throws Error when q >= T or when some retained eigenvalue does not exceed
 * sigma^2 ("insufficient signal subspace").
 */
SubjectData reduce_whiten(const Eigen::MatrixXd& centered, std::size_t q);

/// center() followed by reduce_whiten() for every subject.
std::vector<SubjectData> preprocess(const std::vector<Eigen::MatrixXd>& raw, std::size_t q);

/// Moore-Penrose inverse of the whitener (T x q); maps whitened time courses back.
Eigen::MatrixXd dewhitener(const SubjectData& s);

}  // namespace hcica::preproc
