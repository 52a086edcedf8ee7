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
 * @file latent_space.hpp Enumeration of latent state vectors z(v), either
 * the full product space {1..m}^q or the sparse subspace in which at most one
 * IC leaves its background component.
 *
 *****************************************************************************/

#pragma once

#include "hcica/types.hpp"

#include <span>
#include <unordered_map>
#include <utility>

namespace hcica {

enum class SpaceKind { Full, Subspace };

/// A non-background entry of a state: IC l sits in component j (j >= 1).
struct ActiveEntry {
	std::uint32_t l;
	std::uint32_t j;
};

class StateSpace {
public:
	static constexpr std::size_t kDefaultFullCap = std::size_t{1} << 24;

	/// All m^q states in lexicographic order. Throws if m^q exceeds cap.
	static StateSpace full(std::size_t q, std::size_t m, std::size_t cap = kDefaultFullCap);

	/// The all-background state followed by every single-activation state,
	/// grouped by IC then component: (m-1)q + 1 states.
	static StateSpace subspace(std::size_t q, std::size_t m);

	static StateSpace make(SpaceKind kind, std::size_t q, std::size_t m, std::size_t cap = kDefaultFullCap);

	SpaceKind kind() const { return kind_; }
	std::size_t q() const { return q_; }
	std::size_t m() const { return m_; }
	std::size_t size() const { return states_.size(); }
	const std::vector<LatentState>& states() const { return states_; }
	const LatentState& operator[](std::size_t r) const { return states_[r]; }

	/// Position of z in this space, or size() when absent.
	std::size_t find(const LatentState& z) const;
	bool contains(const LatentState& z) const { return find(z) != size(); }

	/// Non-background entries of state r.
	std::span<const ActiveEntry> active(std::size_t r) const;

	/// Indices of the states with z_l = j (l, j 0-based).
	std::vector<std::size_t> restricted(std::size_t l, std::size_t j) const;

private:
	StateSpace(SpaceKind kind, std::size_t q, std::size_t m, std::vector<LatentState> states);

	SpaceKind kind_;
	std::size_t q_;
	std::size_t m_;
	std::vector<LatentState> states_;
	std::unordered_map<LatentState, std::size_t, LatentStateHash> index_;
	std::vector<ActiveEntry> active_;
	std::vector<std::size_t> active_offset_;
};

/// States of space with z_l = j, as values.
std::vector<LatentState> restricted_subspace(const StateSpace& space, std::size_t l, std::size_t j);

/// Odds of leaving the background component, kappa_l = (1 - pi_l1) / pi_l1.
struct OddsVector {
	Eigen::VectorXd kappa;

	static OddsVector from_background(const Eigen::VectorXd& pi_background);
};

/// Prior mass of the subspace under independent entries:
///   F(kappa) = (1 + sum kappa) / prod (1 + kappa).
double subspace_mass(const OddsVector& odds);

/// Background probability above which the subspace holds more than 1 - eps
/// of the prior mass: q / (q + sqrt(eps)). Requires 0 < eps <= 1.
double theorem1_threshold(std::size_t q, double eps);

/// Prior probability of state z under independent entries, prod_l pi_{l, z_l}.
double state_prior(const std::vector<MoGParams>& mog, const LatentState& z);

}  // namespace hcica
