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

#include "hcica/latent_space.hpp"

#include <cmath>
#include <limits>

namespace hcica {

StateSpace::StateSpace(SpaceKind kind, std::size_t q, std::size_t m, std::vector<LatentState> states)
	: kind_(kind), q_(q), m_(m), states_(std::move(states)) {
	index_.reserve(states_.size());
	active_offset_.reserve(states_.size() + 1);
	active_offset_.push_back(0);
	for (std::size_t r = 0; r < states_.size(); ++r) {
		index_.emplace(states_[r], r);
		for (std::size_t l = 0; l < q_; ++l)
			if (states_[r][l] != 0)
				active_.push_back({static_cast<std::uint32_t>(l), static_cast<std::uint32_t>(states_[r][l])});
		active_offset_.push_back(active_.size());
	}
}

StateSpace StateSpace::full(std::size_t q, std::size_t m, std::size_t cap) {
	if (q == 0 || m == 0) throw Error("enumerate_full: q and m must be positive");
	if (m > 255) throw Error("enumerate_full: m must be at most 255");
	std::size_t count = 1;
	for (std::size_t l = 0; l < q; ++l) {
		if (count > cap / m)
			throw Error("enumerate_full: m^q exceeds the state cap of " + std::to_string(cap) +
			            "; use the subspace state space instead");
		count *= m;
	}
	if (count > cap)
		throw Error("enumerate_full: m^q exceeds the state cap of " + std::to_string(cap) +
		            "; use the subspace state space instead");

	std::vector<LatentState> states;
	states.reserve(count);
	LatentState z{std::vector<std::uint8_t>(q, 0)};
	for (std::size_t r = 0; r < count; ++r) {
		states.push_back(z);
		// odometer increment, last entry fastest
		for (std::size_t k = q; k-- > 0;) {
			if (++z.z[k] < m) break;
			z.z[k] = 0;
		}
	}
	return StateSpace(SpaceKind::Full, q, m, std::move(states));
}

StateSpace StateSpace::subspace(std::size_t q, std::size_t m) {
	if (q == 0 || m == 0) throw Error("enumerate_subspace: q and m must be positive");
	if (m > 255) throw Error("enumerate_subspace: m must be at most 255");
	std::vector<LatentState> states;
	states.reserve((m - 1) * q + 1);
	LatentState bg{std::vector<std::uint8_t>(q, 0)};
	states.push_back(bg);
	for (std::size_t l = 0; l < q; ++l) {
		for (std::size_t j = 1; j < m; ++j) {
			LatentState z = bg;
			z.z[l] = static_cast<std::uint8_t>(j);
			states.push_back(std::move(z));
		}
	}
	return StateSpace(SpaceKind::Subspace, q, m, std::move(states));
}

StateSpace StateSpace::make(SpaceKind kind, std::size_t q, std::size_t m, std::size_t cap) {
	return kind == SpaceKind::Full ? full(q, m, cap) : subspace(q, m);
}

std::size_t StateSpace::find(const LatentState& z) const {
	auto it = index_.find(z);
	return it == index_.end() ? states_.size() : it->second;
}

std::span<const ActiveEntry> StateSpace::active(std::size_t r) const {
	return std::span<const ActiveEntry>(active_.data() + active_offset_[r], active_offset_[r + 1] - active_offset_[r]);
}

std::vector<std::size_t> StateSpace::restricted(std::size_t l, std::size_t j) const {
	if (l >= q_) throw Error("restricted_subspace: IC index " + std::to_string(l + 1) + " out of range");
	if (j >= m_) throw Error("restricted_subspace: component index " + std::to_string(j + 1) + " out of range");
	std::vector<std::size_t> out;
	for (std::size_t r = 0; r < states_.size(); ++r)
		if (states_[r][l] == j) out.push_back(r);
	return out;
}

std::vector<LatentState> restricted_subspace(const StateSpace& space, std::size_t l, std::size_t j) {
	std::vector<LatentState> out;
	for (auto r : space.restricted(l, j)) out.push_back(space[r]);
	return out;
}

OddsVector OddsVector::from_background(const Eigen::VectorXd& pi_background) {
	OddsVector o;
	o.kappa = (1.0 - pi_background.array()) / pi_background.array();
	return o;
}

double subspace_mass(const OddsVector& odds) {
	double num = 1.0;
	double den = 1.0;
	for (Eigen::Index l = 0; l < odds.kappa.size(); ++l) {
		double k = odds.kappa[l];
		if (!(k >= 0.0) || !std::isfinite(k)) throw Error("subspace_mass: odds must be finite and nonnegative");
		num += k;
		den *= 1.0 + k;
	}
	return num / den;
}

double theorem1_threshold(std::size_t q, double eps) {
	if (q == 0) throw Error("theorem1_threshold: q must be positive");
	if (!(eps > 0.0 && eps <= 1.0)) throw Error("theorem1_threshold: epsilon must lie in (0, 1]");
	double qd = static_cast<double>(q);
	return qd / (qd + std::sqrt(eps));
}

double state_prior(const std::vector<MoGParams>& mog, const LatentState& z) {
	double p = 1.0;
	for (std::size_t l = 0; l < z.size(); ++l) p *= mog[l].pi[z[l]];
	return p;
}

}  // namespace hcica
