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

#include "hcica/simgen.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <numeric>
#include <random>

namespace hcica {

Dimensions SimSpec::dims() const {
	Dimensions d;
	d.N = N;
	d.T = T;
	d.V = V();
	d.q = q;
	d.p = p();
	d.m = m;
	return d;
}

void SimSpec::validate() const {
	if (N == 0 || T == 0 || q == 0) throw Error("SimSpec: N, T and q must be positive");
	if (q >= T) throw Error("SimSpec: q must be smaller than T");
	if (grid[0] == 0 || grid[1] == 0 || grid[2] == 0) throw Error("SimSpec: grid dimensions must be positive");
	if (covariates.empty()) throw Error("SimSpec: at least one covariate is required");
	if (N < covariates.size()) throw Error("SimSpec: fewer subjects than covariates");
	if (static_cast<std::size_t>(D.size()) != q) throw Error("SimSpec: D must have q entries");
	for (Eigen::Index l = 0; l < D.size(); ++l)
		if (!(D[l] >= 0.0)) throw Error("SimSpec: D entries must be nonnegative");
	if (!(noise_sd >= 0.0)) throw Error("SimSpec: noise_sd must be nonnegative");
	if (!(s0_noise_var >= 0.0)) throw Error("SimSpec: s0_noise_var must be nonnegative");
	if (!(active_fraction > 0.0 && active_fraction <= 1.0)) throw Error("SimSpec: active_fraction must lie in (0, 1]");
	if (!(effect_fraction > 0.0 && effect_fraction <= 1.0)) throw Error("SimSpec: effect_fraction must lie in (0, 1]");
	if (!(overlap_fraction >= 0.0 && overlap_fraction < 1.0)) throw Error("SimSpec: overlap_fraction must lie in [0, 1)");
	if (!null_effects && beta_values.empty()) throw Error("SimSpec: beta_values must not be empty");
	if (sinusoids == 0) throw Error("SimSpec: at least one sinusoid per time course");
	if (!(std::abs(ar_coef) < 1.0)) throw Error("SimSpec: ar_coef must lie in (-1, 1)");
}

Eigen::VectorXd SimSpec::variability(Variability level, std::size_t q) {
	std::array<double, 3> base{0.1, 0.3, 0.5};
	switch (level) {
	case Variability::Low: break;
	case Variability::Medium: base = {1.0, 1.2, 1.4}; break;
	case Variability::High: base = {1.8, 2.0, 2.5}; break;
	}
	Eigen::VectorXd D(static_cast<Eigen::Index>(q));
	for (std::size_t l = 0; l < q; ++l) D[static_cast<Eigen::Index>(l)] = base[l % 3];
	return D;
}

SimSpec SimSpec::study1(std::size_t N, Variability level, std::uint64_t seed) {
	SimSpec s;
	s.N = N;
	s.q = 3;
	s.D = variability(level, 3);
	s.seed = seed;
	return s;
}

SimSpec SimSpec::study3(std::size_t N, bool null_effects, std::uint64_t seed) {
	SimSpec s;
	s.N = N;
	s.q = 2;
	s.grid = {20, 20, 1};
	s.D = Eigen::VectorXd::Constant(2, 0.25);
	s.noise_sd = std::sqrt(0.4);
	s.s0_noise_var = 0.0;
	s.null_effects = null_effects;
	s.seed = seed;
	return s;
}

namespace {

struct Block {
	std::size_t x0, y0, bx, by;
	bool contains(std::size_t x, std::size_t y) const { return x >= x0 && x < x0 + bx && y >= y0 && y < y0 + by; }
};

std::vector<Block> place_blocks(const SimSpec& spec) {
	const std::size_t nx = spec.grid[0], ny = spec.grid[1];
	const double area = spec.active_fraction * static_cast<double>(nx * ny);
	std::size_t bx = std::clamp<std::size_t>(static_cast<std::size_t>(std::llround(std::sqrt(area))), 1, nx);
	std::size_t by = std::clamp<std::size_t>(static_cast<std::size_t>(std::llround(area / static_cast<double>(bx))), 1, ny);
	std::size_t shift = bx - static_cast<std::size_t>(std::llround(spec.overlap_fraction * static_cast<double>(bx)));
	shift = std::max<std::size_t>(shift, 1);

	std::vector<Block> out;
	std::size_t x = 0, y = 0;
	for (std::size_t l = 0; l < spec.q; ++l) {
		if (x + bx > nx) {
			x = 0;
			y += by;
		}
		if (y + by > ny)
			throw Error("generate: a " + std::to_string(nx) + "x" + std::to_string(ny) + " grid cannot hold " +
			            std::to_string(spec.q) + " active regions of " + std::to_string(bx) + "x" + std::to_string(by));
		out.push_back({x, y, bx, by});
		x += shift;
	}
	return out;
}

}  // namespace

SimDataset generate(const SimSpec& spec) {
	spec.validate();
	const std::size_t nx = spec.grid[0], ny = spec.grid[1], nz = spec.grid[2];
	const std::size_t V = spec.V(), q = spec.q, N = spec.N, T = spec.T, p = spec.p();
	const auto qi = static_cast<Eigen::Index>(q);
	const auto Vi = static_cast<Eigen::Index>(V);
	const auto pi = static_cast<Eigen::Index>(p);
	const auto Ti = static_cast<Eigen::Index>(T);
	std::mt19937_64 rng(spec.seed);
	std::normal_distribution<double> gauss(0.0, 1.0);
	std::uniform_real_distribution<double> unif(0.0, 1.0);

	const auto blocks = place_blocks(spec);
	SimDataset ds;
	SimTruth& tr = ds.truth;

	tr.s0_signal = Eigen::MatrixXd::Zero(qi, Vi);
	tr.beta.assign(V, Eigen::MatrixXd::Zero(pi, qi));
	const std::size_t nb = spec.beta_values.size();
	auto effect_rows = [&](const Block& b) {
		return std::max<std::size_t>(1, static_cast<std::size_t>(std::llround(spec.effect_fraction * static_cast<double>(b.by))));
	};
	for (std::size_t z = 0; z < nz; ++z)
		for (std::size_t y = 0; y < ny; ++y)
			for (std::size_t x = 0; x < nx; ++x) {
				const std::size_t v = x + nx * (y + ny * z);
				for (std::size_t l = 0; l < q; ++l) {
					const Block& b = blocks[l];
					if (!b.contains(x, y)) continue;
					tr.s0_signal(static_cast<Eigen::Index>(l), static_cast<Eigen::Index>(v)) = spec.amplitude;
					if (spec.null_effects) continue;
					if (y - b.y0 >= effect_rows(b)) continue;
					// vertical strips across the block, one effect size each
					const std::size_t strip = (x - b.x0) * nb / b.bx;
					for (std::size_t k = 0; k < p; ++k) {
						const std::size_t idx = k % 2 == 0 ? strip : nb - 1 - strip;
						tr.beta[v](static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(l)) += spec.beta_values[idx];
					}
				}
			}

	const double s0_sd = std::sqrt(spec.s0_noise_var);
	tr.s0 = tr.s0_signal;
	for (Eigen::Index v = 0; v < Vi; ++v)
		for (Eigen::Index l = 0; l < qi; ++l) tr.s0(l, v) += s0_sd * gauss(rng);

	// covariates, redrawn in the rare case of a singular design
	CovariateSet cov;
	for (int attempt = 0;; ++attempt) {
		cov.X.resize(static_cast<Eigen::Index>(N), pi);
		for (std::size_t i = 0; i < N; ++i)
			for (std::size_t k = 0; k < p; ++k) {
				double u = unif(rng);
				cov.X(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(k)) =
					spec.covariates[k] == CovariateKind::Bernoulli ? (u < 0.5 ? 1.0 : 0.0) : 2.0 * u - 1.0;
			}
		if (validate(cov).empty()) break;
		if (attempt == 1000) throw Error("generate: could not draw a nonsingular covariate design");
	}
	tr.X = cov.X;

	tr.s.resize(N);
	const Eigen::VectorXd Dsd = spec.D.array().sqrt();
	for (std::size_t i = 0; i < N; ++i) {
		Eigen::MatrixXd S = tr.s0;
		const Eigen::VectorXd xi = tr.X.row(static_cast<Eigen::Index>(i)).transpose();
		for (Eigen::Index v = 0; v < Vi; ++v) {
			S.col(v) += tr.beta[static_cast<std::size_t>(v)].transpose() * xi;
			for (Eigen::Index l = 0; l < qi; ++l) S(l, v) += Dsd[l] * gauss(rng);
		}
		tr.s[i] = std::move(S);
	}

	// time courses: frequencies and amplitudes shared per IC, phases per subject
	const std::size_t K = spec.sinusoids;
	Eigen::MatrixXd freq(qi, static_cast<Eigen::Index>(K)), amp(qi, static_cast<Eigen::Index>(K));
	for (Eigen::Index l = 0; l < qi; ++l)
		for (Eigen::Index k = 0; k < static_cast<Eigen::Index>(K); ++k) {
			freq(l, k) = 0.01 + 0.09 * unif(rng);
			amp(l, k) = 0.5 + unif(rng);
		}
	const double ar_scale = spec.ar_sd;
	tr.time_courses.resize(N);
	ds.raw.resize(N);
	for (std::size_t i = 0; i < N; ++i) {
		Eigen::MatrixXd tc(Ti, qi);
		for (Eigen::Index l = 0; l < qi; ++l) {
			std::vector<double> phase(K);
			for (auto& ph : phase) ph = 2.0 * std::numbers::pi * unif(rng);
			double e = 0.0;
			for (Eigen::Index t = 0; t < Ti; ++t) {
				double val = 0.0;
				for (std::size_t k = 0; k < K; ++k)
					val += amp(l, static_cast<Eigen::Index>(k)) *
					       std::sin(2.0 * std::numbers::pi * freq(l, static_cast<Eigen::Index>(k)) * static_cast<double>(t) +
					                phase[k]);
				e = spec.ar_coef * e + ar_scale * gauss(rng);
				tc(t, l) = val + e;
			}
		}
		tc.rowwise() -= tc.colwise().mean();
		Eigen::MatrixXd M = std::sqrt(static_cast<double>(T)) * orthogonalize(tc);
		Eigen::MatrixXd Y = M * tr.s[i];
		for (Eigen::Index v = 0; v < Vi; ++v)
			for (Eigen::Index t = 0; t < Ti; ++t) Y(t, v) += spec.noise_sd * gauss(rng);
		tr.time_courses[i] = std::move(M);
		ds.raw[i] = std::move(Y);
	}
	return ds;
}

double correlation(const Eigen::Ref<const Eigen::VectorXd>& a, const Eigen::Ref<const Eigen::VectorXd>& b) {
	if (a.size() != b.size() || a.size() < 2) throw Error("correlation: inputs must have equal length >= 2");
	Eigen::ArrayXd x = a.array() - a.mean();
	Eigen::ArrayXd y = b.array() - b.mean();
	const double sx = std::sqrt((x * x).sum());
	const double sy = std::sqrt((y * y).sum());
	if (!(sx > 0.0) || !(sy > 0.0)) throw Error("correlation: zero-variance map");
	return (x * y).sum() / (sx * sy);
}

Matching match_components(const Eigen::MatrixXd& est, const Eigen::MatrixXd& truth, bool optimal) {
	if (est.rows() != truth.rows() || est.cols() != truth.cols())
		throw Error("match_components: estimated and true maps must have the same shape");
	const auto q = truth.rows();
	Eigen::MatrixXd C(q, q);  // C(true, est)
	for (Eigen::Index a = 0; a < q; ++a)
		for (Eigen::Index b = 0; b < q; ++b) C(a, b) = correlation(truth.row(a).transpose(), est.row(b).transpose());

	Matching m;
	m.perm.assign(static_cast<std::size_t>(q), 0);
	m.sign.assign(static_cast<std::size_t>(q), 1);
	m.corr.resize(q);

	if (optimal) {
		std::vector<std::size_t> cur(static_cast<std::size_t>(q));
		std::iota(cur.begin(), cur.end(), 0);
		double best = -1.0;
		do {
			double tot = 0.0;
			for (Eigen::Index a = 0; a < q; ++a) tot += std::abs(C(a, static_cast<Eigen::Index>(cur[static_cast<std::size_t>(a)])));
			if (tot > best) {
				best = tot;
				m.perm = cur;
			}
		} while (std::next_permutation(cur.begin(), cur.end()));
	} else {
		std::vector<char> used_t(static_cast<std::size_t>(q), 0), used_e(static_cast<std::size_t>(q), 0);
		for (Eigen::Index round = 0; round < q; ++round) {
			double best = -1.0;
			Eigen::Index bt = 0, be = 0;
			for (Eigen::Index a = 0; a < q; ++a) {
				if (used_t[static_cast<std::size_t>(a)]) continue;
				for (Eigen::Index b = 0; b < q; ++b) {
					if (used_e[static_cast<std::size_t>(b)]) continue;
					if (std::abs(C(a, b)) > best) {
						best = std::abs(C(a, b));
						bt = a;
						be = b;
					}
				}
			}
			used_t[static_cast<std::size_t>(bt)] = 1;
			used_e[static_cast<std::size_t>(be)] = 1;
			m.perm[static_cast<std::size_t>(bt)] = static_cast<std::size_t>(be);
		}
	}
	for (Eigen::Index a = 0; a < q; ++a) {
		double c = C(a, static_cast<Eigen::Index>(m.perm[static_cast<std::size_t>(a)]));
		m.sign[static_cast<std::size_t>(a)] = c < 0 ? -1 : 1;
		m.corr[a] = std::abs(c);
	}
	return m;
}

double beta_mse(const std::vector<Eigen::MatrixXd>& beta_hat, const std::vector<Eigen::MatrixXd>& beta,
                const Matching& match, const Eigen::VectorXd& scale) {
	if (beta_hat.size() != beta.size() || beta.empty()) throw Error("beta_mse: voxel counts differ");
	double acc = 0.0;
	for (std::size_t v = 0; v < beta.size(); ++v) {
		const auto& B = beta[v];
		for (Eigen::Index l = 0; l < B.cols(); ++l) {
			const auto src = static_cast<Eigen::Index>(match.perm[static_cast<std::size_t>(l)]);
			const double f = scale[l] * match.sign[static_cast<std::size_t>(l)];
			acc += (f * beta_hat[v].col(src) - B.col(l)).squaredNorm();
		}
	}
	return acc / static_cast<double>(beta.size());
}

Score score(const FitSummary& fit, const SimTruth& truth) {
	Score sc;
	sc.match = match_components(fit.population, truth.s0);
	const auto q = truth.s0.rows();
	const std::size_t N = truth.s.size();

	sc.scale.resize(q);
	for (Eigen::Index l = 0; l < q; ++l) {
		const auto src = static_cast<Eigen::Index>(sc.match.perm[static_cast<std::size_t>(l)]);
		Eigen::ArrayXd e = sc.match.sign[static_cast<std::size_t>(l)] * fit.population.row(src).transpose().array();
		Eigen::ArrayXd t = truth.s0.row(l).transpose().array();
		e -= e.mean();
		t -= t.mean();
		sc.scale[l] = (e * t).sum() / (e * e).sum();
	}
	sc.population_corr = sc.match.corr.mean();

	sc.subject_corr_each.resize(static_cast<Eigen::Index>(N), q);
	sc.tc_corr_each.setConstant(static_cast<Eigen::Index>(N), q, std::numeric_limits<double>::quiet_NaN());
	const bool have_tc = fit.dewhiten.size() == N && fit.A.size() == N && truth.time_courses.size() == N;
	for (std::size_t i = 0; i < N; ++i) {
		Eigen::MatrixXd tc;
		if (have_tc) tc = fit.dewhiten[i] * fit.A[i];
		for (Eigen::Index l = 0; l < q; ++l) {
			const auto src = static_cast<Eigen::Index>(sc.match.perm[static_cast<std::size_t>(l)]);
			const double sg = sc.match.sign[static_cast<std::size_t>(l)];
			sc.subject_corr_each(static_cast<Eigen::Index>(i), l) =
				correlation(sg * fit.subjects[i].row(src).transpose(), truth.s[i].row(l).transpose());
			if (have_tc)
				sc.tc_corr_each(static_cast<Eigen::Index>(i), l) =
					correlation(sg * tc.col(src), truth.time_courses[i].col(l));
		}
	}
	sc.subject_corr = sc.subject_corr_each.mean();
	sc.time_course_corr = have_tc ? sc.tc_corr_each.mean() : std::numeric_limits<double>::quiet_NaN();
	sc.beta_mse = beta_mse(fit.beta, truth.beta, sc.match, sc.scale);
	return sc;
}

}  // namespace hcica
