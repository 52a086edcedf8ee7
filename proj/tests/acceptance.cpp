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
 * @file acceptance.cpp End-to-end acceptance run. Prints one PASS or FAIL
 * line per criterion plus the measured numbers behind it.
 *
 * Usage: hcica_acceptance [criterion ...]   (default: all of 1-8)
 *
 *****************************************************************************/

#include "hcica/em_engine.hpp"
#include "hcica/inference.hpp"
#include "hcica/latent_space.hpp"
#include "hcica/preproc.hpp"
#include "hcica/simgen.hpp"
#include "dense_reference.hpp"
#include "test_util.hpp"

#include <chrono>
#include <cstdarg>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <functional>
#include <numeric>
#include <set>
#include <string>
#include <vector>

using namespace hcica;
using hcica::testing::gaussian_matrix;

namespace {

using Clock = std::chrono::steady_clock;

double since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

struct Outcome {
	bool pass = false;
	std::vector<std::string> notes;
};

std::string fmt(const char* f, ...) __attribute__((format(printf, 1, 2)));
std::string fmt(const char* f, ...) {
	char buf[512];
	va_list ap;
	va_start(ap, f);
	std::vsnprintf(buf, sizeof buf, f, ap);
	va_end(ap);
	return buf;
}

double rel_close(double a, double b) { return std::abs(a - b) / std::max(1.0, std::abs(b)); }

double max_rel(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b) {
	if (a.rows() != b.rows() || a.cols() != b.cols()) return INFINITY;
	double w = 0.0;
	for (Eigen::Index j = 0; j < a.cols(); ++j)
		for (Eigen::Index i = 0; i < a.rows(); ++i) w = std::max(w, rel_close(a(i, j), b(i, j)));
	return w;
}

// ---------------------------------------------------------------------------
// shared pieces

struct Replicate {
	SimSpec spec;
	SimDataset ds;
	std::vector<SubjectData> data;
	CovariateSet X;
};

Replicate make_replicate(const SimSpec& spec) {
	Replicate r;
	r.spec = spec;
	r.ds = generate(spec);
	r.data = preproc::preprocess(r.ds.raw, spec.q);
	r.X.X = r.ds.truth.X;
	return r;
}

struct TimedFit {
	FitResult res;
	double seconds = 0.0;
};

TimedFit timed_fit(const Replicate& r, EMConfig cfg) {
	TimedFit t;
	auto t0 = Clock::now();
	t.res = fit(r.data, r.X, r.spec.dims(), cfg);
	t.seconds = since(t0);
	return t;
}

Score score_fit(const Replicate& r, const FitResult& res) {
	SourceMaps src = estimate_sources(res.posteriors, r.spec.N, r.spec.q);
	FitSummary fs;
	fs.population = src.population;
	fs.subjects = src.subjects;
	fs.A = res.params.A;
	fs.beta = res.params.beta;
	for (const auto& d : r.data) fs.dewhiten.push_back(preproc::dewhitener(d));
	return score(fs, r.ds.truth);
}

/// beta MSE of per-voxel least squares (intercept plus covariates) on the true subject maps.
double oracle_beta_mse(const SimTruth& tr) {
	const auto N = static_cast<Eigen::Index>(tr.s.size());
	const auto p = tr.X.cols();
	Eigen::MatrixXd Z(N, p + 1);
	Z.col(0).setOnes();
	Z.rightCols(p) = tr.X;
	const Eigen::MatrixXd H = (Z.transpose() * Z).ldlt().solve(Z.transpose());
	const auto q = tr.s0.rows();
	const auto V = tr.s0.cols();
	double acc = 0.0;
	for (Eigen::Index l = 0; l < q; ++l) {
		Eigen::MatrixXd R(N, V);
		for (Eigen::Index i = 0; i < N; ++i) R.row(i) = tr.s[static_cast<std::size_t>(i)].row(l);
		const Eigen::MatrixXd B = H * R;
		for (Eigen::Index v = 0; v < V; ++v)
			acc += (B.col(v).tail(p) - tr.beta[static_cast<std::size_t>(v)].col(l)).squaredNorm();
	}
	return acc / static_cast<double>(V);
}

// ---------------------------------------------------------------------------
// 1. subspace mass bound and closed form

double enumerate_subspace_mass(const std::vector<Eigen::VectorXd>& pi, std::size_t m) {
	const std::size_t q = pi.size();
	std::vector<std::size_t> z(q, 0);
	double total = 0.0;
	while (true) {
		std::size_t active = 0;
		double p = 1.0;
		for (std::size_t l = 0; l < q; ++l) {
			active += z[l] != 0;
			p *= pi[l][static_cast<Eigen::Index>(z[l])];
		}
		if (active <= 1) total += p;
		std::size_t k = q;
		for (;;) {
			if (k == 0) return total;
			--k;
			if (++z[k] < m) break;
			z[k] = 0;
		}
	}
}

Outcome criterion1() {
	Outcome o;
	std::mt19937_64 rng(20261016);
	std::uniform_real_distribution<double> u(0.0, 1.0);
	std::size_t cases = 0, bound_fail = 0;
	double worst_closed = 0.0, tightest = INFINITY;
	for (double eps : {0.01, 0.1, 0.5})
		for (std::size_t q = 1; q <= 6; ++q)
			for (std::size_t m = 2; m <= 3; ++m) {
				const double thr = theorem1_threshold(q, eps);
				for (int draw = 0; draw < 1000; ++draw) {
					std::vector<Eigen::VectorXd> pi;
					Eigen::VectorXd bg(static_cast<Eigen::Index>(q));
					for (std::size_t l = 0; l < q; ++l) {
						Eigen::VectorXd w(static_cast<Eigen::Index>(m));
						// every tenth draw sits right at the threshold
						double b = draw % 10 == 0 ? std::nextafter(thr, 1.0) : thr + (1.0 - thr) * u(rng);
						if (b <= thr) b = std::nextafter(thr, 1.0);
						w[0] = b;
						Eigen::VectorXd rest(static_cast<Eigen::Index>(m - 1));
						for (Eigen::Index j = 0; j < rest.size(); ++j) rest[j] = u(rng) + 1e-3;
						w.tail(static_cast<Eigen::Index>(m - 1)) = (1.0 - b) * rest / rest.sum();
						pi.push_back(w);
						bg[static_cast<Eigen::Index>(l)] = b;
					}
					const double mass = enumerate_subspace_mass(pi, m);
					++cases;
					if (!(mass > 1.0 - eps)) ++bound_fail;
					tightest = std::min(tightest, mass - (1.0 - eps));
					worst_closed = std::max(worst_closed, std::abs(subspace_mass(OddsVector::from_background(bg)) - mass));
				}
			}
	o.pass = bound_fail == 0 && worst_closed <= 1e-12;
	o.notes.push_back(fmt("%zu draws (q 1-6, m 2-3, eps 0.01/0.1/0.5): %zu below 1 - eps, smallest margin %.3g", cases,
	                      bound_fail, tightest));
	o.notes.push_back(fmt("closed-form subspace mass vs enumeration: max abs diff %.3g (limit 1e-12)", worst_closed));
	return o;
}

// ---------------------------------------------------------------------------
// 2. exact E-step against the dense reference

Outcome criterion2() {
	Outcome o;
	std::mt19937_64 rng(2);
	Dimensions d;
	d.N = 2;
	d.T = 4;
	d.V = 10;
	d.q = 2;
	d.p = 2;
	d.m = 2;
	ModelParams P = hcica::testing::random_params(d, rng);
	CovariateSet X = hcica::testing::random_covariates(2, 2, rng);
	auto data = hcica::testing::draw_data(P, X, 10, rng);
	auto space = StateSpace::full(2, 2);
	EStepOptions opt;
	opt.full_second = true;
	auto post = e_step(data, X, P, space, opt);
	double worst = 0.0;
	for (std::size_t v = 0; v < 10; ++v) {
		auto ref = hcica::testing::dense_mixture(hcica::testing::dense_states(P, X, data, v), 2, 2, 2, 2);
		const auto& got = post[v];
		for (std::size_t r = 0; r < ref.states.size(); ++r)
			worst = std::max(worst, rel_close(got.state_probs[space.find(ref.states[r])], ref.probs[r]));
		worst = std::max(worst, max_rel(got.s_mean, ref.mean));
		worst = std::max(worst, max_rel(got.s_second, ref.second));
		worst = std::max(worst, rel_close(got.log_evidence, ref.log_evidence));
		worst = std::max(worst, max_rel(got.ic_prob, ref.ic_prob));
		worst = std::max(worst, max_rel(got.s0_second, ref.second.block(4, 4, 2, 2)));
		for (std::size_t i = 0; i < 2; ++i)
			worst = std::max(worst, max_rel(got.subject_second(i),
			                                ref.second.block(static_cast<Eigen::Index>(2 * i), static_cast<Eigen::Index>(2 * i), 2, 2)));
	}
	o.pass = worst <= 1e-8;
	o.notes.push_back(fmt("q=2 m=2 N=2 V=10: max relative difference from dense conditioning %.3g (limit 1e-8)", worst));
	return o;
}

// ---------------------------------------------------------------------------
// 3. monotone log-likelihood

Outcome criterion3() {
	Outcome o;
	Replicate r = make_replicate(SimSpec::study1(10, Variability::Low, 1));
	EMConfig cfg;
	cfg.mode = EMMode::Exact;
	cfg.max_iters = 60;
	cfg.rel_tol = 1e-300;
	TimedFit f = timed_fit(r, cfg);
	const auto& ll = f.res.trace.loglik;
	int violations = 0;
	double worst = 0.0;
	for (std::size_t k = 1; k < ll.size(); ++k) {
		const double drop = (ll[k - 1] - ll[k]) / std::abs(ll[k - 1]);
		worst = std::max(worst, drop);
		if (drop > 1e-8) ++violations;
	}
	o.pass = ll.size() >= 50 && violations == 0 && f.seconds < 600.0;
	o.notes.push_back(fmt("Study I q=3 N=10 V=2500, exact: %zu iterations, log-likelihood %.6g -> %.6g", ll.size(),
	                      ll.front(), ll.back()));
	o.notes.push_back(fmt("decreases beyond 1e-8 relative: %d (largest relative step down %.3g), fit %.1f s", violations,
	                      std::max(0.0, worst), f.seconds));
	return o;
}

// ---------------------------------------------------------------------------
// 4. Study I at desk scale

Outcome criterion4() {
	Outcome o;
	const int reps = 100;
	std::vector<double> pop, sub, mse, floor;
	auto t0 = Clock::now();
	int unconverged = 0;
	for (int k = 0; k < reps; ++k) {
		Replicate r = make_replicate(SimSpec::study1(10, Variability::Low, 1000 + static_cast<std::uint64_t>(k)));
		EMConfig cfg;
		cfg.mode = EMMode::Exact;
		TimedFit f = timed_fit(r, cfg);
		unconverged += !f.res.converged;
		Score s = score_fit(r, f.res);
		pop.push_back(s.population_corr);
		sub.push_back(s.subject_corr);
		mse.push_back(s.beta_mse);
		floor.push_back(oracle_beta_mse(r.ds.truth));
	}
	const double secs = since(t0);
	auto mean_sd = [](const std::vector<double>& x) {
		const double m = std::accumulate(x.begin(), x.end(), 0.0) / static_cast<double>(x.size());
		double ss = 0.0;
		for (double v : x) ss += (v - m) * (v - m);
		return std::make_pair(m, std::sqrt(ss / static_cast<double>(x.size() - 1)));
	};
	auto [pm, ps] = mean_sd(pop);
	auto [sm, ss] = mean_sd(sub);
	auto [mm, msd] = mean_sd(mse);
	auto [fm, fsd] = mean_sd(floor);
	const bool ok_pop = pm >= 0.95, ok_sub = sm >= 0.95, ok_mse = mm <= 0.10;
	o.pass = ok_pop && ok_sub && ok_mse && secs < 4 * 3600.0;
	o.notes.push_back(fmt("%d replicates, N=10, low variability, exact EM, %.0f s total, %d hit the iteration cap", reps, secs,
	                      unconverged));
	o.notes.push_back(fmt("population map correlation %.3f (%.3f), need >= 0.95: %s", pm, ps, ok_pop ? "ok" : "not met"));
	o.notes.push_back(fmt("subject map correlation    %.3f (%.3f), need >= 0.95: %s", sm, ss, ok_sub ? "ok" : "not met"));
	o.notes.push_back(fmt("beta MSE                   %.3f (%.3f), need <= 0.10: %s", mm, msd, ok_mse ? "ok" : "not met"));
	o.notes.push_back(fmt("beta MSE of least squares on the true subject maps (no estimation error in the maps): %.3f (%.3f)",
	                      fm, fsd));
	return o;
}

// ---------------------------------------------------------------------------
// 5. exact vs subspace

double estep_seconds(const Replicate& r, const ModelParams& P, const StateSpace& space, int reps) {
	std::vector<VoxelPosterior> out;
	e_step_into(r.data, r.X, P, space, out);
	auto t0 = Clock::now();
	for (int k = 0; k < reps; ++k) e_step_into(r.data, r.X, P, space, out);
	return since(t0) / reps;
}

Outcome criterion5() {
	Outcome o;
	auto t0 = Clock::now();
	const int reps3 = 50;
	double worst_diff = 0.0, te3 = 0.0, ts3 = 0.0, mean_e = 0.0, mean_s = 0.0;
	for (int k = 0; k < reps3; ++k) {
		Replicate r = make_replicate(SimSpec::study1(10, Variability::Low, 2000 + static_cast<std::uint64_t>(k)));
		EMConfig cfg;
		cfg.mode = EMMode::Exact;
		TimedFit ex = timed_fit(r, cfg);
		cfg.mode = EMMode::Subspace;
		TimedFit su = timed_fit(r, cfg);
		const double ce = score_fit(r, ex.res).population_corr, cs = score_fit(r, su.res).population_corr;
		worst_diff = std::max(worst_diff, std::abs(ce - cs));
		mean_e += ce / reps3;
		mean_s += cs / reps3;
		te3 += ex.seconds;
		ts3 += su.seconds;
	}

	const int reps8 = 5;
	double te8 = 0.0, ts8 = 0.0, ee8 = 0.0, es8 = 0.0;
	for (int k = 0; k < reps8; ++k) {
		SimSpec spec = SimSpec::study1(10, Variability::Low, 3000 + static_cast<std::uint64_t>(k));
		spec.q = 8;
		spec.D = SimSpec::variability(Variability::Low, 8);
		Replicate r = make_replicate(spec);
		EMConfig cfg;
		cfg.max_iters = 100;
		cfg.mode = EMMode::Exact;
		TimedFit ex = timed_fit(r, cfg);
		cfg.mode = EMMode::Subspace;
		TimedFit su = timed_fit(r, cfg);
		te8 += ex.seconds;
		ts8 += su.seconds;
		ee8 += estep_seconds(r, su.res.params, StateSpace::full(8, 2), 3);
		es8 += estep_seconds(r, su.res.params, StateSpace::subspace(8, 2), 3);
	}
	const double r3 = ts3 / te3, r8 = ts8 / te8;
	const bool ok_corr = worst_diff <= 0.02, ok3 = r3 <= 0.7, ok8 = r8 <= 0.1;
	o.pass = ok_corr && ok3 && ok8;
	o.notes.push_back(fmt("q=3, %d replicates: population correlation exact %.4f, subspace %.4f, largest per-replicate gap "
	                      "%.4f (limit 0.02): %s",
	                      reps3, mean_e, mean_s, worst_diff, ok_corr ? "ok" : "not met"));
	o.notes.push_back(fmt("q=3 fit wall time: exact %.1f s, subspace %.1f s, ratio %.3f (limit 0.7): %s", te3, ts3, r3,
	                      ok3 ? "ok" : "not met"));
	o.notes.push_back(fmt("q=8, %d replicates, 100 iterations each: exact %.1f s, subspace %.1f s, ratio %.3f (limit 0.1): %s",
	                      reps8, te8, ts8, r8, ok8 ? "ok" : "not met"));
	o.notes.push_back(fmt("q=8 E-step alone: exact %.1f ms, subspace %.1f ms, ratio %.3f; the rest of an iteration "
	                      "(projection, M-step) is shared by both modes",
	                      1e3 * ee8 / reps8, 1e3 * es8 / reps8, es8 / ee8));
	o.notes.push_back(fmt("total %.0f s", since(t0)));
	return o;
}

// ---------------------------------------------------------------------------
// 6. Study III calibration and power

struct Rejections {
	double n0 = 0, r0 = 0, n1 = 0, r1 = 0;
};

Rejections study3_replicate(bool null_effects, std::uint64_t seed, double alpha, double power_beta) {
	Replicate r = make_replicate(SimSpec::study3(20, null_effects, seed));
	EMConfig cfg;
	cfg.mode = EMMode::Exact;
	FitResult res = fit(r.data, r.X, r.spec.dims(), cfg);
	InferenceMaps maps = run_inference(r.data, r.X, res.params, res.posteriors);
	SourceMaps src = estimate_sources(res.posteriors, r.spec.N, r.spec.q);
	Matching match = match_components(src.population, r.ds.truth.s0);
	const auto q = static_cast<Eigen::Index>(r.spec.q), p = static_cast<Eigen::Index>(r.spec.p());
	Rejections out;
	for (std::size_t v = 0; v < r.spec.V(); ++v)
		for (Eigen::Index k = 0; k < p; ++k)
			for (Eigen::Index l = 0; l < q; ++l) {
				const double b = r.ds.truth.beta[v](k, l);
				const Eigen::Index c = k * q + static_cast<Eigen::Index>(match.perm[static_cast<std::size_t>(l)]);
				const bool rej = maps.p_values(static_cast<Eigen::Index>(v), c) < alpha;
				if (b == 0.0) {
					out.n0 += 1;
					out.r0 += rej;
				} else if (b == power_beta) {
					out.n1 += 1;
					out.r1 += rej;
				}
			}
	return out;
}

Outcome criterion6() {
	Outcome o;
	auto t0 = Clock::now();
	Rejections null_tot;
	double lo = 1.0, hi = 0.0;
	for (int k = 0; k < 500; ++k) {
		Rejections r = study3_replicate(true, 5000 + static_cast<std::uint64_t>(k), 0.05, 3.0);
		null_tot.n0 += r.n0;
		null_tot.r0 += r.r0;
		lo = std::min(lo, r.r0 / r.n0);
		hi = std::max(hi, r.r0 / r.n0);
	}
	Rejections eff_tot;
	const int power_reps = 100;
	for (int k = 0; k < power_reps; ++k) {
		Rejections r = study3_replicate(false, 9000 + static_cast<std::uint64_t>(k), 0.05, 3.0);
		eff_tot.n1 += r.n1;
		eff_tot.r1 += r.r1;
	}
	const double type1 = null_tot.r0 / null_tot.n0, power = eff_tot.r1 / eff_tot.n1;
	const double secs = since(t0);
	const bool ok1 = type1 >= 0.03 && type1 <= 0.09, okp = power >= 0.80;
	o.pass = ok1 && okp && secs < 7200.0;
	o.notes.push_back(fmt("500 null replicates, N=20: type-I error at 0.05 = %.4f over %.0f tests (per replicate %.3f to "
	                      "%.3f), need [0.03, 0.09]: %s",
	                      type1, null_tot.n0, lo, hi, ok1 ? "ok" : "not met"));
	o.notes.push_back(fmt("%d effect replicates, N=20: power at beta = 3.0 is %.4f over %.0f tests, need >= 0.80: %s",
	                      power_reps, power, eff_tot.n1, okp ? "ok" : "not met"));
	o.notes.push_back(fmt("total %.0f s", secs));
	return o;
}

// ---------------------------------------------------------------------------
// 7. structural invariants

Outcome criterion7() {
	Outcome o;
	auto t0 = Clock::now();
	double orth = 0.0, norm_err = 0.0, psd = 0.0;
	for (int k = 0; k < 3; ++k)
		for (EMMode mode : {EMMode::Exact, EMMode::Subspace}) {
			Replicate r = make_replicate(SimSpec::study1(10, Variability::Medium, 7000 + static_cast<std::uint64_t>(k)));
			EMConfig cfg;
			cfg.mode = mode;
			FitResult res = fit(r.data, r.X, r.spec.dims(), cfg);
			for (const auto& A : res.params.A)
				orth = std::max(orth, (A.transpose() * A - Eigen::MatrixXd::Identity(3, 3)).cwiseAbs().maxCoeff());
			for (const auto& p : res.posteriors) {
				norm_err = std::max(norm_err, std::abs(std::accumulate(p.state_probs.begin(), p.state_probs.end(), 0.0) - 1.0));
				for (Eigen::Index l = 0; l < 3; ++l) norm_err = std::max(norm_err, std::abs(p.ic_prob.row(l).sum() - 1.0));
				Eigen::VectorXd m0 = p.s_mean.tail(3);
				Eigen::MatrixXd C0 = p.s0_second - m0 * m0.transpose();
				for (const Eigen::MatrixXd& C : {Eigen::MatrixXd(p.subject_cov), C0}) {
					Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(0.5 * (C + C.transpose()));
					const double scale = std::max(1.0, es.eigenvalues().cwiseAbs().maxCoeff());
					psd = std::max(psd, -es.eigenvalues().minCoeff() / scale);
				}
			}
			// full joint covariance on a few voxels
			EStepOptions eo;
			eo.full_second = true;
			auto full = e_step(r.data, r.X, res.params, StateSpace::make(space_kind(mode), 3, 2), eo);
			for (std::size_t v = 0; v < full.size(); v += 97) {
				Eigen::MatrixXd C = full[v].s_second - full[v].s_mean * full[v].s_mean.transpose();
				Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(0.5 * (C + C.transpose()));
				psd = std::max(psd, -es.eigenvalues().minCoeff() / std::max(1.0, es.eigenvalues().cwiseAbs().maxCoeff()));
			}
		}

	// step-up adjustment against hand-computed values
	double fdr_err = 0.0;
	for (double x : fdr_adjust({0.01, 0.02, 0.03, 0.04})) fdr_err = std::max(fdr_err, std::abs(x - 1.0 / 12.0));
	auto b = fdr_adjust({0.5, 0.001, 0.03, 0.02});
	fdr_err = std::max({fdr_err, std::abs(b[0] - 1.0), std::abs(b[1] - 0.1 / 12.0), std::abs(b[2] - 3.0 / 36.0),
	                    std::abs(b[3] - 3.0 / 36.0)});
	fdr_err = std::max(fdr_err, std::abs(fdr_adjust({0.037})[0] - 0.037));

	// thread counts
	Replicate r = make_replicate(SimSpec::study1(10, Variability::Low, 7100));
	EMConfig cfg;
	cfg.threads = 1;
	FitResult a = fit(r.data, r.X, r.spec.dims(), cfg);
	cfg.threads = 3;
	FitResult c = fit(r.data, r.X, r.spec.dims(), cfg);
	double thread_diff = a.trace.iterations() == c.trace.iterations()
	                         ? (a.params.flatten() - c.params.flatten()).cwiseAbs().maxCoeff()
	                         : INFINITY;
	InferenceOptions io;
	io.threads = 1;
	InferenceMaps ma = run_inference(r.data, r.X, a.params, a.posteriors, io);
	io.threads = 3;
	InferenceMaps mc = run_inference(r.data, r.X, a.params, a.posteriors, io);
	thread_diff = std::max(thread_diff, (ma.z_stats - mc.z_stats).cwiseAbs().maxCoeff());

	const double secs = since(t0);
	o.pass = orth <= 1e-8 && norm_err <= 1e-10 && psd <= 1e-10 && fdr_err <= 1e-15 && thread_diff <= 1e-10 &&
	         secs < 300.0;
	o.notes.push_back(fmt("max |A'A - I| %.3g (1e-8); max normalisation error %.3g (1e-10); most negative scaled "
	                      "covariance eigenvalue %.3g (1e-10)",
	                      orth, norm_err, -psd));
	o.notes.push_back(fmt("step-up adjustment vs hand values %.3g; 1 vs 3 threads max difference %.3g (1e-10); %.0f s",
	                      fdr_err, thread_diff, secs));
	return o;
}

// ---------------------------------------------------------------------------
// 8. M-step optimality

Outcome criterion8() {
	Outcome o;
	auto t0 = Clock::now();
	std::mt19937_64 rng(8);
	Dimensions d;
	d.N = 5;
	d.T = 6;
	d.V = 80;
	d.q = 3;
	d.p = 2;
	d.m = 2;
	ModelParams P0 = hcica::testing::random_params(d, rng);
	CovariateSet X = hcica::testing::random_covariates(d.N, d.p, rng);
	auto data = hcica::testing::draw_data(P0, X, d.V, rng);
	auto post = e_step(data, X, P0, StateSpace::full(3, 2));
	MStepOptions mo;
	mo.resort = false;
	const ModelParams best = m_step(data, X, post, P0, mo);
	const double q_best = q_function(best, post, data, X).total();
	const double slack = 1e-10 * std::abs(q_best);
	std::normal_distribution<double> g(0.0, 1.0);

	std::vector<std::pair<std::string, int>> worse;
	auto block = [&](const std::string& name, const std::function<void(ModelParams&)>& perturb) {
		int n = 0;
		for (int t = 0; t < 100; ++t) {
			ModelParams P = best;
			perturb(P);
			if (q_function(P, post, data, X).total() > q_best + slack) ++n;
		}
		worse.emplace_back(name, n);
	};
	const double sc = 0.05;
	block("A", [&](ModelParams& P) {
		for (auto& A : P.A) {
			Eigen::MatrixXd S = sc * gaussian_matrix(3, 3, rng);
			Eigen::MatrixXd K = 0.5 * (S - S.transpose());
			A = A * (Eigen::MatrixXd::Identity(3, 3) - K).inverse() * (Eigen::MatrixXd::Identity(3, 3) + K);  // Cayley
		}
	});
	block("beta", [&](ModelParams& P) {
		for (auto& B : P.beta) B += sc * gaussian_matrix(B.rows(), B.cols(), rng);
	});
	block("nu0^2", [&](ModelParams& P) { P.nu0_sq *= std::exp(sc * g(rng)); });
	block("D", [&](ModelParams& P) {
		for (Eigen::Index l = 0; l < P.D.size(); ++l) P.D[l] *= std::exp(sc * g(rng));
	});
	block("pi", [&](ModelParams& P) {
		for (auto& m : P.mog) {
			for (Eigen::Index j = 0; j < m.pi.size(); ++j) m.pi[j] *= std::exp(sc * g(rng));
			m.pi /= m.pi.sum();
		}
	});
	block("mu", [&](ModelParams& P) {
		for (auto& m : P.mog)
			for (Eigen::Index j = 0; j < m.mu.size(); ++j) m.mu[j] += sc * g(rng);
	});
	block("sigma^2", [&](ModelParams& P) {
		for (auto& m : P.mog)
			for (Eigen::Index j = 0; j < m.sigma2.size(); ++j) m.sigma2[j] *= std::exp(sc * g(rng));
	});

	const double h = 1e-5;
	auto grad = [&](const std::function<void(ModelParams&, double)>& set) {
		auto at = [&](double dd) {
			ModelParams P = best;
			set(P, dd);
			return q_function(P, post, data, X).total();
		};
		return (-at(2 * h) + 8 * at(h) - 8 * at(-h) + at(-2 * h)) / (12 * h);
	};
	double gmu = 0.0, gs2 = 0.0, gbeta = 0.0;
	for (std::size_t l = 0; l < 3; ++l)
		for (Eigen::Index j = 0; j < 2; ++j) {
			gmu = std::max(gmu, std::abs(grad([&](ModelParams& P, double dd) { P.mog[l].mu[j] += dd; })));
			gs2 = std::max(gs2, std::abs(grad([&](ModelParams& P, double dd) { P.mog[l].sigma2[j] += dd; })));
		}
	for (std::size_t v = 0; v < d.V; v += 5)
		for (Eigen::Index k = 0; k < 2; ++k)
			for (Eigen::Index l = 0; l < 3; ++l)
				gbeta = std::max(gbeta, std::abs(grad([&](ModelParams& P, double dd) { P.beta[v](k, l) += dd; })));

	int total_worse = 0;
	std::string per;
	for (const auto& [name, n] : worse) {
		total_worse += n;
		per += fmt("%s%s %d", per.empty() ? "" : ", ", name.c_str(), n);
	}
	const double secs = since(t0);
	o.pass = total_worse == 0 && gmu <= 1e-6 && gs2 <= 1e-6 && gbeta <= 1e-6 && secs < 300.0;
	o.notes.push_back(fmt("perturbations (100 per block) that raised Q: %s", per.c_str()));
	o.notes.push_back(fmt("largest |dQ| at the update: mu %.3g, sigma^2 %.3g, beta %.3g (limit 1e-6); %.1f s", gmu, gs2,
	                      gbeta, secs));
	return o;
}

}  // namespace

int main(int argc, char** argv) {
	std::set<int> only;
	for (int a = 1; a < argc; ++a) only.insert(std::atoi(argv[a]));
	const std::vector<std::pair<const char*, std::function<Outcome()>>> criteria{
		{"subspace mass bound and closed form", criterion1},
		{"exact E-step against dense conditioning", criterion2},
		{"monotone observed log-likelihood", criterion3},
		{"Study I recovery at N=10", criterion4},
		{"exact vs subspace agreement and cost", criterion5},
		{"Study III type-I error and power", criterion6},
		{"structural invariants", criterion7},
		{"M-step optimality", criterion8},
	};
	std::vector<std::string> lines;
	int failed = 0;
	for (std::size_t k = 0; k < criteria.size(); ++k) {
		const int id = static_cast<int>(k) + 1;
		if (!only.empty() && !only.count(id)) continue;
		auto t0 = Clock::now();
		Outcome o;
		try {
			o = criteria[k].second();
		} catch (const std::exception& e) {
			o.pass = false;
			o.notes.push_back(std::string("error: ") + e.what());
		}
		const std::string line = fmt("criterion %d %s: %s (%.1f s)", id, o.pass ? "PASS" : "FAIL", criteria[k].first, since(t0));
		std::printf("%s\n", line.c_str());
		for (const auto& n : o.notes) std::printf("    %s\n", n.c_str());
		std::fflush(stdout);
		lines.push_back(line);
		failed += !o.pass;
	}
	std::printf("\nsummary\n");
	for (const auto& l : lines) std::printf("  %s\n", l.c_str());
	std::printf("%zu criteria run, %d failed\n", lines.size(), failed);
	// failures are reported above and do not fail the test run
	return 0;
}
