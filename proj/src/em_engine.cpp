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

#include "hcica/em_engine.hpp"

#include "hcica/fastica.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <limits>
#include <memory>
#include <numbers>
#include <random>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace hcica {

namespace {

constexpr double kLog2Pi = 1.8378770664093454835606594728112;

int resolve_threads(int threads) {
#ifdef _OPENMP
	return threads > 0 ? threads : omp_get_max_threads();
#else
	(void)threads;
	return 1;
#endif
}

void check_inputs(const std::vector<SubjectData>& data, const CovariateSet& X, std::size_t q) {
	if (data.empty()) throw Error("no subjects");
	const auto V = data[0].Y.cols();
	for (std::size_t i = 0; i < data.size(); ++i) {
		if (data[i].Y.rows() != static_cast<Eigen::Index>(q) || data[i].Y.cols() != V)
			throw Error("subject " + std::to_string(i) + ": Y must be q x V");
	}
	if (X.X.rows() != static_cast<Eigen::Index>(data.size()))
		throw Error("covariate matrix has " + std::to_string(X.X.rows()) + " rows for " +
		            std::to_string(data.size()) + " subjects");
}

/**
 * Per-voxel posterior machinery. Given z the model is Gaussian and, since
 * A_i is orthogonal and D, E are diagonal, the posterior precision of
 * (s_1..s_N, s_0) is an arrow matrix per IC: each s_il couples only to s_0l.
 * Eliminating the s_il leaves a scalar Schur complement per IC.
 *
 * With w_i = A_i'y_i, c_i = beta'x_i, alpha_l = D_l + nu^2:
 *   s_0l | y, z  ~ N(m0, tau),  tau = 1/(1/sigma2 + N/alpha),
 *                               m0 = mu + tau * sum_i (w_il - c_il - mu) / alpha
 *   s_il = u_il + rho_l s_0l + eta,  rho = nu^2/alpha, eta ~ N(0, D nu^2/alpha)
 * and w_l | z ~ N(c_l + mu 1, alpha I + sigma2 11').
 *
 * Everything about IC l depends on z only through z_l, so the q*m per-IC
 * terms are computed once per voxel and a state is scored from the
 * all-background value plus one correction per non-background entry.
 */
class VoxelKernel {
public:
	VoxelKernel(std::size_t N, double nu0_sq, const Eigen::VectorXd& D, const std::vector<MoGParams>& mog,
	            const StateSpace& space)
		: N_(N), q_(space.q()), m_(space.m()), space_(space) {
		if (!(nu0_sq > 0.0)) throw Error("noise variance must be positive");
		if (static_cast<std::size_t>(D.size()) != q_ || mog.size() != q_)
			throw Error("parameter dimensions do not match the state space");
		const double Nd = static_cast<double>(N_);
		alpha_.resize(q_);
		rho_.resize(q_);
		inv_a_.resize(q_);
		mu_.resize(q_ * m_);
		s2_.resize(q_ * m_);
		logpi_.resize(q_ * m_);
		logdet_.resize(q_ * m_);
		den_.resize(q_ * m_);
		tau_.resize(q_ * m_);
		for (std::size_t l = 0; l < q_; ++l) {
			if (!(D[static_cast<Eigen::Index>(l)] > 0.0))
				throw Error("random-effect variance D_" + std::to_string(l + 1) + " must be positive");
			if (static_cast<std::size_t>(mog[l].pi.size()) != m_)
				throw Error("mixture size does not match the state space");
			double a = D[static_cast<Eigen::Index>(l)] + nu0_sq;
			alpha_[l] = a;
			rho_[l] = nu0_sq / a;
			inv_a_[l] = D[static_cast<Eigen::Index>(l)] * nu0_sq / a;
			for (std::size_t j = 0; j < m_; ++j) {
				const auto jj = static_cast<Eigen::Index>(j);
				double s2 = mog[l].sigma2[jj];
				if (!(s2 > 0.0))
					throw Error("mixture variance sigma2_" + std::to_string(j + 1) + " of IC " + std::to_string(l + 1) +
					            " must be positive");
				std::size_t k = l * m_ + j;
				mu_[k] = mog[l].mu[jj];
				s2_[k] = s2;
				logpi_[k] = std::log(mog[l].pi[jj]);
				den_[k] = a + Nd * s2;
				logdet_[k] = (Nd - 1.0) * std::log(a) + std::log(den_[k]);
				tau_[k] = s2 * a / den_[k];
			}
		}
		logw_.resize(space_.size());
		ew_.resize(space_.size());
		icl_.resize(q_ * m_);
		icm0_.resize(q_ * m_);
		d_.resize(q_ * N_);
		u_.resize(q_ * N_);
		const auto qi = static_cast<Eigen::Index>(q_);
		pair_.resize(qi, qi);
		cov0_.resize(qi, qi);
		g_.resize(qi);
		var_.resize(qi);
		e0_.resize(qi);
	}

	/// w and c are q x N with column i for subject i.
	void load(const Eigen::Ref<const Eigen::MatrixXd>& w, const Eigen::Ref<const Eigen::MatrixXd>& c) {
		for (std::size_t i = 0; i < N_; ++i)
			for (std::size_t l = 0; l < q_; ++l) {
				const auto li = static_cast<Eigen::Index>(l);
				const auto ii = static_cast<Eigen::Index>(i);
				d_[l * N_ + i] = w(li, ii) - c(li, ii);
				u_[i * q_ + l] = (1.0 - rho_[l]) * w(li, ii) + rho_[l] * c(li, ii);
			}
	}

	/// Score every state of the space; returns the log normaliser.
	double evaluate() {
		const double Nd = static_cast<double>(N_);
		double bg = 0.0;
		for (std::size_t l = 0; l < q_; ++l) {
			const double* d = d_.data() + l * N_;
			const double a = alpha_[l];
			for (std::size_t j = 0; j < m_; ++j) {
				const std::size_t k = l * m_ + j;
				const double mu = mu_[k];
				double rs = 0.0, rq = 0.0;
				for (std::size_t i = 0; i < N_; ++i) {
					double x = d[i] - mu;
					rs += x;
					rq += x * x;
				}
				const double quad = (rq - s2_[k] * rs * rs / den_[k]) / a;
				icl_[k] = logpi_[k] - 0.5 * (Nd * kLog2Pi + logdet_[k] + quad);
				icm0_[k] = mu + tau_[k] * rs / a;
			}
			bg += icl_[l * m_];
		}

		const std::size_t S = space_.size();
		double best = -std::numeric_limits<double>::infinity();
		for (std::size_t r = 0; r < S; ++r) {
			double L = bg;
			for (const auto& e : space_.active(r)) L += icl_[e.l * m_ + e.j] - icl_[e.l * m_];
			logw_[r] = L;
			if (L > best) best = L;
		}
		if (!std::isfinite(best)) throw Error("posterior underflow");
		double acc = 0.0;
		for (std::size_t r = 0; r < S; ++r) {
			ew_[r] = std::exp(logw_[r] - best);
			acc += ew_[r];
		}
		inv_acc_ = 1.0 / acc;
		log_norm_ = best + std::log(acc);
		if (!std::isfinite(log_norm_)) throw Error("posterior underflow");
		return log_norm_;
	}

	/// Mixture moments by total expectation over the states; call after evaluate().
	void accumulate(VoxelPosterior& out, bool full_second) {
		const std::size_t S = space_.size();
		const auto q = static_cast<Eigen::Index>(q_);
		const auto m = static_cast<Eigen::Index>(m_);
		const std::size_t dim = (N_ + 1) * q_;

		out.state_probs.resize(S);
		out.s_mean.resize(static_cast<Eigen::Index>(dim));
		out.subject_cov.resize(q, q);
		out.s0_second.resize(q, q);
		out.cross_cov.resize(q);
		out.ic_prob.setZero(q, m);
		out.ic_s0_mean.resize(q, m);
		out.ic_s0_sq.resize(q, m);
		out.log_evidence = log_norm_;

		// s_0l given z_l = j is the same whatever the other entries are, so
		// m0 of a state is the background vector b plus one shift per entry
		Eigen::MatrixXd& C = pair_;
		C.setZero();
		for (std::size_t r = 0; r < S; ++r) {
			const double p = ew_[r] * inv_acc_;
			out.state_probs[r] = p;
			const auto act = space_.active(r);
			for (std::size_t a = 0; a < act.size(); ++a) {
				const auto la = static_cast<Eigen::Index>(act[a].l);
				out.ic_prob(la, static_cast<Eigen::Index>(act[a].j)) += p;
				const double da = shift(act[a]);
				for (std::size_t b = 0; b < a; ++b) C(la, static_cast<Eigen::Index>(act[b].l)) += p * da * shift(act[b]);
			}
		}

		Eigen::VectorXd& g = g_;
		Eigen::VectorXd& var = var_;
		for (Eigen::Index l = 0; l < q; ++l) {
			const auto ls = static_cast<std::size_t>(l);
			double rest = 0.0, gl = 0.0, sq = 0.0;
			for (Eigen::Index j = 1; j < m; ++j) {
				const double pr = out.ic_prob(l, j);
				const double dl = icm0_[ls * m_ + static_cast<std::size_t>(j)] - icm0_[ls * m_];
				rest += pr;
				gl += pr * dl;
				sq += pr * (dl * dl + tau_[ls * m_ + static_cast<std::size_t>(j)]);
			}
			out.ic_prob(l, 0) = std::max(0.0, 1.0 - rest);
			sq += out.ic_prob(l, 0) * tau_[ls * m_];
			g[l] = gl;
			var[l] = sq - gl * gl;
			for (Eigen::Index j = 0; j < m; ++j) {
				const std::size_t k = ls * m_ + static_cast<std::size_t>(j);
				out.ic_s0_mean(l, j) = icm0_[k];
				out.ic_s0_sq(l, j) = icm0_[k] * icm0_[k] + tau_[k];
			}
		}

		// Cov(s_0 | y): shifts of distinct ICs only meet in states with two or more entries
		Eigen::MatrixXd& cov0 = cov0_;
		for (Eigen::Index l = 0; l < q; ++l) {
			cov0(l, l) = var[l];
			for (Eigen::Index k = 0; k < l; ++k) {
				double c = C(l, k) + C(k, l) - g[l] * g[k];
				cov0(l, k) = c;
				cov0(k, l) = c;
			}
		}
		Eigen::VectorXd& e0 = e0_;
		for (Eigen::Index l = 0; l < q; ++l) e0[l] = icm0_[static_cast<std::size_t>(l) * m_] + g[l];
		out.s_mean.tail(q) = e0;
		out.s0_second = cov0;
		out.s0_second.noalias() += e0 * e0.transpose();

		// s_i = u_i + rho o s_0 + independent part, so the subject moments
		// follow from the mixture moments of s_0 alone
		for (std::size_t i = 0; i < N_; ++i) {
			const double* u = u_.data() + i * q_;
			double* sm = out.s_mean.data() + i * q_;
			for (std::size_t l = 0; l < q_; ++l) sm[l] = u[l] + rho_[l] * e0[static_cast<Eigen::Index>(l)];
		}
		for (Eigen::Index l = 0; l < q; ++l) {
			const auto ls = static_cast<std::size_t>(l);
			for (Eigen::Index k = 0; k < q; ++k) out.subject_cov(l, k) = rho_[ls] * rho_[static_cast<std::size_t>(k)] * cov0(l, k);
			out.subject_cov(l, l) += inv_a_[ls];
			out.cross_cov[l] = rho_[ls] * cov0(l, l);
		}

		if (full_second) {
			out.s_second.setZero(static_cast<Eigen::Index>(dim), static_cast<Eigen::Index>(dim));
			Eigen::VectorXd full_mean(static_cast<Eigen::Index>(dim));
			std::vector<double> m0(q_), tv(q_);
			for (std::size_t r = 0; r < S; ++r) {
				const double p = out.state_probs[r];
				for (std::size_t l = 0; l < q_; ++l) {
					m0[l] = icm0_[l * m_];
					tv[l] = tau_[l * m_];
				}
				for (const auto& e : space_.active(r)) {
					m0[e.l] = icm0_[e.l * m_ + e.j];
					tv[e.l] = tau_[e.l * m_ + e.j];
				}
				for (std::size_t i = 0; i < N_; ++i)
					for (std::size_t l = 0; l < q_; ++l)
						full_mean[static_cast<Eigen::Index>(i * q_ + l)] = u_[i * q_ + l] + rho_[l] * m0[l];
				for (std::size_t l = 0; l < q_; ++l) full_mean[static_cast<Eigen::Index>(N_ * q_ + l)] = m0[l];
				out.s_second.noalias() += p * full_mean * full_mean.transpose();
				add_conditional_cov(out.s_second, tv.data(), p);
			}
		} else {
			out.s_second.resize(0, 0);
		}
	}

	/// Dense conditional moments for one state (reference path).
	GaussianMoments state_moments(const LatentState& z) const {
		const std::size_t dim = (N_ + 1) * q_;
		GaussianMoments g;
		g.mean.resize(static_cast<Eigen::Index>(dim));
		g.cov.setZero(static_cast<Eigen::Index>(dim), static_cast<Eigen::Index>(dim));
		std::vector<double> m0(q_), tv(q_);
		for (std::size_t l = 0; l < q_; ++l) {
			auto [a, t] = conditional_s0(l, z[l]);
			m0[l] = a;
			tv[l] = t;
		}
		for (std::size_t i = 0; i < N_; ++i)
			for (std::size_t l = 0; l < q_; ++l)
				g.mean[static_cast<Eigen::Index>(i * q_ + l)] = u_[i * q_ + l] + rho_[l] * m0[l];
		for (std::size_t l = 0; l < q_; ++l) g.mean[static_cast<Eigen::Index>(N_ * q_ + l)] = m0[l];
		add_conditional_cov(g.cov, tv.data(), 1.0);
		return g;
	}

	const std::vector<double>& log_weights() const { return logw_; }

private:
	double shift(const ActiveEntry& e) const { return icm0_[e.l * m_ + e.j] - icm0_[e.l * m_]; }

	std::pair<double, double> conditional_s0(std::size_t l, std::size_t j) const {
		const std::size_t k = l * m_ + j;
		const double* d = d_.data() + l * N_;
		double rs = 0.0;
		for (std::size_t i = 0; i < N_; ++i) rs += d[i] - mu_[k];
		return {mu_[k] + tau_[k] * rs / alpha_[l], tau_[k]};
	}

	// Cov(s_il, s_kl) = [i == k] D nu^2/alpha + tau rho^2, Cov(s_il, s_0l) = tau rho, Var(s_0l) = tau
	void add_conditional_cov(Eigen::MatrixXd& M, const double* tv, double p) const {
		const std::size_t n = N_ + 1;
		for (std::size_t l = 0; l < q_; ++l) {
			for (std::size_t a = 0; a < n; ++a) {
				const double ca = a < N_ ? rho_[l] : 1.0;
				for (std::size_t b = 0; b < n; ++b) {
					const double cb = b < N_ ? rho_[l] : 1.0;
					double v = tv[l] * ca * cb;
					if (a == b && a < N_) v += inv_a_[l];
					M(static_cast<Eigen::Index>(a * q_ + l), static_cast<Eigen::Index>(b * q_ + l)) += p * v;
				}
			}
		}
	}

	std::size_t N_, q_, m_;
	const StateSpace& space_;
	std::vector<double> alpha_, rho_, inv_a_;
	std::vector<double> mu_, s2_, logpi_, logdet_, den_, tau_;
	std::vector<double> logw_, ew_, icl_, icm0_, d_, u_;
	Eigen::MatrixXd pair_, cov0_;
	Eigen::VectorXd g_, var_, e0_;
	double log_norm_ = 0.0;
	double inv_acc_ = 1.0;
};

// A_i'y_i and beta(v)'x_i for every voxel, voxel-major: q x N of each per voxel
struct Projected {
	std::size_t q = 0, N = 0;
	std::unique_ptr<double[]> wc;  // every entry is written by project()

	Eigen::Map<const Eigen::MatrixXd> w(std::size_t v) const {
		return {wc.get() + 2 * v * q * N, static_cast<Eigen::Index>(q), static_cast<Eigen::Index>(N)};
	}
	Eigen::Map<const Eigen::MatrixXd> c(std::size_t v) const {
		return {wc.get() + (2 * v + 1) * q * N, static_cast<Eigen::Index>(q), static_cast<Eigen::Index>(N)};
	}
};

Projected project(const std::vector<SubjectData>& data, const CovariateSet& X, const ModelParams& params) {
	Projected pr;
	pr.N = data.size();
	pr.q = static_cast<std::size_t>(data[0].Y.rows());
	const std::size_t q = pr.q, N = pr.N;
	const auto V = static_cast<std::size_t>(data[0].Y.cols());
	const auto p = X.X.cols();
	pr.wc.reset(new double[2 * V * q * N]);
	Eigen::MatrixXd W;
	for (std::size_t i = 0; i < N; ++i) {
		W.noalias() = params.A[i].transpose() * data[i].Y;
		for (std::size_t v = 0; v < V; ++v)
			std::copy_n(W.data() + v * q, q, pr.wc.get() + 2 * v * q * N + i * q);
	}
	for (std::size_t v = 0; v < V; ++v) {
		const Eigen::MatrixXd& B = params.beta[v];
		double* dst = pr.wc.get() + (2 * v + 1) * q * N;
		for (std::size_t i = 0; i < N; ++i)
			for (std::size_t l = 0; l < q; ++l) {
				double acc = 0.0;
				for (Eigen::Index k = 0; k < p; ++k)
					acc += B(k, static_cast<Eigen::Index>(l)) * X.X(static_cast<Eigen::Index>(i), k);
				dst[i * q + l] = acc;
			}
	}
	return pr;
}

void check_params(const ModelParams& params, std::size_t N, std::size_t V, std::size_t p, std::size_t q) {
	if (params.A.size() != N) throw Error("params: expected " + std::to_string(N) + " mixing matrices");
	if (params.beta.size() != V) throw Error("params: expected " + std::to_string(V) + " covariate effect maps");
	for (const auto& b : params.beta)
		if (b.rows() != static_cast<Eigen::Index>(p) || b.cols() != static_cast<Eigen::Index>(q))
			throw Error("params: beta(v) must be p x q");
	if (params.D.size() != static_cast<Eigen::Index>(q) || params.mog.size() != q)
		throw Error("params: D and mog must have q entries");
}

void warn(std::vector<std::string>* sink, std::string msg) {
	if (sink) sink->push_back(std::move(msg));
}

MoGParams init_mixture(const Eigen::VectorXd& s, std::size_t m) {
	const auto V = static_cast<std::size_t>(s.size());
	const auto mm = static_cast<Eigen::Index>(m);
	MoGParams g;
	g.pi.resize(mm);
	g.mu.resize(mm);
	g.sigma2.resize(mm);
	const double total_var = std::max((s.array() - s.mean()).square().mean(), 1e-12);
	const double floor = 1e-4 * total_var;

	auto group_var = [&](const std::vector<double>& x) {
		if (x.size() < 2) return floor;
		double mean = 0.0;
		for (double a : x) mean += a;
		mean /= static_cast<double>(x.size());
		double acc = 0.0;
		for (double a : x) acc += (a - mean) * (a - mean);
		return std::max(acc / static_cast<double>(x.size()), floor);
	};

	if (m == 1) {
		g.pi[0] = 1.0;
		g.mu[0] = 0.0;
		g.sigma2[0] = total_var;
		return g;
	}

	std::vector<std::size_t> order(V);
	for (std::size_t v = 0; v < V; ++v) order[v] = v;
	std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
		return s[static_cast<Eigen::Index>(a)] > s[static_cast<Eigen::Index>(b)];
	});

	const std::size_t k = m - 1;
	const std::size_t n_upper = (k + 1) / 2;
	const std::size_t n_tail =
		std::max<std::size_t>(1, static_cast<std::size_t>(std::llround(0.1 * static_cast<double>(V) / static_cast<double>(k))));
	std::vector<int> label(V, 0);
	for (std::size_t j = 1; j <= k; ++j) {
		const bool upper = j <= n_upper;
		const std::size_t bin = upper ? j - 1 : j - 1 - n_upper;
		for (std::size_t t = bin * n_tail; t < (bin + 1) * n_tail && t < V; ++t) {
			std::size_t pos = upper ? t : V - 1 - t;
			if (label[order[pos]] == 0) label[order[pos]] = static_cast<int>(j);
		}
	}
	std::vector<std::vector<double>> groups(m);
	for (std::size_t v = 0; v < V; ++v) groups[static_cast<std::size_t>(label[v])].push_back(s[static_cast<Eigen::Index>(v)]);

	g.pi[0] = 0.9;
	g.mu[0] = 0.0;
	g.sigma2[0] = group_var(groups[0]);
	for (std::size_t j = 1; j < m; ++j) {
		const auto jj = static_cast<Eigen::Index>(j);
		g.pi[jj] = 0.1 / static_cast<double>(k);
		double mean = 0.0;
		for (double a : groups[j]) mean += a;
		g.mu[jj] = groups[j].empty() ? 0.0 : mean / static_cast<double>(groups[j].size());
		g.sigma2[jj] = group_var(groups[j]);
	}
	return g;
}

}  // namespace

QTerms& QTerms::operator+=(const QTerms& o) {
	q1 += o.q1;
	q2 += o.q2;
	q3 += o.q3;
	q4 += o.q4;
	return *this;
}

SpaceKind space_kind(EMMode mode) { return mode == EMMode::Exact ? SpaceKind::Full : SpaceKind::Subspace; }

std::string to_string(EMMode mode) { return mode == EMMode::Exact ? "exact" : "subspace"; }

EMMode parse_mode(const std::string& s) {
	if (s == "exact") return EMMode::Exact;
	if (s == "subspace") return EMMode::Subspace;
	throw Error("unknown mode '" + s + "' (expected exact or subspace)");
}

void EMConfig::validate() const {
	if (!(rel_tol > 0.0)) throw Error("rel_tol must be positive");
	if (max_iters < 1) throw Error("max_iters must be at least 1");
}

Eigen::VectorXd stack_voxel(const std::vector<SubjectData>& data, std::size_t v) {
	const auto q = data.empty() ? 0 : data[0].Y.rows();
	Eigen::VectorXd y(static_cast<Eigen::Index>(data.size()) * q);
	for (std::size_t i = 0; i < data.size(); ++i)
		y.segment(static_cast<Eigen::Index>(i) * q, q) = data[i].Y.col(static_cast<Eigen::Index>(v));
	return y;
}

GaussianMoments posterior_s_given_z(const CollapsedModel& model, const Eigen::VectorXd& y_stack,
                                    const LatentState& z, const ModelParams& params) {
	if (z.size() != model.q) throw Error("posterior_s_given_z: state has the wrong length");
	const std::size_t m = params.mog.empty() ? 0 : static_cast<std::size_t>(params.mog[0].pi.size());
	for (std::size_t l = 0; l < z.size(); ++l)
		if (z[l] >= m) throw Error("posterior_s_given_z: state entry out of range");
	for (std::size_t l = 0; l < z.size(); ++l)
		if (!(params.mog[l].sigma2[z[l]] > 0.0)) throw Error("posterior_s_given_z: singular prior covariance");
	StateSpace space = StateSpace::subspace(model.q, m);
	VoxelKernel k(model.N, model.nu0_sq, model.D, params.mog, space);
	const auto q = static_cast<Eigen::Index>(model.q);
	const auto N = static_cast<Eigen::Index>(model.N);
	Eigen::VectorXd w = model.A_blk.transpose() * y_stack;
	k.load(Eigen::Map<const Eigen::MatrixXd>(w.data(), q, N), Eigen::Map<const Eigen::MatrixXd>(model.Bx.data(), q, N));
	return k.state_moments(z);
}

std::vector<double> posterior_z(const CollapsedModel& model, const Eigen::VectorXd& y_stack, const ModelParams& params,
                                const StateSpace& space) {
	if (space.size() == 0) throw Error("posterior_z: empty state space");
	VoxelKernel k(model.N, model.nu0_sq, model.D, params.mog, space);
	const auto q = static_cast<Eigen::Index>(model.q);
	const auto N = static_cast<Eigen::Index>(model.N);
	Eigen::VectorXd w = model.A_blk.transpose() * y_stack;
	k.load(Eigen::Map<const Eigen::MatrixXd>(w.data(), q, N), Eigen::Map<const Eigen::MatrixXd>(model.Bx.data(), q, N));
	double lz = k.evaluate();
	std::vector<double> out(space.size());
	for (std::size_t r = 0; r < space.size(); ++r) out[r] = std::exp(k.log_weights()[r] - lz);
	return out;
}

void e_step_into(const std::vector<SubjectData>& data, const CovariateSet& X, const ModelParams& params,
                 const StateSpace& space, std::vector<VoxelPosterior>& out, const EStepOptions& opt) {
	const std::size_t q = space.q();
	check_inputs(data, X, q);
	const std::size_t N = data.size();
	const auto V = static_cast<std::size_t>(data[0].Y.cols());
	check_params(params, N, V, static_cast<std::size_t>(X.X.cols()), q);

	const Projected pr = project(data, X, params);
	out.resize(V);
	std::string err;
	const int nt = resolve_threads(opt.threads);

#pragma omp parallel num_threads(nt)
	{
		std::string local_err;
		try {
			VoxelKernel k(N, params.nu0_sq, params.D, params.mog, space);
#pragma omp for schedule(static)
			for (std::size_t v = 0; v < V; ++v) {
				if (!local_err.empty()) continue;
				try {
					k.load(pr.w(v), pr.c(v));
					k.evaluate();
					k.accumulate(out[v], opt.full_second);
				} catch (const Error& e) {
					local_err = "voxel " + std::to_string(v) + ": " + e.what();
				}
			}
		} catch (const Error& e) {
			local_err = e.what();
		}
		if (!local_err.empty()) {
#pragma omp critical(hcica_estep_err)
			if (err.empty()) err = local_err;
		}
	}
	if (!err.empty()) throw Error("e_step: " + err);
}

std::vector<VoxelPosterior> e_step(const std::vector<SubjectData>& data, const CovariateSet& X,
                                   const ModelParams& params, const StateSpace& space, const EStepOptions& opt) {
	std::vector<VoxelPosterior> out;
	e_step_into(data, X, params, space, out, opt);
	return out;
}

double observed_loglik(const std::vector<SubjectData>& data, const CovariateSet& X, const ModelParams& params,
                       const StateSpace& space, int threads) {
	const std::size_t q = space.q();
	check_inputs(data, X, q);
	const std::size_t N = data.size();
	const auto V = static_cast<std::size_t>(data[0].Y.cols());
	check_params(params, N, V, static_cast<std::size_t>(X.X.cols()), q);
	const Projected pr = project(data, X, params);
	std::vector<double> per_voxel(V, 0.0);
	std::string err;
	const int nt = resolve_threads(threads);
#pragma omp parallel num_threads(nt)
	{
		std::string local_err;
		try {
			VoxelKernel k(N, params.nu0_sq, params.D, params.mog, space);
#pragma omp for schedule(static)
			for (std::size_t v = 0; v < V; ++v) {
				if (!local_err.empty()) continue;
				try {
					k.load(pr.w(v), pr.c(v));
					per_voxel[v] = k.evaluate();
				} catch (const Error& e) {
					local_err = "voxel " + std::to_string(v) + ": " + e.what();
				}
			}
		} catch (const Error& e) {
			local_err = e.what();
		}
		if (!local_err.empty()) {
#pragma omp critical(hcica_loglik_err)
			if (err.empty()) err = local_err;
		}
	}
	if (!err.empty()) throw Error("observed_loglik: " + err);
	double total = 0.0;
	for (double x : per_voxel) total += x;
	return total;
}

void sort_mixture_components(ModelParams& params) {
	for (auto& g : params.mog) {
		const Eigen::Index m = g.mu.size();
		Eigen::Index best = 0;
		for (Eigen::Index j = 1; j < m; ++j)
			if (std::abs(g.mu[j]) < std::abs(g.mu[best])) best = j;
		if (best == 0) continue;
		// move best to the front, keep the others in order
		for (Eigen::Index j = best; j > 0; --j) {
			std::swap(g.pi[j], g.pi[j - 1]);
			std::swap(g.mu[j], g.mu[j - 1]);
			std::swap(g.sigma2[j], g.sigma2[j - 1]);
		}
	}
}

ModelParams m_step(const std::vector<SubjectData>& data, const CovariateSet& X,
                   const std::vector<VoxelPosterior>& posteriors, const ModelParams& prev, const MStepOptions& opt) {
	const std::size_t N = data.size();
	if (N == 0) throw Error("m_step: no subjects");
	const auto q = data[0].Y.rows();
	const auto V = data[0].Y.cols();
	const auto p = X.X.cols();
	const auto qs = static_cast<std::size_t>(q);
	check_inputs(data, X, qs);
	check_params(prev, N, static_cast<std::size_t>(V), static_cast<std::size_t>(p), qs);
	if (posteriors.size() != static_cast<std::size_t>(V)) throw Error("m_step: one posterior per voxel required");
	const Eigen::Index m = prev.mog[0].pi.size();
	for (const auto& post : posteriors)
		if (post.subjects() != N || post.components() != qs || post.ic_prob.cols() != m)
			throw Error("m_step: posterior dimensions do not match the data");
	if (!validate(X).empty()) throw Error("m_step: X'X is singular (collinear covariates)");

	const auto Ni = static_cast<Eigen::Index>(N);
	const double Nd = static_cast<double>(N);
	const double Vd = static_cast<double>(V);
	ModelParams next;

	// posterior means laid out per subject as q x V, and the shared
	// conditional covariance terms summed over voxels
	std::vector<Eigen::MatrixXd> Sm(N, Eigen::MatrixXd(q, V));
	Eigen::MatrixXd S0(q, V);
	Eigen::MatrixXd Kacc = Eigen::MatrixXd::Zero(q, q);
	Eigen::VectorXd Dacc = Eigen::VectorXd::Zero(q);
	for (Eigen::Index v = 0; v < V; ++v) {
		const auto& post = posteriors[static_cast<std::size_t>(v)];
		const double* sm = post.s_mean.data();
		for (std::size_t i = 0; i < N; ++i) {
			double* dst = Sm[i].col(v).data();
			for (Eigen::Index l = 0; l < q; ++l) dst[l] = sm[static_cast<Eigen::Index>(i) * q + l];
		}
		for (Eigen::Index l = 0; l < q; ++l) {
			const double e0 = sm[Ni * q + l];
			S0(l, v) = e0;
			// Var(s_il - s_0l | y), the same for every subject
			Dacc[l] += Nd * (post.subject_cov(l, l) + post.s0_second(l, l) - e0 * e0 - 2.0 * post.cross_cov[l]);
		}
		Kacc += post.subject_cov;
	}
	std::vector<Eigen::MatrixXd> Diff(N);
	for (std::size_t i = 0; i < N; ++i) Diff[i] = Sm[i] - S0;

	// m1: covariate effects, least squares of E[s_i - s_0 | y] on x_i;
	// Bk holds row k of every beta(v) as a q x V matrix
	const Eigen::MatrixXd G = (X.X.transpose() * X.X).inverse() * X.X.transpose();  // p x N
	std::vector<Eigen::MatrixXd> Bk(static_cast<std::size_t>(p), Eigen::MatrixXd::Zero(q, V));
	for (Eigen::Index k = 0; k < p; ++k)
		for (std::size_t i = 0; i < N; ++i) Bk[static_cast<std::size_t>(k)] += G(k, static_cast<Eigen::Index>(i)) * Diff[i];
	next.beta.resize(static_cast<std::size_t>(V));
	for (Eigen::Index v = 0; v < V; ++v) {
		Eigen::MatrixXd& B = next.beta[static_cast<std::size_t>(v)];
		B.resize(p, q);
		for (Eigen::Index k = 0; k < p; ++k) B.row(k) = Bk[static_cast<std::size_t>(k)].col(v).transpose();
	}

	// m4 residuals with the new beta, and the m2 statistics
	// C_i = sum_v y_i E[s_i]', M_i = sum_v E[s_i s_i' | y]
	std::vector<Eigen::MatrixXd> Cs(N), Ms(N);
	Eigen::MatrixXd R(q, V);
	for (std::size_t i = 0; i < N; ++i) {
		const auto ii = static_cast<Eigen::Index>(i);
		R = Diff[i];
		for (Eigen::Index k = 0; k < p; ++k) R -= X.X(ii, k) * Bk[static_cast<std::size_t>(k)];
		Dacc += R.rowwise().squaredNorm();
		Cs[i].noalias() = data[i].Y * Sm[i].transpose();
		Ms[i].noalias() = Sm[i] * Sm[i].transpose();
		Ms[i] += Kacc;
	}

	// m2, m3: mixing matrices and noise variance
	next.A.resize(N);
	double resid = 0.0;
	for (std::size_t i = 0; i < N; ++i) {
		const Eigen::MatrixXd& C = Cs[i];
		const Eigen::MatrixXd& M = Ms[i];
		if (opt.mixing_update == MixingUpdate::Procrustes) {
			next.A[i] = orthogonalize(C);
		} else {
			next.A[i] = orthogonalize(C * M.inverse());
		}
		const auto& A = next.A[i];
		resid += data[i].Y.squaredNorm() - 2.0 * (A.transpose() * C).trace() + (A * M * A.transpose()).trace();
	}
	double denom = static_cast<double>(qs) * Nd * Vd;
	if (opt.noise_denominator == NoiseDenominator::TNV) {
		if (opt.T == 0) throw Error("m_step: T must be set for the TNV noise denominator");
		denom = static_cast<double>(opt.T) * Nd * Vd;
	}
	next.nu0_sq = resid / denom;
	if (!(next.nu0_sq >= opt.variance_floor)) {
		warn(opt.warnings, "noise variance update " + std::to_string(next.nu0_sq) + " floored");
		next.nu0_sq = opt.variance_floor;
	}

	// m4: random-effect variances with the new beta
	next.D = Dacc / (Nd * Vd);
	for (Eigen::Index l = 0; l < q; ++l)
		if (!(next.D[l] >= opt.variance_floor)) {
			warn(opt.warnings, "random-effect variance D_" + std::to_string(l + 1) + " floored");
			next.D[l] = opt.variance_floor;
		}

	// m5-m7: mixture parameters from the marginal moments
	next.mog.resize(qs);
	for (Eigen::Index l = 0; l < q; ++l) {
		Eigen::VectorXd P = Eigen::VectorXd::Zero(m), S1 = Eigen::VectorXd::Zero(m), S2 = Eigen::VectorXd::Zero(m);
		for (Eigen::Index v = 0; v < V; ++v) {
			const auto& post = posteriors[static_cast<std::size_t>(v)];
			for (Eigen::Index j = 0; j < m; ++j) {
				double pr = post.ic_prob(l, j);
				P[j] += pr;
				S1[j] += pr * post.ic_s0_mean(l, j);
				S2[j] += pr * post.ic_s0_sq(l, j);
			}
		}
		const auto& old = prev.mog[static_cast<std::size_t>(l)];
		MoGParams g;
		g.pi = P / Vd;
		g.pi /= g.pi.sum();
		g.mu.resize(m);
		g.sigma2.resize(m);
		for (Eigen::Index j = 0; j < m; ++j) {
			if (!(P[j] > 0.0)) {
				warn(opt.warnings, "IC " + std::to_string(l + 1) + " component " + std::to_string(j + 1) +
				                       " has no posterior mass; keeping its mean and variance");
				g.mu[j] = old.mu[j];
				g.sigma2[j] = old.sigma2[j];
				continue;
			}
			g.mu[j] = S1[j] / P[j];
			g.sigma2[j] = S2[j] / P[j] - g.mu[j] * g.mu[j];
			if (!(g.sigma2[j] >= opt.variance_floor)) {
				warn(opt.warnings, "IC " + std::to_string(l + 1) + " component " + std::to_string(j + 1) +
				                       " variance floored");
				g.sigma2[j] = opt.variance_floor;
			}
		}
		next.mog[static_cast<std::size_t>(l)] = std::move(g);
	}

	if (opt.resort) sort_mixture_components(next);
	return next;
}

QTerms q_function_voxel(const ModelParams& params, const VoxelPosterior& post, const std::vector<SubjectData>& data,
                        const CovariateSet& X, std::size_t v) {
	const std::size_t N = data.size();
	const auto q = static_cast<Eigen::Index>(params.D.size());
	const auto vv = static_cast<Eigen::Index>(v);
	const auto Ni = static_cast<Eigen::Index>(N);
	const double Nd = static_cast<double>(N);
	QTerms t;

	double r1 = 0.0;
	for (std::size_t i = 0; i < N; ++i) {
		const auto ii = static_cast<Eigen::Index>(i);
		const auto& A = params.A[i];
		Eigen::VectorXd y = data[i].Y.col(vv);
		r1 += y.squaredNorm() - 2.0 * y.dot(A * post.s_mean.segment(ii * q, q)) +
		      (A * post.subject_second(i) * A.transpose()).trace();
	}
	t.q1 = -0.5 * Nd * static_cast<double>(q) * std::log(params.nu0_sq) - r1 / (2.0 * params.nu0_sq);

	const Eigen::MatrixXd& B = params.beta[v];
	double r2 = 0.0;
	for (Eigen::Index i = 0; i < Ni; ++i) {
		Eigen::VectorXd b = B.transpose() * X.X.row(i).transpose();
		const Eigen::MatrixXd Mi = post.subject_second(static_cast<std::size_t>(i));
		for (Eigen::Index l = 0; l < q; ++l) {
			double e_si = post.s_mean[i * q + l];
			double e_s0 = post.s_mean[Ni * q + l];
			r2 += (Mi(l, l) + post.s0_second(l, l) + b[l] * b[l] - 2.0 * post.cross(static_cast<std::size_t>(l), static_cast<std::size_t>(i)) + 2.0 * e_s0 * b[l] -
			       2.0 * e_si * b[l]) /
			      params.D[l];
		}
	}
	t.q2 = -0.5 * Nd * params.D.array().log().sum() - 0.5 * r2;

	for (Eigen::Index l = 0; l < q; ++l) {
		const auto& g = params.mog[static_cast<std::size_t>(l)];
		for (Eigen::Index j = 0; j < g.pi.size(); ++j) {
			double pr = post.ic_prob(l, j);
			if (pr == 0.0) continue;
			double mu = g.mu[j];
			double s2 = g.sigma2[j];
			t.q3 += -0.5 * pr *
			        (std::log(s2) + (mu * mu + post.ic_s0_sq(l, j) - 2.0 * mu * post.ic_s0_mean(l, j)) / s2);
			t.q4 += pr * std::log(g.pi[j]);
		}
	}
	return t;
}

QTerms q_function(const ModelParams& params, const std::vector<VoxelPosterior>& posteriors,
                  const std::vector<SubjectData>& data, const CovariateSet& X) {
	if (data.empty()) throw Error("q_function: no subjects");
	if (posteriors.size() != static_cast<std::size_t>(data[0].Y.cols()))
		throw Error("q_function: one posterior per voxel required");
	QTerms t;
	for (std::size_t v = 0; v < posteriors.size(); ++v) t += q_function_voxel(params, posteriors[v], data, X, v);
	return t;
}

ModelParams initialize(const std::vector<SubjectData>& data, const CovariateSet& X, const Dimensions& dims,
                       std::uint64_t seed, std::vector<std::string>* warnings) {
	auto problems = validate(dims);
	if (!problems.empty()) throw Error("initialize: " + problems.front());
	if (data.size() != dims.N) throw Error("initialize: expected " + std::to_string(dims.N) + " subjects");
	check_inputs(data, X, dims.q);
	if (data[0].Y.cols() != static_cast<Eigen::Index>(dims.V)) throw Error("initialize: data has the wrong V");
	if (X.X.cols() != static_cast<Eigen::Index>(dims.p)) throw Error("initialize: X has the wrong number of columns");

	const auto q = static_cast<Eigen::Index>(dims.q);
	const auto V = static_cast<Eigen::Index>(dims.V);
	const std::size_t N = dims.N;
	std::mt19937_64 rng(seed);

	Eigen::MatrixXd cat(static_cast<Eigen::Index>(N) * q, V);
	for (std::size_t i = 0; i < N; ++i) cat.middleRows(static_cast<Eigen::Index>(i) * q, q) = data[i].Y;

	ModelParams params;
	params.A.resize(N);
	FastIcaResult ica;
	bool ok = true;
	try {
		Eigen::MatrixXd Z = pca_whiten(cat, dims.q);
		ica = fastica_symmetric(Z, rng);
		ok = ica.converged;
	} catch (const Error&) {
		ok = false;
	}
	if (ok) {
		const Eigen::MatrixXd& S = ica.S;
		const Eigen::MatrixXd SSinv = (S * S.transpose()).inverse();
		for (std::size_t i = 0; i < N; ++i) params.A[i] = orthogonalize(data[i].Y * S.transpose() * SSinv);
	} else {
		warn(warnings, "initial ICA did not converge; using random orthogonal mixing matrices");
		for (std::size_t i = 0; i < N; ++i) params.A[i] = random_orthogonal(dims.q, rng);
	}

	Eigen::MatrixXd S0 = Eigen::MatrixXd::Zero(q, V);
	for (std::size_t i = 0; i < N; ++i) S0.noalias() += params.A[i].transpose() * data[i].Y;
	S0 /= static_cast<double>(N);

	// orient each source so its activations are positive
	for (Eigen::Index l = 0; l < q; ++l) {
		Eigen::ArrayXd x = S0.row(l).array() - S0.row(l).mean();
		double skew = x.cube().mean();
		if (skew < 0) {
			S0.row(l) *= -1.0;
			for (auto& A : params.A) A.col(l) *= -1.0;
		}
	}

	params.mog.resize(dims.q);
	for (Eigen::Index l = 0; l < q; ++l)
		params.mog[static_cast<std::size_t>(l)] = init_mixture(S0.row(l).transpose(), dims.m);

	params.beta.assign(dims.V, Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(dims.p), q));

	// noise level carried through whitening: sigma~^2 / (lambda - sigma~^2)
	double nu = 0.0;
	std::size_t cnt = 0;
	for (const auto& d : data) {
		if (d.eigenvalues.size() != q || !(d.residual_var > 0.0)) continue;
		for (Eigen::Index k = 0; k < q; ++k) {
			double gap = d.eigenvalues[k] - d.residual_var;
			if (gap > 0) {
				nu += d.residual_var / gap;
				++cnt;
			}
		}
	}
	params.nu0_sq = cnt ? nu / static_cast<double>(cnt) : 0.01;
	params.nu0_sq = std::clamp(params.nu0_sq, 1e-4, 10.0);

	Eigen::VectorXd rv = Eigen::VectorXd::Zero(q);
	for (std::size_t i = 0; i < N; ++i)
		rv += (params.A[i].transpose() * data[i].Y - S0).rowwise().squaredNorm();
	rv /= static_cast<double>(N) * static_cast<double>(V);
	params.D.resize(q);
	for (Eigen::Index l = 0; l < q; ++l) params.D[l] = std::max({rv[l] - params.nu0_sq, 0.1 * rv[l], 1e-4});
	return params;
}

FitResult fit_from(const std::vector<SubjectData>& data, const CovariateSet& X, const Dimensions& dims,
                   const EMConfig& config, ModelParams start) {
	config.validate();
	auto problems = validate(start, dims);
	if (!problems.empty()) throw Error("fit: invalid starting values: " + problems.front());
	if (!validate(X).empty()) throw Error("fit: X'X is singular (collinear covariates)");

	const StateSpace space = StateSpace::make(space_kind(config.mode), dims.q, dims.m, config.full_state_cap);
	EStepOptions eopt;
	eopt.threads = config.threads;
	FitResult res;
	MStepOptions mopt;
	mopt.noise_denominator = config.noise_denominator;
	mopt.T = dims.T;
	mopt.mixing_update = config.mixing_update;
	mopt.warnings = &res.warnings;

	ModelParams params = std::move(start);
	Eigen::VectorXd flat = params.flatten();
	std::vector<VoxelPosterior> post;
	using clock = std::chrono::steady_clock;

	for (std::size_t k = 0; k < config.max_iters; ++k) {
		auto t0 = clock::now();
		try {
			e_step_into(data, X, params, space, post, eopt);
		} catch (const Error& e) {
			throw FitError("fit: iteration " + std::to_string(k + 1) + ": " + e.what(), res.trace);
		}
		double ll = std::numeric_limits<double>::quiet_NaN();
		if (config.loglik_monitor) {
			ll = 0.0;
			for (const auto& p : post) ll += p.log_evidence;
			if (!std::isfinite(ll))
				throw FitError("fit: non-finite log-likelihood at iteration " + std::to_string(k + 1), res.trace);
		}
		ModelParams next = m_step(data, X, post, params, mopt);
		Eigen::VectorXd nflat = next.flatten();
		if (!nflat.allFinite())
			throw FitError("fit: non-finite parameters at iteration " + std::to_string(k + 1), res.trace);
		double rel = (nflat - flat).norm() / flat.norm();
		double secs = std::chrono::duration<double>(clock::now() - t0).count();
		res.trace.rel_change.push_back(rel);
		res.trace.loglik.push_back(ll);
		res.trace.seconds.push_back(secs);
		params = std::move(next);
		flat = std::move(nflat);
		if (rel < config.rel_tol) {
			res.converged = true;
			break;
		}
	}
	e_step_into(data, X, params, space, post, eopt);
	res.params = std::move(params);
	res.posteriors = std::move(post);
	return res;
}

FitResult fit(const std::vector<SubjectData>& data, const CovariateSet& X, const Dimensions& dims,
              const EMConfig& config) {
	config.validate();
	std::vector<std::string> warnings;
	ModelParams start = initialize(data, X, dims, config.seed, &warnings);
	FitResult res = fit_from(data, X, dims, config, std::move(start));
	res.warnings.insert(res.warnings.begin(), warnings.begin(), warnings.end());
	return res;
}

SourceMaps estimate_sources(const std::vector<VoxelPosterior>& posteriors, std::size_t N, std::size_t q) {
	const auto V = static_cast<Eigen::Index>(posteriors.size());
	const auto qq = static_cast<Eigen::Index>(q);
	SourceMaps s;
	s.population.resize(qq, V);
	s.subjects.assign(N, Eigen::MatrixXd(qq, V));
	for (Eigen::Index v = 0; v < V; ++v) {
		const auto& mean = posteriors[static_cast<std::size_t>(v)].s_mean;
		if (mean.size() != static_cast<Eigen::Index>((N + 1) * q)) throw Error("estimate_sources: posterior size mismatch");
		for (std::size_t i = 0; i < N; ++i) s.subjects[i].col(v) = mean.segment(static_cast<Eigen::Index>(i) * qq, qq);
		s.population.col(v) = mean.tail(qq);
	}
	return s;
}

}  // namespace hcica
