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
 * @file test_simgen.cpp Synthetic data, component matching and scoring.
 *
 *****************************************************************************/

#include "hcica/simgen.hpp"
#include "test_util.hpp"

#include <doctest.h>

#include <algorithm>
#include <cmath>

using namespace hcica;
using hcica::testing::gaussian_matrix;

namespace {

double sample_var(const Eigen::ArrayXd& x) {
	return (x - x.mean()).square().sum() / static_cast<double>(x.size() - 1);
}

bool same(const SimDataset& a, const SimDataset& b) {
	if (a.raw.size() != b.raw.size()) return false;
	for (std::size_t i = 0; i < a.raw.size(); ++i)
		if (!(a.raw[i].array() == b.raw[i].array()).all()) return false;
	return (a.truth.s0.array() == b.truth.s0.array()).all() && (a.truth.X.array() == b.truth.X.array()).all();
}

}  // namespace

TEST_CASE("without effects or random effects every subject map is the population map") {
	SimSpec spec = SimSpec::study1(4, Variability::Low, 3);
	spec.null_effects = true;
	spec.D = Eigen::VectorXd::Zero(3);
	auto ds = generate(spec);
	for (const auto& s : ds.truth.s) CHECK((s.array() == ds.truth.s0.array()).all());
	for (const auto& b : ds.truth.beta) CHECK(b.isZero(0.0));
}

TEST_CASE("a fixed seed reproduces the dataset bit for bit") {
	SimSpec spec = SimSpec::study1(3, Variability::Medium, 42);
	spec.T = 30;
	CHECK(same(generate(spec), generate(spec)));
	SimSpec other = spec;
	other.seed = 43;
	CHECK_FALSE(same(generate(spec), generate(other)));
}

TEST_CASE("shapes and block layout") {
	SimSpec spec = SimSpec::study1(5, Variability::Low, 1);
	spec.T = 40;
	auto ds = generate(spec);
	const auto& tr = ds.truth;
	CHECK(tr.s0.rows() == 3);
	CHECK(tr.s0.cols() == 2500);
	CHECK(tr.X.rows() == 5);
	CHECK(tr.X.cols() == 2);
	REQUIRE(ds.raw.size() == 5);
	CHECK(ds.raw[0].rows() == 40);
	CHECK(ds.raw[0].cols() == 2500);
	for (Eigen::Index l = 0; l < 3; ++l) {
		const auto active = (tr.s0_signal.row(l).array() != 0.0).count();
		// blocks cover about a tenth of each slice
		CHECK(active >= 200);
		CHECK(active <= 300);
		CHECK((tr.s0_signal.row(l).array() == 0.0 || tr.s0_signal.row(l).array() == spec.amplitude).all());
	}
	// regions do not overlap by default
	CHECK(((tr.s0_signal.array() != 0.0).cast<int>().colwise().sum() <= 1).all());
	// effects live inside the blocks and take the listed values
	for (std::size_t v = 0; v < spec.V(); ++v)
		for (Eigen::Index l = 0; l < 3; ++l)
			for (Eigen::Index k = 0; k < 2; ++k) {
				const double b = tr.beta[v](k, l);
				if (b == 0.0) continue;
				CHECK(tr.s0_signal(l, static_cast<Eigen::Index>(v)) != 0.0);
				CHECK(std::find(spec.beta_values.begin(), spec.beta_values.end(), b) != spec.beta_values.end());
			}
	// covariates: a 0/1 column and a column in (-1, 1)
	CHECK((tr.X.col(0).array() == 0.0 || tr.X.col(0).array() == 1.0).all());
	CHECK(tr.X.col(1).cwiseAbs().maxCoeff() < 1.0);
	// time courses are orthogonal with squared norm T
	for (const auto& M : tr.time_courses)
		CHECK((M.transpose() * M - 40.0 * Eigen::MatrixXd::Identity(3, 3)).cwiseAbs().maxCoeff() <= 1e-9);
}

TEST_CASE("added noise has the requested variances") {
	SimSpec spec = SimSpec::study1(4, Variability::High, 8);
	spec.grid = {50, 50, 4};
	spec.T = 20;
	auto ds = generate(spec);
	const auto& tr = ds.truth;
	REQUIRE(spec.V() >= 10000);

	Eigen::ArrayXd pop = (tr.s0 - tr.s0_signal).reshaped().array();
	CHECK(std::abs(sample_var(pop) / spec.s0_noise_var - 1.0) <= 0.02);

	for (Eigen::Index l = 0; l < 3; ++l) {
		Eigen::ArrayXd g(static_cast<Eigen::Index>(4 * spec.V()));
		Eigen::Index k = 0;
		for (std::size_t i = 0; i < 4; ++i) {
			const Eigen::VectorXd x = tr.X.row(static_cast<Eigen::Index>(i)).transpose();
			for (std::size_t v = 0; v < spec.V(); ++v) {
				const auto vi = static_cast<Eigen::Index>(v);
				g[k++] = tr.s[i](l, vi) - tr.s0(l, vi) - tr.beta[v].col(l).dot(x);
			}
		}
		CHECK(std::abs(sample_var(g) / spec.D[l] - 1.0) <= 0.02);
	}

	for (std::size_t i = 0; i < 4; ++i) {
		Eigen::ArrayXd e = (ds.raw[i] - tr.time_courses[i] * tr.s[i]).reshaped().array();
		CHECK(std::abs(sample_var(e) / (spec.noise_sd * spec.noise_sd) - 1.0) <= 0.02);
	}
}

TEST_CASE("least squares on the generated subject maps recovers the effects") {
	SimSpec spec = SimSpec::study1(500, Variability::Low, 17);
	spec.T = 8;
	spec.D = Eigen::VectorXd::Constant(3, 0.01);
	auto ds = generate(spec);
	const auto& tr = ds.truth;
	const Eigen::MatrixXd& X = tr.X;
	const Eigen::MatrixXd H = (X.transpose() * X).ldlt().solve(X.transpose());  // p x N
	const auto V = static_cast<Eigen::Index>(spec.V());
	double worst = 0.0;
	for (Eigen::Index l = 0; l < 3; ++l) {
		Eigen::MatrixXd R(500, V);
		for (Eigen::Index i = 0; i < 500; ++i) R.row(i) = tr.s[static_cast<std::size_t>(i)].row(l) - tr.s0.row(l);
		const Eigen::MatrixXd B = H * R;  // p x V
		for (Eigen::Index v = 0; v < V; ++v)
			for (Eigen::Index k = 0; k < 2; ++k)
				worst = std::max(worst, std::abs(B(k, v) - tr.beta[static_cast<std::size_t>(v)](k, l)));
	}
	CHECK(worst <= 0.05);
}

TEST_CASE("generator errors") {
	SimSpec spec = SimSpec::study1(3, Variability::Low, 1);
	spec.grid = {5, 5, 1};
	spec.q = 12;
	spec.D = Eigen::VectorXd::Constant(12, 0.1);
	try {
		generate(spec);
		FAIL("expected an error");
	} catch (const Error& e) {
		CHECK(std::string(e.what()).find("cannot hold") != std::string::npos);
	}
	SimSpec bad = SimSpec::study1(3, Variability::Low, 1);
	bad.D = Eigen::VectorXd::Constant(2, 0.1);
	CHECK_THROWS_AS(generate(bad), Error);
	bad.D = Eigen::Vector3d(0.1, -0.1, 0.1);
	CHECK_THROWS_AS(generate(bad), Error);
	bad = SimSpec::study1(3, Variability::Low, 1);
	bad.grid = {25, 0, 4};
	CHECK_THROWS_AS(generate(bad), Error);
}

TEST_CASE("study presets") {
	SimSpec s3 = SimSpec::study3(20, true, 5);
	CHECK(s3.V() == 400);
	CHECK(s3.q == 2);
	auto ds = generate(s3);
	for (const auto& b : ds.truth.beta) CHECK(b.isZero(0.0));
	SimSpec s1 = SimSpec::study1(10, Variability::High, 5);
	CHECK(s1.V() == 2500);
	CHECK(s1.D.size() == 3);
	CHECK(SimSpec::variability(Variability::Low, 3).maxCoeff() < SimSpec::variability(Variability::High, 3).minCoeff());
}

TEST_CASE("matching undoes a known permutation and sign flip") {
	std::mt19937_64 rng(1);
	Eigen::MatrixXd truth = gaussian_matrix(4, 300, rng);
	const std::vector<std::size_t> perm{2, 0, 3, 1};
	const std::vector<int> sign{1, -1, -1, 1};
	Eigen::MatrixXd est(4, 300);
	for (std::size_t l = 0; l < 4; ++l)
		est.row(static_cast<Eigen::Index>(perm[l])) = sign[l] * truth.row(static_cast<Eigen::Index>(l));
	for (bool optimal : {false, true}) {
		Matching m = match_components(est, truth, optimal);
		CHECK(m.perm == perm);
		CHECK(m.sign == sign);
		CHECK((m.corr.array() - 1.0).abs().maxCoeff() <= 1e-12);
	}
}

TEST_CASE("matching a lightly perturbed copy") {
	std::mt19937_64 rng(2);
	Eigen::MatrixXd truth = gaussian_matrix(3, 2000, rng);
	Eigen::MatrixXd est = truth + gaussian_matrix(3, 2000, rng, 0.05);
	Matching m = match_components(est, truth);
	CHECK(m.perm == std::vector<std::size_t>{0, 1, 2});
	CHECK(m.corr.minCoeff() >= 0.99);
}

TEST_CASE("ties go to the lower index") {
	Eigen::MatrixXd truth(2, 4), est(2, 4);
	truth << 1, 0, 0, 0, 0, 1, 0, 0;
	est << 1, 1, 0, 0, 1, 1, 0, 0;
	Matching m = match_components(est, truth);
	CHECK(m.perm == std::vector<std::size_t>{0, 1});
	CHECK(m.corr[0] == m.corr[1]);
}

TEST_CASE("aligning maps to themselves is the identity") {
	std::mt19937_64 rng(3);
	Eigen::MatrixXd t = gaussian_matrix(5, 100, rng);
	Matching m = match_components(t, t);
	CHECK(m.perm == std::vector<std::size_t>{0, 1, 2, 3, 4});
	CHECK(m.sign == std::vector<int>(5, 1));
	CHECK((m.corr.array() - 1.0).abs().maxCoeff() <= 1e-12);
}

TEST_CASE("matching errors") {
	Eigen::MatrixXd t(2, 3), z(2, 3);
	t << 1, 2, 3, 3, 1, 2;
	z << 1, 2, 3, 5, 5, 5;
	CHECK_THROWS_AS(match_components(z, t), Error);
	CHECK_THROWS_AS(match_components(t, Eigen::MatrixXd::Ones(2, 4)), Error);
}

TEST_CASE("scoring a perfect fit") {
	SimSpec spec = SimSpec::study1(3, Variability::Low, 9);
	spec.T = 30;
	auto ds = generate(spec);
	FitSummary f;
	f.population = ds.truth.s0;
	f.subjects = ds.truth.s;
	f.beta = ds.truth.beta;
	for (std::size_t i = 0; i < 3; ++i) {
		f.A.push_back(Eigen::MatrixXd::Identity(3, 3));
		f.dewhiten.push_back(ds.truth.time_courses[i]);
	}
	Score s = score(f, ds.truth);
	CHECK(s.population_corr == doctest::Approx(1.0).epsilon(1e-12));
	CHECK(s.subject_corr == doctest::Approx(1.0).epsilon(1e-12));
	CHECK(s.time_course_corr == doctest::Approx(1.0).epsilon(1e-12));
	CHECK(s.beta_mse == 0.0);

	// a constant offset of 0.1 in each of the 2 x 3 entries
	for (auto& b : f.beta) b.array() += 0.1;
	CHECK(score(f, ds.truth).beta_mse == doctest::Approx(0.06).epsilon(1e-12));

	// without time-course inputs the time-course score is left undefined
	f.A.clear();
	CHECK(std::isnan(score(f, ds.truth).time_course_corr));
}

TEST_CASE("scores are invariant to relabelling and flipping the estimate") {
	SimSpec spec = SimSpec::study1(3, Variability::Low, 10);
	spec.T = 30;
	auto ds = generate(spec);
	FitSummary f;
	const std::vector<Eigen::Index> perm{1, 2, 0};
	const Eigen::Vector3d sg(-1.0, 1.0, -1.0);
	auto shuffle = [&](const Eigen::MatrixXd& M) {
		Eigen::MatrixXd out(M.rows(), M.cols());
		for (Eigen::Index l = 0; l < 3; ++l) out.row(perm[static_cast<std::size_t>(l)]) = sg[l] * M.row(l);
		return out;
	};
	f.population = shuffle(ds.truth.s0);
	for (const auto& s : ds.truth.s) f.subjects.push_back(shuffle(s));
	for (const auto& b : ds.truth.beta) f.beta.push_back(shuffle(b.transpose()).transpose());
	Score s = score(f, ds.truth);
	CHECK(s.population_corr == doctest::Approx(1.0).epsilon(1e-12));
	CHECK(s.subject_corr == doctest::Approx(1.0).epsilon(1e-12));
	CHECK(s.beta_mse <= 1e-20);
	// a rescaled estimate is mapped back by the fitted slope
	f.population *= 2.0;
	for (auto& b : f.beta) b *= 2.0;
	CHECK(score(f, ds.truth).beta_mse <= 1e-20);
}
