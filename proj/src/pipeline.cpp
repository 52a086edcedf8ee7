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

#include "hcica/pipeline.hpp"

#include "hcica/matrix_io.hpp"
#include "hcica/preproc.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <set>
#include <sstream>

namespace hcica {

namespace fs = std::filesystem;

namespace {

std::string subject_name(const std::string& prefix, std::size_t i) {
	char buf[32];
	std::snprintf(buf, sizeof buf, "%s_%03zu.hcm", prefix.c_str(), i);
	return buf;
}

std::size_t kv_size(const std::map<std::string, std::string>& kv, const std::string& key, const fs::path& file) {
	auto it = kv.find(key);
	if (it == kv.end()) throw Error(file.string() + ": missing " + key);
	try {
		std::size_t pos = 0;
		unsigned long long v = std::stoull(it->second, &pos);
		if (pos != it->second.size()) throw std::invalid_argument(key);
		return static_cast<std::size_t>(v);
	} catch (const std::exception&) {
		throw Error(file.string() + ": " + key + " is not an integer");
	}
}

void require(const fs::path& path) {
	if (!fs::exists(path)) throw MissingFile("missing " + path.string());
}

Eigen::MatrixXd row_vector(const std::vector<double>& v) {
	return Eigen::Map<const Eigen::RowVectorXd>(v.data(), static_cast<Eigen::Index>(v.size()));
}

}  // namespace

std::map<std::string, std::string> read_kv(const fs::path& path) {
	std::map<std::string, std::string> kv;
	std::istringstream in(read_file(path));
	std::string line;
	std::size_t lineno = 0;
	while (std::getline(in, line)) {
		++lineno;
		if (line.empty() || line[0] == '#') continue;
		auto eq = line.find('=');
		if (eq == std::string::npos) throw Error(path.string() + ":" + std::to_string(lineno) + ": expected key=value");
		kv[line.substr(0, eq)] = line.substr(eq + 1);
	}
	return kv;
}

void write_kv(const fs::path& path, const std::vector<std::pair<std::string, std::string>>& kv) {
	std::string out;
	for (const auto& [k, v] : kv) out += k + "=" + v + "\n";
	write_file_atomic(path, out);
}

Eigen::MatrixXd beta_to_matrix(const std::vector<Eigen::MatrixXd>& beta) {
	if (beta.empty()) return {};
	const auto p = beta[0].rows(), q = beta[0].cols();
	Eigen::MatrixXd M(static_cast<Eigen::Index>(beta.size()), p * q);
	for (std::size_t v = 0; v < beta.size(); ++v)
		for (Eigen::Index k = 0; k < p; ++k)
			for (Eigen::Index l = 0; l < q; ++l) M(static_cast<Eigen::Index>(v), k * q + l) = beta[v](k, l);
	return M;
}

std::vector<Eigen::MatrixXd> beta_from_matrix(const Eigen::MatrixXd& M, std::size_t p, std::size_t q) {
	const auto pi = static_cast<Eigen::Index>(p), qi = static_cast<Eigen::Index>(q);
	if (M.cols() != pi * qi) throw Error("beta matrix has " + std::to_string(M.cols()) + " columns, expected p*q");
	std::vector<Eigen::MatrixXd> beta(static_cast<std::size_t>(M.rows()), Eigen::MatrixXd(pi, qi));
	for (Eigen::Index v = 0; v < M.rows(); ++v)
		for (Eigen::Index k = 0; k < pi; ++k)
			for (Eigen::Index l = 0; l < qi; ++l) beta[static_cast<std::size_t>(v)](k, l) = M(v, k * qi + l);
	return beta;
}

void write_dataset(const fs::path& dir, const SimDataset& ds, const SimSpec& spec) {
	const std::size_t N = ds.raw.size();
	for (std::size_t i = 0; i < N; ++i) write_hcm(dir / subject_name("subject", i), ds.raw[i]);
	write_hcm(dir / "covariates.hcm", ds.truth.X);
	const fs::path t = dir / "truth";
	write_hcm(t / "s0.hcm", ds.truth.s0);
	write_hcm(t / "s0_signal.hcm", ds.truth.s0_signal);
	write_hcm(t / "beta.hcm", beta_to_matrix(ds.truth.beta));
	for (std::size_t i = 0; i < N; ++i) {
		write_hcm(t / subject_name("subject", i), ds.truth.s[i]);
		write_hcm(t / subject_name("time_courses", i), ds.truth.time_courses[i]);
	}
	write_kv(dir / "dataset.txt", {{"N", std::to_string(N)},
	                               {"T", std::to_string(spec.T)},
	                               {"V", std::to_string(spec.V())},
	                               {"q", std::to_string(spec.q)},
	                               {"p", std::to_string(spec.p())},
	                               {"m", std::to_string(spec.m)},
	                               {"nx", std::to_string(spec.grid[0])},
	                               {"ny", std::to_string(spec.grid[1])},
	                               {"nz", std::to_string(spec.grid[2])},
	                               {"seed", std::to_string(spec.seed)},
	                               {"null_effects", spec.null_effects ? "true" : "false"}});
}

Dataset load_dataset(const fs::path& dir, bool with_truth) {
	const fs::path meta = dir / "dataset.txt";
	require(meta);
	auto kv = read_kv(meta);
	Dataset d;
	d.dims.N = kv_size(kv, "N", meta);
	d.dims.T = kv_size(kv, "T", meta);
	d.dims.V = kv_size(kv, "V", meta);
	d.dims.q = kv_size(kv, "q", meta);
	d.dims.p = kv_size(kv, "p", meta);
	d.dims.m = kv_size(kv, "m", meta);
	d.grid = {kv_size(kv, "nx", meta), kv_size(kv, "ny", meta), kv_size(kv, "nz", meta)};
	if (d.grid[0] * d.grid[1] * d.grid[2] != d.dims.V) throw Error(meta.string() + ": V does not match nx*ny*nz");

	d.raw.resize(d.dims.N);
	for (std::size_t i = 0; i < d.dims.N; ++i) {
		const fs::path f = dir / subject_name("subject", i);
		require(f);
		d.raw[i] = read_hcm(f);
		if (static_cast<std::size_t>(d.raw[i].rows()) != d.dims.T || static_cast<std::size_t>(d.raw[i].cols()) != d.dims.V)
			throw Error(f.string() + ": expected " + std::to_string(d.dims.T) + "x" + std::to_string(d.dims.V));
	}
	require(dir / "covariates.hcm");
	d.X.X = read_hcm(dir / "covariates.hcm");
	if (static_cast<std::size_t>(d.X.X.rows()) != d.dims.N || static_cast<std::size_t>(d.X.X.cols()) != d.dims.p)
		throw Error("covariates.hcm: expected " + std::to_string(d.dims.N) + "x" + std::to_string(d.dims.p));

	const fs::path t = dir / "truth";
	if (with_truth && fs::exists(t / "s0.hcm")) {
		SimTruth tr;
		tr.s0 = read_hcm(t / "s0.hcm");
		tr.s0_signal = read_hcm(t / "s0_signal.hcm");
		tr.beta = beta_from_matrix(read_hcm(t / "beta.hcm"), d.dims.p, d.dims.q);
		tr.X = d.X.X;
		for (std::size_t i = 0; i < d.dims.N; ++i) {
			tr.s.push_back(read_hcm(t / subject_name("subject", i)));
			tr.time_courses.push_back(read_hcm(t / subject_name("time_courses", i)));
		}
		d.truth = std::move(tr);
	}
	return d;
}

void save_params(const fs::path& dir, const ModelParams& params) {
	const std::size_t N = params.A.size();
	const auto q = params.D.size();
	const auto m = params.mog.empty() ? 0 : params.mog[0].pi.size();
	write_hcm(dir / "beta.hcm", beta_to_matrix(params.beta));
	Eigen::MatrixXd A(static_cast<Eigen::Index>(N) * q, q);
	for (std::size_t i = 0; i < N; ++i) A.middleRows(static_cast<Eigen::Index>(i) * q, q) = params.A[i];
	write_hcm(dir / "A.hcm", A);
	write_hcm(dir / "noise.hcm", Eigen::MatrixXd::Constant(1, 1, params.nu0_sq));
	write_hcm(dir / "D.hcm", params.D);
	Eigen::MatrixXd pi(q, m), mu(q, m), s2(q, m);
	for (Eigen::Index l = 0; l < q; ++l) {
		const auto& g = params.mog[static_cast<std::size_t>(l)];
		pi.row(l) = g.pi.transpose();
		mu.row(l) = g.mu.transpose();
		s2.row(l) = g.sigma2.transpose();
	}
	write_hcm(dir / "pi.hcm", pi);
	write_hcm(dir / "mu.hcm", mu);
	write_hcm(dir / "sigma2.hcm", s2);
}

ModelParams load_params(const fs::path& dir) {
	for (const char* f : {"beta.hcm", "A.hcm", "noise.hcm", "D.hcm", "pi.hcm", "mu.hcm", "sigma2.hcm"}) require(dir / f);
	ModelParams P;
	Eigen::MatrixXd D = read_hcm(dir / "D.hcm");
	if (D.cols() != 1) throw Error("D.hcm: expected a column vector");
	P.D = D.col(0);
	const auto q = P.D.size();
	Eigen::MatrixXd A = read_hcm(dir / "A.hcm");
	if (q == 0 || A.cols() != q || A.rows() % q != 0) throw Error("A.hcm: expected Nq x q");
	for (Eigen::Index i = 0; i < A.rows() / q; ++i) P.A.push_back(A.middleRows(i * q, q));
	Eigen::MatrixXd B = read_hcm(dir / "beta.hcm");
	if (B.cols() % q != 0) throw Error("beta.hcm: column count is not a multiple of q");
	P.beta = beta_from_matrix(B, static_cast<std::size_t>(B.cols() / q), static_cast<std::size_t>(q));
	Eigen::MatrixXd nz = read_hcm(dir / "noise.hcm");
	if (nz.size() != 1) throw Error("noise.hcm: expected 1x1");
	P.nu0_sq = nz(0, 0);
	Eigen::MatrixXd pi = read_hcm(dir / "pi.hcm"), mu = read_hcm(dir / "mu.hcm"), s2 = read_hcm(dir / "sigma2.hcm");
	if (pi.rows() != q || mu.rows() != q || s2.rows() != q || mu.cols() != pi.cols() || s2.cols() != pi.cols())
		throw Error("mixture files must all be q x m");
	for (Eigen::Index l = 0; l < q; ++l)
		P.mog.push_back({pi.row(l).transpose(), mu.row(l).transpose(), s2.row(l).transpose()});
	return P;
}

SimulateOutcome run_simulate(const Config& cfg, const fs::path& out_dir) {
	SimulateOutcome out;
	out.spec = sim_spec_from(cfg);
	out.data = generate(out.spec);
	write_dataset(out_dir, out.data, out.spec);
	return out;
}

FitOutcome run_fit(const fs::path& data_dir, const Config& cfg, const fs::path& out_dir) {
	EMConfig em = em_config_from(cfg);
	Dataset ds = load_dataset(data_dir);
	Dimensions dims = ds.dims;
	dims.q = cfg.get_size("q", dims.q);
	dims.m = cfg.get_size("m", dims.m);
	if (auto errs = validate(dims); !errs.empty()) throw ConfigError("invalid dimensions: " + errs.front());
	const std::string label = cfg.get_string("label", "N=" + std::to_string(dims.N) + " " + to_string(em.mode));

	auto t0 = std::chrono::steady_clock::now();
	std::vector<SubjectData> data = preproc::preprocess(ds.raw, dims.q);

	auto write_run = [&](const EMTrace& trace, const std::string& status, double secs) {
		std::string csv = "iter,rel_change,loglik,seconds\n";
		for (std::size_t k = 0; k < trace.iterations(); ++k)
			csv += std::to_string(k + 1) + "," + format_double(trace.rel_change[k]) + "," +
			       format_double(trace.loglik[k]) + "," + format_double(trace.seconds[k]) + "\n";
		write_file_atomic(out_dir / "trace.csv", csv);
		write_file_atomic(out_dir / "config.txt", cfg.dump());
		write_kv(out_dir / "run.txt", {{"kind", "fit"},
		                               {"status", status},
		                               {"data_dir", fs::absolute(data_dir).lexically_normal().string()},
		                               {"label", label},
		                               {"mode", to_string(em.mode)},
		                               {"seed", std::to_string(em.seed)},
		                               {"N", std::to_string(dims.N)},
		                               {"T", std::to_string(dims.T)},
		                               {"V", std::to_string(dims.V)},
		                               {"q", std::to_string(dims.q)},
		                               {"p", std::to_string(dims.p)},
		                               {"m", std::to_string(dims.m)},
		                               {"iterations", std::to_string(trace.iterations())},
		                               {"seconds", format_double(secs)}});
	};

	FitOutcome out;
	try {
		out.result = fit(data, ds.X, dims, em);
	} catch (const FitError& e) {
		write_run(e.trace(), "failed", std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count());
		throw;
	}
	out.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
	const FitResult& r = out.result;

	save_params(out_dir / "params", r.params);
	SourceMaps src = estimate_sources(r.posteriors, dims.N, dims.q);
	write_hcm(out_dir / "maps" / "population.hcm", src.population);
	for (std::size_t i = 0; i < dims.N; ++i) write_hcm(out_dir / "maps" / subject_name("subject", i), src.subjects[i]);
	const auto qi = static_cast<Eigen::Index>(dims.q), mi = static_cast<Eigen::Index>(dims.m);
	Eigen::MatrixXd icp(static_cast<Eigen::Index>(dims.V), qi * mi);
	for (std::size_t v = 0; v < dims.V; ++v)
		for (Eigen::Index l = 0; l < qi; ++l)
			for (Eigen::Index j = 0; j < mi; ++j) icp(static_cast<Eigen::Index>(v), l * mi + j) = r.posteriors[v].ic_prob(l, j);
	write_hcm(out_dir / "maps" / "ic_prob.hcm", icp);

	if (ds.truth && ds.truth->s0.rows() == qi) {
		FitSummary fs;
		fs.population = src.population;
		fs.subjects = src.subjects;
		fs.A = r.params.A;
		fs.beta = r.params.beta;
		for (const auto& d : data) fs.dewhiten.push_back(preproc::dewhitener(d));
		out.score = score(fs, *ds.truth);
		const Score& sc = *out.score;
		write_csv(out_dir / "score.csv",
		          row_vector({sc.population_corr, sc.subject_corr, sc.time_course_corr, sc.beta_mse, out.seconds,
		                      static_cast<double>(r.trace.iterations()), r.converged ? 1.0 : 0.0}),
		          {"population_corr", "subject_corr", "time_course_corr", "beta_mse", "seconds", "iterations",
		           "converged"});
	}
	std::string warn;
	for (const auto& w : r.warnings) warn += w + "\n";
	write_file_atomic(out_dir / "warnings.txt", warn);
	write_run(r.trace, r.converged ? "converged" : "not_converged", out.seconds);
	return out;
}

InferOutcome run_infer(const fs::path& fit_dir, const Config& cfg, const fs::path& out_dir) {
	const fs::path run = fit_dir / "run.txt";
	require(run);
	auto kv = read_kv(run);
	if (kv["kind"] != "fit") throw MissingFile(run.string() + " does not describe a completed fit");
	if (kv["status"] == "failed") throw MissingFile(fit_dir.string() + " holds a failed fit without parameters");
	InferSettings st = infer_settings_from(cfg);
	const std::size_t q = kv_size(kv, "q", run), m = kv_size(kv, "m", run);
	ModelParams params = load_params(fit_dir / "params");
	Dataset ds = load_dataset(kv["data_dir"]);
	if (params.A.size() != ds.dims.N || params.beta.size() != ds.dims.V || static_cast<std::size_t>(params.D.size()) != q)
		throw Error("fit parameters do not match the dataset in " + kv["data_dir"]);

	std::vector<SubjectData> data = preproc::preprocess(ds.raw, q);
	EStepOptions eo;
	eo.threads = st.options.threads;
	auto post = e_step(data, ds.X, params, StateSpace::make(space_kind(parse_mode(kv["mode"])), q, m), eo);

	InferOutcome out;
	out.maps = run_inference(data, ds.X, params, post, st.options);
	const InferenceMaps& M = out.maps;
	write_hcm(out_dir / "z_stats.hcm", M.z_stats);
	write_hcm(out_dir / "p_values.hcm", M.p_values);
	write_hcm(out_dir / "fdr.hcm", M.fdr_adjusted);
	write_hcm(out_dir / "activation_prob.hcm", M.activation_prob);
	Eigen::MatrixXd act = (M.activation_prob.array() > st.threshold).cast<double>();
	write_hcm(out_dir / "activation.hcm", act);

	const auto V = static_cast<Eigen::Index>(ds.dims.V);
	const auto p = static_cast<Eigen::Index>(ds.dims.p);
	const auto qi = static_cast<Eigen::Index>(q);
	const auto mi = static_cast<Eigen::Index>(m);
	Eigen::MatrixXd summary(p * qi, 7);
	for (Eigen::Index k = 0; k < p; ++k)
		for (Eigen::Index l = 0; l < qi; ++l) {
			const Eigen::Index c = k * qi + l;
			const double rej = (M.p_values.col(c).array() < st.alpha).cast<double>().sum();
			const double fdr = (M.fdr_adjusted.col(c).array() < st.alpha).cast<double>().sum();
			const double active = mi > 1 ? act.middleCols(l * (mi - 1), mi - 1).rowwise().maxCoeff().sum() : 0.0;
			summary.row(c) << static_cast<double>(k), static_cast<double>(l), static_cast<double>(V), rej,
				rej / static_cast<double>(V), fdr, active;
		}
	write_csv(out_dir / "summary.csv", summary,
	          {"covariate", "ic", "voxels", "n_p_below_alpha", "frac_p_below_alpha", "n_fdr_below_alpha", "n_active"});

	out.frac_rejected = (M.p_values.array() < st.alpha).cast<double>().mean();
	std::vector<std::string> head{"alpha", "frac_p_below_alpha", "type1_error", "power"};
	std::vector<double> vals{st.alpha, out.frac_rejected};
	if (ds.truth) {
		SourceMaps src = estimate_sources(post, ds.dims.N, q);
		Matching match = match_components(src.population, ds.truth->s0);
		double n0 = 0, r0 = 0, n1 = 0, r1 = 0;
		std::map<double, std::pair<double, double>> by;
		for (std::size_t v = 0; v < ds.dims.V; ++v)
			for (Eigen::Index k = 0; k < p; ++k)
				for (Eigen::Index l = 0; l < qi; ++l) {
					const double b = ds.truth->beta[v](k, l);
					const auto c = k * qi + static_cast<Eigen::Index>(match.perm[static_cast<std::size_t>(l)]);
					const bool rej = M.p_values(static_cast<Eigen::Index>(v), c) < st.alpha;
					if (b == 0.0) {
						n0 += 1;
						r0 += rej;
					} else {
						n1 += 1;
						r1 += rej;
						auto& e = by[std::abs(b)];
						e.first += 1;
						e.second += rej;
					}
				}
		if (n0 > 0) out.type1 = r0 / n0;
		if (n1 > 0) out.power = r1 / n1;
		for (const auto& [b, e] : by) out.power_by_value[b] = e.second / e.first;
	}
	vals.push_back(out.type1);
	vals.push_back(out.power);
	for (const auto& [b, pw] : out.power_by_value) {
		head.push_back("power_beta_" + format_double(b));
		vals.push_back(pw);
	}
	write_csv(out_dir / "calibration.csv", row_vector(vals), head);

	auto rkv = kv;
	write_kv(out_dir / "run.txt", {{"kind", "infer"},
	                               {"fit_dir", fs::absolute(fit_dir).lexically_normal().string()},
	                               {"label", rkv["label"]},
	                               {"N", rkv["N"]},
	                               {"V", rkv["V"]},
	                               {"q", rkv["q"]},
	                               {"p", rkv["p"]},
	                               {"m", rkv["m"]},
	                               {"threshold", format_double(st.threshold)},
	                               {"alpha", format_double(st.alpha)}});
	return out;
}

ReportTable run_report(const std::vector<fs::path>& run_dirs) {
	if (run_dirs.empty()) throw Error("report: no run directories given");
	struct Run {
		fs::path dir;
		std::string label, dims;
		std::map<std::string, double> metrics;
	};
	std::vector<Run> runs;
	for (const auto& dir : run_dirs) {
		const fs::path rf = dir / "run.txt";
		require(rf);
		auto kv = read_kv(rf);
		Run r;
		r.dir = dir;
		r.label = kv.count("label") ? kv["label"] : dir.filename().string();
		r.dims = "V=" + kv["V"] + " q=" + kv["q"] + " p=" + kv["p"];
		bool any = false;
		for (const char* name : {"score.csv", "calibration.csv"}) {
			const fs::path f = dir / name;
			if (!fs::exists(f)) continue;
			any = true;
			std::istringstream in(read_file(f));
			std::string header;
			std::getline(in, header);
			Eigen::MatrixXd vals = read_csv(f, true);
			if (vals.rows() != 1) throw Error(f.string() + ": expected one data row");
			std::vector<std::string> names;
			std::stringstream hs(header);
			for (std::string h; std::getline(hs, h, ',');) names.push_back(h);
			if (static_cast<Eigen::Index>(names.size()) != vals.cols()) throw Error(f.string() + ": header width mismatch");
			for (std::size_t j = 0; j < names.size(); ++j) r.metrics[names[j]] = vals(0, static_cast<Eigen::Index>(j));
		}
		if (!any) throw MissingFile(dir.string() + " has neither score.csv nor calibration.csv");
		runs.push_back(std::move(r));
	}

	std::map<std::string, std::vector<std::string>> by_dims;
	for (const auto& r : runs) by_dims[r.dims].push_back(r.dir.string());
	if (by_dims.size() > 1) {
		std::string msg = "report: runs have inconsistent dimensions:";
		for (const auto& [d, dirs] : by_dims) {
			msg += "\n  " + d + ":";
			for (const auto& x : dirs) msg += " " + x;
		}
		throw Error(msg);
	}

	ReportTable t;
	std::set<std::string> seen;
	for (const auto& r : runs) {
		if (std::find(t.labels.begin(), t.labels.end(), r.label) == t.labels.end()) t.labels.push_back(r.label);
		for (const auto& [k, v] : r.metrics)
			if (seen.insert(k).second) t.metrics.push_back(k);
	}
	const auto L = static_cast<Eigen::Index>(t.labels.size()), K = static_cast<Eigen::Index>(t.metrics.size());
	const double nan = std::numeric_limits<double>::quiet_NaN();
	t.mean = Eigen::MatrixXd::Constant(L, K, nan);
	t.sd = Eigen::MatrixXd::Constant(L, K, nan);
	t.runs.assign(t.labels.size(), 0);
	for (Eigen::Index a = 0; a < L; ++a) {
		for (const auto& r : runs)
			if (r.label == t.labels[static_cast<std::size_t>(a)]) ++t.runs[static_cast<std::size_t>(a)];
		for (Eigen::Index b = 0; b < K; ++b) {
			std::vector<double> xs;
			for (const auto& r : runs) {
				if (r.label != t.labels[static_cast<std::size_t>(a)]) continue;
				auto it = r.metrics.find(t.metrics[static_cast<std::size_t>(b)]);
				if (it != r.metrics.end() && std::isfinite(it->second)) xs.push_back(it->second);
			}
			if (xs.empty()) continue;
			double mean = 0.0;
			for (double x : xs) mean += x;
			mean /= static_cast<double>(xs.size());
			t.mean(a, b) = mean;
			if (xs.size() > 1) {
				double ss = 0.0;
				for (double x : xs) ss += (x - mean) * (x - mean);
				t.sd(a, b) = std::sqrt(ss / static_cast<double>(xs.size() - 1));
			}
		}
	}
	return t;
}

std::string report_csv(const ReportTable& t) {
	std::string out = "label,runs";
	for (const auto& m : t.metrics) out += "," + m + "_mean," + m + "_sd";
	out += "\n";
	for (std::size_t a = 0; a < t.labels.size(); ++a) {
		out += t.labels[a] + "," + std::to_string(t.runs[a]);
		for (std::size_t b = 0; b < t.metrics.size(); ++b) {
			const double mu = t.mean(static_cast<Eigen::Index>(a), static_cast<Eigen::Index>(b));
			const double sd = t.sd(static_cast<Eigen::Index>(a), static_cast<Eigen::Index>(b));
			out += "," + (std::isnan(mu) ? std::string() : format_double(mu));
			out += "," + (std::isnan(sd) ? std::string() : format_double(sd));
		}
		out += "\n";
	}
	return out;
}

std::string report_text(const ReportTable& t) {
	std::vector<std::vector<std::string>> cells;
	std::vector<std::string> head{"label", "runs"};
	for (const auto& m : t.metrics) head.push_back(m);
	cells.push_back(head);
	char buf[64];
	for (std::size_t a = 0; a < t.labels.size(); ++a) {
		std::vector<std::string> row{t.labels[a], std::to_string(t.runs[a])};
		for (std::size_t b = 0; b < t.metrics.size(); ++b) {
			const double mu = t.mean(static_cast<Eigen::Index>(a), static_cast<Eigen::Index>(b));
			const double sd = t.sd(static_cast<Eigen::Index>(a), static_cast<Eigen::Index>(b));
			if (std::isnan(mu)) row.push_back("");
			else if (std::isnan(sd)) {
				std::snprintf(buf, sizeof buf, "%.3f", mu);
				row.push_back(buf);
			} else {
				std::snprintf(buf, sizeof buf, "%.3f (%.3f)", mu, sd);
				row.push_back(buf);
			}
		}
		cells.push_back(row);
	}
	std::vector<std::size_t> width(head.size(), 0);
	for (const auto& r : cells)
		for (std::size_t j = 0; j < r.size(); ++j) width[j] = std::max(width[j], r[j].size());
	std::string out;
	for (const auto& r : cells) {
		for (std::size_t j = 0; j < r.size(); ++j) {
			out += r[j];
			if (j + 1 < r.size()) out += std::string(width[j] - r[j].size() + 2, ' ');
		}
		out += "\n";
	}
	return out;
}

}  // namespace hcica
