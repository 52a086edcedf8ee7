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
 * @file hcica_main.cpp Command line front end: simulate, fit, infer, report.
 *
 * Exit codes: 0 success, 1 usage or configuration error, 2 EM did not
 * converge (or diverged), 3 missing input artifacts.
 *
 *****************************************************************************/

#include "hcica/config.hpp"
#include "hcica/matrix_io.hpp"
#include "hcica/pipeline.hpp"

#include <CLI11.hpp>

#include <cstdio>
#include <cstdlib>
#include <iostream>

using namespace hcica;
namespace fs = std::filesystem;

namespace {

enum Exit { kOk = 0, kUsage = 1, kNoConvergence = 2, kMissing = 3 };

struct Common {
	std::string config;
	std::string mode;
	std::string out;
	std::int64_t seed = -1;
	int threads = -1;
};

Config load_config(const Common& c) {
	Config cfg = c.config.empty() ? Config() : Config::load(c.config);
	if (!c.mode.empty()) cfg.set("mode", c.mode);
	if (c.seed >= 0) cfg.set("seed", std::to_string(c.seed));
	if (c.threads >= 0) {
		cfg.set("threads", std::to_string(c.threads));
	} else if (const char* env = std::getenv("HCICA_THREADS"); env && *env) {
		cfg.set("threads", env);
	}
	return cfg;
}

int cmd_simulate(const Common& c) {
	Config cfg = load_config(c);
	auto res = run_simulate(cfg, c.out);
	const auto& s = res.spec;
	std::printf("dataset %s: N=%zu T=%zu V=%zu (%zux%zux%zu) q=%zu p=%zu m=%zu seed=%llu%s\n", c.out.c_str(), s.N, s.T,
	            s.V(), s.grid[0], s.grid[1], s.grid[2], s.q, s.p(), s.m, static_cast<unsigned long long>(s.seed),
	            s.null_effects ? " null" : "");
	return kOk;
}

int cmd_fit(const Common& c, const std::string& data) {
	Config cfg = load_config(c);
	FitOutcome res;
	try {
		res = run_fit(data, cfg, c.out);
	} catch (const FitError& e) {
		std::fprintf(stderr, "hcica fit: %s\n", e.what());
		return kNoConvergence;
	}
	const auto& r = res.result;
	std::printf("fit %s: %s after %zu iterations, %.2f s\n", c.out.c_str(), r.converged ? "converged" : "not converged",
	            r.trace.iterations(), res.seconds);
	if (res.score)
		std::printf("score: population %.4f subject %.4f time course %.4f beta mse %.4f\n", res.score->population_corr,
		            res.score->subject_corr, res.score->time_course_corr, res.score->beta_mse);
	for (const auto& w : r.warnings) std::fprintf(stderr, "warning: %s\n", w.c_str());
	return r.converged ? kOk : kNoConvergence;
}

int cmd_infer(const Common& c, const std::string& fit_dir, double threshold) {
	Config cfg = load_config(c);
	if (threshold > 0.0) cfg.set("threshold", format_double(threshold));
	auto res = run_infer(fit_dir, cfg, c.out);
	std::printf("infer %s: %zu voxels, fraction of p < alpha %.4f", c.out.c_str(), res.maps.V(), res.frac_rejected);
	if (!std::isnan(res.type1)) std::printf(", type-I %.4f", res.type1);
	if (!std::isnan(res.power)) std::printf(", power %.4f", res.power);
	std::printf("\n");
	return kOk;
}

int cmd_report(const std::vector<std::string>& dirs, const std::string& out) {
	std::vector<fs::path> paths(dirs.begin(), dirs.end());
	ReportTable t = run_report(paths);
	const std::string text = report_text(t);
	if (!out.empty()) {
		write_file_atomic(fs::path(out) / "report.csv", report_csv(t));
		write_file_atomic(fs::path(out) / "report.txt", text);
	}
	std::fputs(text.c_str(), stdout);
	return kOk;
}

}  // namespace

int main(int argc, char** argv) {
	CLI::App app{"Hierarchical covariate ICA: simulate, fit, infer, report"};
	app.require_subcommand(1);

	Common c;
	auto add_common = [&](CLI::App* sub, bool with_mode) {
		sub->add_option("--config", c.config, "key=value configuration file");
		sub->add_option("--seed", c.seed, "random seed (overrides the config)")->check(CLI::NonNegativeNumber);
		sub->add_option("--threads", c.threads, "worker threads, 0 for all (falls back to HCICA_THREADS)")
			->check(CLI::NonNegativeNumber);
		sub->add_option("--out", c.out, "output directory")->required();
		if (with_mode) sub->add_option("--mode", c.mode, "EM variant")->check(CLI::IsMember({"exact", "subspace"}));
	};

	auto* sim = app.add_subcommand("simulate", "generate a synthetic dataset with known truth");
	add_common(sim, false);

	std::string data_dir;
	auto* fitc = app.add_subcommand("fit", "preprocess and fit a dataset");
	fitc->add_option("data", data_dir, "dataset directory")->required();
	add_common(fitc, true);

	std::string fit_dir;
	double threshold = -1.0;
	auto* inf = app.add_subcommand("infer", "voxel-wise tests and activation maps from a fit");
	inf->add_option("fit", fit_dir, "fit directory")->required();
	inf->add_option("--threshold", threshold, "activation probability cut")->check(CLI::Range(0.0, 1.0));
	add_common(inf, false);

	std::vector<std::string> runs;
	std::string report_out;
	auto* rep = app.add_subcommand("report", "mean (SD) tables across runs");
	rep->add_option("runs", runs, "fit or infer directories")->required();
	rep->add_option("--out", report_out, "directory for report.csv and report.txt");

	try {
		app.parse(argc, argv);
	} catch (const CLI::ParseError& e) {
		int rc = app.exit(e);
		return rc == 0 ? kOk : kUsage;
	}

	try {
		if (*sim) return cmd_simulate(c);
		if (*fitc) return cmd_fit(c, data_dir);
		if (*inf) return cmd_infer(c, fit_dir, threshold);
		if (*rep) return cmd_report(runs, report_out);
	} catch (const MissingFile& e) {
		std::fprintf(stderr, "hcica: %s\n", e.what());
		return kMissing;
	} catch (const ConfigError& e) {
		std::fprintf(stderr, "hcica: %s\n", e.what());
		return kUsage;
	} catch (const std::exception& e) {
		std::fprintf(stderr, "hcica: %s\n", e.what());
		return kUsage;
	}
	return kUsage;
}
