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
 * @file pipeline.hpp On-disk layout and the simulate / fit / infer / report
 * steps behind the command line tool.
 *
 * Dataset directory:
 *   dataset.txt            dims and grid, key=value
 *   subject_000.hcm ...    raw T x V data
 *   covariates.hcm         N x p
 *   truth/                 s0, s0_signal (q x V), beta (V x pq), subject maps,
 *                          time courses (T x q), when simulated
 *
 * Fit directory:
 *   run.txt, config.txt, trace.csv, params/, maps/, score.csv
 *
 * Infer directory:
 *   run.txt, z_stats.hcm, p_values.hcm, fdr.hcm, activation_prob.hcm,
 *   activation.hcm, summary.csv, calibration.csv
 *
 *****************************************************************************/

#pragma once

#include "hcica/config.hpp"
#include "hcica/em_engine.hpp"
#include "hcica/inference.hpp"
#include "hcica/simgen.hpp"

#include <array>
#include <filesystem>
#include <limits>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace hcica {

/// Key=value text files used for dataset.txt and run.txt.
std::map<std::string, std::string> read_kv(const std::filesystem::path& path);
void write_kv(const std::filesystem::path& path, const std::vector<std::pair<std::string, std::string>>& kv);

struct Dataset {
	Dimensions dims;  ///< q and m come from the simulation, T from the data
	std::array<std::size_t, 3> grid{0, 0, 0};
	std::vector<Eigen::MatrixXd> raw;
	CovariateSet X;
	std::optional<SimTruth> truth;
};

void write_dataset(const std::filesystem::path& dir, const SimDataset& ds, const SimSpec& spec);
Dataset load_dataset(const std::filesystem::path& dir, bool with_truth = true);

/// Bit-exact parameter files under dir.
void save_params(const std::filesystem::path& dir, const ModelParams& params);
ModelParams load_params(const std::filesystem::path& dir);

/// V x pq with column k*q + l, and back.
Eigen::MatrixXd beta_to_matrix(const std::vector<Eigen::MatrixXd>& beta);
std::vector<Eigen::MatrixXd> beta_from_matrix(const Eigen::MatrixXd& M, std::size_t p, std::size_t q);

struct SimulateOutcome {
	SimSpec spec;
	SimDataset data;
};
SimulateOutcome run_simulate(const Config& cfg, const std::filesystem::path& out_dir);

struct FitOutcome {
	FitResult result;
	std::optional<Score> score;
	double seconds = 0.0;
};

/// Preprocess, fit and write everything. A FitError still leaves trace.csv and run.txt behind.
FitOutcome run_fit(const std::filesystem::path& data_dir, const Config& cfg, const std::filesystem::path& out_dir);

struct InferOutcome {
	InferenceMaps maps;
	double frac_rejected = 0.0;  ///< share of all tests with p < alpha
	double type1 = std::numeric_limits<double>::quiet_NaN();
	double power = std::numeric_limits<double>::quiet_NaN();
	std::map<double, double> power_by_value;  ///< keyed by true |beta|
};

/// Needs the fit directory written by run_fit; missing files raise MissingFile.
InferOutcome run_infer(const std::filesystem::path& fit_dir, const Config& cfg, const std::filesystem::path& out_dir);

struct ReportTable {
	std::vector<std::string> labels;   ///< one row per label, in first-seen order
	std::vector<std::string> metrics;  ///< union of metric columns
	Eigen::MatrixXd mean;
	Eigen::MatrixXd sd;                ///< NaN when fewer than two runs
	std::vector<std::size_t> runs;
};

/// Aggregate score.csv and calibration.csv across run directories.
ReportTable run_report(const std::vector<std::filesystem::path>& run_dirs);
std::string report_csv(const ReportTable& t);
std::string report_text(const ReportTable& t);

}  // namespace hcica
