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

#include "hcica/config.hpp"

#include "hcica/matrix_io.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <sstream>

namespace hcica {

namespace {

std::string trim(const std::string& s) {
	auto a = s.find_first_not_of(" \t\r");
	if (a == std::string::npos) return "";
	auto b = s.find_last_not_of(" \t\r");
	return s.substr(a, b - a + 1);
}

std::vector<std::string> split_list(const std::string& s) {
	std::vector<std::string> out;
	std::string cur;
	for (char c : s) {
		if (c == ',' || c == ' ' || c == '\t') {
			if (!cur.empty()) out.push_back(cur);
			cur.clear();
		} else {
			cur += c;
		}
	}
	if (!cur.empty()) out.push_back(cur);
	return out;
}

}  // namespace

const std::vector<std::string>& Config::known_keys() {
	static const std::vector<std::string> keys{
		// model and fitting
		"mode", "q", "m", "rel_tol", "max_iters", "seed", "threads", "noise_denominator", "mixing_update",
		"loglik_monitor", "full_state_cap",
		// inference
		"threshold", "fdr_family", "alpha",
		// simulation
		"study", "N", "T", "V", "grid", "covariates", "beta_values", "null_effects", "variability", "D", "noise_sd",
		"s0_noise_var", "amplitude", "active_fraction", "effect_fraction", "overlap_fraction", "sinusoids",
		"ar_coef", "ar_sd",
		// bookkeeping
		"label"};
	return keys;
}

Config Config::parse(const std::string& text, const std::string& source) {
	Config cfg;
	cfg.source_ = source;
	const auto& keys = known_keys();
	std::istringstream in(text);
	std::string line;
	std::size_t lineno = 0;
	while (std::getline(in, line)) {
		++lineno;
		auto hash = line.find('#');
		if (hash != std::string::npos) line.erase(hash);
		line = trim(line);
		if (line.empty()) continue;
		auto eq = line.find('=');
		if (eq == std::string::npos)
			throw ConfigError(source + ":" + std::to_string(lineno) + ": expected key=value, found '" + line + "'");
		std::string key = trim(line.substr(0, eq));
		std::string value = trim(line.substr(eq + 1));
		if (key.empty()) throw ConfigError(source + ":" + std::to_string(lineno) + ": missing key before '='");
		if (std::find(keys.begin(), keys.end(), key) == keys.end())
			throw ConfigError(source + ":" + std::to_string(lineno) + ": unknown key '" + key + "'");
		if (value.empty()) throw ConfigError(source + ":" + std::to_string(lineno) + ": " + key + " has no value");
		if (cfg.entries_.count(key))
			throw ConfigError(source + ":" + std::to_string(lineno) + ": " + key + " already set on line " +
			                  std::to_string(cfg.entries_[key].line));
		cfg.entries_[key] = {value, lineno};
	}
	return cfg;
}

Config Config::load(const std::filesystem::path& path) {
	std::string text;
	try {
		text = read_file(path);
	} catch (const MissingFile&) {
		throw ConfigError("cannot open config file " + path.string());
	}
	return parse(text, path.string());
}

void Config::set(const std::string& key, const std::string& value) {
	const auto& keys = known_keys();
	if (std::find(keys.begin(), keys.end(), key) == keys.end()) throw ConfigError("unknown key '" + key + "'");
	entries_[key] = {value, 0};
}

std::string Config::where(const std::string& key) const {
	auto it = entries_.find(key);
	if (it == entries_.end() || it->second.line == 0) return key;
	return source_ + ":" + std::to_string(it->second.line) + ": " + key;
}

std::string Config::get_string(const std::string& key, const std::string& fallback) const {
	auto it = entries_.find(key);
	return it == entries_.end() ? fallback : it->second.value;
}

double Config::get_double(const std::string& key, double fallback) const {
	auto it = entries_.find(key);
	if (it == entries_.end()) return fallback;
	const std::string& s = it->second.value;
	double v = 0.0;
	auto res = std::from_chars(s.data(), s.data() + s.size(), v);
	if (res.ec != std::errc() || res.ptr != s.data() + s.size() || !std::isfinite(v))
		throw ConfigError(where(key) + " must be a finite number, got '" + s + "'");
	return v;
}

std::uint64_t Config::get_u64(const std::string& key, std::uint64_t fallback) const {
	auto it = entries_.find(key);
	if (it == entries_.end()) return fallback;
	const std::string& s = it->second.value;
	std::uint64_t v = 0;
	auto res = std::from_chars(s.data(), s.data() + s.size(), v);
	if (res.ec != std::errc() || res.ptr != s.data() + s.size())
		throw ConfigError(where(key) + " must be a nonnegative integer, got '" + s + "'");
	return v;
}

std::size_t Config::get_size(const std::string& key, std::size_t fallback) const {
	return static_cast<std::size_t>(get_u64(key, fallback));
}

bool Config::get_bool(const std::string& key, bool fallback) const {
	auto it = entries_.find(key);
	if (it == entries_.end()) return fallback;
	const std::string& s = it->second.value;
	if (s == "true" || s == "1" || s == "yes") return true;
	if (s == "false" || s == "0" || s == "no") return false;
	throw ConfigError(where(key) + " must be true or false, got '" + s + "'");
}

std::vector<double> Config::get_doubles(const std::string& key, const std::vector<double>& fallback) const {
	auto it = entries_.find(key);
	if (it == entries_.end()) return fallback;
	std::vector<double> out;
	for (const auto& tok : split_list(it->second.value)) {
		double v = 0.0;
		auto res = std::from_chars(tok.data(), tok.data() + tok.size(), v);
		if (res.ec != std::errc() || res.ptr != tok.data() + tok.size() || !std::isfinite(v))
			throw ConfigError(where(key) + ": cannot parse '" + tok + "' as a number");
		out.push_back(v);
	}
	if (out.empty()) throw ConfigError(where(key) + " is an empty list");
	return out;
}

std::string Config::dump() const {
	std::string out;
	for (const auto& [k, e] : entries_) out += k + "=" + e.value + "\n";
	return out;
}

SimSpec sim_spec_from(const Config& cfg) {
	const std::size_t study = cfg.get_size("study", 1);
	const std::size_t N = cfg.get_size("N", study == 3 ? 20 : 10);
	const std::uint64_t seed = cfg.get_u64("seed", 1);

	Variability level = Variability::Low;
	std::string lv = cfg.get_string("variability", "low");
	if (lv == "low") level = Variability::Low;
	else if (lv == "medium") level = Variability::Medium;
	else if (lv == "high") level = Variability::High;
	else throw ConfigError(cfg.where("variability") + " must be low, medium or high, got '" + lv + "'");

	SimSpec s;
	if (study == 1) s = SimSpec::study1(N, level, seed);
	else if (study == 3) s = SimSpec::study3(N, cfg.get_bool("null_effects", false), seed);
	else throw ConfigError(cfg.where("study") + " must be 1 or 3");

	s.T = cfg.get_size("T", s.T);
	s.m = cfg.get_size("m", s.m);
	if (cfg.has("q")) {
		s.q = cfg.get_size("q", s.q);
		if (!cfg.has("D")) s.D = study == 3 ? Eigen::VectorXd::Constant(static_cast<Eigen::Index>(s.q), 0.25)
		                                    : SimSpec::variability(level, s.q);
	}
	if (cfg.has("grid")) {
		auto g = cfg.get_doubles("grid", {});
		if (g.size() < 2 || g.size() > 3) throw ConfigError(cfg.where("grid") + " needs 2 or 3 extents");
		for (double x : g)
			if (!(x >= 1.0) || x != std::floor(x)) throw ConfigError(cfg.where("grid") + " extents must be positive integers");
		s.grid = {static_cast<std::size_t>(g[0]), static_cast<std::size_t>(g[1]),
		          g.size() == 3 ? static_cast<std::size_t>(g[2]) : 1};
	}
	if (cfg.has("V") && cfg.get_size("V", 0) != s.V())
		throw ConfigError(cfg.where("V") + " = " + cfg.get_string("V", "") + " does not match the grid, which has " +
		                  std::to_string(s.V()) + " voxels");
	if (cfg.has("covariates")) {
		s.covariates.clear();
		std::string v = cfg.get_string("covariates", "");
		std::string cur;
		for (char c : v + ",") {
			if (c == ',' || c == ' ') {
				if (cur == "bernoulli") s.covariates.push_back(CovariateKind::Bernoulli);
				else if (cur == "uniform") s.covariates.push_back(CovariateKind::Uniform);
				else if (!cur.empty())
					throw ConfigError(cfg.where("covariates") + ": unknown kind '" + cur + "' (bernoulli or uniform)");
				cur.clear();
			} else {
				cur += c;
			}
		}
	}
	s.beta_values = cfg.get_doubles("beta_values", s.beta_values);
	if (study != 3) s.null_effects = cfg.get_bool("null_effects", s.null_effects);
	if (cfg.has("D")) {
		auto d = cfg.get_doubles("D", {});
		if (d.size() == 1) s.D = Eigen::VectorXd::Constant(static_cast<Eigen::Index>(s.q), d[0]);
		else if (d.size() == s.q) s.D = Eigen::Map<Eigen::VectorXd>(d.data(), static_cast<Eigen::Index>(d.size()));
		else throw ConfigError(cfg.where("D") + " needs 1 or q = " + std::to_string(s.q) + " values");
	}
	s.noise_sd = cfg.get_double("noise_sd", s.noise_sd);
	s.s0_noise_var = cfg.get_double("s0_noise_var", s.s0_noise_var);
	s.amplitude = cfg.get_double("amplitude", s.amplitude);
	s.active_fraction = cfg.get_double("active_fraction", s.active_fraction);
	s.effect_fraction = cfg.get_double("effect_fraction", s.effect_fraction);
	s.overlap_fraction = cfg.get_double("overlap_fraction", s.overlap_fraction);
	s.sinusoids = cfg.get_size("sinusoids", s.sinusoids);
	s.ar_coef = cfg.get_double("ar_coef", s.ar_coef);
	s.ar_sd = cfg.get_double("ar_sd", s.ar_sd);
	try {
		s.validate();
	} catch (const Error& e) {
		throw ConfigError(cfg.source() + ": " + e.what());
	}
	return s;
}

EMConfig em_config_from(const Config& cfg) {
	EMConfig c;
	if (cfg.has("mode")) {
		try {
			c.mode = parse_mode(cfg.get_string("mode", ""));
		} catch (const Error&) {
			throw ConfigError(cfg.where("mode") + " must be exact or subspace, got '" + cfg.get_string("mode", "") + "'");
		}
	}
	c.max_iters = cfg.get_size("max_iters", c.max_iters);
	c.rel_tol = cfg.get_double("rel_tol", c.rel_tol);
	c.seed = cfg.get_u64("seed", c.seed);
	c.loglik_monitor = cfg.get_bool("loglik_monitor", c.loglik_monitor);
	c.full_state_cap = cfg.get_size("full_state_cap", c.full_state_cap);
	c.threads = static_cast<int>(cfg.get_size("threads", 0));
	std::string nd = cfg.get_string("noise_denominator", "QNV");
	if (nd == "QNV") c.noise_denominator = NoiseDenominator::QNV;
	else if (nd == "TNV") c.noise_denominator = NoiseDenominator::TNV;
	else throw ConfigError(cfg.where("noise_denominator") + " must be QNV or TNV");
	std::string mu = cfg.get_string("mixing_update", "procrustes");
	if (mu == "procrustes") c.mixing_update = MixingUpdate::Procrustes;
	else if (mu == "orthogonalized") c.mixing_update = MixingUpdate::Orthogonalized;
	else throw ConfigError(cfg.where("mixing_update") + " must be procrustes or orthogonalized");
	try {
		c.validate();
	} catch (const Error& e) {
		throw ConfigError(cfg.source() + ": " + e.what());
	}
	return c;
}

InferSettings infer_settings_from(const Config& cfg) {
	InferSettings s;
	s.threshold = cfg.get_double("threshold", s.threshold);
	if (!(s.threshold > 0.0 && s.threshold < 1.0)) throw ConfigError(cfg.where("threshold") + " must lie in (0, 1)");
	s.alpha = cfg.get_double("alpha", s.alpha);
	if (!(s.alpha > 0.0 && s.alpha < 1.0)) throw ConfigError(cfg.where("alpha") + " must lie in (0, 1)");
	std::string fam = cfg.get_string("fdr_family", "per_ic");
	if (fam == "per_ic") s.options.fdr_family = FdrFamily::PerIC;
	else if (fam == "global") s.options.fdr_family = FdrFamily::Global;
	else throw ConfigError(cfg.where("fdr_family") + " must be per_ic or global");
	s.options.threads = static_cast<int>(cfg.get_size("threads", 0));
	return s;
}

}  // namespace hcica
