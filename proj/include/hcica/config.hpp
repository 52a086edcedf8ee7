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
 * @file config.hpp Flat key=value run configuration.
 *
 * One assignment per line, '#' starts a comment, blank lines are ignored.
 * Keys are checked against a fixed list so typos fail early with the line
 * number.
 *
 *****************************************************************************/

#pragma once

#include "hcica/em_engine.hpp"
#include "hcica/inference.hpp"
#include "hcica/simgen.hpp"

#include <filesystem>
#include <map>
#include <string>
#include <vector>

namespace hcica {

/// Configuration problems: bad syntax, unknown keys, out-of-range values.
class ConfigError : public Error {
public:
	using Error::Error;
};

class Config {
public:
	struct Entry {
		std::string value;
		std::size_t line = 0;  ///< 0 for values set programmatically
	};

	static Config parse(const std::string& text, const std::string& source = "config");
	static Config load(const std::filesystem::path& path);

	/// Every key the parser accepts.
	static const std::vector<std::string>& known_keys();

	bool has(const std::string& key) const { return entries_.count(key) != 0; }
	void set(const std::string& key, const std::string& value);

	std::string get_string(const std::string& key, const std::string& fallback) const;
	double get_double(const std::string& key, double fallback) const;
	std::size_t get_size(const std::string& key, std::size_t fallback) const;
	std::uint64_t get_u64(const std::string& key, std::uint64_t fallback) const;
	bool get_bool(const std::string& key, bool fallback) const;
	std::vector<double> get_doubles(const std::string& key, const std::vector<double>& fallback) const;

	/// "source:line: key" for messages, or just the key when set in code.
	std::string where(const std::string& key) const;

	const std::map<std::string, Entry>& entries() const { return entries_; }
	const std::string& source() const { return source_; }

	/// key=value lines in key order.
	std::string dump() const;

private:
	std::map<std::string, Entry> entries_;
	std::string source_ = "config";
};

/// Simulation settings; study = 1 or 3 picks the preset the remaining keys override.
SimSpec sim_spec_from(const Config& cfg);
EMConfig em_config_from(const Config& cfg);

struct InferSettings {
	double threshold = 0.95;  ///< activation probability cut
	double alpha = 0.05;      ///< level used for rejection counts
	InferenceOptions options;
};
InferSettings infer_settings_from(const Config& cfg);

}  // namespace hcica
