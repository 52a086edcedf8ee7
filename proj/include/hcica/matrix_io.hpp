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
 * @file matrix_io.hpp Binary and CSV matrix files.
 *
 * HCM1 layout: the 8 bytes "HCMAT1\0\0", u64 rows, u64 cols, then
 * rows*cols IEEE-754 doubles in row-major order, all little-endian.
 *
 *****************************************************************************/

#pragma once

#include "hcica/types.hpp"

#include <filesystem>
#include <string>
#include <vector>

namespace hcica {

/// Thrown when a file cannot be opened or does not exist.
class MissingFile : public Error {
public:
	using Error::Error;
};

/// Write bytes to path through a temporary file and a rename.
void write_file_atomic(const std::filesystem::path& path, const std::string& bytes);
std::string read_file(const std::filesystem::path& path);

std::string encode_hcm(const Eigen::MatrixXd& M);
Eigen::MatrixXd decode_hcm(const std::string& bytes, const std::string& what = "matrix");

void write_hcm(const std::filesystem::path& path, const Eigen::MatrixXd& M);
Eigen::MatrixXd read_hcm(const std::filesystem::path& path);

/// Comma-separated, one row per line, shortest round-trip formatting.
std::string encode_csv(const Eigen::MatrixXd& M, const std::vector<std::string>& header = {});
Eigen::MatrixXd decode_csv(const std::string& text, bool has_header = false, const std::string& what = "csv");

void write_csv(const std::filesystem::path& path, const Eigen::MatrixXd& M, const std::vector<std::string>& header = {});
Eigen::MatrixXd read_csv(const std::filesystem::path& path, bool has_header = false);

/// Shortest decimal text that reads back to the same double.
std::string format_double(double x);

}  // namespace hcica
