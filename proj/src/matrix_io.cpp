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

#include "hcica/matrix_io.hpp"

#include <array>
#include <bit>
#include <charconv>
#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>
#include <sstream>
#include <system_error>

#include <unistd.h>

namespace hcica {

namespace fs = std::filesystem;

namespace {

constexpr std::array<char, 8> kMagic{'H', 'C', 'M', 'A', 'T', '1', '\0', '\0'};
constexpr std::size_t kHeader = 24;

void put_u64(std::string& out, std::uint64_t x) {
	for (int b = 0; b < 8; ++b) out.push_back(static_cast<char>((x >> (8 * b)) & 0xff));
}

std::uint64_t get_u64(const char* p) {
	std::uint64_t x = 0;
	for (int b = 0; b < 8; ++b) x |= static_cast<std::uint64_t>(static_cast<unsigned char>(p[b])) << (8 * b);
	return x;
}

}  // namespace

void write_file_atomic(const fs::path& path, const std::string& bytes) {
	if (path.has_parent_path()) {
		std::error_code ec;
		fs::create_directories(path.parent_path(), ec);
		if (ec) throw Error("cannot create directory " + path.parent_path().string() + ": " + ec.message());
	}
	fs::path tmp = path;
	tmp += ".tmp." + std::to_string(::getpid());
	{
		std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
		if (!f) throw Error("cannot open " + tmp.string() + " for writing");
		f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
		f.flush();
		if (!f) {
			f.close();
			fs::remove(tmp);
			throw Error("write failed for " + tmp.string());
		}
	}
	std::error_code ec;
	fs::rename(tmp, path, ec);
	if (ec) {
		fs::remove(tmp);
		throw Error("cannot rename " + tmp.string() + " to " + path.string() + ": " + ec.message());
	}
}

std::string read_file(const fs::path& path) {
	std::ifstream f(path, std::ios::binary);
	if (!f) throw MissingFile("cannot open " + path.string());
	std::ostringstream ss;
	ss << f.rdbuf();
	return ss.str();
}

std::string encode_hcm(const Eigen::MatrixXd& M) {
	const auto r = static_cast<std::uint64_t>(M.rows());
	const auto c = static_cast<std::uint64_t>(M.cols());
	std::string out(kMagic.begin(), kMagic.end());
	out.reserve(kHeader + 8 * r * c);
	put_u64(out, r);
	put_u64(out, c);
	for (Eigen::Index i = 0; i < M.rows(); ++i)
		for (Eigen::Index j = 0; j < M.cols(); ++j) put_u64(out, std::bit_cast<std::uint64_t>(M(i, j)));
	return out;
}

Eigen::MatrixXd decode_hcm(const std::string& bytes, const std::string& what) {
	if (bytes.size() < kHeader || std::memcmp(bytes.data(), kMagic.data(), kMagic.size()) != 0)
		throw Error(what + ": not an HCM1 matrix file");
	const std::uint64_t r = get_u64(bytes.data() + 8);
	const std::uint64_t c = get_u64(bytes.data() + 16);
	if (c != 0 && r > (std::numeric_limits<std::uint64_t>::max() / 8) / c)
		throw Error(what + ": header dimensions overflow");
	if (bytes.size() - kHeader != 8 * r * c)
		throw Error(what + ": payload of " + std::to_string(bytes.size() - kHeader) + " bytes does not match " +
		            std::to_string(r) + "x" + std::to_string(c));
	Eigen::MatrixXd M(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c));
	const char* p = bytes.data() + kHeader;
	for (Eigen::Index i = 0; i < M.rows(); ++i)
		for (Eigen::Index j = 0; j < M.cols(); ++j, p += 8) M(i, j) = std::bit_cast<double>(get_u64(p));
	return M;
}

void write_hcm(const fs::path& path, const Eigen::MatrixXd& M) { write_file_atomic(path, encode_hcm(M)); }

Eigen::MatrixXd read_hcm(const fs::path& path) { return decode_hcm(read_file(path), path.string()); }

std::string format_double(double x) {
	if (std::isnan(x)) return "nan";
	if (std::isinf(x)) return x > 0 ? "inf" : "-inf";
	std::array<char, 64> buf;
	auto res = std::to_chars(buf.data(), buf.data() + buf.size(), x);
	return std::string(buf.data(), res.ptr);
}

std::string encode_csv(const Eigen::MatrixXd& M, const std::vector<std::string>& header) {
	std::string out;
	if (!header.empty()) {
		if (static_cast<Eigen::Index>(header.size()) != M.cols()) throw Error("encode_csv: header width does not match");
		for (std::size_t j = 0; j < header.size(); ++j) {
			if (j) out += ',';
			out += header[j];
		}
		out += '\n';
	}
	for (Eigen::Index i = 0; i < M.rows(); ++i) {
		for (Eigen::Index j = 0; j < M.cols(); ++j) {
			if (j) out += ',';
			out += format_double(M(i, j));
		}
		out += '\n';
	}
	return out;
}

Eigen::MatrixXd decode_csv(const std::string& text, bool has_header, const std::string& what) {
	std::vector<std::vector<double>> rows;
	std::istringstream in(text);
	std::string line;
	std::size_t lineno = 0;
	while (std::getline(in, line)) {
		++lineno;
		if (!line.empty() && line.back() == '\r') line.pop_back();
		if (line.empty()) continue;
		if (has_header && lineno == 1) continue;
		std::vector<double> row;
		std::size_t pos = 0;
		while (true) {
			std::size_t end = line.find(',', pos);
			std::string cell = line.substr(pos, end == std::string::npos ? std::string::npos : end - pos);
			std::size_t a = cell.find_first_not_of(" \t"), b = cell.find_last_not_of(" \t");
			cell = a == std::string::npos ? "" : cell.substr(a, b - a + 1);
			double v = 0.0;
			if (cell == "nan") v = std::numeric_limits<double>::quiet_NaN();
			else if (cell == "inf") v = std::numeric_limits<double>::infinity();
			else if (cell == "-inf") v = -std::numeric_limits<double>::infinity();
			else {
				auto res = std::from_chars(cell.data(), cell.data() + cell.size(), v);
				if (cell.empty() || res.ec != std::errc() || res.ptr != cell.data() + cell.size())
					throw Error(what + ":" + std::to_string(lineno) + ": cannot parse '" + cell + "' as a number");
			}
			row.push_back(v);
			if (end == std::string::npos) break;
			pos = end + 1;
		}
		if (!rows.empty() && row.size() != rows[0].size())
			throw Error(what + ":" + std::to_string(lineno) + ": expected " + std::to_string(rows[0].size()) +
			            " fields, found " + std::to_string(row.size()));
		rows.push_back(std::move(row));
	}
	Eigen::MatrixXd M(static_cast<Eigen::Index>(rows.size()),
	                  rows.empty() ? 0 : static_cast<Eigen::Index>(rows[0].size()));
	for (std::size_t i = 0; i < rows.size(); ++i)
		for (std::size_t j = 0; j < rows[i].size(); ++j)
			M(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = rows[i][j];
	return M;
}

void write_csv(const fs::path& path, const Eigen::MatrixXd& M, const std::vector<std::string>& header) {
	write_file_atomic(path, encode_csv(M, header));
}

Eigen::MatrixXd read_csv(const fs::path& path, bool has_header) {
	return decode_csv(read_file(path), has_header, path.string());
}

}  // namespace hcica
