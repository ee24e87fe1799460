#pragma once

#include "stanet/types.hpp"

#include <nlohmann/json_fwd.hpp>

#include <filesystem>
#include <string>

namespace stanet::io {

/// Writes a matrix as row-major 64-bit little-endian floats with no framing;
/// dimensions travel in the directory's JSON header.
void write_matrix(const std::filesystem::path& file, const Matrix& m);

/// Reads a matrix written by write_matrix. Throws if the file size does not
/// match rows * cols doubles.
Matrix read_matrix(const std::filesystem::path& file, Eigen::Index rows, Eigen::Index cols);

/// Writes text to a temporary file in the same directory, then renames it
/// into place so concurrent readers never see a partial file.
void write_text_atomic(const std::filesystem::path& file, const std::string& text);

std::string read_text(const std::filesystem::path& file);

nlohmann::json read_json(const std::filesystem::path& file);
void write_json_atomic(const std::filesystem::path& file, const nlohmann::json& j);

}  // namespace stanet::io
