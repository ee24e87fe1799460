#include "stanet/io.hpp"

#include <nlohmann/json.hpp>

#include <bit>
#include <cstdio>
#include <fstream>
#include <sstream>

static_assert(std::endian::native == std::endian::little,
              "matrix files are little-endian; big-endian hosts are unsupported");

namespace stanet::io {

namespace fs = std::filesystem;

void write_matrix(const fs::path& file, const Matrix& m) {
  using RowMajor = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
  RowMajor copy = m;
  std::ofstream out(file, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot open for writing: " + file.string());
  out.write(reinterpret_cast<const char*>(copy.data()),
            static_cast<std::streamsize>(sizeof(double) * copy.size()));
  if (!out) throw std::runtime_error("short write: " + file.string());
}

Matrix read_matrix(const fs::path& file, Eigen::Index rows, Eigen::Index cols) {
  std::ifstream in(file, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open: " + file.string());
  using RowMajor = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
  RowMajor m(rows, cols);
  in.read(reinterpret_cast<char*>(m.data()), static_cast<std::streamsize>(sizeof(double) * m.size()));
  if (in.gcount() != static_cast<std::streamsize>(sizeof(double) * m.size()))
    throw std::runtime_error("file too short for " + std::to_string(rows) + "x" +
                             std::to_string(cols) + ": " + file.string());
  char extra;
  if (in.read(&extra, 1))
    throw std::runtime_error("file larger than declared dimensions: " + file.string());
  return m;
}

void write_text_atomic(const fs::path& file, const std::string& text) {
  fs::path tmp = file;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot open for writing: " + tmp.string());
    out.write(text.data(), static_cast<std::streamsize>(text.size()));
    if (!out) throw std::runtime_error("short write: " + tmp.string());
  }
  fs::rename(tmp, file);
}

std::string read_text(const fs::path& file) {
  std::ifstream in(file, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open: " + file.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

nlohmann::json read_json(const fs::path& file) {
  return nlohmann::json::parse(read_text(file));
}

void write_json_atomic(const fs::path& file, const nlohmann::json& j) {
  write_text_atomic(file, j.dump(2) + "\n");
}

}  // namespace stanet::io
