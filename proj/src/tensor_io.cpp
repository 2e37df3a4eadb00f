// SPDX-License-Identifier: Apache-2.0
#include "ub/tensor_io.hpp"

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <limits>
#include <map>
#include <sstream>

#include "ub/error.hpp"

namespace ub {

namespace {

void put_u32(std::ostream& os, std::uint32_t v) {
  unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                        static_cast<unsigned char>(v >> 16), static_cast<unsigned char>(v >> 24)};
  os.write(reinterpret_cast<const char*>(b), 4);
}

std::uint32_t get_u32(std::istream& is) {
  unsigned char b[4];
  if (!is.read(reinterpret_cast<char*>(b), 4)) throw DataError("UBTN: truncated stream");
  return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
         (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
}

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

}  // namespace

void write_ubtn(std::ostream& os, const Tensor& t) {
  const Shape& shape = t.shape();
  if (shape.size() > 255) throw ShapeError("UBTN: rank exceeds 255");
  const unsigned char header[8] = {'U', 'B', 'T', 'N', kUbtnFloat32,
                                   static_cast<unsigned char>(shape.size()), 0, 0};
  os.write(reinterpret_cast<const char*>(header), 8);
  for (std::size_t d : shape) {
    if (d > std::numeric_limits<std::uint32_t>::max()) throw ShapeError("UBTN: dim exceeds u32");
    put_u32(os, static_cast<std::uint32_t>(d));
  }
  for (double v : t.values()) put_u32(os, std::bit_cast<std::uint32_t>(static_cast<float>(v)));
  if (!os) throw DataError("UBTN: write failed");
}

Tensor read_ubtn(std::istream& is) {
  unsigned char header[8];
  if (!is.read(reinterpret_cast<char*>(header), 8)) throw DataError("UBTN: truncated header");
  if (std::memcmp(header, "UBTN", 4) != 0) throw DataError("UBTN: bad magic");
  if (header[4] != kUbtnFloat32) throw DataError("UBTN: unsupported dtype code " + std::to_string(header[4]));
  if (header[6] != 0 || header[7] != 0) throw DataError("UBTN: nonzero pad bytes");
  const std::size_t rank = header[5];
  if (rank == 0) throw DataError("UBTN: rank 0");
  Shape shape(rank);
  for (auto& d : shape) {
    d = get_u32(is);
    if (d == 0) throw DataError("UBTN: zero dim");
  }
  std::vector<double> values(shape_numel(shape));
  for (auto& v : values) v = static_cast<double>(std::bit_cast<float>(get_u32(is)));
  return Tensor::constant(std::move(shape), std::move(values));
}

void save_tensor(const std::filesystem::path& path, const Tensor& t) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw DataError("cannot open " + path.string() + " for writing");
  write_ubtn(os, t);
}

Tensor load_tensor(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DataError("missing file " + path.string());
  try {
    return read_ubtn(is);
  } catch (const DataError& e) {
    throw DataError(path.string() + ": " + e.what());
  }
}

void save_checkpoint(const std::filesystem::path& dir, const ParamList& params, const ConfigEcho& config) {
  std::filesystem::create_directories(dir);
  std::ofstream manifest(dir / "manifest.txt");
  if (!manifest) throw DataError("cannot write checkpoint at " + dir.string());
  for (std::size_t i = 0; i < params.size(); ++i) {
    const std::string file = "p" + std::to_string(i) + ".ubtn";
    save_tensor(dir / file, params[i].tensor);
    manifest << params[i].name << '\t' << shape_str(params[i].tensor.shape()) << '\t' << file << '\n';
  }
  std::ofstream cfg(dir / "config.txt");
  for (const auto& [k, v] : config) cfg << k << " = " << v << '\n';
}

void load_checkpoint(const std::filesystem::path& dir, ParamList& params) {
  std::ifstream manifest(dir / "manifest.txt");
  if (!manifest) throw DataError("missing checkpoint manifest in " + dir.string());
  std::map<std::string, std::string> files;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(manifest, line)) {
    ++lineno;
    if (trim(line).empty()) continue;
    std::istringstream ls(line);
    std::string name, shape, file;
    if (!std::getline(ls, name, '\t') || !std::getline(ls, shape, '\t') || !std::getline(ls, file)) {
      throw DataError(dir.string() + "/manifest.txt:" + std::to_string(lineno) + ": malformed line");
    }
    files[name] = file;
  }
  for (auto& p : params) {
    auto it = files.find(p.name);
    if (it == files.end()) throw DataError("checkpoint " + dir.string() + " lacks parameter '" + p.name + "'");
    Tensor stored = load_tensor(dir / it->second);
    if (stored.shape() != p.tensor.shape()) {
      throw DataError("checkpoint parameter '" + p.name + "' has shape " + shape_str(stored.shape()) +
                      ", model expects " + shape_str(p.tensor.shape()));
    }
    auto dst = p.tensor.mutable_values();
    auto src = stored.values();
    std::copy(src.begin(), src.end(), dst.begin());
  }
}

ConfigEcho read_checkpoint_config(const std::filesystem::path& dir) {
  std::ifstream cfg(dir / "config.txt");
  if (!cfg) throw DataError("missing checkpoint config in " + dir.string());
  ConfigEcho out;
  std::string line;
  while (std::getline(cfg, line)) {
    const auto eq = line.find('=');
    if (eq == std::string::npos) continue;
    out.emplace_back(trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
  }
  return out;
}

}  // namespace ub
