#include "nprior/checkpoint.hpp"

#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>

#include <json.hpp>

#include "nprior/errors.hpp"

namespace nprior {

namespace {

void put_u32(std::ostream& out, uint32_t v) {
  uint8_t b[4] = {uint8_t(v), uint8_t(v >> 8), uint8_t(v >> 16), uint8_t(v >> 24)};
  out.write(reinterpret_cast<const char*>(b), 4);
}

uint32_t get_u32(std::istream& in) {
  uint8_t b[4];
  in.read(reinterpret_cast<char*>(b), 4);
  return uint32_t(b[0]) | uint32_t(b[1]) << 8 | uint32_t(b[2]) << 16 | uint32_t(b[3]) << 24;
}

void put_f64(std::ostream& out, const std::vector<double>& v) {
  // Little-endian host assumed for the payload fast path.
  static_assert(sizeof(double) == 8);
  out.write(reinterpret_cast<const char*>(v.data()), std::streamsize(v.size() * 8));
}

std::string manifest_path(const std::string& path) { return path + ".json"; }

}  // namespace

void save_checkpoint(const ParamSet& params, const std::string& path, const nlohmann::json& meta) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write checkpoint " + path);
  nlohmann::json order = nlohmann::json::array();
  for (const auto& p : params.items()) {
    put_u32(out, uint32_t(p.name.size()));
    out.write(p.name.data(), std::streamsize(p.name.size()));
    out.put(char(0));  // dtype tag: f64
    const auto& shape = p.tensor.shape();
    put_u32(out, uint32_t(shape.size()));
    for (int e : shape) put_u32(out, uint32_t(e));
    put_f64(out, p.tensor.value());
    order.push_back(p.name);
  }
  if (!out) throw IoError("checkpoint write failed for " + path);
  nlohmann::json manifest{{"parameters", order}, {"meta", meta}};
  std::ofstream mout(manifest_path(path));
  if (!mout) throw IoError("cannot write manifest for " + path);
  mout << manifest.dump(2) << "\n";
}

void save_checkpoint(const ParamSet& params, const std::string& path) {
  save_checkpoint(params, path, nlohmann::json::object());
}

namespace {

bool read_record(std::istream& in, std::string& name, Shape& shape, std::vector<double>& data) {
  const uint32_t name_len = get_u32(in);
  if (!in) return false;
  name.resize(name_len);
  in.read(name.data(), name_len);
  const int dtype = in.get();
  if (dtype != 0) throw UnsupportedFormatError("unknown checkpoint dtype tag");
  const uint32_t rank = get_u32(in);
  shape.clear();
  size_t numel = 1;
  for (uint32_t i = 0; i < rank; ++i) {
    shape.push_back(int(get_u32(in)));
    numel *= size_t(shape.back());
  }
  data.resize(numel);
  in.read(reinterpret_cast<char*>(data.data()), std::streamsize(numel * 8));
  if (size_t(in.gcount()) != numel * 8) throw UnsupportedFormatError("truncated checkpoint data");
  return true;
}

std::ifstream open_checkpoint(const std::string& path) {
  if (!std::filesystem::exists(path)) throw FileNotFoundError("no such checkpoint: " + path);
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint " + path);
  return in;
}

}  // namespace

nlohmann::json load_checkpoint(ParamSet& params, const std::string& path) {
  std::ifstream in = open_checkpoint(path);
  std::string name;
  Shape shape;
  std::vector<double> data;
  size_t loaded = 0;
  while (in.peek() != EOF && read_record(in, name, shape, data)) {
    Parameter& p = params.at(name);
    if (p.tensor.shape() != shape)
      throw ShapeMismatchError("checkpoint shape differs for parameter " + name);
    p.tensor.value() = data;
    ++loaded;
  }
  if (loaded != params.size())
    throw UnsupportedFormatError("checkpoint holds " + std::to_string(loaded) + " of " +
                                 std::to_string(params.size()) + " parameters");
  return read_checkpoint_meta(path);
}

ParamSet load_checkpoint_all(const std::string& path) {
  std::ifstream in = open_checkpoint(path);
  ParamSet params;
  std::string name;
  Shape shape;
  std::vector<double> data;
  while (in.peek() != EOF && read_record(in, name, shape, data)) {
    Parameter& p = params.add(name, shape, 0.0, 0);
    p.tensor.value() = data;
  }
  return params;
}

nlohmann::json read_checkpoint_meta(const std::string& path) {
  const std::string mpath = manifest_path(path);
  if (!std::filesystem::exists(mpath)) return nlohmann::json::object();
  std::ifstream min(mpath);
  nlohmann::json manifest;
  min >> manifest;
  return manifest;
}

}  // namespace nprior
