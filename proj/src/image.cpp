#include "nprior/image.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>

#include "nprior/errors.hpp"

namespace nprior {

namespace {

int infer_depth(unsigned maxval) {
  int b = 1;
  while ((1u << b) - 1u < maxval && b < 16) ++b;
  return b;
}

// Reads one whitespace/comment-delimited token of a PNM header.
std::string next_token(std::istream& in) {
  std::string tok;
  int c = in.get();
  while (c != EOF) {
    if (c == '#') {
      while (c != EOF && c != '\n') c = in.get();
    } else if (!std::isspace(c)) {
      break;
    }
    c = in.get();
  }
  while (c != EOF && !std::isspace(c)) {
    tok.push_back(char(c));
    c = in.get();
  }
  return tok;
}

struct PnmHeader {
  int width = 0;
  int height = 0;
  unsigned maxval = 0;
};

PnmHeader read_pnm_header(std::istream& in, const std::string& path) {
  PnmHeader h;
  h.width = std::stoi(next_token(in));
  h.height = std::stoi(next_token(in));
  h.maxval = unsigned(std::stoul(next_token(in)));
  if (h.width <= 0 || h.height <= 0 || h.maxval == 0 || h.maxval > 65535)
    throw UnsupportedFormatError("bad PNM header in " + path);
  return h;
}

std::vector<unsigned> read_pnm_samples(std::istream& in, size_t count, unsigned maxval,
                                       const std::string& path) {
  std::vector<unsigned> raw(count);
  if (maxval > 255) {
    std::vector<uint8_t> buf(count * 2);
    in.read(reinterpret_cast<char*>(buf.data()), std::streamsize(buf.size()));
    if (size_t(in.gcount()) != buf.size())
      throw UnsupportedFormatError("truncated pixel data in " + path);
    for (size_t i = 0; i < count; ++i)
      raw[i] = (unsigned(buf[2 * i]) << 8) | unsigned(buf[2 * i + 1]);  // big-endian per PNM
  } else {
    std::vector<uint8_t> buf(count);
    in.read(reinterpret_cast<char*>(buf.data()), std::streamsize(buf.size()));
    if (size_t(in.gcount()) != buf.size())
      throw UnsupportedFormatError("truncated pixel data in " + path);
    for (size_t i = 0; i < count; ++i) raw[i] = buf[i];
  }
  return raw;
}

double normalize_code(unsigned code, int bit_depth) {
  const double v = double(code) * std::ldexp(1.0, -bit_depth);
  return std::clamp(v, 0.0, 1.0);
}

unsigned quantize(double v, int bit_depth) {
  // Codes are fractions of full scale 2^B; the top code 2^B - 1 absorbs the
  // clamp so that code * 2^-B stays within one step of the input.
  const double full = std::ldexp(1.0, bit_depth);
  const double q = std::round(std::clamp(v, 0.0, 1.0) * full);
  const double top = full - 1.0;
  return unsigned(std::min(q, top));
}

void check_depth(const std::vector<unsigned>& raw, int bit_depth, const std::string& path) {
  const unsigned limit = (1u << bit_depth) - 1u;
  for (unsigned code : raw) {
    if (code > limit)
      throw BitDepthMismatchError("sample " + std::to_string(code) + " exceeds 2^" +
                                  std::to_string(bit_depth) + " - 1 in " + path);
  }
}

void write_u8(std::ostream& out, const std::vector<unsigned>& codes) {
  std::vector<uint8_t> buf(codes.size());
  for (size_t i = 0; i < codes.size(); ++i) buf[i] = uint8_t(codes[i]);
  out.write(reinterpret_cast<const char*>(buf.data()), std::streamsize(buf.size()));
}

void write_u16_be(std::ostream& out, const std::vector<unsigned>& codes) {
  std::vector<uint8_t> buf(codes.size() * 2);
  for (size_t i = 0; i < codes.size(); ++i) {
    buf[2 * i] = uint8_t(codes[i] >> 8);
    buf[2 * i + 1] = uint8_t(codes[i] & 0xff);
  }
  out.write(reinterpret_cast<const char*>(buf.data()), std::streamsize(buf.size()));
}

std::ifstream open_input(const std::string& path) {
  if (!std::filesystem::exists(path)) throw FileNotFoundError("no such file: " + path);
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path);
  return in;
}

constexpr char kFloatMagic[] = "FLOATMAP";

}  // namespace

ImagePlane load_plane(const std::string& path, int bit_depth) {
  std::ifstream in = open_input(path);
  char magic[2] = {0, 0};
  in.read(magic, 2);
  if (magic[0] == 'F') {
    // FLOATMAP w h\n
    in.seekg(0);
    std::string word;
    in >> word;
    if (word != kFloatMagic) throw UnsupportedFormatError("unknown format in " + path);
    int w = 0, h = 0;
    in >> w >> h;
    in.get();  // the single '\n' after the header
    if (w <= 0 || h <= 0) throw UnsupportedFormatError("bad FLOATMAP header in " + path);
    ImagePlane plane(w, h, 0.0, bit_depth > 0 ? bit_depth : 0);
    std::vector<float> buf(plane.size());
    in.read(reinterpret_cast<char*>(buf.data()), std::streamsize(buf.size() * 4));
    if (size_t(in.gcount()) != buf.size() * 4)
      throw UnsupportedFormatError("truncated FLOATMAP data in " + path);
    for (size_t i = 0; i < buf.size(); ++i) plane.data[i] = double(buf[i]);
    return plane;
  }
  if (magic[0] != 'P' || magic[1] != '5')
    throw UnsupportedFormatError("unknown format in " + path);
  const PnmHeader h = read_pnm_header(in, path);
  const int depth = bit_depth > 0 ? bit_depth : infer_depth(h.maxval);
  auto raw = read_pnm_samples(in, size_t(h.width) * h.height, h.maxval, path);
  check_depth(raw, depth, path);
  ImagePlane plane(h.width, h.height, 0.0, depth);
  for (size_t i = 0; i < raw.size(); ++i) plane.data[i] = normalize_code(raw[i], depth);
  return plane;
}

void save_plane(const ImagePlane& plane, const std::string& path, SaveFormat format) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path);
  if (format == SaveFormat::kFloat32) {
    out << kFloatMagic << " " << plane.width << " " << plane.height << "\n";
    std::vector<float> buf(plane.size());
    for (size_t i = 0; i < buf.size(); ++i) buf[i] = float(plane.data[i]);
    out.write(reinterpret_cast<const char*>(buf.data()), std::streamsize(buf.size() * 4));
  } else {
    const int depth = format == SaveFormat::kGray8 ? 8 : 16;
    std::vector<unsigned> codes(plane.size());
    for (size_t i = 0; i < codes.size(); ++i) codes[i] = quantize(plane.data[i], depth);
    out << "P5\n" << plane.width << " " << plane.height << "\n" << ((1u << depth) - 1u) << "\n";
    if (depth == 8)
      write_u8(out, codes);
    else
      write_u16_be(out, codes);
  }
  if (!out) throw IoError("write failed for " + path);
}

ColorImage load_color(const std::string& path, int bit_depth) {
  std::ifstream in = open_input(path);
  char magic[2] = {0, 0};
  in.read(magic, 2);
  if (magic[0] != 'P' || magic[1] != '6')
    throw UnsupportedFormatError("not a binary PPM: " + path);
  const PnmHeader h = read_pnm_header(in, path);
  const int depth = bit_depth > 0 ? bit_depth : infer_depth(h.maxval);
  auto raw = read_pnm_samples(in, size_t(h.width) * h.height * 3, h.maxval, path);
  check_depth(raw, depth, path);
  ColorImage img(h.width, h.height);
  for (auto& p : img.planes) p.bit_depth = depth;
  for (size_t i = 0; i < size_t(h.width) * h.height; ++i)
    for (int c = 0; c < 3; ++c) img.planes[c].data[i] = normalize_code(raw[3 * i + c], depth);
  return img;
}

void save_color(const ColorImage& image, const std::string& path, bool maxval_16) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path);
  const int depth = maxval_16 ? 16 : 8;
  const size_t n = size_t(image.width) * image.height;
  std::vector<unsigned> codes(n * 3);
  for (size_t i = 0; i < n; ++i)
    for (int c = 0; c < 3; ++c) codes[3 * i + c] = quantize(image.planes[c].data[i], depth);
  out << "P6\n" << image.width << " " << image.height << "\n" << ((1u << depth) - 1u) << "\n";
  if (depth == 8)
    write_u8(out, codes);
  else
    write_u16_be(out, codes);
  if (!out) throw IoError("write failed for " + path);
}

std::vector<PatchView> partition_patches(const ImagePlane& plane, int patch_size) {
  if (patch_size <= 0) throw PatchTooLargeError("patch_size must be positive");
  if (patch_size > std::min(plane.width, plane.height))
    throw PatchTooLargeError("patch_size " + std::to_string(patch_size) +
                             " exceeds image extent " + std::to_string(plane.width) + "x" +
                             std::to_string(plane.height));
  const int nx = plane.width / patch_size;
  const int ny = plane.height / patch_size;
  std::vector<PatchView> patches;
  patches.reserve(size_t(nx) * ny);
  for (int gy = 0; gy < ny; ++gy) {
    for (int gx = 0; gx < nx; ++gx) {
      patches.push_back(PatchView{&plane, gx * patch_size, gy * patch_size, patch_size, gx, gy});
    }
  }
  return patches;
}

}  // namespace nprior
