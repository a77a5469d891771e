#include "partscope/image_io.hpp"

#include <fstream>
#include <string>

#include "partscope/errors.hpp"

namespace partscope {

namespace {

void skip_space_and_comments(std::istream& in) {
  for (;;) {
    int c = in.peek();
    if (c == '#') {
      std::string line;
      std::getline(in, line);
    } else if (c == ' ' || c == '\t' || c == '\r' || c == '\n') {
      in.get();
    } else {
      return;
    }
  }
}

std::size_t read_pnm_int(std::istream& in, const std::filesystem::path& path) {
  skip_space_and_comments(in);
  long long v = -1;
  in >> v;
  if (!in || v < 0) throw IoError("malformed PNM header in " + path.string());
  return static_cast<std::size_t>(v);
}

void read_pnm(const std::filesystem::path& path, const char* magic, std::size_t channels,
              std::size_t& h, std::size_t& w, std::vector<std::uint8_t>& px) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  char m0 = 0, m1 = 0;
  in.get(m0);
  in.get(m1);
  if (m0 != magic[0] || m1 != magic[1])
    throw IoError("not a " + std::string(magic) + " file: " + path.string());
  w = read_pnm_int(in, path);
  h = read_pnm_int(in, path);
  const std::size_t maxval = read_pnm_int(in, path);
  if (maxval != 255) throw IoError("unsupported maxval in " + path.string());
  in.get();  // single whitespace before raster
  px.resize(h * w * channels);
  in.read(reinterpret_cast<char*>(px.data()), static_cast<std::streamsize>(px.size()));
  if (in.gcount() != static_cast<std::streamsize>(px.size()))
    throw IoError("truncated raster in " + path.string());
}

void write_pnm(const std::filesystem::path& path, const char* magic, std::size_t channels,
               std::size_t h, std::size_t w, const std::vector<std::uint8_t>& px) {
  if (px.size() != h * w * channels) throw IoError("raster size mismatch writing " + path.string());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  out << magic << "\n" << w << " " << h << "\n255\n";
  out.write(reinterpret_cast<const char*>(px.data()), static_cast<std::streamsize>(px.size()));
  if (!out) throw IoError("short write to " + path.string());
}

}  // namespace

void write_pgm(const std::filesystem::path& path, const GrayImage8& img) {
  write_pnm(path, "P5", 1, img.height, img.width, img.pixels);
}

GrayImage8 read_pgm(const std::filesystem::path& path) {
  GrayImage8 img;
  read_pnm(path, "P5", 1, img.height, img.width, img.pixels);
  return img;
}

void write_ppm(const std::filesystem::path& path, const RgbImage8& img) {
  write_pnm(path, "P6", 3, img.height, img.width, img.pixels);
}

RgbImage8 read_ppm(const std::filesystem::path& path) {
  RgbImage8 img;
  read_pnm(path, "P6", 3, img.height, img.width, img.pixels);
  return img;
}

}  // namespace partscope
