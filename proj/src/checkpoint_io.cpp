#include "partscope/checkpoint_io.hpp"

#include <cstring>
#include <fstream>

#include "partscope/errors.hpp"

namespace partscope {

namespace {

constexpr char kMagic[4] = {'P', 'S', 'E', 'G'};
constexpr std::uint32_t kVersion = 1;

void put_u32(std::ostream& out, std::uint32_t v) {
  unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                        static_cast<unsigned char>(v >> 16), static_cast<unsigned char>(v >> 24)};
  out.write(reinterpret_cast<const char*>(b), 4);
}

std::uint32_t get_u32(std::istream& in, const std::filesystem::path& path) {
  unsigned char b[4];
  in.read(reinterpret_cast<char*>(b), 4);
  if (!in) throw IoError("truncated checkpoint " + path.string());
  return static_cast<std::uint32_t>(b[0]) | static_cast<std::uint32_t>(b[1]) << 8 |
         static_cast<std::uint32_t>(b[2]) << 16 | static_cast<std::uint32_t>(b[3]) << 24;
}

void put_string(std::ostream& out, const std::string& s) {
  put_u32(out, static_cast<std::uint32_t>(s.size()));
  out.write(s.data(), static_cast<std::streamsize>(s.size()));
}

std::string get_string(std::istream& in, const std::filesystem::path& path) {
  const std::uint32_t n = get_u32(in, path);
  std::string s(n, '\0');
  in.read(s.data(), n);
  if (!in) throw IoError("truncated checkpoint " + path.string());
  return s;
}

}  // namespace

const Tensor* CheckpointFile::find(const std::string& name) const {
  for (const auto& [n, t] : blocks)
    if (n == name) return &t;
  return nullptr;
}

void save_checkpoint_file(const std::filesystem::path& path, const CheckpointFile& file) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write checkpoint " + path.string());
  out.write(kMagic, 4);
  put_u32(out, kVersion);
  put_string(out, file.architecture);
  put_u32(out, file.k_parts);
  put_u32(out, static_cast<std::uint32_t>(file.blocks.size()));
  for (const auto& [name, tensor] : file.blocks) {
    put_string(out, name);
    put_u32(out, static_cast<std::uint32_t>(tensor.rank()));
    for (std::size_t i = 0; i < tensor.rank(); ++i)
      put_u32(out, static_cast<std::uint32_t>(tensor.dim(i)));
    out.write(reinterpret_cast<const char*>(tensor.data()),
              static_cast<std::streamsize>(tensor.size() * sizeof(double)));
  }
  if (!out) throw IoError("short write to checkpoint " + path.string());
}

CheckpointFile load_checkpoint_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint " + path.string());
  char magic[4];
  in.read(magic, 4);
  if (!in || std::memcmp(magic, kMagic, 4) != 0)
    throw IoError("not a PSEG checkpoint: " + path.string());
  const std::uint32_t version = get_u32(in, path);
  if (version != kVersion)
    throw IoError("unsupported checkpoint version " + std::to_string(version) + " in " +
                  path.string());
  CheckpointFile file;
  file.architecture = get_string(in, path);
  file.k_parts = get_u32(in, path);
  const std::uint32_t nblocks = get_u32(in, path);
  file.blocks.reserve(nblocks);
  for (std::uint32_t b = 0; b < nblocks; ++b) {
    const std::string name = get_string(in, path);
    const std::uint32_t ndims = get_u32(in, path);
    std::vector<std::size_t> dims(ndims);
    for (auto& d : dims) d = get_u32(in, path);
    Tensor t(dims);
    in.read(reinterpret_cast<char*>(t.data()),
            static_cast<std::streamsize>(t.size() * sizeof(double)));
    if (!in) throw IoError("truncated checkpoint " + path.string());
    file.blocks.emplace_back(name, std::move(t));
  }
  return file;
}

std::size_t checkpoint_byte_size(const CheckpointFile& file) {
  std::size_t n = 4 + 4;                              // magic + version
  n += 4 + file.architecture.size();                  // architecture string
  n += 4 + 4;                                         // K + block count
  for (const auto& [name, tensor] : file.blocks) {
    n += 4 + name.size();
    n += 4 + 4 * tensor.rank();
    n += 8 * tensor.size();
  }
  return n;
}

}  // namespace partscope
