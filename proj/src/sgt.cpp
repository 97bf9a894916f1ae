#include "saunet/sgt.hpp"

#include <cstring>
#include <fstream>

namespace saunet {

namespace {

void put_u32(std::ofstream& os, uint32_t v) {
  unsigned char b[4] = {static_cast<unsigned char>(v & 0xff),
                        static_cast<unsigned char>((v >> 8) & 0xff),
                        static_cast<unsigned char>((v >> 16) & 0xff),
                        static_cast<unsigned char>((v >> 24) & 0xff)};
  os.write(reinterpret_cast<const char*>(b), 4);
}

uint32_t get_u32(std::ifstream& is, const std::string& path, int64_t& offset) {
  unsigned char b[4];
  is.read(reinterpret_cast<char*>(b), 4);
  if (is.gcount() != 4) fail("truncated SGT file '", path, "' at byte offset ", offset);
  offset += 4;
  return static_cast<uint32_t>(b[0]) | (static_cast<uint32_t>(b[1]) << 8) |
         (static_cast<uint32_t>(b[2]) << 16) | (static_cast<uint32_t>(b[3]) << 24);
}

}  // namespace

void sgt_write(const std::string& path, const Tensor<float>& t) {
  if (!t.defined()) fail("sgt_write: undefined tensor");
  if (t.ndim() > 4) fail("sgt_write: at most 4 dims supported, got ", t.ndim());
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) fail("cannot open '", path, "' for writing");
  os.write("SGT1", 4);
  put_u32(os, static_cast<uint32_t>(t.ndim()));
  for (int i = 0; i < t.ndim(); ++i) put_u32(os, static_cast<uint32_t>(t.dim(i)));
  static_assert(sizeof(float) == 4);
  os.write(reinterpret_cast<const char*>(t.raw()),
           static_cast<std::streamsize>(t.numel() * 4));
  if (!os) fail("write failed for '", path, "'");
}

Tensor<float> sgt_read(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) fail("cannot open SGT file '", path, "'");
  int64_t offset = 0;
  char magic[4];
  is.read(magic, 4);
  if (is.gcount() != 4 || std::memcmp(magic, "SGT1", 4) != 0)
    fail("'", path, "' is not an SGT file (bad magic at byte offset 0)");
  offset += 4;
  const uint32_t ndim = get_u32(is, path, offset);
  if (ndim > 4) fail("'", path, "': ndim ", ndim, " exceeds 4 (byte offset 4)");
  std::vector<int> dims;
  int64_t numel = 1;
  for (uint32_t i = 0; i < ndim; ++i) {
    const uint32_t d = get_u32(is, path, offset);
    dims.push_back(static_cast<int>(d));
    numel *= d;
  }
  std::vector<float> data(static_cast<size_t>(numel));
  is.read(reinterpret_cast<char*>(data.data()), static_cast<std::streamsize>(numel * 4));
  if (is.gcount() != static_cast<std::streamsize>(numel * 4))
    fail("truncated SGT payload in '", path, "' at byte offset ", offset,
         " (expected ", numel * 4, " payload bytes)");
  return Tensor<float>::from_data(dims, std::move(data));
}

}  // namespace saunet
