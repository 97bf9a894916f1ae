#include "saunet/params.hpp"

#include <cstdint>
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
  if (is.gcount() != 4)
    fail("truncated checkpoint '", path, "' at byte offset ", offset);
  offset += 4;
  return static_cast<uint32_t>(b[0]) | (static_cast<uint32_t>(b[1]) << 8) |
         (static_cast<uint32_t>(b[2]) << 16) | (static_cast<uint32_t>(b[3]) << 24);
}

}  // namespace

void sauc_write(const std::string& path, const std::vector<SaucEntry>& entries) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) fail("cannot open '", path, "' for writing");
  os.write("SAUC", 4);
  put_u32(os, 1u);  // format version
  put_u32(os, static_cast<uint32_t>(entries.size()));
  for (const auto& e : entries) {
    put_u32(os, static_cast<uint32_t>(e.name.size()));
    os.write(e.name.data(), static_cast<std::streamsize>(e.name.size()));
    put_u32(os, static_cast<uint32_t>(e.dims.size()));
    int64_t numel = 1;
    for (int d : e.dims) {
      put_u32(os, static_cast<uint32_t>(d));
      numel *= d;
    }
    if (numel != static_cast<int64_t>(e.values.size()))
      fail("checkpoint entry '", e.name, "': ", e.values.size(),
           " values do not match dims");
    static_assert(sizeof(float) == 4);
    os.write(reinterpret_cast<const char*>(e.values.data()),
             static_cast<std::streamsize>(e.values.size() * 4));
  }
  if (!os) fail("write failed for '", path, "'");
}

std::vector<SaucEntry> sauc_read(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) fail("cannot open checkpoint '", path, "'");
  int64_t offset = 0;
  char magic[4];
  is.read(magic, 4);
  if (is.gcount() != 4 || std::memcmp(magic, "SAUC", 4) != 0)
    fail("'", path, "' is not a SAUC checkpoint (bad magic at byte offset 0)");
  offset += 4;
  const uint32_t version = get_u32(is, path, offset);
  if (version != 1) fail("unsupported checkpoint version ", version, " in '", path, "'");
  const uint32_t count = get_u32(is, path, offset);
  std::vector<SaucEntry> entries;
  entries.reserve(count);
  for (uint32_t i = 0; i < count; ++i) {
    SaucEntry e;
    const uint32_t name_len = get_u32(is, path, offset);
    e.name.resize(name_len);
    is.read(e.name.data(), name_len);
    if (is.gcount() != static_cast<std::streamsize>(name_len))
      fail("truncated checkpoint '", path, "' at byte offset ", offset);
    offset += name_len;
    const uint32_t ndim = get_u32(is, path, offset);
    int64_t numel = 1;
    for (uint32_t d = 0; d < ndim; ++d) {
      const uint32_t dim = get_u32(is, path, offset);
      e.dims.push_back(static_cast<int>(dim));
      numel *= dim;
    }
    e.values.resize(static_cast<size_t>(numel));
    is.read(reinterpret_cast<char*>(e.values.data()),
            static_cast<std::streamsize>(numel * 4));
    if (is.gcount() != static_cast<std::streamsize>(numel * 4))
      fail("truncated checkpoint '", path, "' at byte offset ", offset);
    offset += numel * 4;
    entries.push_back(std::move(e));
  }
  return entries;
}

}  // namespace saunet
