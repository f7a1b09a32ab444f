#include "core/checkpoint.hpp"

#include <cstring>
#include <fstream>

#include "core/errors.hpp"

namespace rada {

namespace {

constexpr char kMagic[8] = {'R', 'A', 'D', 'A', 'C', 'K', 'P', 'T'};
constexpr std::uint32_t kVersion = 1;

void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i)
    out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

void put_u64(std::string& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i)
    out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

void put_f64(std::string& out, double v) {
  std::uint64_t bits;
  std::memcpy(&bits, &v, 8);
  put_u64(out, bits);
}

struct ByteReader {
  const std::string& buf;
  size_t pos = 0;
  const std::string& path;

  void need(size_t n) const {
    if (pos + n > buf.size())
      throw Error(ErrorCode::io, "checkpoint: truncated file " + path);
  }
  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i)
      v |= static_cast<std::uint32_t>(static_cast<unsigned char>(buf[pos + i]))
           << (8 * i);
    pos += 4;
    return v;
  }
  std::uint64_t u64() {
    need(8);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i)
      v |= static_cast<std::uint64_t>(static_cast<unsigned char>(buf[pos + i]))
           << (8 * i);
    pos += 8;
    return v;
  }
  double f64() {
    const std::uint64_t bits = u64();
    double v;
    std::memcpy(&v, &bits, 8);
    return v;
  }
  std::string bytes(size_t n) {
    need(n);
    std::string s = buf.substr(pos, n);
    pos += n;
    return s;
  }
};

void put_section(std::string& out, const std::vector<NamedArray>& section) {
  put_u32(out, static_cast<std::uint32_t>(section.size()));
  for (const NamedArray& a : section) {
    check_arg(a.shape.numel() == static_cast<std::int64_t>(a.values.size()),
              "checkpoint: array '" + a.name + "' size differs from shape");
    put_u32(out, static_cast<std::uint32_t>(a.name.size()));
    out.append(a.name);
    put_u32(out, static_cast<std::uint32_t>(a.shape.ndim()));
    for (int d = 0; d < a.shape.ndim(); ++d)
      put_u32(out, static_cast<std::uint32_t>(a.shape[d]));
    for (double v : a.values) put_f64(out, v);
  }
}

std::vector<NamedArray> read_section(ByteReader& r) {
  const std::uint32_t count = r.u32();
  std::vector<NamedArray> section(count);
  for (NamedArray& a : section) {
    const std::uint32_t name_len = r.u32();
    if (name_len > 4096)
      throw Error(ErrorCode::io, "checkpoint: unreasonable name length");
    a.name = r.bytes(name_len);
    const std::uint32_t ndim = r.u32();
    if (ndim > 8)
      throw Error(ErrorCode::io, "checkpoint: unreasonable rank");
    std::vector<int> dims(ndim);
    for (std::uint32_t d = 0; d < ndim; ++d)
      dims[d] = static_cast<int>(r.u32());
    a.shape = ad::Shape(dims);
    const std::int64_t numel = a.shape.numel();
    if (numel < 0 || numel > (1ll << 31))
      throw Error(ErrorCode::io, "checkpoint: unreasonable array size");
    a.values.resize(static_cast<size_t>(numel));
    for (double& v : a.values) v = r.f64();
  }
  return section;
}

}  // namespace

void write_checkpoint(const CheckpointBundle& bundle,
                      const std::string& path) {
  std::string out;
  out.append(kMagic, 8);
  put_u32(out, kVersion);
  put_u64(out, bundle.fingerprint);
  put_u64(out, bundle.step);
  put_section(out, bundle.params);
  put_section(out, bundle.opt_m);
  put_section(out, bundle.opt_v);
  std::ofstream file(path, std::ios::binary);
  if (!file) throw Error(ErrorCode::io, "checkpoint: cannot write " + path);
  file.write(out.data(), static_cast<std::streamsize>(out.size()));
  if (!file) throw Error(ErrorCode::io, "checkpoint: write failed " + path);
}

CheckpointBundle read_checkpoint(const std::string& path) {
  std::ifstream file(path, std::ios::binary);
  if (!file) throw Error(ErrorCode::io, "checkpoint: cannot open " + path);
  std::string buf((std::istreambuf_iterator<char>(file)),
                  std::istreambuf_iterator<char>());
  if (buf.size() < 28 || std::memcmp(buf.data(), kMagic, 8) != 0)
    throw Error(ErrorCode::io, "checkpoint: bad magic in " + path);
  ByteReader r{buf, 8, path};
  CheckpointBundle bundle;
  bundle.format_version = r.u32();
  if (bundle.format_version != kVersion)
    throw Error(ErrorCode::io,
                "checkpoint: unsupported format_version " +
                    std::to_string(bundle.format_version) + " in " + path);
  bundle.fingerprint = r.u64();
  bundle.step = r.u64();
  bundle.params = read_section(r);
  bundle.opt_m = read_section(r);
  bundle.opt_v = read_section(r);
  if (r.pos != buf.size())
    throw Error(ErrorCode::io, "checkpoint: trailing bytes in " + path);
  return bundle;
}

}  // namespace rada
