#include "lsta/checkpoint.hpp"

#include <cstring>
#include <fstream>
#include <stdexcept>

namespace lsta {

namespace {

constexpr char kMagic[9] = "LSTACKP1";

void put_u32(std::string& out, uint32_t v) {
  const unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                              static_cast<unsigned char>(v >> 16), static_cast<unsigned char>(v >> 24)};
  out.append(reinterpret_cast<const char*>(b), 4);
}

void put_u64(std::string& out, uint64_t v) {
  put_u32(out, static_cast<uint32_t>(v));
  put_u32(out, static_cast<uint32_t>(v >> 32));
}

void put_f64(std::string& out, double v) {
  uint64_t u;
  std::memcpy(&u, &v, 8);
  put_u64(out, u);
}

void put_str(std::string& out, const std::string& s) {
  put_u32(out, static_cast<uint32_t>(s.size()));
  out.append(s);
}

struct Reader {
  std::string buf;
  size_t off = 0;

  void need(size_t n, const char* what) const {
    if (off + n > buf.size())
      throw std::runtime_error(std::string("checkpoint truncated while reading ") + what +
                               " at byte offset " + std::to_string(off));
  }
  uint32_t u32(const char* what) {
    need(4, what);
    const auto* b = reinterpret_cast<const unsigned char*>(buf.data() + off);
    off += 4;
    return static_cast<uint32_t>(b[0]) | (static_cast<uint32_t>(b[1]) << 8) |
           (static_cast<uint32_t>(b[2]) << 16) | (static_cast<uint32_t>(b[3]) << 24);
  }
  uint64_t u64(const char* what) {
    const uint64_t lo = u32(what);
    const uint64_t hi = u32(what);
    return lo | (hi << 32);
  }
  double f64(const char* what) {
    const uint64_t u = u64(what);
    double v;
    std::memcpy(&v, &u, 8);
    return v;
  }
  std::string str(const char* what) {
    const uint32_t n = u32(what);
    need(n, what);
    std::string s(buf.data() + off, n);
    off += n;
    return s;
  }
};

}  // namespace

void write_checkpoint(const std::string& path, const Checkpoint& ck) {
  std::string out;
  out.append(kMagic, 8);
  put_u32(out, ck.version);
  put_u64(out, ck.config_hash);
  put_str(out, ck.config_json);
  put_u32(out, ck.epoch);
  put_u64(out, ck.rng_state);

  put_u32(out, static_cast<uint32_t>(ck.params.size()));
  for (const auto& [name, t] : ck.params) {
    put_str(out, name);
    out.push_back(static_cast<char>(t.rank()));
    for (int i = 0; i < t.rank(); ++i) put_u32(out, static_cast<uint32_t>(t.dim(i)));
    for (size_t i = 0; i < t.size(); ++i) put_f64(out, t.data()[i]);
  }

  put_u32(out, static_cast<uint32_t>(ck.opt_state.size()));
  for (const auto& [name, values] : ck.opt_state) {
    put_str(out, name);
    put_u64(out, values.size());
    for (double v : values) put_f64(out, v);
  }
  put_u64(out, ck.opt_steps);

  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw std::runtime_error("cannot open '" + path + "' for writing");
  f.write(out.data(), static_cast<std::streamsize>(out.size()));
  if (!f) throw std::runtime_error("failed writing checkpoint to '" + path + "'");
}

Checkpoint read_checkpoint(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open checkpoint file '" + path + "'");
  Reader r;
  r.buf.assign((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());

  r.need(8, "magic");
  if (std::memcmp(r.buf.data(), kMagic, 8) != 0)
    throw std::runtime_error("bad checkpoint magic in '" + path + "': expected \"LSTACKP1\"");
  r.off = 8;

  Checkpoint ck;
  ck.version = r.u32("version");
  if (ck.version != 1)
    throw std::runtime_error("unsupported checkpoint version " + std::to_string(ck.version));
  ck.config_hash = r.u64("config hash");
  ck.config_json = r.str("config");
  ck.epoch = r.u32("epoch");
  ck.rng_state = r.u64("rng state");

  const uint32_t n_params = r.u32("parameter count");
  ck.params.reserve(n_params);
  for (uint32_t i = 0; i < n_params; ++i) {
    std::string name = r.str("parameter name");
    r.need(1, "tensor rank");
    const int rank = static_cast<unsigned char>(r.buf[r.off++]);
    if (rank < 1 || rank > 5)
      throw std::runtime_error("checkpoint tensor '" + name + "' has invalid rank " +
                               std::to_string(rank));
    Shape shape(rank);
    for (int d = 0; d < rank; ++d) shape[d] = static_cast<int>(r.u32("tensor dims"));
    std::vector<double> values(numel(shape));
    for (double& v : values) v = r.f64("tensor data");
    ck.params.emplace_back(std::move(name), Tensor::from_data(std::move(shape), std::move(values)));
  }

  const uint32_t n_opt = r.u32("optimizer entry count");
  ck.opt_state.reserve(n_opt);
  for (uint32_t i = 0; i < n_opt; ++i) {
    std::string name = r.str("optimizer entry name");
    const uint64_t len = r.u64("optimizer entry length");
    std::vector<double> values(len);
    for (double& v : values) v = r.f64("optimizer data");
    ck.opt_state.emplace_back(std::move(name), std::move(values));
  }
  ck.opt_steps = r.u64("optimizer steps");
  if (r.off != r.buf.size())
    throw std::runtime_error("checkpoint '" + path + "' has trailing bytes at offset " +
                             std::to_string(r.off));
  return ck;
}

}  // namespace lsta
