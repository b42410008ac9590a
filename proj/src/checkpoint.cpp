#include "concap/checkpoint.hpp"

#include <cstring>
#include <sstream>
#include <stdexcept>

#include "concap/io.hpp"

namespace concap {

namespace {

constexpr char kMagic[] = "CONCAPCKPT";
constexpr uint32_t kVersion = 1;

void put_u32(std::string& out, uint32_t v) {
  char buf[4];
  std::memcpy(buf, &v, 4);
  out.append(buf, 4);
}

void put_u64(std::string& out, uint64_t v) {
  char buf[8];
  std::memcpy(buf, &v, 8);
  out.append(buf, 8);
}

struct Reader {
  const std::string& bytes;
  size_t pos = 0;
  void need(size_t n) const {
    if (pos + n > bytes.size()) throw std::runtime_error("truncated checkpoint");
  }
  uint32_t u32() {
    need(4);
    uint32_t v;
    std::memcpy(&v, bytes.data() + pos, 4);
    pos += 4;
    return v;
  }
  uint64_t u64() {
    need(8);
    uint64_t v;
    std::memcpy(&v, bytes.data() + pos, 8);
    pos += 8;
    return v;
  }
  std::string str(size_t n) {
    need(n);
    std::string s = bytes.substr(pos, n);
    pos += n;
    return s;
  }
};

}  // namespace

std::string checkpoint_bytes(nn::Params& params) {
  // registry is kept sorted by name; dump in that order
  std::string out;
  out.append(kMagic, sizeof(kMagic) - 1);
  put_u32(out, kVersion);
  put_u64(out, params.items.size());
  for (auto& [name, t] : params.items) {
    put_u32(out, static_cast<uint32_t>(name.size()));
    out.append(name);
    put_u32(out, static_cast<uint32_t>(t->rank()));
    for (int d : t->shape) put_u32(out, static_cast<uint32_t>(d));
    const char* raw = reinterpret_cast<const char*>(t->ptr());
    out.append(raw, static_cast<size_t>(t->size()) * sizeof(double));
  }
  return out;
}

void save_checkpoint(const std::string& path, nn::Params& params) {
  io::atomic_write(path, checkpoint_bytes(params));
}

void load_checkpoint(const std::string& path, nn::Params& params) {
  const std::string bytes = io::read_file(path);
  Reader r{bytes};
  if (r.str(sizeof(kMagic) - 1) != kMagic)
    throw std::runtime_error("not a checkpoint file: " + path);
  if (r.u32() != kVersion) throw std::runtime_error("unsupported checkpoint version");
  const uint64_t n = r.u64();
  if (n != params.items.size())
    throw std::runtime_error("checkpoint has " + std::to_string(n) + " tensors, model has " +
                             std::to_string(params.items.size()));
  for (auto& [name, t] : params.items) {
    const uint32_t name_len = r.u32();
    const std::string got = r.str(name_len);
    if (got != name)
      throw std::runtime_error("checkpoint tensor '" + got + "' where '" + name +
                               "' was expected");
    const uint32_t rank = r.u32();
    ad::Shape shape(rank);
    for (uint32_t i = 0; i < rank; ++i) shape[i] = static_cast<int>(r.u32());
    if (shape != t->shape)
      throw std::runtime_error("checkpoint shape " + ad::shape_str(shape) + " for '" + name +
                               "' does not match model " + ad::shape_str(t->shape));
    const size_t payload = static_cast<size_t>(t->size()) * sizeof(double);
    r.need(payload);
    std::memcpy(t->ptr(), bytes.data() + r.pos, payload);
    r.pos += payload;
  }
  if (r.pos != bytes.size()) throw std::runtime_error("trailing bytes in checkpoint");
}

}  // namespace concap
