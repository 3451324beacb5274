#include "dgcvc/checkpoint.hpp"

#include <cstring>
#include <fstream>
#include <stdexcept>
#include <vector>

namespace dgcvc::ckpt {

namespace {

constexpr char kMagic[8] = {'D', 'G', 'C', 'V', 'C', 'K', 'P', 'T'};
constexpr uint32_t kVersion = 1;

void put_u32(std::string& buf, uint32_t v) { buf.append(reinterpret_cast<const char*>(&v), 4); }
void put_u64(std::string& buf, uint64_t v) { buf.append(reinterpret_cast<const char*>(&v), 8); }
void put_i64(std::string& buf, int64_t v) { buf.append(reinterpret_cast<const char*>(&v), 8); }
void put_str(std::string& buf, const std::string& s) {
  put_u64(buf, s.size());
  buf.append(s);
}

struct Reader {
  const std::string& buf;
  size_t pos = 0;
  void need(size_t n) const {
    if (pos + n > buf.size()) throw std::runtime_error("checkpoint: truncated file");
  }
  uint32_t u32() {
    need(4);
    uint32_t v;
    std::memcpy(&v, buf.data() + pos, 4);
    pos += 4;
    return v;
  }
  uint64_t u64() {
    need(8);
    uint64_t v;
    std::memcpy(&v, buf.data() + pos, 8);
    pos += 8;
    return v;
  }
  int64_t i64() {
    need(8);
    int64_t v;
    std::memcpy(&v, buf.data() + pos, 8);
    pos += 8;
    return v;
  }
  std::string str() {
    const uint64_t n = u64();
    need(n);
    std::string s = buf.substr(pos, n);
    pos += n;
    return s;
  }
};

uint64_t fnv1a(const std::string& bytes) {
  uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

}  // namespace

void Checkpoint::save(const std::string& path) const {
  std::string buf;
  buf.append(kMagic, 8);
  put_u32(buf, kVersion);
  put_u64(buf, config_hash);
  put_str(buf, config_text);
  put_i64(buf, step);
  put_u32(buf, static_cast<uint32_t>(meta.size()));
  for (const auto& [k, v] : meta) {
    put_str(buf, k);
    put_str(buf, v);
  }
  put_u32(buf, static_cast<uint32_t>(blobs.size()));
  for (const auto& [name, m] : blobs) {
    put_str(buf, name);
    put_u32(buf, static_cast<uint32_t>(m.rows));
    put_u32(buf, static_cast<uint32_t>(m.cols));
    buf.append(reinterpret_cast<const char*>(m.data.data()), m.size() * sizeof(double));
  }
  const uint64_t hash = fnv1a(buf);
  put_u64(buf, hash);

  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot write checkpoint: " + path);
  f.write(buf.data(), static_cast<std::streamsize>(buf.size()));
  if (!f) throw std::runtime_error("failed writing checkpoint: " + path);
  const_cast<Checkpoint*>(this)->content_hash = hash;
}

Checkpoint Checkpoint::load(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open checkpoint: " + path);
  std::string buf((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  if (buf.size() < 8 + 4 + 8) throw std::runtime_error("checkpoint too small: " + path);

  const std::string payload = buf.substr(0, buf.size() - 8);
  uint64_t stored_hash;
  std::memcpy(&stored_hash, buf.data() + buf.size() - 8, 8);
  if (fnv1a(payload) != stored_hash)
    throw std::runtime_error("checkpoint content hash mismatch (corrupt file): " + path);

  Reader r{payload};
  char magic[8];
  r.need(8);
  std::memcpy(magic, payload.data(), 8);
  r.pos = 8;
  if (std::memcmp(magic, kMagic, 8) != 0) throw std::runtime_error("not a checkpoint file: " + path);
  const uint32_t version = r.u32();
  if (version != kVersion) throw std::runtime_error("unsupported checkpoint version");

  Checkpoint c;
  c.content_hash = stored_hash;
  c.config_hash = r.u64();
  c.config_text = r.str();
  c.step = r.i64();
  const uint32_t n_meta = r.u32();
  for (uint32_t i = 0; i < n_meta; ++i) {
    std::string k = r.str();
    c.meta[k] = r.str();
  }
  const uint32_t n_blobs = r.u32();
  for (uint32_t i = 0; i < n_blobs; ++i) {
    std::string name = r.str();
    const uint32_t rows = r.u32();
    const uint32_t cols = r.u32();
    Mat m(static_cast<int>(rows), static_cast<int>(cols));
    r.need(m.size() * sizeof(double));
    std::memcpy(m.data.data(), payload.data() + r.pos, m.size() * sizeof(double));
    r.pos += m.size() * sizeof(double);
    c.blobs[std::move(name)] = std::move(m);
  }
  return c;
}

void put_params(Checkpoint& c, const nn::ParamList& params) {
  for (const auto& np : params) c.blobs[np.name] = np.p->value;
}

void load_params(const Checkpoint& c, const nn::ParamList& params) {
  for (const auto& np : params) {
    auto it = c.blobs.find(np.name);
    if (it == c.blobs.end()) throw std::runtime_error("checkpoint is missing parameter '" + np.name + "'");
    if (!it->second.same_shape(np.p->value))
      throw std::runtime_error("checkpoint parameter '" + np.name + "' has shape " + it->second.shape_str() +
                               " but the configured architecture expects " + np.p->value.shape_str());
    np.p->value = it->second;
  }
}

void put_buffers(Checkpoint& c, const std::vector<std::pair<std::string, Mat*>>& buffers) {
  for (const auto& [name, m] : buffers) c.blobs[name] = *m;
}

void load_buffers(const Checkpoint& c, const std::vector<std::pair<std::string, Mat*>>& buffers) {
  for (const auto& [name, m] : buffers) {
    auto it = c.blobs.find(name);
    if (it == c.blobs.end()) throw std::runtime_error("checkpoint is missing buffer '" + name + "'");
    if (!it->second.same_shape(*m))
      throw std::runtime_error("checkpoint buffer '" + name + "' shape mismatch");
    *m = it->second;
  }
}

void put_adam(Checkpoint& c, nn::Adam& opt) {
  for (const auto& [name, m] : opt.moments1()) c.blobs["adam.m." + name] = m;
  for (const auto& [name, m] : opt.moments2()) c.blobs["adam.v." + name] = m;
  c.meta["adam_steps"] = std::to_string(opt.step_count());
}

void load_adam(const Checkpoint& c, nn::Adam& opt) {
  for (const auto& [name, m] : c.blobs) {
    if (name.rfind("adam.m.", 0) == 0) opt.moments1()[name.substr(7)] = m;
    if (name.rfind("adam.v.", 0) == 0) opt.moments2()[name.substr(7)] = m;
  }
  auto it = c.meta.find("adam_steps");
  if (it != c.meta.end()) opt.step_count() = std::stoll(it->second);
}

}  // namespace dgcvc::ckpt
