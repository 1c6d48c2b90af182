#include "ssdrl/checkpoint.h"

#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>
#include <type_traits>

#include "ssdrl/config.h"
#include "ssdrl/errors.h"

namespace ssdrl {

namespace {

constexpr char kMagic[4] = {'S', 'S', 'D', 'M'};

class Writer {
 public:
  template <typename U>
  void put(U v) {
    static_assert(std::is_integral_v<U>);
    using Unsigned = std::make_unsigned_t<U>;
    auto u = Unsigned(v);
    for (std::size_t i = 0; i < sizeof(U); ++i) {
      out_.push_back(char(u & 0xff));
      u = Unsigned(u >> 8);
    }
  }
  void put_f32(float f) { put(std::bit_cast<std::uint32_t>(f)); }
  void put_str(const std::string& s) {
    put(std::uint32_t(s.size()));
    out_ += s;
  }
  void raw(const char* p, std::size_t n) { out_.append(p, n); }
  std::string& bytes() { return out_; }

 private:
  std::string out_;
};

class Reader {
 public:
  explicit Reader(const std::string& bytes, std::size_t end) : bytes_(bytes), end_(end) {}

  template <typename U>
  U get(const char* what) {
    need(sizeof(U), what);
    std::make_unsigned_t<U> u = 0;
    for (std::size_t i = 0; i < sizeof(U); ++i) {
      u |= std::make_unsigned_t<U>(std::uint8_t(bytes_[pos_ + i])) << (8 * i);
    }
    pos_ += sizeof(U);
    return U(u);
  }
  float get_f32(const char* what) { return std::bit_cast<float>(get<std::uint32_t>(what)); }
  std::string get_str(const char* what) {
    const std::uint32_t n = get<std::uint32_t>(what);
    need(n, what);
    std::string s = bytes_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  void need(std::size_t n, const char* what) const {
    if (n > end_ - pos_) {
      throw IntegrityError(std::string("checkpoint truncated while reading ") + what, pos_);
    }
  }
  std::size_t pos() const { return pos_; }
  void skip(std::size_t n) { pos_ += n; }

 private:
  const std::string& bytes_;
  std::size_t end_;
  std::size_t pos_ = 0;
};

}  // namespace

std::string encode_checkpoint(const Checkpoint& ck) {
  Writer w;
  w.raw(kMagic, 4);
  w.put(kCheckpointVersion);
  w.put(ck.config_digest);
  w.put(ck.flags);
  w.put(ck.iteration);
  w.put(std::uint32_t(ck.tensors.size()));
  for (const CheckpointTensor& t : ck.tensors) {
    if (shape_numel(t.shape) != t.data.size()) {
      throw DimensionError("checkpoint tensor '" + t.name + "' data does not match its shape");
    }
    w.put_str(t.name);
    w.put(std::uint32_t(t.shape.size()));
    for (std::size_t e : t.shape) w.put(std::uint64_t(e));
    for (float f : t.data) w.put_f32(f);
  }
  w.put(std::uint32_t(ck.counters.size()));
  for (const auto& [name, v] : ck.counters) {
    w.put_str(name);
    w.put(v);
  }
  w.put(std::uint32_t(ck.rngs.size()));
  for (const auto& [name, state] : ck.rngs) {
    w.put_str(name);
    w.put_str(state);
  }
  const std::string& body = w.bytes();
  w.put(fnv1a64(body.data(), body.size()));
  return std::move(w.bytes());
}

Checkpoint decode_checkpoint(const std::string& bytes) {
  if (bytes.size() < 4 || std::memcmp(bytes.data(), kMagic, 4) != 0) {
    throw IntegrityError("not a checkpoint file (bad magic)", 0);
  }
  if (bytes.size() < 8 + 8) throw IntegrityError("checkpoint truncated in header", bytes.size());
  const std::size_t body = bytes.size() - 8;
  Reader r(bytes, body);
  r.skip(4);
  const auto version = r.get<std::uint32_t>("version");
  if (version != kCheckpointVersion) {
    throw IntegrityError("checkpoint format version " + std::to_string(version) +
                             " is not supported by this reader (expects version " +
                             std::to_string(kCheckpointVersion) + ")",
                         4);
  }
  Checkpoint ck;
  ck.config_digest = r.get<std::uint64_t>("config digest");
  ck.flags = r.get<std::uint32_t>("flags");
  ck.iteration = r.get<std::uint64_t>("iteration");
  const auto n_tensors = r.get<std::uint32_t>("tensor count");
  for (std::uint32_t i = 0; i < n_tensors; ++i) {
    CheckpointTensor t;
    t.name = r.get_str("tensor name");
    const auto rank = r.get<std::uint32_t>("tensor rank");
    std::size_t numel = 1;
    for (std::uint32_t k = 0; k < rank; ++k) {
      const auto e = r.get<std::uint64_t>("tensor extent");
      if (e == 0 || numel > (std::uint64_t(1) << 40) / e) {
        throw IntegrityError("implausible extent for tensor '" + t.name + "'", r.pos() - 8);
      }
      t.shape.push_back(std::size_t(e));
      numel *= std::size_t(e);
    }
    r.need(numel * 4, "tensor data");
    t.data.resize(numel);
    for (std::size_t k = 0; k < numel; ++k) t.data[k] = r.get_f32("tensor data");
    ck.tensors.push_back(std::move(t));
  }
  const auto n_counters = r.get<std::uint32_t>("counter count");
  for (std::uint32_t i = 0; i < n_counters; ++i) {
    std::string name = r.get_str("counter name");
    ck.counters.emplace_back(std::move(name), r.get<std::int64_t>("counter value"));
  }
  const auto n_rngs = r.get<std::uint32_t>("rng count");
  for (std::uint32_t i = 0; i < n_rngs; ++i) {
    std::string name = r.get_str("rng name");
    ck.rngs.emplace_back(std::move(name), r.get_str("rng state"));
  }
  if (r.pos() != body) throw IntegrityError("unexpected bytes after rng table", r.pos());
  Reader tail(bytes, bytes.size());
  tail.skip(body);
  const auto stored = tail.get<std::uint64_t>("checksum");
  if (stored != fnv1a64(bytes.data(), body)) {
    throw IntegrityError("checkpoint checksum mismatch", body);
  }
  return ck;
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ck) {
  const std::string bytes = encode_checkpoint(ck);
  std::filesystem::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw ContractError("cannot write checkpoint '" + tmp.string() + "'");
    out.write(bytes.data(), std::streamsize(bytes.size()));
    if (!out) throw ContractError("short write to '" + tmp.string() + "'");
  }
  std::filesystem::rename(tmp, path);
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IntegrityError("cannot open checkpoint '" + path.string() + "'", 0);
  std::ostringstream ss;
  ss << in.rdbuf();
  return decode_checkpoint(ss.str());
}

namespace {

template <typename T>
CheckpointTensor to_entry(const std::string& name, const Tensor<T>& t) {
  return CheckpointTensor{name, t.shape(), std::vector<float>(t.data().begin(), t.data().end())};
}

const CheckpointTensor& find_tensor(const Checkpoint& ck, const std::string& name) {
  for (const CheckpointTensor& t : ck.tensors) {
    if (t.name == name) return t;
  }
  throw IntegrityError("checkpoint has no tensor '" + name + "'", 0);
}

template <typename T>
void copy_into(const CheckpointTensor& src, Tensor<T>& dst) {
  if (src.shape != dst.shape()) {
    throw IntegrityError("checkpoint tensor '" + src.name + "' has shape " +
                             shape_string(src.shape) + ", model expects " +
                             shape_string(dst.shape()),
                         0);
  }
  for (std::size_t i = 0; i < src.data.size(); ++i) dst[i] = T(src.data[i]);
}

}  // namespace

template <typename T>
void store_params(Checkpoint& ck, const ParamStore<T>& store) {
  if (std::is_same_v<T, double>) ck.flags |= kCheckpointDowncast;
  for (const auto& [name, e] : store.entries()) {
    ck.tensors.push_back(to_entry(name, e.value));
    ck.tensors.push_back(to_entry(name + "/adam_m", e.moment1));
    ck.tensors.push_back(to_entry(name + "/adam_v", e.moment2));
  }
}

template <typename T>
void restore_params(const Checkpoint& ck, ParamStore<T>& store) {
  for (auto& [name, e] : store.entries()) {
    copy_into(find_tensor(ck, name), e.value);
    copy_into(find_tensor(ck, name + "/adam_m"), e.moment1);
    copy_into(find_tensor(ck, name + "/adam_v"), e.moment2);
    e.grad.fill(T(0));
  }
}

void store_counter(Checkpoint& ck, const std::string& name, std::int64_t value) {
  ck.counters.emplace_back(name, value);
}

std::int64_t find_counter(const Checkpoint& ck, const std::string& name) {
  for (const auto& [n, v] : ck.counters) {
    if (n == name) return v;
  }
  throw IntegrityError("checkpoint has no counter '" + name + "'", 0);
}

void store_rng(Checkpoint& ck, const std::string& name, const Rng& rng) {
  ck.rngs.emplace_back(name, rng.state());
}

void restore_rng(const Checkpoint& ck, const std::string& name, Rng& rng) {
  for (const auto& [n, s] : ck.rngs) {
    if (n == name) {
      rng.set_state(s);
      return;
    }
  }
  throw IntegrityError("checkpoint has no rng state '" + name + "'", 0);
}

template void store_params<float>(Checkpoint&, const ParamStore<float>&);
template void store_params<double>(Checkpoint&, const ParamStore<double>&);
template void restore_params<float>(const Checkpoint&, ParamStore<float>&);
template void restore_params<double>(const Checkpoint&, ParamStore<double>&);

}  // namespace ssdrl
