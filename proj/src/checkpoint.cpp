#include "fagan/checkpoint.hpp"

#include <algorithm>
#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>
#include <vector>

#include <torch/torch.h>
#include <zlib.h>

#include "fagan/error.hpp"

namespace fagan {
namespace {

constexpr std::size_t kFooterSize = 8 + 4;

std::uint8_t dtype_code(torch::ScalarType t) {
  switch (t) {
    case torch::kFloat32:
      return 0;
    case torch::kFloat64:
      return 1;
    case torch::kInt64:
      return 2;
    default:
      throw CheckpointError(std::string("unsupported tensor dtype ") +
                            c10::toString(t));
  }
}

torch::ScalarType dtype_from_code(std::uint8_t code) {
  switch (code) {
    case 0:
      return torch::kFloat32;
    case 1:
      return torch::kFloat64;
    case 2:
      return torch::kInt64;
    default:
      throw CheckpointError("unknown tensor dtype code " + std::to_string(code));
  }
}

// Copies `n` elements of `width` bytes, reversing byte order on big-endian
// hosts so the file is always little-endian.
void copy_le(const std::uint8_t* src, std::uint8_t* dst, std::size_t bytes,
             std::size_t width) {
  if constexpr (std::endian::native == std::endian::little) {
    std::memcpy(dst, src, bytes);
  } else {
    for (std::size_t i = 0; i < bytes; i += width)
      std::reverse_copy(src + i, src + i + width, dst + i);
  }
}

class Writer {
 public:
  template <typename T>
  void put(T value) {
    static_assert(std::is_integral_v<T>);
    using U = std::make_unsigned_t<T>;
    auto u = static_cast<U>(value);
    for (std::size_t i = 0; i < sizeof(T); ++i) {
      buf_.push_back(static_cast<char>(u & 0xFF));
      u = static_cast<U>(u >> 8);
    }
  }
  void put_bytes(const void* data, std::size_t n) {
    const auto* p = static_cast<const char*>(data);
    buf_.insert(buf_.end(), p, p + n);
  }
  void put_string(const std::string& s) {
    put(static_cast<std::uint32_t>(s.size()));
    put_bytes(s.data(), s.size());
  }
  void put_tensor(const torch::Tensor& t) {
    const auto c = t.detach().to(torch::kCPU).contiguous();
    put(dtype_code(c.scalar_type()));
    put(static_cast<std::uint32_t>(c.dim()));
    for (auto d : c.sizes()) put(static_cast<std::int64_t>(d));
    const std::size_t bytes = c.nbytes();
    put(static_cast<std::uint64_t>(bytes));
    const std::size_t offset = buf_.size();
    buf_.resize(offset + bytes);
    copy_le(static_cast<const std::uint8_t*>(c.data_ptr()),
            reinterpret_cast<std::uint8_t*>(buf_.data() + offset), bytes,
            c.element_size());
  }
  std::string& buffer() { return buf_; }

 private:
  std::string buf_;
};

class Reader {
 public:
  Reader(const char* data, std::size_t size) : data_(data), size_(size) {}

  template <typename T>
  T get() {
    static_assert(std::is_integral_v<T>);
    need(sizeof(T));
    using U = std::make_unsigned_t<T>;
    U u = 0;
    for (std::size_t i = 0; i < sizeof(T); ++i)
      u |= static_cast<U>(static_cast<U>(static_cast<std::uint8_t>(data_[pos_ + i]))
                          << (8 * i));
    pos_ += sizeof(T);
    return static_cast<T>(u);
  }
  std::string get_string() {
    const auto n = get<std::uint32_t>();
    need(n);
    std::string s(data_ + pos_, n);
    pos_ += n;
    return s;
  }
  torch::Tensor get_tensor() {
    const auto dtype = dtype_from_code(get<std::uint8_t>());
    const auto ndim = get<std::uint32_t>();
    if (ndim > 8) throw CheckpointError("tensor rank out of range");
    std::vector<std::int64_t> shape(ndim);
    for (auto& d : shape) {
      d = get<std::int64_t>();
      if (d < 0) throw CheckpointError("negative tensor dimension");
    }
    const auto bytes = get<std::uint64_t>();
    auto t = torch::empty(shape, dtype);
    if (bytes != t.nbytes())
      throw CheckpointError("tensor byte count does not match its shape");
    need(bytes);
    copy_le(reinterpret_cast<const std::uint8_t*>(data_ + pos_),
            static_cast<std::uint8_t*>(t.data_ptr()), bytes, t.element_size());
    pos_ += bytes;
    return t;
  }
  bool done() const { return pos_ == size_; }

 private:
  void need(std::uint64_t n) const {
    if (n > size_ - pos_) throw CheckpointError("checkpoint is truncated");
  }
  const char* data_;
  std::size_t size_;
  std::size_t pos_ = 0;
};

std::uint32_t crc_of(const char* data, std::size_t n) {
  uLong crc = crc32(0L, Z_NULL, 0);
  // zlib takes uInt lengths; feed in chunks.
  constexpr std::size_t kChunk = 1u << 30;
  for (std::size_t off = 0; off < n; off += kChunk) {
    const auto len = static_cast<uInt>(std::min(kChunk, n - off));
    crc = crc32(crc, reinterpret_cast<const Bytef*>(data + off), len);
  }
  return static_cast<std::uint32_t>(crc);
}

}  // namespace

void save_checkpoint(const Checkpoint& checkpoint,
                     const std::filesystem::path& path) {
  Writer w;
  w.put_bytes(kCheckpointMagic, 4);
  w.put(kCheckpointVersion);
  w.put_string(checkpoint.fingerprint);
  w.put_string(checkpoint.metadata.dump());
  w.put(checkpoint.step);

  std::uint32_t count = 0;
  for (auto p : kAllPartitions)
    count += static_cast<std::uint32_t>(checkpoint.store.group(p).entries().size());
  w.put(count);
  for (auto p : kAllPartitions) {
    for (const auto& e : checkpoint.store.group(p).entries()) {
      w.put(static_cast<std::uint8_t>(p));
      w.put(static_cast<std::uint8_t>(e.trainable ? 1 : 0));
      w.put_string(e.name);
      w.put_tensor(e.value);
    }
  }

  count = 0;
  for (auto p : kAllPartitions)
    count += static_cast<std::uint32_t>(checkpoint.optimizer.of(p).size());
  w.put(count);
  for (auto p : kAllPartitions) {
    for (const auto& [name, s] : checkpoint.optimizer.of(p)) {
      w.put(static_cast<std::uint8_t>(p));
      w.put_string(name);
      w.put(s.step);
      const bool moments = s.exp_avg.defined();
      w.put(static_cast<std::uint8_t>(moments ? 1 : 0));
      if (moments) {
        w.put_tensor(s.exp_avg);
        w.put_tensor(s.exp_avg_sq);
      }
    }
  }
  w.put_string(checkpoint.rng_state);

  auto& buf = w.buffer();
  const std::uint64_t payload = buf.size();
  const std::uint32_t crc = crc_of(buf.data(), buf.size());
  w.put(payload);
  w.put(crc);

  const auto tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw CheckpointError("cannot write checkpoint " + tmp);
    out.write(buf.data(), static_cast<std::streamsize>(buf.size()));
    if (!out) throw CheckpointError("failed writing checkpoint " + tmp);
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) throw CheckpointError("cannot move checkpoint into place: " + ec.message());
}

Checkpoint read_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError("cannot open checkpoint " + path.string());
  const std::string bytes((std::istreambuf_iterator<char>(in)),
                          std::istreambuf_iterator<char>());
  if (bytes.size() < 8 + kFooterSize ||
      std::memcmp(bytes.data(), kCheckpointMagic, 4) != 0)
    throw CheckpointError(path.string() + " is not a checkpoint file");

  Reader footer(bytes.data() + bytes.size() - kFooterSize, kFooterSize);
  const auto payload = footer.get<std::uint64_t>();
  const auto crc = footer.get<std::uint32_t>();
  if (payload != bytes.size() - kFooterSize)
    throw CheckpointError(path.string() + " is truncated or has trailing data");
  if (crc_of(bytes.data(), payload) != crc)
    throw CheckpointError(path.string() + " failed its checksum");

  Reader r(bytes.data(), payload);
  r.get<std::uint32_t>();  // magic, already checked
  const auto version = r.get<std::uint32_t>();
  if (version != kCheckpointVersion)
    throw CheckpointError("unsupported checkpoint version " +
                          std::to_string(version));
  Checkpoint ck;
  ck.fingerprint = r.get_string();
  try {
    ck.metadata = nlohmann::json::parse(r.get_string());
  } catch (const nlohmann::json::exception& e) {
    throw CheckpointError(std::string("bad checkpoint metadata: ") + e.what());
  }
  ck.step = r.get<std::uint64_t>();

  const auto tensors = r.get<std::uint32_t>();
  for (std::uint32_t i = 0; i < tensors; ++i) {
    const auto part = r.get<std::uint8_t>();
    if (part >= kAllPartitions.size())
      throw CheckpointError("bad partition id in checkpoint");
    const bool trainable = r.get<std::uint8_t>() != 0;
    auto name = r.get_string();
    auto value = r.get_tensor();
    ck.store.group(static_cast<Partition>(part))
        .add(std::move(name), std::move(value), trainable);
  }
  const auto states = r.get<std::uint32_t>();
  for (std::uint32_t i = 0; i < states; ++i) {
    const auto part = r.get<std::uint8_t>();
    if (part >= kAllPartitions.size())
      throw CheckpointError("bad partition id in optimizer table");
    auto name = r.get_string();
    ParamState s;
    s.step = r.get<std::int64_t>();
    if (r.get<std::uint8_t>() != 0) {
      s.exp_avg = r.get_tensor();
      s.exp_avg_sq = r.get_tensor();
    }
    ck.optimizer.of(static_cast<Partition>(part)).emplace(std::move(name),
                                                          std::move(s));
  }
  ck.rng_state = r.get_string();
  if (!r.done()) throw CheckpointError("unexpected bytes in checkpoint payload");
  return ck;
}

Checkpoint load_checkpoint(const std::filesystem::path& path,
                           const std::string& expected_fingerprint) {
  auto ck = read_checkpoint(path);
  if (ck.fingerprint != expected_fingerprint)
    throw FingerprintMismatch("checkpoint " + path.string() +
                              " was produced under a different configuration "
                              "(fingerprint " + ck.fingerprint + ", expected " +
                              expected_fingerprint + ")");
  return ck;
}

}  // namespace fagan
