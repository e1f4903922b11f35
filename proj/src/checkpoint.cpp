#include "clickforge/checkpoint.hpp"

#include <zlib.h>

#include <bit>
#include <cstring>

namespace clickforge {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

namespace {

constexpr char kMagic[4] = {'C', 'F', 'C', 'K'};

class Writer {
 public:
  template <typename T>
  void put(T value) {
    const auto* p = reinterpret_cast<const std::uint8_t*>(&value);
    bytes_.insert(bytes_.end(), p, p + sizeof(T));
  }
  void put_bytes(const void* data, std::size_t n) {
    const auto* p = static_cast<const std::uint8_t*>(data);
    bytes_.insert(bytes_.end(), p, p + n);
  }
  Bytes& bytes() { return bytes_; }

 private:
  Bytes bytes_;
};

class Reader {
 public:
  Reader(const Bytes& bytes, std::size_t end) : bytes_(bytes), end_(end) {}

  template <typename T>
  T get(const char* what) {
    T value;
    get_bytes(&value, sizeof(T), what);
    return value;
  }
  void get_bytes(void* out, std::size_t n, const char* what) {
    if (pos_ + n > end_) throw FormatError(std::string("checkpoint truncated while reading ") + what);
    std::memcpy(out, bytes_.data() + pos_, n);
    pos_ += n;
  }
  std::size_t position() const { return pos_; }

 private:
  const Bytes& bytes_;
  std::size_t end_;
  std::size_t pos_ = 0;
};

std::uint32_t crc32_of(const std::uint8_t* data, std::size_t n) {
  uLong crc = crc32(0L, Z_NULL, 0);
  return static_cast<std::uint32_t>(crc32(crc, data, static_cast<uInt>(n)));
}

}  // namespace

Bytes encode_checkpoint(const ParamSet<float>& params) {
  Writer w;
  w.put_bytes(kMagic, 4);
  w.put<std::uint16_t>(kCheckpointVersion);
  w.put<std::uint32_t>(static_cast<std::uint32_t>(params.size()));
  for (std::size_t k = 0; k < params.size(); ++k) {
    const auto& name = params.names()[k];
    const auto& t = params.at(k);
    if (t.partition != Partition::kBsm && t.partition != Partition::kAdm)
      throw InvalidArgument("tensor '" + name + "' has no partition tag");
    w.put<std::uint16_t>(static_cast<std::uint16_t>(name.size()));
    w.put_bytes(name.data(), name.size());
    w.put<std::uint8_t>(static_cast<std::uint8_t>(t.partition));
    w.put<std::uint8_t>(static_cast<std::uint8_t>(t.shape.size()));
    for (int d : t.shape) w.put<std::uint32_t>(static_cast<std::uint32_t>(d));
    w.put_bytes(t.values.data(), sizeof(float) * static_cast<std::size_t>(t.values.size()));
  }
  const std::uint32_t crc = crc32_of(w.bytes().data(), w.bytes().size());
  w.put<std::uint32_t>(crc);
  return std::move(w.bytes());
}

ParamSet<float> decode_checkpoint(const Bytes& bytes) {
  if (bytes.size() < 4 || std::memcmp(bytes.data(), kMagic, 4) != 0)
    throw FormatError("not a checkpoint: bad magic bytes (expected CFCK version " +
                      std::to_string(kCheckpointVersion) + ")");
  if (bytes.size() < 4 + 2 + 4 + 4) throw FormatError("checkpoint truncated: header incomplete");
  std::uint16_t version = 0;
  std::memcpy(&version, bytes.data() + 4, 2);
  if (version != kCheckpointVersion)
    throw FormatError("unsupported checkpoint version " + std::to_string(version) + " (expected " +
                      std::to_string(kCheckpointVersion) + ")");

  const std::size_t payload_end = bytes.size() - 4;
  Reader r(bytes, payload_end);
  char magic[4];
  r.get_bytes(magic, 4, "magic");
  r.get<std::uint16_t>("version");
  const auto count = r.get<std::uint32_t>("tensor count");
  ParamSet<float> params;
  for (std::uint32_t k = 0; k < count; ++k) {
    const auto name_len = r.get<std::uint16_t>("name length");
    std::string name(name_len, '\0');
    r.get_bytes(name.data(), name_len, "tensor name");
    const auto tag = r.get<std::uint8_t>("partition tag");
    if (tag > 1) throw FormatError("tensor '" + name + "' has invalid partition tag " + std::to_string(tag));
    const auto rank = r.get<std::uint8_t>("rank");
    std::vector<int> shape(rank);
    std::uint64_t elements = 1;
    for (auto& d : shape) {
      const auto dim = r.get<std::uint32_t>("dimension");
      elements *= dim;
      if (elements * sizeof(float) > payload_end - r.position())
        throw FormatError("checkpoint truncated: tensor '" + name + "' data incomplete");
      d = static_cast<int>(dim);
    }
    auto& t = params.add(name, shape, static_cast<Partition>(tag));
    r.get_bytes(t.values.data(), sizeof(float) * static_cast<std::size_t>(t.values.size()), "tensor values");
  }
  if (r.position() != payload_end) throw FormatError("checkpoint has trailing bytes before the checksum");
  std::uint32_t stored = 0;
  std::memcpy(&stored, bytes.data() + payload_end, 4);
  if (stored != crc32_of(bytes.data(), payload_end)) throw FormatError("checkpoint checksum mismatch");
  return params;
}

void save_checkpoint(const ParamSet<float>& params, const std::filesystem::path& path) {
  write_file_atomic(path, encode_checkpoint(params));
}

ParamSet<float> load_checkpoint(const std::filesystem::path& path) { return decode_checkpoint(read_file(path)); }

void check_compatible(const ParamSet<float>& params, const ModelConfig& cfg) {
  const ParamSet<float> reference = init_params<float>(cfg);
  for (std::size_t k = 0; k < reference.size(); ++k) {
    const auto& name = reference.names()[k];
    if (!params.contains(name)) throw DimensionError("checkpoint is missing tensor '" + name + "'");
    const auto& got = params.at(name);
    const auto& want = reference.at(k);
    if (got.shape != want.shape)
      throw DimensionError("shape mismatch for tensor '" + name + "': checkpoint " + shape_string(got.shape) +
                           ", model " + shape_string(want.shape));
    if (got.partition != want.partition)
      throw DimensionError("partition mismatch for tensor '" + name + "'");
  }
  if (params.size() != reference.size())
    throw DimensionError("checkpoint holds " + std::to_string(params.size()) + " tensors, model expects " +
                         std::to_string(reference.size()));
}

ParamSet<float> load_checkpoint(const std::filesystem::path& path, const ModelConfig& cfg) {
  ParamSet<float> params = load_checkpoint(path);
  check_compatible(params, cfg);
  return params;
}

}  // namespace clickforge
